"""Model production: contrastive pretraining and the supervised baselines.

``pretrain_ssl`` trains encoder + score heads on augmented view pairs,
ignoring labels.  The supervised family shares one loop: plain
cross-entropy, adversarial training on perturbed inputs only, the
mixed-batch variant summing both terms, and logit pairing, which adds a
squared-distance penalty between clean and perturbed logits.  Matching
``*_objective`` helpers evaluate each training criterion at fixed
parameters so relationships between them can be checked directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import AugmentationPolicy, augment
from .encoder import EncoderModel, LayerSpec
from .errors import ConfigError, DataError
from .optim import make_optimizer
from .sat import contrast_loss
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    bias_add,
    logsumexp,
    matmul,
    mul,
    scale,
    sq_dist,
    sub,
    tsum,
)

__all__ = [
    "ClassifierHead",
    "TrainConfig",
    "cross_entropy",
    "merge_classifier",
    "split_classifier",
    "pgd_label_attack",
    "pretrain_ssl",
    "train_supervised",
    "train_at",
    "train_mat",
    "train_alp",
    "supervised_objective",
    "at_objective",
    "mat_objective",
    "alp_objective",
]


@dataclass(frozen=True)
class TrainConfig:
    """Shared settings for the pretraining and baseline loops."""

    epochs: int = 5
    batch_size: int = 100
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    pgd_epsilon: float = 0.03
    pgd_step_size: float = 0.01
    pgd_steps: int = 5
    alp_weight: float = 0.5
    augment_policy: AugmentationPolicy = field(default_factory=AugmentationPolicy)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.pgd_epsilon < 0:
            raise ConfigError(
                f"pgd_epsilon must be non-negative, got {self.pgd_epsilon}"
            )
        if self.pgd_step_size <= 0:
            raise ConfigError(
                f"pgd_step_size must be positive, got {self.pgd_step_size}"
            )
        if self.pgd_steps < 1:
            raise ConfigError(f"pgd_steps must be at least 1, got {self.pgd_steps}")
        if self.alp_weight < 0:
            raise ConfigError(
                f"alp_weight must be non-negative, got {self.alp_weight}"
            )


class ClassifierHead:
    """Linear map from representations to class logits."""

    def __init__(self, weight, bias):
        if weight.data.ndim != 2 or bias.shape != (weight.shape[1],):
            raise ConfigError(
                f"classifier parameter shapes do not chain: "
                f"{weight.shape} and {bias.shape}"
            )
        self.weight = weight
        self.bias = bias

    @classmethod
    def init(cls, rep_dim, num_classes, seed):
        if num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {num_classes}")
        rng = np.random.default_rng(seed)
        limit = np.sqrt(6.0 / (rep_dim + num_classes))
        w = Tensor(
            rng.uniform(-limit, limit, size=(rep_dim, num_classes)),
            requires_grad=True,
            name="classifier.weight",
        )
        b = Tensor(
            np.zeros(num_classes), requires_grad=True, name="classifier.bias"
        )
        return cls(w, b)

    @property
    def num_classes(self):
        return self.weight.shape[1]

    @property
    def params(self):
        return [self.weight, self.bias]

    def with_params(self, params):
        if len(params) != 2:
            raise ConfigError(f"expected 2 classifier tensors, got {len(params)}")
        return ClassifierHead(params[0], params[1])

    def copy(self, requires_grad=True):
        return ClassifierHead(
            Tensor._wrap(self.weight.data, requires_grad, self.weight.name),
            Tensor._wrap(self.bias.data, requires_grad, self.bias.name),
        )

    def frozen(self):
        return self.copy(requires_grad=False)

    def apply(self, z):
        return bias_add(matmul(z, self.weight), self.bias)

    def apply_np(self, z):
        return np.asarray(z, dtype=np.float64) @ self.weight.data + self.bias.data


def merge_classifier(model, head):
    """Fold the classifier into the model as a final linear layer."""
    specs = model.specs + (LayerSpec(model.rep_dim, head.num_classes, "none"),)
    return EncoderModel(
        specs,
        model.weights + [head.weight],
        model.biases + [head.bias],
        model.representation_layer,
    )


def split_classifier(model):
    """Undo merge_classifier: peel the final linear layer off as a head."""
    if len(model.specs) < 2 or model.representation_layer != len(model.specs) - 2:
        raise ConfigError(
            "model does not end in a single classifier layer after the "
            "representation"
        )
    body = EncoderModel(
        model.specs[:-1],
        model.weights[:-1],
        model.biases[:-1],
        model.representation_layer,
    )
    return body, ClassifierHead(model.weights[-1], model.biases[-1])


def cross_entropy(logits, labels):
    """Mean cross-entropy of a logits batch against integer labels."""
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise DataError(f"need one label per row, got {labels.shape} for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must lie in [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = tsum(mul(logits, Tensor(onehot)))
    row_lse = tsum(logsumexp(logits, axis=1))
    return scale(sub(row_lse, picked), 1.0 / n)


def _ce_value(model, head, x, y):
    """Cross-entropy at fixed parameters, via the same ops as training."""
    with Tape() as tape:
        logits = head.apply(model.encode(Tensor(np.asarray(x, dtype=np.float64))))
        loss = cross_entropy(logits, y)
    return float(loss.item())


def supervised_objective(model, head, x, y):
    return _ce_value(model, head, x, y)


def at_objective(model, head, x_adv, y):
    return _ce_value(model, head, x_adv, y)


def mat_objective(model, head, x, x_adv, y):
    return _ce_value(model, head, x_adv, y) + _ce_value(model, head, x, y)


def alp_objective(model, head, x, x_adv, y, weight):
    clean = head.apply_np(model.encode_np(x))
    adv = head.apply_np(model.encode_np(x_adv))
    pair = float(np.sum((clean - adv) ** 2)) / len(clean)
    return _ce_value(model, head, x, y) + weight * pair


def pgd_label_attack(model, head, x, y, epsilon, step_size, steps, seed):
    """Cross-entropy ascent with sign steps inside the epsilon ball.

    Accepts a single example or a batch; the perturbation starts from a
    uniform draw in [-epsilon, epsilon] and every step is clipped back to
    the ball and the unit box.
    """
    if epsilon < 0:
        raise ConfigError(f"epsilon must be non-negative, got {epsilon}")
    if step_size <= 0:
        raise ConfigError(f"step_size must be positive, got {step_size}")
    if steps < 1:
        raise ConfigError(f"steps must be at least 1, got {steps}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
        y = np.asarray([y], dtype=np.int64)
    else:
        y = np.asarray(y, dtype=np.int64)
    model = model.frozen()
    head = head.frozen()

    rng = np.random.default_rng(seed)
    x_adv = np.clip(x + rng.uniform(-epsilon, epsilon, size=x.shape), 0.0, 1.0)
    for _ in range(steps):
        x_t = Tensor(x_adv, requires_grad=True)
        with Tape() as tape:
            logits = head.apply(model.encode(x_t))
            loss = cross_entropy(logits, y)
        g = backward(tape, loss)[x_t]
        x_adv = x_adv + step_size * np.sign(g)
        x_adv = np.clip(x_adv, x - epsilon, x + epsilon)
        x_adv = np.clip(x_adv, 0.0, 1.0)
    return x_adv[0] if single else x_adv


def _batches(n, batch_size, rng, min_size=1):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if idx.size >= min_size:
            yield idx


def pretrain_ssl(dataset, model, heads, config):
    """Contrastive pretraining on two augmented views per example.

    Labels are never read.  Returns trained copies of (model, heads) and
    the per-epoch mean loss trace.
    """
    if config.batch_size < 2:
        raise ConfigError(
            f"contrastive batches need at least 2 examples, "
            f"got batch_size {config.batch_size}"
        )
    model = model.copy()
    heads = heads.copy()
    opt = make_optimizer(config.optimizer, config.lr)
    x_all = dataset.examples
    n = len(dataset)
    epoch_losses = []
    for epoch in range(config.epochs):
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, 100, epoch))
        )
        batch_losses = []
        for b, idx in enumerate(_batches(n, config.batch_size, shuffle_rng, 2)):
            view_rng = np.random.default_rng(
                np.random.SeedSequence((config.seed, 303, epoch, b))
            )
            v1 = np.stack(
                [augment(x_all[i], config.augment_policy, view_rng) for i in idx]
            )
            v2 = np.stack(
                [augment(x_all[i], config.augment_policy, view_rng) for i in idx]
            )
            params = model.params + heads.params
            with Tape() as tape:
                z = model.encode(Tensor(v1))
                zhat = model.encode(Tensor(v2))
                loss = contrast_loss(heads, z, zhat)
            grads = backward(tape, loss)
            new_params = opt.step(params, grads)
            k = len(model.params)
            model = model.with_params(new_params[:k])
            heads = heads.with_params(new_params[k:])
            batch_losses.append(float(loss.item()))
        epoch_losses.append(float(np.mean(batch_losses)))
    return model, heads, epoch_losses


def _train_classifier(dataset, model, head, config, mode):
    model = model.copy()
    head = head.copy()
    opt = make_optimizer(config.optimizer, config.lr)
    x_all = dataset.examples
    y_all = dataset.labels
    n = len(dataset)
    epoch_losses = []
    for epoch in range(config.epochs):
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, 100, epoch))
        )
        batch_losses = []
        for b, idx in enumerate(_batches(n, config.batch_size, shuffle_rng)):
            xb = x_all[idx]
            yb = y_all[idx]
            if mode != "plain":
                x_adv = pgd_label_attack(
                    model,
                    head,
                    xb,
                    yb,
                    config.pgd_epsilon,
                    config.pgd_step_size,
                    config.pgd_steps,
                    seed=np.random.SeedSequence((config.seed, 404, epoch, b)),
                )
            params = model.params + head.params
            with Tape() as tape:
                if mode == "plain":
                    loss = cross_entropy(head.apply(model.encode(Tensor(xb))), yb)
                elif mode == "at":
                    loss = cross_entropy(
                        head.apply(model.encode(Tensor(x_adv))), yb
                    )
                elif mode == "mat":
                    loss = add(
                        cross_entropy(head.apply(model.encode(Tensor(x_adv))), yb),
                        cross_entropy(head.apply(model.encode(Tensor(xb))), yb),
                    )
                else:  # alp
                    clean_logits = head.apply(model.encode(Tensor(xb)))
                    adv_logits = head.apply(model.encode(Tensor(x_adv)))
                    loss = add(
                        cross_entropy(clean_logits, yb),
                        scale(
                            sq_dist(clean_logits, adv_logits),
                            config.alp_weight / len(idx),
                        ),
                    )
            grads = backward(tape, loss)
            new_params = opt.step(params, grads)
            k = len(model.params)
            model = model.with_params(new_params[:k])
            head = head.with_params(new_params[k:])
            batch_losses.append(float(loss.item()))
        epoch_losses.append(float(np.mean(batch_losses)))
    return model, head, epoch_losses


def train_supervised(dataset, model, head, config):
    """Minimize clean cross-entropy."""
    return _train_classifier(dataset, model, head, config, "plain")


def train_at(dataset, model, head, config):
    """Cross-entropy on perturbed inputs only."""
    return _train_classifier(dataset, model, head, config, "at")


def train_mat(dataset, model, head, config):
    """Sum of perturbed and clean cross-entropy terms."""
    return _train_classifier(dataset, model, head, config, "mat")


def train_alp(dataset, model, head, config):
    """Clean cross-entropy plus weighted squared distance between logits."""
    return _train_classifier(dataset, model, head, config, "alp")
