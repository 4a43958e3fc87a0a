"""Adversarial fine-tuning with a contrastive objective, no labels anywhere.

Each epoch starts by snapshotting the representation of every training
example.  Minibatches then perturb each example toward the mean
representation of its pull group: the nearest training examples after
skipping the example's own immediate neighborhood, a label-free stand-in
for "the nearest examples of some other class".  One optimizer step pulls
the clean and perturbed representations of the same example together while
pushing apart those of different examples.  Group selection, attack, and
update never touch ``dataset.labels``; shuffling the labels leaves the
whole trajectory bit-identical.
"""

from __future__ import annotations

import hashlib
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, gradient_attack_batch
from .errors import ConfigError
from .optim import make_optimizer
from .tensor import Tape, Tensor, backward, logsumexp, mul, scale, sub, tsum

__all__ = [
    "SatConfig",
    "SatLog",
    "contrast_loss",
    "contrast_loss_from_logits",
    "nce_estimate",
    "nce_from_logits",
    "sat_train",
    "write_training_log",
]


@dataclass(frozen=True)
class SatConfig:
    """Settings for adversarial fine-tuning.

    ``batch_size`` is also the number of contrastive candidates per row (one
    positive and batch_size - 1 negatives).  The inner attack reuses the
    sign-step settings; ``group_size`` counts the neighbors defining each
    example's pull target after the ``group_skip`` nearest ones (the
    example's own neighborhood, which without labels is the best guess at
    "same class") are passed over.
    """

    epochs: int = 3
    batch_size: int = 100
    lr: float = 1e-4
    optimizer: str = "sgd"
    epsilon: float = 0.03
    step_size: float = 0.005
    attack_steps: int = 10
    group_size: int = 50
    group_skip: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(
                f"batch_size must be at least 2 (need a negative), "
                f"got {self.batch_size}"
            )
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.attack_steps < 1:
            raise ConfigError(
                f"attack_steps must be at least 1, got {self.attack_steps}"
            )
        if self.group_size < 1:
            raise ConfigError(
                f"group_size must be at least 1, got {self.group_size}"
            )
        if self.group_skip < 0:
            raise ConfigError(
                f"group_skip must be non-negative, got {self.group_skip}"
            )


@dataclass
class SatLog:
    """Row-per-batch training log plus per-epoch parameter checksums."""

    rows: list = field(default_factory=list)  # (epoch, batch, loss, nce, wall_ms)
    epoch_checksums: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def epoch_mean_loss(self, epoch):
        vals = [r[2] for r in self.rows if r[0] == epoch]
        return float(np.mean(vals)) if vals else float("nan")


def contrast_loss_from_logits(logits):
    """Mean over rows of (log-sum-exp of the row minus its diagonal entry).

    ``logits`` is the square score matrix whose diagonal holds the positive
    pairs.  Always non-negative; equals log N when every entry is equal.
    """
    n = logits.shape[0]
    if logits.data.ndim != 2 or logits.shape != (n, n) or n < 2:
        raise ConfigError(
            f"contrastive logits must be square with at least 2 rows, "
            f"got {logits.shape}"
        )
    eye = Tensor(np.eye(n))
    positives = tsum(mul(logits, eye))
    row_lse = tsum(logsumexp(logits, axis=1))
    return scale(sub(row_lse, positives), 1.0 / n)


def contrast_loss(heads, z, zhat):
    """Differentiable contrastive loss over row-aligned representation batches."""
    if z.shape != zhat.shape:
        raise ConfigError(
            f"representation batches must align, got {z.shape} and {zhat.shape}"
        )
    return contrast_loss_from_logits(heads.score_matrix(z, zhat))


def nce_from_logits(logits):
    """Mutual-information estimate from a score-logit matrix, as a float.

    Computed on its own arithmetic path (not as log N minus the loss) so the
    algebraic identity between the two is a meaningful check.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if logits.ndim != 2 or logits.shape != (n, n) or n < 2:
        raise ConfigError(
            f"contrastive logits must be square with at least 2 rows, "
            f"got {logits.shape}"
        )
    m = logits.max(axis=1, keepdims=True)
    row_lse = (m[:, 0] + np.log(np.exp(logits - m).sum(axis=1)))
    return float(np.mean(np.diag(logits)) - np.mean(row_lse) + np.log(n))


def nce_estimate(heads, z, zhat):
    """Mutual-information estimate for representation batches (monitoring)."""
    z = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    zhat = zhat.data if isinstance(zhat, Tensor) else np.asarray(zhat, dtype=np.float64)
    if z.shape != zhat.shape:
        raise ConfigError(
            f"representation batches must align, got {z.shape} and {zhat.shape}"
        )
    return nce_from_logits(heads.score_matrix_np(z, zhat))


def _params_checksum(model, heads):
    digest = hashlib.sha256()
    for p in model.params + heads.params:
        digest.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return digest.hexdigest()


def _neighbor_groups(epoch_reps, indices, m, skip=0):
    """Pull groups: the m nearest rows of epoch_reps after skipping the
    ``skip`` nearest ones (and self).  Skipping the immediate neighborhood
    aims the group at the closest cluster the example does not belong to."""
    n = epoch_reps.shape[0]
    if skip + m > n - 1:
        raise ConfigError(
            f"group_size {m} with group_skip {skip} needs at least "
            f"{skip + m + 1} training examples, have {n}"
        )
    groups = np.empty((len(indices), m), dtype=np.int64)
    for row, i in enumerate(indices):
        diff = epoch_reps - epoch_reps[i]
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        dist[i] = np.inf
        order = np.lexsort((np.arange(n), dist))
        groups[row] = order[skip : skip + m]
    return groups


def sat_train(model, heads, dataset, cfg, expected_fingerprint=None):
    """Fine-tune (model, heads) with the adversarial contrastive objective.

    Returns fresh, trained copies plus a SatLog; the inputs are not mutated.
    ``expected_fingerprint``, when given, is checked against the incoming
    model and a mismatch is logged as a warning (training proceeds).
    """
    log = SatLog()
    if expected_fingerprint is not None and model.fingerprint() != expected_fingerprint:
        msg = (
            "model fingerprint does not match the expected pretrained seed; "
            "fine-tuning an unexpected model"
        )
        log.warnings.append(msg)
        warnings.warn(msg)

    model = model.copy()
    heads = heads.copy()
    if heads.rep_dim != model.rep_dim:
        raise ConfigError(
            f"heads expect {heads.rep_dim}-wide representations, "
            f"model produces {model.rep_dim}"
        )
    n = len(dataset)
    if n < 2:
        raise ConfigError("need at least 2 training examples")
    x_all = dataset.examples
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    attack_cfg = AttackConfig(
        epsilon=cfg.epsilon,
        step_size=cfg.step_size,
        steps=cfg.attack_steps,
        group_size=cfg.group_size,
        k=1,
        random_init=True,
        seed=cfg.seed,
    )

    for epoch in range(cfg.epochs):
        epoch_reps = model.encode_np(x_all)
        order = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, 101, epoch))
        ).permutation(n)
        batch_no = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue
            t0 = time.perf_counter()
            x_batch = x_all[idx]

            groups = _neighbor_groups(
                epoch_reps, idx, cfg.group_size, cfg.group_skip
            )
            current_reps = model.encode_np(x_all)
            centroids = current_reps[groups].mean(axis=1)

            attack_rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, 202, epoch, batch_no))
            )
            x_adv = gradient_attack_batch(
                model.frozen(),
                x_batch,
                centroids,
                cfg.group_size,
                attack_cfg,
                attack_rng,
            )

            params = model.params + heads.params
            with Tape() as tape:
                z = model.encode(Tensor(x_batch))
                zhat = model.encode(Tensor(x_adv))
                logits = heads.score_matrix(z, zhat)
                loss = contrast_loss_from_logits(logits)
            grads = backward(tape, loss)
            new_params = opt.step(params, grads)
            k = len(model.params)
            model = model.with_params(new_params[:k])
            heads = heads.with_params(new_params[k:])

            wall_ms = (time.perf_counter() - t0) * 1000.0
            log.rows.append(
                (
                    epoch,
                    batch_no,
                    float(loss.item()),
                    nce_from_logits(logits.data),
                    wall_ms,
                )
            )
            batch_no += 1
        log.epoch_checksums.append(_params_checksum(model, heads))
    return model, heads, log


def write_training_log(log, path):
    """Emit the per-batch log as CSV."""
    with open(path, "w") as fh:
        fh.write("epoch,batch,contrast_loss,I_NCE,wall_ms\n")
        for epoch, batch, loss, nce, wall in log.rows:
            fh.write(f"{epoch},{batch},{loss!r},{nce!r},{wall:.3f}\n")
