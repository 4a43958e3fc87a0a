"""White-box feature-space attacks against a frozen encoder + kNN pipeline.

Both attacks pull the representation of a perturbed input toward a group of
nearby training instances from another class.  The sign-step attack walks a
fixed number of steepest-descent steps inside an l-infinity ball; the
optimization attack searches for the smallest l2 perturbation that flips
the kNN prediction, binary-searching the Lagrangian weight on ||delta||^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .knn import knn_predict, nearest_group
from .optim import Adam
from .tensor import Tape, Tensor, add, backward, scale, sq_dist

__all__ = [
    "AttackConfig",
    "AttackResult",
    "OptimizationConfig",
    "SMALL_ATTACK",
    "LARGE_ATTACK",
    "gradient_attack",
    "gradient_attack_batch",
    "optimization_attack",
]


@dataclass(frozen=True)
class AttackConfig:
    """Settings for the sign-step attack.

    ``epsilon`` bounds the l-infinity perturbation, ``step_size`` is the
    per-iteration step, ``steps`` the iteration count, ``group_size`` the
    number of other-class instances pulled toward, and ``k`` the vote size
    used for the success check.
    """

    epsilon: float = 0.03
    step_size: float = 0.005
    steps: int = 10
    group_size: int = 300
    k: int = 75
    random_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.steps < 1:
            raise ConfigError(f"steps must be at least 1, got {self.steps}")
        if self.group_size < 1:
            raise ConfigError(f"group_size must be at least 1, got {self.group_size}")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")


SMALL_ATTACK = AttackConfig(epsilon=0.03, step_size=0.005, steps=10)
LARGE_ATTACK = AttackConfig(epsilon=0.06, step_size=0.005, steps=20)


@dataclass(frozen=True)
class OptimizationConfig:
    """Settings for the minimal-l2 attack with Lagrangian binary search."""

    group_size: int = 300
    k: int = 75
    adam_steps: int = 200
    adam_lr: float = 0.01
    search_steps: int = 9
    lambda_lo: float = 1e-3
    lambda_hi: float = 1e3

    def __post_init__(self):
        if self.group_size < 1:
            raise ConfigError(f"group_size must be at least 1, got {self.group_size}")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.adam_steps < 1:
            raise ConfigError(f"adam_steps must be at least 1, got {self.adam_steps}")
        if self.adam_lr <= 0:
            raise ConfigError(f"adam_lr must be positive, got {self.adam_lr}")
        if self.search_steps < 1:
            raise ConfigError(
                f"search_steps must be at least 1, got {self.search_steps}"
            )
        if not 0 < self.lambda_lo < self.lambda_hi:
            raise ConfigError(
                f"need 0 < lambda_lo < lambda_hi, got "
                f"[{self.lambda_lo}, {self.lambda_hi}]"
            )


@dataclass(frozen=True)
class AttackResult:
    """Outcome of one attack on one example."""

    x_adv: np.ndarray
    success: bool
    objective_trace: tuple
    l2: float
    linf: float

    @property
    def delta_l2(self):
        return self.l2


def _group_pull_gradient(model, x_adv_row, centroid_row, group_size):
    """Gradient of sum_i ||f(x_g_i) - f(x_adv)||^2 w.r.t. x_adv.

    Uses the centroid identity: the sum equals
    group_size * ||f(x_adv) - mean_i f(x_g_i)||^2 plus a constant, so one
    squared-distance op against the centroid carries the whole gradient.
    """
    x_t = Tensor(x_adv_row, requires_grad=True)
    with Tape() as tape:
        z = model.encode(x_t)
        loss = scale(sq_dist(z, centroid_row), float(group_size))
    return backward(tape, loss)[x_t]


def _group_objective(model, x_adv_row, group_reps):
    z = model.encode_np(x_adv_row)
    diff = group_reps - z
    return float(np.sum(diff * diff))


def gradient_attack(model, library, x, true_label, cfg):
    """Sign-step attack inside the epsilon ball around x.

    The target group is fixed from the clean query; each iteration descends
    the group-pull objective by ``step_size`` times the gradient sign, then
    clips to the epsilon ball and the unit box.
    """
    model = model.frozen()
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    z_clean = model.encode_np(x)[0]
    group = nearest_group(library, z_clean, cfg.group_size, true_label)
    group_reps = library.representations[group]
    centroid = Tensor(group_reps.mean(axis=0, keepdims=True))

    rng = np.random.default_rng(cfg.seed)
    if cfg.random_init and cfg.epsilon > 0:
        x_adv = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
    else:
        x_adv = x.copy()

    trace = [_group_objective(model, x_adv, group_reps)]
    for _ in range(cfg.steps):
        g = _group_pull_gradient(model, x_adv, centroid, cfg.group_size)
        x_adv = x_adv - cfg.step_size * np.sign(g)
        x_adv = np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon)
        x_adv = np.clip(x_adv, 0.0, 1.0)
        trace.append(_group_objective(model, x_adv, group_reps))

    delta = (x_adv - x)[0]
    pred, _ = knn_predict(library, model.encode_np(x_adv)[0], cfg.k)
    return AttackResult(
        x_adv=x_adv[0],
        success=pred != true_label,
        objective_trace=tuple(trace),
        l2=float(np.linalg.norm(delta)),
        linf=float(np.max(np.abs(delta))) if delta.size else 0.0,
    )


def gradient_attack_batch(model, x_batch, centroids, group_size, cfg, rng):
    """Sign-step attack on a whole batch at once, one fixed centroid per row.

    Rows are independent (the objective separates per example), so this is
    the per-example attack run in lockstep; used inside training loops where
    the group targets are supplied by the caller.  Returns the adversarial
    batch only.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    cent = Tensor(np.asarray(centroids, dtype=np.float64))
    if cfg.random_init and cfg.epsilon > 0:
        x_adv = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
    else:
        x_adv = x.copy()
    for _ in range(cfg.steps):
        x_t = Tensor(x_adv, requires_grad=True)
        with Tape() as tape:
            z = model.encode(x_t)
            loss = scale(sq_dist(z, cent), float(group_size))
        g = backward(tape, loss)[x_t]
        x_adv = x_adv - cfg.step_size * np.sign(g)
        x_adv = np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon)
        x_adv = np.clip(x_adv, 0.0, 1.0)
    return x_adv


def optimization_attack(model, library, x, true_label, cfg=OptimizationConfig()):
    """Minimal-l2 attack: binary-search the weight trading ||delta||^2
    against the group-pull objective, keeping the smallest successful delta.

    Each trial weight runs Adam from delta = 0 with per-step projection of
    x + delta back into the unit box; every iterate is tested, and success
    means the kNN vote leaves ``true_label`` at any point along the run.
    Deterministic: no random draws.
    """
    model = model.frozen()
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    z_clean = model.encode_np(x)[0]
    pred_clean, _ = knn_predict(library, z_clean, cfg.k)
    if pred_clean != true_label:
        return AttackResult(
            x_adv=x[0],
            success=True,
            objective_trace=(0.0,),
            l2=0.0,
            linf=0.0,
        )

    group = nearest_group(library, z_clean, cfg.group_size, true_label)
    group_reps = library.representations[group]
    centroid = Tensor(group_reps.mean(axis=0, keepdims=True))
    spread = float(np.sum((group_reps - group_reps.mean(axis=0)) ** 2))

    x_const = Tensor(x)
    zero = Tensor(np.zeros_like(x))

    def run_adam(lam):
        delta = np.zeros_like(x)
        opt = Adam(lr=cfg.adam_lr)
        trace = []
        hit_l2 = np.inf
        hit_delta = None
        for _ in range(cfg.adam_steps):
            d_t = Tensor(delta, requires_grad=True)
            with Tape() as tape:
                x_adv = add(x_const, d_t)
                z = model.encode(x_adv)
                pull = scale(sq_dist(z, centroid), float(cfg.group_size))
                penalty = scale(sq_dist(d_t, zero), lam)
                loss = add(penalty, pull)
            trace.append(loss.item() + spread)
            grads = backward(tape, loss)
            (new_d,) = opt.step([d_t], grads)
            delta = np.clip(x + new_d.data, 0.0, 1.0) - x
            z_step = model.encode_np(x + delta)[0]
            pred, _ = knn_predict(library, z_step, cfg.k)
            if pred != true_label:
                l2 = float(np.linalg.norm(delta))
                if l2 < hit_l2:
                    hit_l2 = l2
                    hit_delta = delta.copy()
        return hit_delta, hit_l2, trace

    lo = np.log10(cfg.lambda_lo)
    hi = np.log10(cfg.lambda_hi)
    best_delta = None
    best_l2 = np.inf
    best_trace = ()
    for _ in range(cfg.search_steps):
        lam = 10.0 ** ((lo + hi) / 2.0)
        hit_delta, hit_l2, trace = run_adam(lam)
        if hit_delta is not None:
            if hit_l2 < best_l2:
                best_l2 = hit_l2
                best_delta = hit_delta
                best_trace = tuple(trace)
            lo = (lo + hi) / 2.0
        else:
            hi = (lo + hi) / 2.0

    if best_delta is None:
        return AttackResult(
            x_adv=x[0],
            success=False,
            objective_trace=(),
            l2=0.0,
            linf=0.0,
        )
    x_adv = np.clip(x + best_delta, 0.0, 1.0)
    delta = (x_adv - x)[0]
    return AttackResult(
        x_adv=x_adv[0],
        success=True,
        objective_trace=best_trace,
        l2=float(np.linalg.norm(delta)),
        linf=float(np.max(np.abs(delta))),
    )
