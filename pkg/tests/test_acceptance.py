"""Release acceptance suite.

One test per release criterion, in order.  Each test prints a single
verdict line with its headline numbers and, where the criterion carries a
wall-clock budget, enforces it.  These tests intentionally re-derive their
expectations from independent oracles (finite differences, exhaustive
sorts, grid scans) rather than reusing library code paths.

The directional criteria (a06, a07) train real models and take minutes;
run the suite with ``pytest tests/test_acceptance.py -v`` and expect the
whole file to finish in under half an hour on one core.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from satkit.attacks import (
    LARGE_ATTACK,
    SMALL_ATTACK,
    AttackConfig,
    OptimizationConfig,
    gradient_attack,
    optimization_attack,
)
from satkit.cli import main as cli_main
from satkit.data import AugmentationPolicy, Dataset, gen_synthetic, split
from satkit.encoder import (
    EncoderModel,
    LayerSpec,
    ScoreHeads,
    default_layer_specs,
)
from satkit.errors import GroupError, NumericalError
from satkit.knn import FeatureLibrary, build_library, knn_predict, nearest_group
from satkit.metrics import accuracy, dsr, l2_distance
from satkit.pretrain import (
    ClassifierHead,
    TrainConfig,
    alp_objective,
    at_objective,
    mat_objective,
    pgd_label_attack,
    pretrain_ssl,
    supervised_objective,
    train_at,
    train_supervised,
)
from satkit.sat import (
    SatConfig,
    contrast_loss,
    contrast_loss_from_logits,
    nce_estimate,
    nce_from_logits,
    sat_train,
)
from satkit.tensor import (
    Tape,
    Tensor,
    add,
    add_const,
    backward,
    exp,
    logsumexp,
    matmul,
    mul,
    relu,
    scale,
    tmean,
    tsum,
)


def _verdict(name, ok, detail, elapsed=None, budget=None):
    stamp = ""
    if elapsed is not None:
        stamp = f" [{elapsed:.1f}s"
        stamp += f" / {budget:.0f}s budget]" if budget is not None else "]"
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}{stamp}")
    assert ok, f"{name}: {detail}"
    if budget is not None:
        assert elapsed < budget, f"{name} over budget: {elapsed:.1f}s >= {budget}s"


# ---------------------------------------------------------------------------
# a01: autodiff gradients against central finite differences
# ---------------------------------------------------------------------------

_FD_H = 1e-5


def _random_graph_loss(rng, x):
    """A taped expression over x from a seeded grab-bag of composed ops."""
    h = x
    ops = rng.integers(0, 7, size=4)
    w = Tensor(rng.normal(size=(x.shape[1], x.shape[1])))
    for code in ops:
        if code == 0:
            h = relu(h)
        elif code == 1:
            h = scale(h, float(rng.uniform(0.5, 1.5)))
        elif code == 2:
            h = add_const(h, float(rng.uniform(-0.5, 0.5)))
        elif code == 3:
            h = mul(h, h)
        elif code == 4:
            h = matmul(h, w)
        elif code == 5:
            h = add(h, h)
        else:
            h = exp(scale(h, 0.1))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        return tsum(h)
    if kind == 1:
        return tmean(h)
    return logsumexp(h)


def _kink_safe(tape, margin=1e-3):
    """No relu input sits close enough to 0 for an h-step to cross the kink."""
    return all(
        np.min(np.abs(rec.inputs[0].data)) > margin
        for rec in tape.records
        if rec.op == "relu"
    )


def _fd_case(seed):
    """A random graph that is finite-difference friendly near its base point."""
    for sub in range(64):
        rng = np.random.default_rng([seed, sub])
        xv = rng.normal(size=(3, 4))
        x = Tensor(xv, requires_grad=True)
        try:
            with Tape() as tape:
                loss = _random_graph_loss(rng, x)
        except NumericalError:
            continue
        if _kink_safe(tape) and abs(loss.item()) < 1e3:
            return sub, x, tape, loss
    raise AssertionError(f"no finite-difference-friendly graph for seed {seed}")


def _replay_graph(seed, sub, xv):
    rng = np.random.default_rng([seed, sub])
    rng.normal(size=(3, 4))  # consume the base-point draw to align op draws
    return _random_graph_loss(rng, Tensor(xv)).item()


def _fd_rel_err(analytic, fd_flat):
    analytic = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in analytic])
    fd_flat = np.asarray(fd_flat, dtype=np.float64)
    return float(
        np.max(np.abs(analytic - fd_flat)) / max(np.max(np.abs(fd_flat)), 1e-12)
    )


def _central_diff(f, arrays):
    """Central finite differences of f over every coordinate of every array."""
    out = []
    for j, base in enumerate(arrays):
        for idx in np.ndindex(*base.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[j][idx] += _FD_H
            minus[j][idx] -= _FD_H
            out.append((f(plus) - f(minus)) / (2 * _FD_H))
    return np.array(out)


def _contrast_fd_case(seed):
    """Random score heads and batches with every relu clear of its kink."""
    for sub in range(64):
        rng = np.random.default_rng([seed, sub, 7])
        zv = rng.normal(size=(5, 4))
        zhv = rng.normal(size=(5, 4))
        heads = ScoreHeads.init(4, 6, 5, seed=int(rng.integers(2**31)))
        z = Tensor(zv, requires_grad=True)
        zh = Tensor(zhv, requires_grad=True)
        with Tape() as tape:
            loss = contrast_loss(heads, z, zh)
        if _kink_safe(tape):
            return heads, z, zh, tape, loss
    raise AssertionError(f"no kink-safe contrastive batch for seed {seed}")


def _objective_fd_case(seed):
    """Encoder + heads + clean/perturbed batches for the fine-tuning objective."""
    specs = (LayerSpec(4, 6, "relu"), LayerSpec(6, 4, "relu"))
    for sub in range(64):
        rng = np.random.default_rng([seed, sub, 13])
        model = EncoderModel.init(specs, seed=int(rng.integers(2**31)))
        heads = ScoreHeads.init(4, 5, 4, seed=int(rng.integers(2**31)))
        x = rng.uniform(0.05, 0.95, size=(6, 4))
        x_adv = np.clip(x + rng.uniform(-0.05, 0.05, size=x.shape), 0.0, 1.0)
        with Tape() as tape:
            loss = contrast_loss(
                heads, model.encode(Tensor(x)), model.encode(Tensor(x_adv))
            )
        if _kink_safe(tape):
            return model, heads, x, x_adv, tape, loss
    raise AssertionError(f"no kink-safe fine-tuning objective for seed {seed}")


def test_a01_autodiff_matches_finite_differences():
    t0 = time.monotonic()
    worst = 0.0
    graphs = 0

    # composed random graphs, gradient with respect to the input
    for seed in range(90):
        sub, x, tape, loss = _fd_case(seed)
        g = backward(tape, loss)[x]
        fd = _central_diff(lambda a: _replay_graph(seed, sub, a[0]), [x.data])
        worst = max(worst, _fd_rel_err([g], fd))
        graphs += 1

    # through the contrastive loss, gradient with respect to both batches
    for seed in range(9):
        heads, z, zh, tape, loss = _contrast_fd_case(seed)
        grads = backward(tape, loss)
        fd = _central_diff(
            lambda a: contrast_loss(heads, Tensor(a[0]), Tensor(a[1])).item(),
            [z.data, zh.data],
        )
        worst = max(worst, _fd_rel_err([grads[z], grads[zh]], fd))
        graphs += 1

    # through the full fine-tuning objective, gradient w.r.t. every parameter
    for seed in range(3):
        model, heads, x, x_adv, tape, loss = _objective_fd_case(seed)
        grads = backward(tape, loss)
        params = model.params + heads.params
        n_model = len(model.params)

        def objective(arrays):
            m2 = model.with_params([Tensor(a) for a in arrays[:n_model]])
            h2 = heads.with_params([Tensor(a) for a in arrays[n_model:]])
            return contrast_loss(
                h2, m2.encode(Tensor(x)), m2.encode(Tensor(x_adv))
            ).item()

        fd = _central_diff(objective, [p.data for p in params])
        worst = max(worst, _fd_rel_err([grads[p] for p in params], fd))
        graphs += 1

    elapsed = time.monotonic() - t0
    _verdict(
        "a01 autodiff vs central differences",
        graphs >= 100 and worst < 1e-4,
        f"max relative error {worst:.3e} over {graphs} graphs (h={_FD_H:g})",
        elapsed,
        30.0,
    )


# ---------------------------------------------------------------------------
# a02: contrastive loss and mutual-information identities
# ---------------------------------------------------------------------------

def test_a02_contrastive_identities():
    t0 = time.monotonic()
    rng = np.random.default_rng(20260814)

    # identity and bound on raw logit matrices
    worst_identity = 0.0
    worst_bound = -np.inf
    for _ in range(300):
        n = int(rng.integers(2, 41))
        logits = rng.normal(scale=3.0, size=(n, n))
        loss = contrast_loss_from_logits(Tensor(logits)).item()
        info = nce_from_logits(logits)
        worst_identity = max(worst_identity, abs(info + loss - math.log(n)))
        worst_bound = max(worst_bound, info - math.log(n))

    # the same identity through the score heads
    for s in range(10):
        n = int(rng.integers(2, 17))
        heads = ScoreHeads.init(4, 6, 5, seed=s)
        z = rng.normal(size=(n, 4))
        zh = rng.normal(size=(n, 4))
        loss = contrast_loss(heads, Tensor(z), Tensor(zh)).item()
        info = nce_estimate(heads, z, zh)
        worst_identity = max(worst_identity, abs(info + loss - math.log(n)))
        worst_bound = max(worst_bound, info - math.log(n))

    # uniform scores pin the loss at log N; equality is bit-exact whenever
    # the mean of N identical row terms divides without rounding
    exact_ok = all(
        contrast_loss_from_logits(Tensor(np.zeros((n, n)))).item() == math.log(n)
        for n in (2, 4, 8, 16, 32)
    )
    worst_uniform = max(
        abs(contrast_loss_from_logits(Tensor(np.full((n, n), c))).item() - math.log(n))
        for n in range(2, 34)
        for c in (0.0, 0.37, -1.25)
    )

    # two-pair hand case: unit diagonal, zero off-diagonal
    hand = contrast_loss_from_logits(Tensor(np.eye(2))).item()
    hand_err = abs(hand - math.log(1.0 + math.exp(-1.0)))

    elapsed = time.monotonic() - t0
    ok = (
        worst_identity <= 1e-9
        and worst_bound <= 1e-9
        and exact_ok
        and worst_uniform <= 1e-12
        and hand_err <= 1e-12
    )
    _verdict(
        "a02 contrastive identities",
        ok,
        f"identity err {worst_identity:.2e}, bound slack {worst_bound:.2e}, "
        f"uniform exact {exact_ok} (family err {worst_uniform:.2e}), "
        f"hand-case err {hand_err:.2e}",
        elapsed,
        5.0,
    )


# ---------------------------------------------------------------------------
# a03: kNN prediction and group selection against exhaustive-sort oracles
# ---------------------------------------------------------------------------

def _row_dist(reps, z):
    return [float(np.sqrt(np.sum((reps[i] - z) * (reps[i] - z)))) for i in range(len(reps))]


def _oracle_knn(reps, labels, z, k):
    d = _row_dist(reps, z)
    order = sorted(range(len(reps)), key=lambda i: (d[i], i))
    nb = order[:k]
    votes = {}
    for i in nb:
        votes[labels[i]] = votes.get(labels[i], 0) + 1
    top = max(votes.values())
    tied = [c for c in votes if votes[c] == top]
    if len(tied) == 1:
        return tied[0], nb
    means = {
        c: float(np.mean(np.array([d[i] for i in nb if labels[i] == c])))
        for c in tied
    }
    low = min(means.values())
    return min(c for c in tied if means[c] == low), nb


def _oracle_group(reps, labels, z, m, true_label):
    d = _row_dist(reps, z)
    candidates = []
    for c in sorted(set(labels)):
        if c == true_label:
            continue
        members = [i for i in range(len(labels)) if labels[i] == c]
        if len(members) < m:
            continue
        candidates.append((min(d[i] for i in members), c, members))
    if not candidates:
        return None
    _, _, members = min(candidates, key=lambda t: (t[0], t[1]))
    members = sorted(members, key=lambda i: (d[i], i))
    return members[:m]


def test_a03_knn_matches_exhaustive_oracles():
    t0 = time.monotonic()
    rng = np.random.default_rng(31415)
    group_errors = 0
    for trial in range(1000):
        n = int(rng.integers(5, 61))
        dim = int(rng.integers(1, 7))
        ncls = int(rng.integers(2, 6))
        if trial % 2:
            # coarse grid coordinates force plenty of exact distance ties
            reps = rng.integers(0, 5, size=(n, dim)) * 0.25
            z = rng.integers(0, 5, size=dim) * 0.25
        else:
            reps = rng.uniform(size=(n, dim))
            z = rng.uniform(size=dim)
        labels = [int(v) for v in rng.integers(0, ncls, size=n)]
        library = FeatureLibrary(reps, labels)

        k = int(rng.integers(1, n + 1))
        label, neighbors = knn_predict(library, z, k)
        oracle_label, oracle_nb = _oracle_knn(reps, labels, z, k)
        assert list(neighbors) == oracle_nb, f"neighbor set diverged on trial {trial}"
        assert label == oracle_label, f"vote diverged on trial {trial}"

        m = int(rng.integers(1, 9))
        y = int(rng.integers(0, ncls))
        expected = _oracle_group(reps, labels, z, m, y)
        if expected is None:
            group_errors += 1
            with pytest.raises(GroupError):
                nearest_group(library, z, m, y)
        else:
            got = nearest_group(library, z, m, y)
            assert list(got) == expected, f"group diverged on trial {trial}"

    elapsed = time.monotonic() - t0
    _verdict(
        "a03 kNN vs exhaustive oracles",
        True,
        f"1000 instances matched exactly ({group_errors} no-group cases agreed)",
        elapsed,
        30.0,
    )


# ---------------------------------------------------------------------------
# a04: sign-step attack constraint suite
# ---------------------------------------------------------------------------

def _identity_model(dim):
    m = EncoderModel.init((LayerSpec(dim, dim, "none"),), seed=0)
    return m.with_params(
        [
            Tensor(np.eye(dim), requires_grad=True),
            Tensor(np.zeros(dim), requires_grad=True),
        ]
    )


def test_a04_gradient_attack_constraints():
    t0 = time.monotonic()

    # hand case on the line: one 0.005 step from 0.3 toward the other class
    model = _identity_model(1)
    library = FeatureLibrary(np.array([[0.3], [0.5]]), [0, 1])
    cfg = AttackConfig(
        epsilon=0.1, step_size=0.005, steps=1, group_size=1, k=1, random_init=False
    )
    res = gradient_attack(model, library, np.array([0.3]), 0, cfg)
    hand_ok = res.x_adv[0] == 0.305

    # every output obeys the ball and the box; epsilon 0 is the identity
    rng = np.random.default_rng(99)
    worlds = []
    for dim in (2, 3, 4):
        ds = gen_synthetic(seed=dim, num_classes=2, dim=dim, n_per_class=15, spread=0.2)
        worlds.append((_identity_model(dim), build_library(_identity_model(dim), ds), ds))
        mlp = EncoderModel.init(
            (LayerSpec(dim, 5, "relu"), LayerSpec(5, 3, "none")), seed=dim
        )
        worlds.append((mlp, build_library(mlp, ds), ds))

    checked = zero_cases = 0
    worst_ball = -np.inf
    for trial in range(72):
        model, library, ds = worlds[trial % len(worlds)]
        i = int(rng.integers(len(ds)))
        x = ds.examples[i]
        eps = float(rng.choice([0.0, 0.01, 0.03, 0.06, 0.2]))
        cfg = AttackConfig(
            epsilon=eps,
            step_size=float(rng.choice([0.002, 0.005, 0.02])),
            steps=int(rng.choice([1, 5, 10])),
            group_size=int(rng.choice([1, 2])),
            k=int(rng.choice([1, 3])),
            random_init=bool(rng.integers(2)),
            seed=trial,
        )
        res = gradient_attack(model, library, x, int(ds.labels[i]), cfg)
        delta = res.x_adv - x
        worst_ball = max(worst_ball, float(np.max(np.abs(delta))) - eps)
        assert np.max(np.abs(delta)) <= eps + 1e-12, f"ball violated on trial {trial}"
        assert res.x_adv.min() >= 0.0 and res.x_adv.max() <= 1.0, (
            f"box violated on trial {trial}"
        )
        if eps == 0.0:
            zero_cases += 1
            assert np.array_equal(res.x_adv, x), f"epsilon-0 moved x on trial {trial}"
        checked += 1

    elapsed = time.monotonic() - t0
    _verdict(
        "a04 sign-step attack constraints",
        hand_ok and checked == 72 and zero_cases > 0,
        f"hand case exact {hand_ok}, {checked} attacks in ball/box "
        f"(worst slack {worst_ball:.2e}), {zero_cases} epsilon-0 identities",
        elapsed,
        10.0,
    )


# ---------------------------------------------------------------------------
# a05: minimal-l2 attack against a grid-scan oracle
# ---------------------------------------------------------------------------

def test_a05_optimization_attack_oracle():
    t0 = time.monotonic()
    model = _identity_model(1)
    library = FeatureLibrary(np.array([[0.0], [1.0]]), [0, 1])
    x = np.array([0.2])

    oracle = None
    for step in range(1, 20001):
        delta = step * 1e-4
        pred, _ = knn_predict(library, np.array([0.2 + delta]), 1)
        if pred != 0:
            oracle = delta
            break
    assert oracle is not None

    res = optimization_attack(model, library, x, 0, OptimizationConfig(group_size=1, k=1))
    gap = abs(res.l2 - oracle)

    best = []
    prev = np.inf
    monotone = True
    for steps in (1, 3, 5, 7, 9, 11):
        cfg = OptimizationConfig(group_size=1, k=1, search_steps=steps)
        r = optimization_attack(model, library, x, 0, cfg)
        l2 = r.l2 if r.success else np.inf
        monotone = monotone and l2 <= prev + 1e-15
        prev = l2
        best.append(l2)

    elapsed = time.monotonic() - t0
    _verdict(
        "a05 minimal-l2 attack vs grid oracle",
        res.success and gap < 0.02 and monotone,
        f"l2 {res.l2:.4f} vs oracle {oracle:.4f} (gap {gap:.4f}), "
        f"best over search depths {['%.4f' % b for b in best]} non-increasing",
        elapsed,
        60.0,
    )


# ---------------------------------------------------------------------------
# a06: the contrastive representation resists feature attacks better than
#      the supervised one, at matched capacity on the stock dataset
# ---------------------------------------------------------------------------

_DESK_CLASSES = 10
_DESK_DIM = 32
_DESK_SEED = 7


def _desk_dataset():
    full = gen_synthetic(
        seed=_DESK_SEED,
        num_classes=_DESK_CLASSES,
        dim=_DESK_DIM,
        n_per_class=600,
        spread=0.35,
    )
    return split(full, (5 / 6, 1 / 6), seed=_DESK_SEED)


def test_a06_contrastive_beats_supervised_robustness():
    t0 = time.monotonic()
    train, test = _desk_dataset()
    specs = default_layer_specs(_DESK_DIM)
    small = replace(SMALL_ATTACK, seed=_DESK_SEED)
    large = replace(LARGE_ATTACK, seed=_DESK_SEED)
    opt_cfg = OptimizationConfig()

    sup_model = EncoderModel.init(specs, seed=1)
    sup_head = ClassifierHead.init(128, _DESK_CLASSES, seed=3)
    sup_model, sup_head, _ = train_supervised(
        train,
        sup_model,
        sup_head,
        TrainConfig(epochs=100, batch_size=20, lr=0.5, optimizer="sgd", seed=_DESK_SEED),
    )

    ssl_model = EncoderModel.init(specs, seed=1)
    ssl_heads = ScoreHeads.init(128, 64, 64, seed=2)
    ssl_model, ssl_heads, _ = pretrain_ssl(
        train,
        ssl_model,
        ssl_heads,
        TrainConfig(
            epochs=40,
            batch_size=100,
            lr=1e-3,
            optimizer="adam",
            seed=_DESK_SEED,
            augment_policy=AugmentationPolicy(jitter=0.05, mask_prob=0.1),
        ),
    )

    rows = {}
    for tag, model in (("sup", sup_model), ("ssl", ssl_model)):
        library = build_library(model, train)
        rows[tag] = (
            accuracy(model, library, test, k=75),
            dsr(model, library, test, small, 200),
            dsr(model, library, test, large, 200),
            l2_distance(model, library, test, 25, opt_cfg),
        )

    sup_acc, sup_small, sup_large, sup_l2 = rows["sup"]
    ssl_acc, ssl_small, ssl_large, ssl_l2 = rows["ssl"]
    ok = (
        ssl_small > sup_small
        and ssl_large > sup_large
        and sup_l2.successes > 0
        and ssl_l2.successes > 0
        and ssl_l2.mean_l2 > sup_l2.mean_l2
    )
    elapsed = time.monotonic() - t0
    _verdict(
        "a06 contrastive robustness ordering",
        ok,
        f"dsr small {ssl_small:.3f} > {sup_small:.3f}, "
        f"dsr large {ssl_large:.3f} > {sup_large:.3f}, "
        f"mean l2 {ssl_l2.mean_l2:.3f} > {sup_l2.mean_l2:.3f} "
        f"(acc ssl {ssl_acc:.3f} sup {sup_acc:.3f})",
        elapsed,
        600.0,
    )


# ---------------------------------------------------------------------------
# a07: adversarial fine-tuning lifts DSR with at most a small accuracy cost
# ---------------------------------------------------------------------------

_SEED_SSL = TrainConfig(
    epochs=30,
    batch_size=20,
    lr=1e-2,
    optimizer="adam",
    seed=_DESK_SEED,
    augment_policy=AugmentationPolicy(jitter=0.0, mask_prob=0.0),
)
_FINE_TUNE = SatConfig(
    epochs=30,
    batch_size=100,
    lr=1.2e-2,
    optimizer="adam",
    epsilon=0.03,
    step_size=0.005,
    attack_steps=10,
    group_size=50,
    group_skip=300,
    seed=_DESK_SEED,
)


def test_a07_fine_tuning_raises_dsr_with_small_acc_cost():
    t0 = time.monotonic()
    train, test = _desk_dataset()
    small = replace(SMALL_ATTACK, seed=_DESK_SEED)

    model = EncoderModel.init(default_layer_specs(_DESK_DIM), seed=1)
    heads = ScoreHeads.init(128, 64, 64, seed=2)
    model, heads, _ = pretrain_ssl(train, model, heads, _SEED_SSL)

    library = build_library(model, train)
    acc_before = accuracy(model, library, test, k=75)
    dsr_before = dsr(model, library, test, small, 200)

    tuned, tuned_heads, _ = sat_train(model, heads, train, _FINE_TUNE)

    tuned_library = build_library(tuned, train)
    acc_after = accuracy(tuned, tuned_library, test, k=75)
    dsr_after = dsr(tuned, tuned_library, test, small, 200)

    gain = dsr_after - dsr_before
    drop = acc_before - acc_after
    elapsed = time.monotonic() - t0
    _verdict(
        "a07 fine-tuning robustness gain",
        gain >= 0.10 and drop <= 0.05,
        f"dsr {dsr_before:.3f} -> {dsr_after:.3f} ({gain * 100:+.1f}pp), "
        f"acc {acc_before:.3f} -> {acc_after:.3f} ({-drop * 100:+.1f}pp)",
        elapsed,
        600.0,
    )


# ---------------------------------------------------------------------------
# a08: fine-tuning never reads labels
# ---------------------------------------------------------------------------

def test_a08_fine_tuning_ignores_labels():
    t0 = time.monotonic()
    ds = gen_synthetic(seed=5, num_classes=3, dim=6, n_per_class=20, spread=0.15)
    shuffled = Dataset(
        ds.examples,
        np.random.default_rng(1).permutation(ds.labels),
        ds.num_classes,
    )
    assert not np.array_equal(ds.labels, shuffled.labels)

    cfg = SatConfig(
        epochs=2,
        batch_size=16,
        lr=1e-3,
        optimizer="adam",
        epsilon=0.03,
        step_size=0.005,
        attack_steps=5,
        group_size=5,
        group_skip=10,
        seed=11,
    )
    model = EncoderModel.init((LayerSpec(6, 10, "relu"), LayerSpec(10, 6, "relu")), seed=4)
    heads = ScoreHeads.init(6, 8, 6, seed=5)

    m_true, h_true, log_true = sat_train(model, heads, ds, cfg)
    m_shuf, h_shuf, log_shuf = sat_train(model, heads, shuffled, cfg)

    same_trajectory = log_true.epoch_checksums == log_shuf.epoch_checksums
    same_params = all(
        np.array_equal(a.data, b.data)
        for a, b in zip(m_true.params + h_true.params, m_shuf.params + h_shuf.params)
    )
    # row layout is (epoch, batch, loss, nce, wall_ms); timing may differ
    same_rows = [r[:4] for r in log_true.rows] == [r[:4] for r in log_shuf.rows]

    elapsed = time.monotonic() - t0
    _verdict(
        "a08 label independence of fine-tuning",
        same_trajectory and same_params and same_rows,
        f"epoch checksums identical {same_trajectory}, parameters bit-equal "
        f"{same_params}, loss trace identical {same_rows}",
        elapsed,
        None,
    )


# ---------------------------------------------------------------------------
# a09: supervised baseline sanity
# ---------------------------------------------------------------------------

def _head_pred(model, head, x):
    return int(np.argmax(head.apply_np(model.encode_np(np.atleast_2d(x)))[0]))


def _label_dsr(model, head, test, eps, step, steps, n=60):
    correct = [
        i
        for i in range(len(test))
        if _head_pred(model, head, test.examples[i]) == int(test.labels[i])
    ][:n]
    assert len(correct) == n, f"need {n} correctly classified points, got {len(correct)}"
    held = 0
    for i in correct:
        x_adv = pgd_label_attack(
            model,
            head,
            test.examples[i],
            int(test.labels[i]),
            epsilon=eps,
            step_size=step,
            steps=steps,
            seed=1000 + i,
        )
        held += _head_pred(model, head, x_adv) == int(test.labels[i])
    return held / n


def test_a09_supervised_baseline_sanity():
    t0 = time.monotonic()

    # the robustly trained classifier holds up better under the label attack
    eps = 0.12
    full = gen_synthetic(seed=3, num_classes=4, dim=16, n_per_class=150, spread=0.22)
    train, test = split(full, (2 / 3, 1 / 3), seed=3)
    specs = (LayerSpec(16, 64, "relu"), LayerSpec(64, 32, "relu"))
    cfg = TrainConfig(
        epochs=40,
        batch_size=25,
        lr=5e-3,
        optimizer="adam",
        seed=3,
        pgd_epsilon=eps,
        pgd_step_size=eps / 4,
        pgd_steps=5,
    )
    m_plain, h_plain, _ = train_supervised(
        train, EncoderModel.init(specs, seed=1), ClassifierHead.init(32, 4, seed=2), cfg
    )
    m_at, h_at, _ = train_at(
        train, EncoderModel.init(specs, seed=1), ClassifierHead.init(32, 4, seed=2), cfg
    )
    dsr_plain = _label_dsr(m_plain, h_plain, test, eps, eps / 4, 10)
    dsr_at = _label_dsr(m_at, h_at, test, eps, eps / 4, 10)

    # objective algebra at fixed parameters
    rng = np.random.default_rng(17)
    worst_additivity = 0.0
    alp_exact = True
    for s in range(20):
        model = EncoderModel.init(
            (LayerSpec(5, 7, "relu"), LayerSpec(7, 4, "relu")), seed=s
        )
        head = ClassifierHead.init(4, 3, seed=s + 100)
        x = rng.uniform(size=(8, 5))
        x_adv = np.clip(x + rng.uniform(-0.1, 0.1, size=x.shape), 0.0, 1.0)
        y = rng.integers(0, 3, size=8)
        mat = mat_objective(model, head, x, x_adv, y)
        parts = at_objective(model, head, x_adv, y) + supervised_objective(
            model, head, x, y
        )
        worst_additivity = max(worst_additivity, abs(mat - parts))
        alp_exact = alp_exact and (
            alp_objective(model, head, x, x_adv, y, weight=0.0)
            == supervised_objective(model, head, x, y)
        )

    elapsed = time.monotonic() - t0
    _verdict(
        "a09 supervised baseline sanity",
        dsr_at > dsr_plain and worst_additivity <= 1e-12 and alp_exact,
        f"label-attack dsr AT {dsr_at:.3f} > plain {dsr_plain:.3f} (eps {eps}), "
        f"additivity err {worst_additivity:.2e}, zero-weight pairing exact {alp_exact}",
        elapsed,
        None,
    )


# ---------------------------------------------------------------------------
# a10: the command-line pipeline is byte-deterministic end to end
# ---------------------------------------------------------------------------

def _run_cli(*argv):
    rc = cli_main([str(a) for a in argv])
    assert rc == 0, f"command failed: {argv}"


def _full_pipeline(root):
    data = root / "data"
    _run_cli(
        "gen-data", "--seed", 11, "--out", data,
        "--classes", 3, "--dim", 8, "--train-per-class", 30,
        "--test-per-class", 10, "--spread", 0.08,
    )
    _run_cli(
        "pretrain-ssl", "--seed", 11, "--train", data / "train.f32",
        "--out", root / "ssl", "--hidden", 16, "--rep-dim", 8,
        "--head-hidden", 8, "--head-out", 6, "--epochs", 2,
        "--batch-size", 10, "--lr", 0.01,
    )
    _run_cli(
        "sat", "--seed", 11, "--train", data / "train.f32",
        "--model", root / "ssl" / "model.satm", "--out", root / "sat",
        "--epochs", 1, "--batch-size", 10, "--attack-steps", 2,
        "--group-size", 4, "--group-skip", 8,
    )
    _run_cli(
        "train-sup", "--seed", 11, "--train", data / "train.f32",
        "--out", root / "sup", "--hidden", 16, "--rep-dim", 8,
        "--epochs", 2, "--batch-size", 10, "--lr", 0.01,
    )
    _run_cli(
        "build-library", "--train", data / "train.f32",
        "--model", root / "sat" / "model.satm", "--out", root / "lib",
    )
    for tag, model_file, library in (
        ("sat", root / "sat" / "model.satm", root / "lib" / "library.satl"),
        ("sup", root / "sup" / "model.satm", None),
    ):
        args = [
            "eval", "--seed", 11, "--train", data / "train.f32",
            "--test", data / "test.f32", "--model", model_file,
            "--out", root / f"eval-{tag}", "--run-id", f"{tag}-run",
            "--model-id", tag, "--dataset-id", "synth",
            "--k", 5, "--group-size", 4, "--n-eval", 4, "--l2-n-eval", 2,
            "--small-steps", 2, "--large-steps", 2,
            "--adam-steps", 8, "--search-steps", 2,
        ]
        if library is not None:
            args += ["--library", library]
        _run_cli(*args)
    _run_cli(
        "report", root / "eval-sat" / "results.csv",
        root / "eval-sup" / "results.csv", "--out", root / "report",
    )
    return (root / "report" / "results.csv").read_bytes()


def test_a10_cli_pipeline_byte_identical(tmp_path):
    t0 = time.monotonic()
    first = _full_pipeline(tmp_path / "first")
    second = _full_pipeline(tmp_path / "second")
    rows = first.decode().splitlines()
    elapsed = time.monotonic() - t0
    _verdict(
        "a10 pipeline determinism",
        first == second and len(rows) == 3,
        f"two full runs produced byte-identical results tables "
        f"({len(first)} bytes, {len(rows) - 1} model rows)",
        elapsed,
        None,
    )
