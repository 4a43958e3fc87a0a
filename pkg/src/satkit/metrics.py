"""Evaluation harness: clean accuracy, defense success rate, and the mean
minimal perturbation size, plus CSV/SVG report emission.

All three metrics classify through the frozen feature library.  The attack
metrics follow a fixed selection rule: walk the test set in order, keep the
first ``n_eval`` correctly predicted points, and attack exactly those, so
two runs with the same seed evaluate identical points.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import gradient_attack, optimization_attack
from .errors import DataError, GroupError
from .knn import knn_predict

__all__ = [
    "L2Summary",
    "MetricsReport",
    "accuracy",
    "dsr",
    "l2_distance",
    "read_results_csv",
    "report",
    "write_results_csv",
]


@dataclass(frozen=True)
class L2Summary:
    """Mean minimal perturbation over successful attacks.

    ``mean_l2`` is NaN when no attack succeeded; check ``successes``.
    """

    mean_l2: float
    successes: int
    evaluated: int


@dataclass(frozen=True)
class MetricsReport:
    """One evaluated model: headline numbers plus provenance."""

    run_id: str
    model_id: str
    dataset_id: str
    seed: int
    acc: float
    dsr_small: float
    dsr_large: float
    l2_dist: float
    n_eval: int
    fingerprint: str = ""
    config_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("acc", "dsr_small", "dsr_large"):
            v = getattr(self, name)
            if not (np.isnan(v) or 0.0 <= v <= 1.0):
                raise DataError(f"{name} must lie in [0,1], got {v}")
        if self.n_eval <= 0:
            raise DataError(f"n_eval must be positive, got {self.n_eval}")


def _predict_point(model, library, x, k):
    z = model.encode_np(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    label, _ = knn_predict(library, z, k)
    return label


def accuracy(model, library, testset, k):
    """Fraction of test points whose library vote matches the true label."""
    if len(testset) == 0:
        raise DataError("cannot evaluate accuracy on an empty test set")
    hits = 0
    for i in range(len(testset)):
        hits += _predict_point(model, library, testset.examples[i], k) == int(
            testset.labels[i]
        )
    return hits / len(testset)


def _eval_points(model, library, testset, k, n_eval):
    """Indices of the first n_eval correctly predicted points, test-set order."""
    if n_eval < 1:
        raise DataError(f"n_eval must be positive, got {n_eval}")
    picked = []
    for i in range(len(testset)):
        if _predict_point(model, library, testset.examples[i], k) == int(
            testset.labels[i]
        ):
            picked.append(i)
            if len(picked) == n_eval:
                return picked
    raise DataError(
        f"test set holds only {len(picked)} correctly predicted points, "
        f"need {n_eval} (short by {n_eval - len(picked)})"
    )


def dsr(model, library, testset, cfg, n_eval):
    """Fraction of attacked points still predicted correctly.

    Attacks the first ``n_eval`` correctly predicted test points with the
    sign-step attack; per-point seeds derive from ``cfg.seed`` and the test
    index.  A point with no feasible attack group counts as defended.
    """
    points = _eval_points(model, library, testset, cfg.k, n_eval)
    defended = 0
    for i in points:
        point_seed = int(
            np.random.SeedSequence((cfg.seed, i)).generate_state(1)[0]
        )
        try:
            res = gradient_attack(
                model,
                library,
                testset.examples[i],
                int(testset.labels[i]),
                replace(cfg, seed=point_seed),
            )
        except GroupError:
            defended += 1
            continue
        defended += not res.success
    return defended / n_eval


def l2_distance(model, library, testset, n_eval, opt_cfg):
    """Mean minimal l2 perturbation over successful optimization attacks."""
    points = _eval_points(model, library, testset, opt_cfg.k, n_eval)
    sizes = []
    for i in points:
        try:
            res = optimization_attack(
                model,
                library,
                testset.examples[i],
                int(testset.labels[i]),
                opt_cfg,
            )
        except GroupError:
            continue
        if res.success:
            sizes.append(res.l2)
    if not sizes:
        return L2Summary(mean_l2=float("nan"), successes=0, evaluated=len(points))
    return L2Summary(
        mean_l2=float(np.mean(sizes)), successes=len(sizes), evaluated=len(points)
    )


_CSV_COLUMNS = (
    "run_id",
    "model",
    "dataset",
    "seed",
    "acc",
    "dsr_small",
    "dsr_large",
    "l2_dist",
    "n_eval",
)


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(runs, path):
    """Write runs as results-table rows; floats use repr for exact rereads."""
    runs = list(runs)
    if not runs:
        raise DataError("need at least one evaluated run")
    with open(path, "w") as fh:
        fh.write(",".join(_CSV_COLUMNS) + "\n")
        for r in runs:
            row = (
                r.run_id,
                r.model_id,
                r.dataset_id,
                r.seed,
                r.acc,
                r.dsr_small,
                r.dsr_large,
                r.l2_dist,
                r.n_eval,
            )
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")
    return path


def read_results_csv(path):
    """Parse a results table back into MetricsReport rows."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != ",".join(_CSV_COLUMNS):
        raise DataError(f"{path} is not a results table (bad header)")
    runs = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(_CSV_COLUMNS):
            raise DataError(
                f"{path}:{lineno}: expected {len(_CSV_COLUMNS)} cells, "
                f"got {len(cells)}"
            )
        try:
            runs.append(
                MetricsReport(
                    run_id=cells[0],
                    model_id=cells[1],
                    dataset_id=cells[2],
                    seed=int(cells[3]),
                    acc=float(cells[4]),
                    dsr_small=float(cells[5]),
                    dsr_large=float(cells[6]),
                    l2_dist=float(cells[7]),
                    n_eval=int(cells[8]),
                )
            )
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not runs:
        raise DataError(f"{path} holds no data rows")
    return runs


def report(runs, out_dir):
    """Write results.csv and an accuracy-vs-DSR scatter.svg under out_dir.

    Floats are written with repr so a reread parses to identical values.
    Returns the two paths.
    """
    runs = list(runs)
    if not runs:
        raise DataError("report needs at least one evaluated run")
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    svg_path = os.path.join(out_dir, "scatter.svg")
    write_results_csv(runs, csv_path)
    with open(svg_path, "w") as fh:
        fh.write(_scatter_svg(runs))
    return csv_path, svg_path


def _scatter_svg(runs, width=640, height=480, margin=60):
    """Accuracy (x) against small-setting DSR (y), one labeled mark per run."""
    inner_w = width - 2 * margin
    inner_h = height - 2 * margin

    def px(acc):
        return margin + acc * inner_w

    def py(d):
        return height - margin - d * inner_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{inner_w}" height="{inner_h}" '
        f'fill="none" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = px(frac)
        y = py(frac)
        parts.append(
            f'<text x="{x:.1f}" y="{height - margin + 18}" font-size="11" '
            f'text-anchor="middle">{frac:g}</text>'
        )
        parts.append(
            f'<text x="{margin - 8}" y="{y:.1f}" font-size="11" '
            f'text-anchor="end" dominant-baseline="middle">{frac:g}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 14}" font-size="13" '
        f'text-anchor="middle">accuracy</text>'
    )
    parts.append(
        f'<text x="16" y="{height / 2:.1f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {height / 2:.1f})">defense success rate</text>'
    )
    for r in runs:
        x = px(r.acc)
        y = py(r.dsr_small)
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="5" fill="steelblue" '
            f'stroke="black"/>'
        )
        parts.append(
            f'<text x="{x + 8:.2f}" y="{y - 8:.2f}" font-size="12">'
            f"{r.model_id}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
