"""Command-line interface: data generation, training, attacks, evaluation.

Every subcommand shares three flags: ``--seed`` controls all random
draws, ``--config`` names a key=value file supplying defaults that
explicit flags override, and ``--out`` is the output directory (created
if missing).  Exit codes: 0 success, 1 usage error, 2 data or model
error.  With a fixed seed every command is bit-reproducible; results.csv
never embeds timestamps.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, OptimizationConfig, gradient_attack, optimization_attack
from .data import (
    _F32_MAGIC,
    AugmentationPolicy,
    gen_synthetic,
    load_f32,
    load_raw8,
    save_f32,
    save_raw8,
    split,
)
from .encoder import EncoderModel, LayerSpec, ScoreHeads, load_params, save_params
from .errors import ConfigError, SatkitError
from .knn import build_library, knn_predict, load_library, save_library
from .metrics import (
    MetricsReport,
    accuracy,
    dsr,
    l2_distance,
    read_results_csv,
    report,
    write_results_csv,
)
from .pretrain import (
    ClassifierHead,
    TrainConfig,
    merge_classifier,
    pretrain_ssl,
    train_alp,
    train_at,
    train_mat,
    train_supervised,
)
from .sat import SatConfig, sat_train, write_training_log

__all__ = ["main"]


class UsageError(Exception):
    """Bad flags, unknown config keys, or missing required inputs."""


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems as exceptions."""

    def error(self, message):
        raise UsageError(message)


def _bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class _Opt:
    """One overridable option: flag name, value parser, default, help."""

    name: str
    kind: object
    default: object
    help: str

    @property
    def dest(self):
        return self.name.replace("-", "_")


_DATASET_OPTS = [
    _Opt("dim", int, None, "input width for headerless RAW8 files"),
    _Opt("classes", int, None, "class count for RAW8 files (default: inferred)"),
]

_ARCH_OPTS = [
    _Opt("hidden", int, 256, "width of the first dense layer"),
    _Opt("rep-dim", int, 128, "width of the representation layer"),
]

_LOOP_OPTS = [
    _Opt("epochs", int, 5, "training epochs"),
    _Opt("batch-size", int, 100, "examples per batch"),
    _Opt("lr", float, 1e-3, "learning rate"),
    _Opt("optimizer", str, "adam", "optimizer name (adam or sgd)"),
]

_COMMANDS = {
    "gen-data": [
        _Opt("classes", int, 10, "number of classes"),
        _Opt("dim", int, 32, "input dimension"),
        _Opt("train-per-class", int, 500, "training examples per class"),
        _Opt("test-per-class", int, 100, "test examples per class"),
        _Opt("spread", float, 0.35, "class blob standard deviation"),
        _Opt("format", str, "f32", "output format: f32 or raw8"),
    ],
    "pretrain-ssl": [
        _Opt("train", str, None, "training dataset path"),
        *_DATASET_OPTS,
        *_ARCH_OPTS,
        _Opt("head-hidden", int, 64, "score-head hidden width"),
        _Opt("head-out", int, 64, "score-head output width"),
        _Opt("temperature", float, 1.0, "score temperature"),
        *_LOOP_OPTS,
        _Opt("jitter", float, 0.05, "augmentation jitter amplitude"),
        _Opt("mask-prob", float, 0.0, "augmentation masking probability"),
        _Opt("flip", _bool, False, "augmentation coordinate mirroring"),
    ],
    "train-sup": None,
    "train-at": None,
    "train-mat": None,
    "train-alp": None,
    "sat": [
        _Opt("train", str, None, "training dataset path"),
        *_DATASET_OPTS,
        _Opt("model", str, None, "pretrained seed model path"),
        *_LOOP_OPTS,
        _Opt("epsilon", float, 0.03, "training attack radius"),
        _Opt("step-size", float, 0.005, "training attack step size"),
        _Opt("attack-steps", int, 10, "training attack iterations"),
        _Opt("group-size", int, 300, "pull-group size"),
        _Opt("group-skip", int, 300, "nearest representations to skip"),
    ],
    "build-library": [
        _Opt("train", str, None, "training dataset path"),
        *_DATASET_OPTS,
        _Opt("model", str, None, "encoder model path"),
    ],
    "attack": [
        _Opt("test", str, None, "test dataset path"),
        *_DATASET_OPTS,
        _Opt("model", str, None, "encoder model path"),
        _Opt("library", str, None, "feature library path"),
        _Opt("mode", str, "grad", "attack mode: grad or opt"),
        _Opt("n-eval", int, 200, "correctly predicted points to attack"),
        _Opt("k", int, 75, "kNN vote size"),
        _Opt("group-size", int, 300, "attack target group size"),
        _Opt("epsilon", float, 0.03, "grad mode: attack radius"),
        _Opt("step-size", float, 0.005, "grad mode: step size"),
        _Opt("steps", int, 10, "grad mode: iterations"),
        _Opt("adam-steps", int, 200, "opt mode: Adam iterations per lambda"),
        _Opt("adam-lr", float, 0.01, "opt mode: Adam learning rate"),
        _Opt("search-steps", int, 9, "opt mode: lambda bisection steps"),
        _Opt("lambda-lo", float, 1e-3, "opt mode: lambda bracket low end"),
        _Opt("lambda-hi", float, 1e3, "opt mode: lambda bracket high end"),
    ],
    "eval": [
        _Opt("train", str, None, "training dataset path (for the library)"),
        _Opt("test", str, None, "test dataset path"),
        *_DATASET_OPTS,
        _Opt("model", str, None, "encoder model path"),
        _Opt("library", str, None, "feature library path (default: built)"),
        _Opt("run-id", str, None, "results row id (default: <model-id>-s<seed>)"),
        _Opt("model-id", str, None, "model label (default: model file stem)"),
        _Opt("dataset-id", str, None, "dataset label (default: test file stem)"),
        _Opt("k", int, 75, "kNN vote size"),
        _Opt("group-size", int, 300, "attack target group size"),
        _Opt("n-eval", int, 200, "points attacked for each DSR"),
        _Opt("l2-n-eval", int, 0, "points for the l2 metric (0: same as n-eval)"),
        _Opt("small-epsilon", float, 0.03, "small-setting attack radius"),
        _Opt("small-step-size", float, 0.005, "small-setting step size"),
        _Opt("small-steps", int, 10, "small-setting iterations"),
        _Opt("large-epsilon", float, 0.06, "large-setting attack radius"),
        _Opt("large-step-size", float, 0.005, "large-setting step size"),
        _Opt("large-steps", int, 20, "large-setting iterations"),
        _Opt("adam-steps", int, 200, "l2 attack: Adam iterations per lambda"),
        _Opt("adam-lr", float, 0.01, "l2 attack: Adam learning rate"),
        _Opt("search-steps", int, 9, "l2 attack: lambda bisection steps"),
    ],
    "report": [],
}

_SUP_OPTS = [
    _Opt("train", str, None, "training dataset path"),
    *_DATASET_OPTS,
    *_ARCH_OPTS,
    *_LOOP_OPTS,
    _Opt("pgd-epsilon", float, 0.03, "label attack radius"),
    _Opt("pgd-step-size", float, 0.01, "label attack step size"),
    _Opt("pgd-steps", int, 5, "label attack iterations"),
    _Opt("alp-weight", float, 0.5, "logit pairing weight"),
]
for _name in ("train-sup", "train-at", "train-mat", "train-alp"):
    _COMMANDS[_name] = _SUP_OPTS

_HELP = {
    "gen-data": "generate a synthetic train/test pair",
    "pretrain-ssl": "contrastive pretraining of an encoder",
    "train-sup": "supervised cross-entropy baseline",
    "train-at": "adversarial-only supervised baseline",
    "train-mat": "mixed clean+adversarial supervised baseline",
    "train-alp": "logit-pairing supervised baseline",
    "sat": "adversarial fine-tuning of a pretrained encoder",
    "build-library": "freeze training representations into a library",
    "attack": "attack a model and record per-point outcomes",
    "eval": "compute ACC, DSR, and l2 metrics for one model",
    "report": "merge results tables into results.csv and scatter.svg",
}


def build_parser():
    parser = _Parser(
        prog="satkit",
        description="Desk-scale testbed for adversarially robust "
        "self-supervised features.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, opts in _COMMANDS.items():
        sub = commands.add_parser(name, help=_HELP[name], description=_HELP[name])
        sub.add_argument("--seed", type=int, default=None, help="master seed")
        sub.add_argument(
            "--config", default=None, help="key=value file of option defaults"
        )
        sub.add_argument("--out", default=None, help="output directory")
        if name == "report":
            sub.add_argument(
                "inputs", nargs="+", help="results tables to merge"
            )
        for opt in opts:
            sub.add_argument(
                f"--{opt.name}",
                dest=opt.dest,
                type=opt.kind,
                default=None,
                help=f"{opt.help} (default: {opt.default})",
            )
    return parser


def _read_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, opts):
    """Merge explicit flags over config-file values over schema defaults."""
    config = _read_config_file(args.config) if args.config else {}
    known = {opt.dest for opt in opts} | {"seed", "out"}
    for key in config:
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
    values = {}
    for opt in opts:
        flag = getattr(args, opt.dest)
        if flag is not None:
            values[opt.dest] = flag
        elif opt.dest in config:
            values[opt.dest] = opt.kind(config[opt.dest])
        else:
            values[opt.dest] = opt.default
    seed = args.seed
    if seed is None:
        seed = int(config.get("seed", 0))
    if seed < 0:
        raise UsageError(f"seed must be non-negative, got {seed}")
    out = args.out if args.out is not None else config.get("out")
    return values, seed, out


def _require(values, *keys):
    for key in keys:
        if values[key] is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _need_out(out):
    if out is None:
        raise UsageError("--out is required")
    os.makedirs(out, exist_ok=True)
    return out


def _load_dataset(path, dim, classes):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _F32_MAGIC:
        return load_f32(path)
    if dim is None:
        raise UsageError(f"{path} is a headerless RAW8 file; pass --dim")
    return load_raw8(path, dim, classes)


def _load_encoder(path, need_heads=False):
    model, heads = load_params(path)
    if need_heads and heads is None:
        raise UsageError(
            f"{path} holds no score heads; pass a contrastive pretraining "
            "checkpoint"
        )
    return model, heads


def _write_loss_log(losses, path):
    with open(path, "w") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(losses):
            fh.write(f"{epoch},{loss!r}\n")


def _file_stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _cmd_gen_data(values, seed, out):
    out = _need_out(out)
    if values["format"] not in ("f32", "raw8"):
        raise UsageError(f"format must be f32 or raw8, got {values['format']!r}")
    per_class = values["train_per_class"] + values["test_per_class"]
    full = gen_synthetic(
        seed=seed,
        num_classes=values["classes"],
        dim=values["dim"],
        n_per_class=per_class,
        spread=values["spread"],
    )
    train_frac = values["train_per_class"] / per_class
    train, test = split(full, (train_frac, 1.0 - train_frac), seed=seed)
    save = save_f32 if values["format"] == "f32" else save_raw8
    paths = []
    for name, part in (("train", train), ("test", test)):
        path = os.path.join(out, f"{name}.{values['format']}")
        save(part, path)
        paths.append(path)
        print(f"wrote {path} ({len(part)} examples, {part.dim} dims)")
    return paths


def _cmd_pretrain_ssl(values, seed, out):
    _require(values, "train")
    out = _need_out(out)
    train = _load_dataset(values["train"], values["dim"], values["classes"])
    specs = (
        LayerSpec(train.dim, values["hidden"], "relu"),
        LayerSpec(values["hidden"], values["rep_dim"], "relu"),
    )
    model = EncoderModel.init(specs, seed=seed)
    heads = ScoreHeads.init(
        values["rep_dim"],
        values["head_hidden"],
        values["head_out"],
        seed=seed + 1,
        temperature=values["temperature"],
    )
    config = TrainConfig(
        epochs=values["epochs"],
        batch_size=values["batch_size"],
        lr=values["lr"],
        optimizer=values["optimizer"],
        seed=seed,
        augment_policy=AugmentationPolicy(
            jitter=values["jitter"],
            mask_prob=values["mask_prob"],
            flip=values["flip"],
        ),
    )
    model, heads, losses = pretrain_ssl(train, model, heads, config)
    model_path = os.path.join(out, "model.satm")
    save_params(model, model_path, heads=heads)
    _write_loss_log(losses, os.path.join(out, "train_log.csv"))
    print(
        f"wrote {model_path} (final epoch mean loss {losses[-1]:.6f} "
        f"over {config.epochs} epochs)"
    )
    return model_path


_SUP_TRAINERS = {
    "train-sup": train_supervised,
    "train-at": train_at,
    "train-mat": train_mat,
    "train-alp": train_alp,
}


def _cmd_train_sup(command, values, seed, out):
    _require(values, "train")
    out = _need_out(out)
    train = _load_dataset(values["train"], values["dim"], values["classes"])
    specs = (
        LayerSpec(train.dim, values["hidden"], "relu"),
        LayerSpec(values["hidden"], values["rep_dim"], "relu"),
    )
    model = EncoderModel.init(specs, seed=seed)
    head = ClassifierHead.init(values["rep_dim"], train.num_classes, seed=seed + 1)
    config = TrainConfig(
        epochs=values["epochs"],
        batch_size=values["batch_size"],
        lr=values["lr"],
        optimizer=values["optimizer"],
        seed=seed,
        pgd_epsilon=values["pgd_epsilon"],
        pgd_step_size=values["pgd_step_size"],
        pgd_steps=values["pgd_steps"],
        alp_weight=values["alp_weight"],
    )
    model, head, losses = _SUP_TRAINERS[command](train, model, head, config)
    model_path = os.path.join(out, "model.satm")
    save_params(merge_classifier(model, head), model_path)
    _write_loss_log(losses, os.path.join(out, "train_log.csv"))
    print(
        f"wrote {model_path} (final epoch mean loss {losses[-1]:.6f} "
        f"over {config.epochs} epochs)"
    )
    return model_path


def _cmd_sat(values, seed, out):
    _require(values, "train", "model")
    out = _need_out(out)
    train = _load_dataset(values["train"], values["dim"], values["classes"])
    model, heads = _load_encoder(values["model"], need_heads=True)
    config = SatConfig(
        epochs=values["epochs"],
        batch_size=values["batch_size"],
        lr=values["lr"],
        optimizer=values["optimizer"],
        epsilon=values["epsilon"],
        step_size=values["step_size"],
        attack_steps=values["attack_steps"],
        group_size=values["group_size"],
        group_skip=values["group_skip"],
        seed=seed,
    )
    model, heads, log = sat_train(model, heads, train, config)
    model_path = os.path.join(out, "model.satm")
    save_params(model, model_path, heads=heads)
    write_training_log(log, os.path.join(out, "sat_log.csv"))
    final = log.epoch_mean_loss(config.epochs - 1)
    print(f"wrote {model_path} (final epoch mean contrast loss {final:.6f})")
    return model_path


def _cmd_build_library(values, seed, out):
    _require(values, "train", "model")
    out = _need_out(out)
    train = _load_dataset(values["train"], values["dim"], values["classes"])
    model, _ = _load_encoder(values["model"])
    library = build_library(model, train)
    library_path = os.path.join(out, "library.satl")
    save_library(library, library_path)
    print(
        f"wrote {library_path} ({len(library)} rows, "
        f"rep dim {library.rep_dim})"
    )
    return library_path


def _first_correct(model, library, testset, k, n_eval):
    picked = []
    for i in range(len(testset)):
        z = model.encode_np(testset.examples[i : i + 1])[0]
        label, _ = knn_predict(library, z, k)
        if label == int(testset.labels[i]):
            picked.append(i)
            if len(picked) == n_eval:
                return picked
    raise UsageError(
        f"test set holds only {len(picked)} correctly predicted points, "
        f"need {n_eval}; lower --n-eval"
    )


def _cmd_attack(values, seed, out):
    _require(values, "test", "model", "library")
    out = _need_out(out)
    if values["mode"] not in ("grad", "opt"):
        raise UsageError(f"mode must be grad or opt, got {values['mode']!r}")
    test = _load_dataset(values["test"], values["dim"], values["classes"])
    model, _ = _load_encoder(values["model"])
    library = load_library(values["library"])
    library.check_model(model)
    points = _first_correct(model, library, test, values["k"], values["n_eval"])
    rows = []
    for i in points:
        x = test.examples[i]
        label = int(test.labels[i])
        if values["mode"] == "grad":
            point_seed = int(
                np.random.SeedSequence((seed, i)).generate_state(1)[0]
            )
            cfg = AttackConfig(
                epsilon=values["epsilon"],
                step_size=values["step_size"],
                steps=values["steps"],
                group_size=values["group_size"],
                k=values["k"],
                seed=point_seed,
            )
            res = gradient_attack(model, library, x, label, cfg)
        else:
            cfg = OptimizationConfig(
                group_size=values["group_size"],
                k=values["k"],
                adam_steps=values["adam_steps"],
                adam_lr=values["adam_lr"],
                search_steps=values["search_steps"],
                lambda_lo=values["lambda_lo"],
                lambda_hi=values["lambda_hi"],
            )
            res = optimization_attack(model, library, x, label, cfg)
        rows.append((i, label, res.success, res.l2, res.linf))
    attack_path = os.path.join(out, "attack.csv")
    with open(attack_path, "w") as fh:
        fh.write("index,label,success,l2,linf\n")
        for i, label, success, l2, linf in rows:
            fh.write(f"{i},{label},{int(success)},{l2!r},{linf!r}\n")
    n_success = sum(r[2] for r in rows)
    print(
        f"wrote {attack_path} ({n_success}/{len(rows)} attacks succeeded, "
        f"mode {values['mode']})"
    )
    return attack_path


def _cmd_eval(values, seed, out):
    _require(values, "train", "test", "model")
    out = _need_out(out)
    train = _load_dataset(values["train"], values["dim"], values["classes"])
    test = _load_dataset(values["test"], values["dim"], values["classes"])
    model, _ = _load_encoder(values["model"])
    if values["library"] is not None:
        library = load_library(values["library"])
        library.check_model(model)
    else:
        library = build_library(model, train)
    small = AttackConfig(
        epsilon=values["small_epsilon"],
        step_size=values["small_step_size"],
        steps=values["small_steps"],
        group_size=values["group_size"],
        k=values["k"],
        seed=seed,
    )
    large = AttackConfig(
        epsilon=values["large_epsilon"],
        step_size=values["large_step_size"],
        steps=values["large_steps"],
        group_size=values["group_size"],
        k=values["k"],
        seed=seed,
    )
    opt_cfg = OptimizationConfig(
        group_size=values["group_size"],
        k=values["k"],
        adam_steps=values["adam_steps"],
        adam_lr=values["adam_lr"],
        search_steps=values["search_steps"],
    )
    acc = accuracy(model, library, test, values["k"])
    dsr_small = dsr(model, library, test, small, values["n_eval"])
    dsr_large = dsr(model, library, test, large, values["n_eval"])
    l2_n_eval = values["l2_n_eval"] or values["n_eval"]
    summary = l2_distance(model, library, test, l2_n_eval, opt_cfg)
    model_id = values["model_id"] or _file_stem(values["model"])
    dataset_id = values["dataset_id"] or _file_stem(values["test"])
    run_id = values["run_id"] or f"{model_id}-s{seed}"
    run = MetricsReport(
        run_id=run_id,
        model_id=model_id,
        dataset_id=dataset_id,
        seed=seed,
        acc=acc,
        dsr_small=dsr_small,
        dsr_large=dsr_large,
        l2_dist=summary.mean_l2,
        n_eval=values["n_eval"],
        fingerprint=model.fingerprint().hex(),
        config_echo={
            "small": small,
            "large": large,
            "optimization": opt_cfg,
            "l2_n_eval": l2_n_eval,
        },
    )
    results_path = os.path.join(out, "results.csv")
    write_results_csv([run], results_path)
    print(
        f"wrote {results_path} (acc {acc!r}, dsr_small {dsr_small!r}, "
        f"dsr_large {dsr_large!r}, l2 {summary.mean_l2!r} over "
        f"{summary.successes}/{summary.evaluated} successes)"
    )
    return results_path


def _cmd_report(args, seed, out):
    out = _need_out(out)
    runs = []
    for path in args.inputs:
        runs.extend(read_results_csv(path))
    csv_path, svg_path = report(runs, out)
    print(f"wrote {csv_path} and {svg_path} ({len(runs)} runs)")
    return csv_path


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "report":
            config = _read_config_file(args.config) if args.config else {}
            out = args.out if args.out is not None else config.get("out")
            _cmd_report(args, args.seed or 0, out)
            return 0
        values, seed, out = _resolve(args, _COMMANDS[args.command])
        if args.command == "gen-data":
            _cmd_gen_data(values, seed, out)
        elif args.command == "pretrain-ssl":
            _cmd_pretrain_ssl(values, seed, out)
        elif args.command in _SUP_TRAINERS:
            _cmd_train_sup(args.command, values, seed, out)
        elif args.command == "sat":
            _cmd_sat(values, seed, out)
        elif args.command == "build-library":
            _cmd_build_library(values, seed, out)
        elif args.command == "attack":
            _cmd_attack(values, seed, out)
        elif args.command == "eval":
            _cmd_eval(values, seed, out)
        return 0
    except (UsageError, ConfigError) as exc:
        print(f"satkit: error: {exc}", file=sys.stderr)
        return 1
    except (SatkitError, OSError) as exc:
        print(f"satkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
