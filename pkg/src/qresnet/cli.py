"""Command-line entry point.

Every command reads an optional INI file (one section per command), applies
flag overrides, and writes the fully resolved configuration next to its
outputs as ``resolved_config.ini`` (minus the output directory itself).
Running the command again with that file and a new ``--out`` reproduces the
outputs byte for byte.

Exit codes: 0 success, 1 failed invariant, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CONFIG_NAME = "resolved_config.ini"


class UsageError(Exception):
    pass


def _ints(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (default text, converter, help)
Schema = Dict[str, Tuple[str, Callable, str]]

_DATA_KEYS: Schema = {
    "data": ("idx", str, "idx or synthetic"),
    "train_images": ("", str, "IDX image file for training"),
    "train_labels": ("", str, "IDX label file for training"),
    "test_images": ("", str, "IDX image file for evaluation"),
    "test_labels": ("", str, "IDX label file for evaluation"),
    "classes": ("0,1", _ints, "digits to keep, relabelled in order"),
    "n_train": ("0", int, "balanced training subsample (0 keeps all)"),
    "n_test": ("0", int, "balanced test subsample (0 keeps all)"),
    "synthetic_features": ("8", int, "features of the synthetic set"),
    "synthetic_samples": ("400", int, "samples of the synthetic set (half train, half test)"),
    "synthetic_separation": ("10", float, "cluster separation in units of sigma"),
}

SCHEMAS: Dict[str, Schema] = {
    "train": {
        **_DATA_KEYS,
        "n_qubits": ("10", int, "data qubits"),
        "n_blocks": ("5", int, "residual blocks"),
        "backbone_depth": ("0", int, "QVC layers before the blocks"),
        "learning_rate": ("0.005", float, "Adam learning rate"),
        "weight_decay": ("0.0001", float, "L2 weight decay"),
        "batch_size": ("0", int, "0 picks 32 (binary) or 256 (multiclass)"),
        "epochs": ("-1", int, "-1 picks 30 (binary) or 5 (multiclass)"),
        "beta_parameterization": ("bounded", str, "bounded or free"),
        "beta_bound": ("1.0", float, "bound for the tanh parameterization"),
        "beta_init": ("0.5", float, "initial residual strength"),
        "seed": ("0", int, "root seed"),
        "workers": ("1", int, "BLAS thread cap"),
        "out": ("", str, "output directory"),
    },
    "eval": {
        **_DATA_KEYS,
        "checkpoint": ("", str, "checkpoint JSON"),
        "seed": ("0", int, "root seed"),
        "workers": ("1", int, "BLAS thread cap"),
        "out": ("", str, "output directory"),
    },
    "attack": {
        **_DATA_KEYS,
        "checkpoint": ("", str, "checkpoint JSON"),
        "epsilons": ("0,0.05,0.1,0.2,0.3", _floats, "FGSM step sizes"),
        "modes": ("whitebox,blackbox", str, "comma list of whitebox, blackbox"),
        "surrogate_epochs": ("30", int, "MLP training epochs"),
        "surrogate_hidden": ("128", int, "MLP hidden units"),
        "dump_examples": ("false", _bool, "save perturbed inputs as .npy files"),
        "seed": ("0", int, "root seed"),
        "workers": ("1", int, "BLAS thread cap"),
        "out": ("", str, "output directory"),
    },
    "barren-scan": {
        "max_qubits": ("12", int, "analytic curves over 1..max_qubits"),
        "dims": ("2,4,8,16,32,64", _ints, "Monte-Carlo dimensions (empty for analytic only)"),
        "samples": ("2000", int, "Monte-Carlo trials per estimator"),
        "seed": ("0", int, "root seed"),
        "workers": ("1", int, "BLAS thread cap"),
        "out": ("", str, "output directory"),
    },
    "bloch-demo": {
        "grid_size": ("100", int, "number of input states"),
        "w": ("X", str, "X, Y, Z, H or four comma-separated complex entries"),
        "preparation_angle": (repr(math.pi / 2 - 0.05), float, "ancilla angle"),
        "angle_is": ("theta", str, "theta or beta"),
        "out": ("", str, "output directory"),
    },
    "gatecount": {
        "n_qubits": ("10", int, "data qubits"),
        "n_blocks": ("5", int, "residual blocks"),
        "backbone_depth": ("0", int, "QVC layers"),
        "out": ("", str, "optional output directory"),
    },
    "verify": {
        "suites": ("all", str, "comma list of suites or 'all'"),
        "fault": ("", str, "inject a known defect (test mode): ry_sign"),
        "out": ("", str, "optional output directory"),
    },
    "prepare-mnist": {
        "train_per_class": ("350", int, "images per digit in the train split"),
        "seed": ("0", int, "split seed"),
        "out": ("", str, "output directory for the IDX files"),
    },
}


def resolve(command: str, config_path: Optional[str], overrides: Dict[str, str]) -> Dict[str, str]:
    schema = SCHEMAS[command]
    values = {k: v[0] for k, v in schema.items()}
    if config_path:
        parser = configparser.ConfigParser()
        if not parser.read(config_path):
            raise UsageError(f"cannot read config {config_path}")
        if parser.has_section(command):
            for k, v in parser.items(command):
                if k not in schema:
                    raise UsageError(f"unknown key {k!r} in [{command}]")
                values[k] = v
    for k, v in overrides.items():
        if v is not None:
            values[k] = v
    return values


def typed(command: str, values: Dict[str, str]) -> dict:
    out = {}
    for k, (_, conv, _) in SCHEMAS[command].items():
        try:
            out[k] = conv(values[k])
        except ValueError as exc:
            raise UsageError(f"bad value for {k}: {exc}") from None
    return out


def write_resolved(command: str, values: Dict[str, str], out_dir: Path) -> None:
    parser = configparser.ConfigParser()
    # the output location is where the record lives, not part of the experiment
    parser[command] = {k: values[k] for k in SCHEMAS[command] if k != "out"}
    with open(out_dir / CONFIG_NAME, "w") as fh:
        parser.write(fh)


def _need_out(cfg) -> Path:
    if not cfg["out"]:
        raise UsageError("an output directory is required (--out)")
    return Path(cfg["out"])


# -- data ---------------------------------------------------------------------


def _load_split(cfg, which: str):
    from .data import filter_classes, load_mnist_idx

    images, labels = cfg[f"{which}_images"], cfg[f"{which}_labels"]
    for p in (images, labels):
        if not p:
            raise UsageError(f"{which}_images and {which}_labels are required")
        if not Path(p).is_file():
            raise UsageError(f"missing data file: {p}")
    ds = load_mnist_idx(images, labels)
    n = cfg[f"n_{which}"]
    return filter_classes(ds, cfg["classes"], n if n > 0 else None, cfg["seed"])


def load_data(cfg, need_train: bool = True):
    """Returns (train, test); train is None when not needed."""
    from .data import synthetic_two_gaussians, train_test_split_balanced

    if cfg["data"] == "synthetic":
        ds = synthetic_two_gaussians(
            cfg["synthetic_features"], cfg["synthetic_samples"], cfg["synthetic_separation"], cfg["seed"]
        )
        half = len(ds) // 2
        return train_test_split_balanced(ds, half, len(ds) - half, cfg["seed"])
    if cfg["data"] != "idx":
        raise UsageError("data must be 'idx' or 'synthetic'")
    train = _load_split(cfg, "train") if need_train else None
    return train, _load_split(cfg, "test")


# -- commands -------------------------------------------------------------------


def cmd_train(cfg, values) -> int:
    from .residual import ResidualModel
    from .training import Checkpoint, TrainingConfig, train, write_metrics_csv

    out = _need_out(cfg)
    train_set, test_set = load_data(cfg)
    n_classes = len(cfg["classes"]) if cfg["data"] == "idx" else 2
    n_out = 1 if n_classes == 2 else n_classes
    task = "binary" if n_out == 1 else "multiclass"
    overrides = {
        "learning_rate": cfg["learning_rate"],
        "weight_decay": cfg["weight_decay"],
        "seed": cfg["seed"],
        "beta_parameterization": cfg["beta_parameterization"],
        "beta_bound": cfg["beta_bound"],
    }
    if cfg["batch_size"] > 0:
        overrides["batch_size"] = cfg["batch_size"]
    if cfg["epochs"] >= 0:
        overrides["epochs"] = cfg["epochs"]
    tc = TrainingConfig.for_task(task, **overrides)
    if train_set.n_features > 2 ** cfg["n_qubits"]:
        raise UsageError(f"{train_set.n_features} features do not fit in {cfg['n_qubits']} qubits")
    rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 1]))
    model = ResidualModel.random(cfg["n_qubits"], cfg["n_blocks"], cfg["backbone_depth"], n_out, cfg["beta_init"], rng)
    result = train(model, train_set, tc, test_set)
    out.mkdir(parents=True, exist_ok=True)
    Checkpoint.from_result(result, tc).save(out / "checkpoint.json")
    write_metrics_csv(result.history, out / "metrics.csv")
    write_resolved("train", values, out)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"epochs": len(result.history), "final": last}))
    return EXIT_OK


def _load_checkpoint(cfg):
    from .training import Checkpoint

    path = cfg["checkpoint"]
    if not path or not Path(path).is_file():
        raise UsageError(f"missing checkpoint: {path or '(none given)'}")
    return Checkpoint.load(path)


def cmd_eval(cfg, values) -> int:
    from .training import evaluate

    out = _need_out(cfg)
    ck = _load_checkpoint(cfg)
    _, test_set = load_data(cfg, need_train=False)
    res = evaluate(ck.model, test_set)
    out.mkdir(parents=True, exist_ok=True)
    report = {"accuracy": res.accuracy, "loss": res.loss, "n_samples": res.n_samples}
    (out / "eval.json").write_text(json.dumps(report, indent=1))
    write_resolved("eval", values, out)
    print(json.dumps(report))
    return EXIT_OK


def cmd_attack(cfg, values) -> int:
    from .adversarial import AttackConfig, blackbox_attack, train_surrogate, whitebox_attack, write_report_csv

    out = _need_out(cfg)
    modes = [m.strip() for m in cfg["modes"].split(",") if m.strip()]
    if not modes or any(m not in ("whitebox", "blackbox") for m in modes):
        raise UsageError("modes must list whitebox and/or blackbox")
    ck = _load_checkpoint(cfg)
    train_set, test_set = load_data(cfg, need_train="blackbox" in modes)
    out.mkdir(parents=True, exist_ok=True)
    dump = out / "examples" if cfg["dump_examples"] else None
    reports = []
    for mode in modes:
        ac = AttackConfig(tuple(cfg["epsilons"]), mode)
        if mode == "whitebox":
            reports.append(whitebox_attack(ck.model, test_set, ac, dump))
        else:
            sur = train_surrogate(train_set, cfg["surrogate_epochs"], cfg["seed"], cfg["surrogate_hidden"])
            reports.append(blackbox_attack(ck.model, sur, test_set, ac, dump))
    write_report_csv(reports, out / "attack.csv")
    write_resolved("attack", values, out)
    for rep in reports:
        print(json.dumps({"mode": rep.mode, "accuracy": dict(zip(map(str, rep.epsilons), rep.accuracies))}))
    return EXIT_OK


def cmd_barren_scan(cfg, values) -> int:
    from .barrenlab import analytic_curves, empirical_scan, write_csv

    out = _need_out(cfg)
    for d in cfg["dims"]:
        if d < 2 or d & (d - 1):
            raise UsageError(f"dimension {d} is not a power of two >= 2")
        if d > 256:
            raise UsageError("Monte-Carlo dimensions are limited to 256")
    if cfg["samples"] < 2:
        raise UsageError("samples must be >= 2")
    rows = analytic_curves(range(1, cfg["max_qubits"] + 1))
    if cfg["dims"]:
        rows += empirical_scan(cfg["dims"], cfg["samples"], cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "barren.csv")
    write_resolved("barren-scan", values, out)
    print(json.dumps({"rows": len(rows)}))
    return EXIT_OK


_NAMED_W = {"X": 0, "Y": 1, "Z": 2}


def _parse_w(text: str) -> np.ndarray:
    from .residual import PAULI

    t = text.strip().upper()
    if t in _NAMED_W:
        return PAULI[_NAMED_W[t]]
    if t == "H":
        return np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
    try:
        entries = [complex(v.replace(" ", "").replace("i", "j")) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse W={text!r}") from None
    if len(entries) != 4:
        raise UsageError("W needs four entries (row-major 2x2)")
    return np.array(entries).reshape(2, 2)


def cmd_bloch_demo(cfg, values) -> int:
    import csv

    from .residual import bloch_demo

    out = _need_out(cfg)
    if cfg["grid_size"] < 1:
        raise UsageError("grid_size must be >= 1")
    w = _parse_w(cfg["w"])
    try:
        rows = bloch_demo(cfg["grid_size"], w, cfg["preparation_angle"], cfg["angle_is"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bloch.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["in_x", "in_y", "in_z", "out_x", "out_y", "out_z"])
        for r in rows:
            wr.writerow([repr(v) for v in r])
    write_resolved("bloch-demo", values, out)
    inp = np.array([r[:3] for r in rows])
    outp = np.array([r[3:] for r in rows])
    print(json.dumps({"mean_abs_x_in": float(np.abs(inp[:, 0]).mean()), "mean_abs_x_out": float(np.abs(outp[:, 0]).mean())}))
    return EXIT_OK


def cmd_gatecount(cfg, values) -> int:
    from .ansatz import count_gates

    if cfg["n_qubits"] < 1 or cfg["n_blocks"] < 0 or cfg["backbone_depth"] < 0:
        raise UsageError("n_qubits must be >= 1 and counts non-negative")
    report = count_gates(cfg["n_qubits"], cfg["n_blocks"], cfg["backbone_depth"]).to_dict()
    text = json.dumps(report)
    print(text)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "gatecount.json").write_text(text + "\n")
        write_resolved("gatecount", values, out)
    return EXIT_OK


def cmd_verify(cfg, values) -> int:
    from .verify import SUITES, run_suite

    spec = cfg["suites"].strip()
    names = list(SUITES) if spec == "all" else [s.strip() for s in spec.split(",") if s.strip()]
    try:
        results = run_suite(names, cfg["fault"] or None)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    payload = {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    text = json.dumps(payload, indent=1)
    print(text)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(text + "\n")
        write_resolved("verify", values, out)
    return EXIT_OK if payload["passed"] else EXIT_FAIL


def cmd_prepare_mnist(cfg, values) -> int:
    from .data import export_bundled_mnist

    out = _need_out(cfg)
    if not 1 <= cfg["train_per_class"] < 500:
        raise UsageError("train_per_class must be in [1, 499]")
    paths = export_bundled_mnist(out, cfg["train_per_class"], cfg["seed"])
    write_resolved("prepare-mnist", values, out)
    print(json.dumps(paths))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "attack": cmd_attack,
    "barren-scan": cmd_barren_scan,
    "bloch-demo": cmd_bloch_demo,
    "gatecount": cmd_gatecount,
    "verify": cmd_verify,
    "prepare-mnist": cmd_prepare_mnist,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qresnet", description="Residual quantum network experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file; the [%s] section is read" % name)
        for key, (default, _, help_text) in schema.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=f"{help_text} (default {default!r})")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    overrides = {k: getattr(args, k) for k in SCHEMAS[command]}
    try:
        values = resolve(command, args.config, overrides)
        cfg = typed(command, values)
        workers = cfg.get("workers", 0)
        if workers and workers > 0:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=workers):
                return COMMANDS[command](cfg, values)
        return COMMANDS[command](cfg, values)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
