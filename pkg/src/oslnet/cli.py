"""``oslnet`` command line: train, compare, sweep, verify, gen-data.

Exit codes: 0 success, 1 configuration/input error, 2 runtime failure or
divergence, 3 statistically degenerate comparison.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .analysis import (DegenerateTestError, aggregate, off_diagonal, paired_ttest, verify_norm_bounds,
                       write_quartiles_csv)
from .data import DataRecipe, generate_blobs, write_features
from .layers import ConfigError
from .losses import LossKind
from .training import ModelSpec, RoundsError, TrainConfig, config_hash, run_rounds

logger = logging.getLogger("oslnet")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DEGENERATE = 0, 1, 2, 3

MODEL_KEYS = {f.name for f in fields(ModelSpec)} - {"input_dim", "n_classes"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
DATA_KEYS = {f.name for f in fields(DataRecipe)}
LOSS_KEYS = {f.name for f in fields(LossKind)}
TOP_KEYS = {"model", "train", "data", "rounds", "output", "arms", "workers"}


@dataclass
class Arm:
    name: str
    spec: ModelSpec
    train: TrainConfig


@dataclass
class ExperimentConfig:
    data: DataRecipe
    train: TrainConfig
    arms: list[Arm]
    rounds: int = 20
    output: str = "runs/experiment"
    workers: int = 1
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        # where results go and how many processes compute them do not change them
        return config_hash({k: v for k, v in self.raw.items() if k not in ("output", "workers")})


def _reject_unknown(section: str, given: dict, allowed: set) -> None:
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")


def _make(section: str, cls, values: dict):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _loss(section: str, value) -> LossKind:
    if isinstance(value, str):
        value = {"name": value}
    if not isinstance(value, dict):
        raise ConfigError(f"{section}.loss: expected a name or an object")
    _reject_unknown(f"{section}.loss", value, LOSS_KEYS)
    return _make(f"{section}.loss", LossKind, value)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config mapping; every problem is reported with its field path."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown("config", raw, TOP_KEYS)
    data_raw = raw.get("data", {})
    _reject_unknown("data", data_raw, DATA_KEYS)
    data = _make("data", DataRecipe, data_raw)

    train_raw = raw.get("train", {})
    _reject_unknown("train", train_raw, TRAIN_KEYS)
    base_train = _make("train", TrainConfig, train_raw)

    model_raw = dict(raw.get("model", {}))
    _reject_unknown("model", model_raw, MODEL_KEYS)
    if "loss" in model_raw:
        model_raw["loss"] = _loss("model", model_raw["loss"])

    arms_raw = raw.get("arms") or [{"name": "fc", "classifier": "fc"}, {"name": "os", "classifier": "osl"}]
    input_dim, n_classes = _data_shape(data)
    arms, seen = [], set()
    for i, arm_raw in enumerate(arms_raw):
        section = f"arms[{i}]"
        if not isinstance(arm_raw, dict) or "name" not in arm_raw:
            raise ConfigError(f"{section}: each arm needs a 'name'")
        name = arm_raw["name"]
        if name in seen:
            raise ConfigError(f"{section}: duplicate arm name {name!r}")
        seen.add(name)
        rest = {k: v for k, v in arm_raw.items() if k != "name"}
        _reject_unknown(section, rest, MODEL_KEYS | TRAIN_KEYS)
        m = {**model_raw, **{k: v for k, v in rest.items() if k in MODEL_KEYS}}
        if "loss" in rest:
            m["loss"] = _loss(section, rest["loss"])
        t = {k: v for k, v in rest.items() if k in TRAIN_KEYS}
        spec = _make(section, ModelSpec, {"input_dim": input_dim, "n_classes": n_classes, **m})
        arms.append(Arm(name, spec, _make(section, TrainConfig, {**asdict(base_train), **t})))

    rounds = raw.get("rounds", 20)
    if not isinstance(rounds, int) or rounds < 2:
        raise ConfigError("rounds: must be an integer >= 2")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers: must be an integer >= 1")
    return ExperimentConfig(data, base_train, arms, rounds, raw.get("output", "runs/experiment"), workers, raw)


def _data_shape(recipe: DataRecipe) -> tuple[int, int]:
    if recipe.source == "blobs":
        return recipe.dim, recipe.k
    d = recipe.build(0)
    return d.dim, d.class_count


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    raw = json.loads(json.dumps(cfg.raw))
    if getattr(args, "seed", None) is not None:
        raw.setdefault("train", {})["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        raw["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        raw["output"] = str(args.out)
    return parse_config(raw)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_arms(cfg: ExperimentConfig, data: DataRecipe | None = None):
    """Run every arm; returns ``{arm: [RunResult, ...]}``."""
    data = data or cfg.data
    out = {}
    for arm in cfg.arms:
        logger.info("arm %s: %d rounds", arm.name, cfg.rounds)
        out[arm.name] = run_rounds(arm.spec, arm.train, data, cfg.rounds, cfg.workers)
    return out


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    results = run_arms(cfg)
    chash, seed = cfg.hash, cfg.train.seed
    with (out / "results.jsonl").open("w", encoding="utf-8") as fh:
        for arm, rs in results.items():
            for i, r in enumerate(rs):
                fh.write(json.dumps(r.record(arm=arm, round=i, experiment_hash=chash), sort_keys=True) + "\n")
    summaries = {arm: aggregate(rs) for arm, rs in results.items()}
    _dump_json(out / "summary.json", {"config_hash": chash, "seed": seed, "rounds": cfg.rounds,
                                      "arms": summaries})
    write_quartiles_csv(out / "quartiles.csv", summaries, f"config_hash={chash} seed={seed}")
    angles = {}
    for arm in cfg.arms:
        per_round = [r.angles for r in results[arm.name]]
        off = [off_diagonal(np.asarray(a)) for a in per_round if a is not None]
        angles[arm.name] = {
            "classifier": arm.spec.classifier,
            "matrices": per_round,
            "off_diagonal": aggregate(np.concatenate(off)) if off else None,
        }
    _dump_json(out / "angles.json", {"config_hash": chash, "seed": seed, "arms": angles})
    _dump_json(out / "timings.json", {"config_hash": chash, "seed": seed,
                                      "wall_time": {arm: [r.wall_time for r in rs] for arm, rs in results.items()}})
    for arm, s in summaries.items():
        print(f"{arm:>16s}  mean {s['mean']:.4f}  std {s['std']:.4f}  n={s['n']}")
    print(f"wrote {out / 'results.jsonl'}")
    return EXIT_OK


class PairingError(ValueError):
    pass


def _read_results(path, arm: str | None) -> dict[int, dict]:
    records = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise PairingError(f"{path} not found") from None
    arms = set()
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        arms.add(rec.get("arm"))
        if arm is not None and rec.get("arm") != arm:
            continue
        key = rec.get("round", len(records))
        if key in records:
            raise PairingError(f"{path}: several arms ({sorted(map(str, arms))}); pick one with --arm-a/--arm-b")
        records[key] = rec
    if not records:
        raise PairingError(f"{path}: no records" + (f" for arm {arm!r}" if arm else ""))
    return records


def paired_accuracies(path_a, path_b, arm_a=None, arm_b=None):
    a = _read_results(path_a, arm_a)
    b = _read_results(path_b, arm_b)
    if len(a) != len(b) or set(a) != set(b):
        raise PairingError(f"round counts differ: {len(a)} vs {len(b)}")
    xs, ys = [], []
    for key in sorted(a):
        if a[key]["seed"] != b[key]["seed"]:
            raise PairingError(f"round {key}: seed {a[key]['seed']} does not match {b[key]['seed']}")
        xs.append(a[key]["test_acc"])
        ys.append(b[key]["test_acc"])
    return np.asarray(xs), np.asarray(ys)


def cmd_compare(args) -> int:
    path_b = args.results_b or args.results_a
    a, b = paired_accuracies(args.results_a, path_b, args.arm_a, args.arm_b)
    try:
        rep = paired_ttest(a, b)
    except DegenerateTestError as exc:
        print(json.dumps({"n": exc.n, "mean_diff": exc.mean_diff, "error": "degenerate"}, indent=2))
        print(f"degenerate test: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    print(json.dumps(rep.to_dict(), indent=2))
    print(f"{rep.verdict()} at alpha=0.05 (p={rep.p_value:.4g})")
    return EXIT_OK


def _parse_depth(value: str, k: int) -> tuple[int, ...]:
    """``"64-32-8"`` lists hidden widths then the class count."""
    parts = [int(p) for p in value.split("-")]
    if len(parts) < 2 or parts[-1] != k:
        raise ConfigError(f"depth value {value!r} must list hidden widths followed by the class count {k}")
    return tuple(parts[:-1])


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values: nothing to sweep")
    k = cfg.arms[0].spec.n_classes
    try:
        parsed = {v: _parse_depth(v, k) if args.axis == "depth" else int(v) for v in values}
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from None
    if args.axis == "reduction" and any(n < 0 for n in parsed.values()):
        raise ConfigError("--values: reduction counts must be >= 0")
    rows = []
    for value in values:
        data = cfg.data
        if args.axis == "reduction":
            data = replace(cfg.data, reduce=parsed[value])
        for arm in cfg.arms:
            spec = arm.spec
            try:
                if args.axis == "width":
                    spec = replace(spec, hidden_widths=spec.hidden_widths[:-1] + (parsed[value],))
                elif args.axis == "depth":
                    spec = replace(spec, hidden_widths=parsed[value])
            except ConfigError as exc:
                if "hidden neuron" not in str(exc):
                    raise
                rows.append([value, arm.name, "", "", 0, f"skipped: {exc}"])
                continue
            rs = run_rounds(spec, arm.train, data, cfg.rounds, cfg.workers)
            s = aggregate(rs)
            rows.append([value, arm.name, f"{s['mean']:.6f}", f"{s['std']:.6f}", s["n"], ""])
            print(f"{args.axis}={value:>10s} {arm.name:>12s} mean {s['mean']:.4f} std {s['std']:.4f}")
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg.hash} seed={cfg.train.seed} axis={args.axis}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "arm", "mean", "std", "n", "note"])
        w.writerows(rows)
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    rep = verify_norm_bounds(args.d, args.k, args.bound, args.trials, args.seed)
    rep["config_hash"] = config_hash({k: v for k, v in rep.items() if k in ("d", "k", "bound", "trials", "seed")})
    print(json.dumps(rep, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(out / "verify.json", rep)
    return EXIT_RUNTIME if rep["violations"] else EXIT_OK


def cmd_gen_data(args) -> int:
    d = generate_blobs(args.k, args.dim, args.train_per_class, args.test_per_class, args.noise,
                       args.seed, args.min_angle)
    out = Path(args.out)
    write_features(out / "train.csv", *d.train)
    write_features(out / "test.csv", *d.test)
    print(f"wrote {out / 'train.csv'} and {out / 'test.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oslnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_flags(sp):
        sp.add_argument("--config", required=True, help="JSON experiment file")
        sp.add_argument("--out", help="output directory (overrides config 'output')")
        sp.add_argument("--workers", type=int, help="parallel rounds")
        sp.add_argument("--seed", type=int, help="base seed (overrides train.seed)")

    sp = sub.add_parser("train", help="run every arm for the configured rounds")
    experiment_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("compare", help="paired t-test between two result files")
    sp.add_argument("results_a")
    sp.add_argument("results_b", nargs="?")
    sp.add_argument("--arm-a")
    sp.add_argument("--arm-b")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="width/depth/reduction sweep")
    experiment_flags(sp)
    sp.add_argument("--axis", choices=["width", "depth", "reduction"], required=True)
    sp.add_argument("--values", required=True, help="comma-separated, e.g. 16,32,64 or 32-8,64-32-8")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="check the spectral-norm bounds on random weights")
    sp.add_argument("--d", type=int, default=32)
    sp.add_argument("--k", type=int, default=8)
    sp.add_argument("--bound", type=float, default=1.0)
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("gen-data", help="write synthetic blobs as train.csv/test.csv")
    sp.add_argument("--k", type=int, default=8)
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--train-per-class", type=int, default=100)
    sp.add_argument("--test-per-class", type=int, default=100)
    sp.add_argument("--noise", type=float, default=0.3)
    sp.add_argument("--min-angle", type=float, default=60.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PairingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RoundsError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
