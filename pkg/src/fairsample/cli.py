"""Config-driven experiment runner.

    fairsample run-fis --config exp.json --out runs/fis
    fairsample run-baseline --config exp.json --seed 3
    fairsample verify-influence --config exp.json
    fairsample verify-bounds --config exp.json --threads 4

A run directory holds ``records.jsonl`` (comparable records, no wall-clock
data), ``summary.json``, ``checkpoints/``, ``config.resolved`` (the config
with every default filled in) and ``run.log`` (timestamps live only here).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from .data import (balance_oversample, load_csv, make_biased_fixture, split)
from .fairness import FairnessMetricKind
from .influence import (LabelStrategy, exact_one_step_oracle, influence_table,
                        relative_error, validation_gradients)
from .model import TrainConfig, init_model, load_checkpoint, save_checkpoint, sgd_train
from .sampling import BaselineKind, FisConfig, baseline_run, fis_run
from .seeds import derive_seed

log = logging.getLogger("fairsample")

COMMANDS = ("run-erm", "run-fis", "run-baseline", "verify-influence", "verify-bounds")

BIASED_DEFAULTS = dict(kind="biased", n_train=500, n_pool=4000, n_val=300, n_test=1000,
                       train_minority_fraction=0.05, dim=10, shift=1.6, marker=1.0)
CSV_DEFAULTS = dict(path=None, schema=None, fractions=[0.16, 0.64, 0.04, 0.16], balance=False)
TRAIN_DEFAULTS = {f.name: f.default for f in fields(TrainConfig)}
TRAIN_DEFAULTS.update(learning_rate=0.05, epochs=10, batch_size=64)
FIS_DEFAULTS = dict(rounds=5, budget_per_round=64, tolerance=0.05, metric="DP",
                    label_strategy="MinInfluence", warm_epochs=40, hidden_sizes=[64],
                    influence_eta=None, from_scratch=False, jtt_weight=20.0)
INFLUENCE_DEFAULTS = dict(checkpoint=None, num_candidates=200, eta=1e-3, hidden_sizes=[16],
                          warm_epochs=5, metric="DP", label_strategy="MinInfluence")
BOUNDS_DEFAULTS = dict(trials=20, num_components=4, dim=5, num_classes=2, num_groups=2,
                       frequencies_P=None, frequencies_Q=None, dirichlet_alpha=2.0,
                       n_train=1000, n_test=1000, separation=1.0, group=None,
                       hidden_sizes=[16], samples_per_component=2000, reference_size=2000,
                       curvature_pairs=8, curvature_radius=0.05, delta=0.05,
                       train=dict(learning_rate=0.05, epochs=30, batch_size=64))


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field


def _merge(defaults: dict, given, where: str) -> dict:
    given = given or {}
    if not isinstance(given, dict):
        raise ConfigError(where, "must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}", "unknown key")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(defaults[key], dict) and key != "schema":
            out[key] = _merge(defaults[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def _build(factory, kwargs, where):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None


def resolve_config(raw: dict, command: str, seed_override=None, base_dir=Path(".")) -> dict:
    """Validate a raw config for ``command`` and fill in every default."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    allowed = {"command", "seed", "dataset", "train", "fis", "baseline", "influence", "bounds", "out"}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown top-level key")
    if raw.get("command", command) != command:
        raise ConfigError("command", f"config was resolved for {raw['command']!r}")
    cfg = {"command": command,
           "seed": int(raw.get("seed", 0) if seed_override is None else seed_override)}

    if command == "verify-bounds":
        b = _merge(BOUNDS_DEFAULTS, raw.get("bounds"), "bounds")
        if b["frequencies_P"] is None:
            raise ConfigError("bounds.frequencies_P", "synthetic spec needs frequencies_P")
        for key in ("frequencies_P", "frequencies_Q"):
            v = b[key]
            if v is None:
                continue
            arr = np.asarray(v, dtype=float)
            if arr.shape != (b["num_components"],) or np.any(arr < 0) or abs(arr.sum() - 1) > 1e-9:
                raise ConfigError(f"bounds.{key}",
                                  f"must be {b['num_components']} nonnegative numbers summing to 1")
        if not 0 < b["delta"] < 1:
            raise ConfigError("bounds.delta", "must lie in (0, 1)")
        if int(b["trials"]) < 1:
            raise ConfigError("bounds.trials", "must be >= 1")
        _build(TrainConfig, b["train"], "bounds.train")
        cfg["bounds"] = b
        return cfg

    ds = raw.get("dataset")
    if not isinstance(ds, dict) or len(ds) != 1 or next(iter(ds)) not in ("synthetic", "csv"):
        raise ConfigError("dataset", "needs exactly one source: 'synthetic' or 'csv'")
    if "synthetic" in ds:
        syn = _merge(BIASED_DEFAULTS, ds["synthetic"], "dataset.synthetic")
        if syn["kind"] != "biased":
            raise ConfigError("dataset.synthetic.kind", "only 'biased' is available")
        cfg["dataset"] = {"synthetic": syn}
    else:
        c = _merge(CSV_DEFAULTS, ds["csv"], "dataset.csv")
        if not c["path"]:
            raise ConfigError("dataset.csv.path", "missing")
        path = Path(c["path"])
        if not path.is_absolute():
            path = (base_dir / path).resolve()
        if not path.exists():
            raise ConfigError("dataset.csv.path", f"file not found: {path}")
        c["path"] = str(path)
        if not isinstance(c["schema"], dict) or not c["schema"].get("features"):
            raise ConfigError("dataset.csv.schema", "must list feature columns")
        if not c["schema"].get("label") or not c["schema"].get("group"):
            raise ConfigError("dataset.csv.schema", "must name label and group columns")
        fr = np.asarray(c["fractions"], dtype=float)
        if fr.shape != (4,) or np.any(fr < 0) or abs(fr.sum() - 1) > 1e-9:
            raise ConfigError("dataset.csv.fractions", "must be four nonnegative numbers summing to 1")
        cfg["dataset"] = {"csv": c}

    cfg["train"] = _merge(TRAIN_DEFAULTS, raw.get("train"), "train")
    _build(TrainConfig, cfg["train"], "train")

    if command == "verify-influence":
        inf = _merge(INFLUENCE_DEFAULTS, raw.get("influence"), "influence")
        if inf["checkpoint"] is not None:
            ck = Path(inf["checkpoint"])
            ck = ck if ck.is_absolute() else (base_dir / ck).resolve()
            if not ck.exists():
                raise ConfigError("influence.checkpoint", f"file not found: {ck}")
            inf["checkpoint"] = str(ck)
        if inf["eta"] < 0:
            raise ConfigError("influence.eta", "must be >= 0")
        if int(inf["num_candidates"]) < 1:
            raise ConfigError("influence.num_candidates", "must be >= 1")
        try:
            FairnessMetricKind(inf["metric"])
            LabelStrategy(inf["label_strategy"])
        except ValueError as exc:
            raise ConfigError("influence", str(exc)) from None
        cfg["influence"] = inf
        return cfg

    cfg["fis"] = _merge(FIS_DEFAULTS, raw.get("fis"), "fis")
    for key in ("rounds", "budget_per_round"):
        if int(cfg["fis"][key]) < 1:
            raise ConfigError(f"fis.{key}", "must be >= 1")
    _fis_config(cfg)
    if command == "run-baseline":
        base = _merge({"kind": None}, raw.get("baseline"), "baseline")
        try:
            BaselineKind(base["kind"])
        except ValueError:
            raise ConfigError("baseline.kind",
                              f"must be one of {[k.value for k in BaselineKind]}") from None
        cfg["baseline"] = base
    return cfg


def _fis_config(cfg) -> FisConfig:
    train = TrainConfig(**{**cfg["train"], "seed": derive_seed(cfg["seed"], "train")})
    return _build(FisConfig, {**cfg["fis"], "train": train, "seed": cfg["seed"]}, "fis")


def config_hash(cfg: dict) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k != "out"}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- stages ------------------------------------------------------------------


def build_bundle(cfg: dict):
    seed = cfg["seed"]
    src = cfg["dataset"]
    if "synthetic" in src:
        kw = {k: v for k, v in src["synthetic"].items() if k != "kind"}
        return make_biased_fixture(seed=derive_seed(seed, "data"), **kw)
    c = src["csv"]
    ds = load_csv(c["path"], c["schema"])
    if c["balance"]:
        ds = balance_oversample(ds, derive_seed(seed, "balance"))
    return split(ds, c["fractions"], derive_seed(seed, "split"))


def _dumps(record) -> str:
    return json.dumps(record, sort_keys=True)


class _Writer:
    def __init__(self, out: Path, cfg: dict):
        self.out = out
        self.seed = cfg["seed"]
        self.hash = config_hash(cfg)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")

    def stamp(self, record: dict) -> dict:
        return {**record, "seed": self.seed, "config_hash": self.hash}

    def jsonl(self, name, records):
        with (self.out / name).open("w") as fh:
            for r in records:
                fh.write(_dumps(self.stamp(r)) + "\n")

    def summary(self, summary: dict):
        (self.out / "summary.json").write_text(
            json.dumps(self.stamp(summary), indent=2, sort_keys=True) + "\n")


def _pair(rec):
    t = rec.test_fairness
    return {"round": rec.round, "test_accuracy": t["accuracy"], "dp_gap": t["dp_gap"],
            "eop_gap": t["eop_gap"], "eod_gap": t["eod_gap"], "val_accuracy": rec.val_accuracy}


def _run_sampling(cfg: dict, out: Path, kind: str):
    w = _Writer(out, cfg)
    bundle = build_bundle(cfg)
    fcfg = _fis_config(cfg)
    log.info("stage=sampling kind=%s", kind)
    result = fis_run(bundle, fcfg) if kind == "FIS" else baseline_run(bundle, kind, fcfg)

    w.jsonl("records.jsonl", [r.to_dict() for r in result.records])
    dump = [{"round": t, **s.to_dict()} for t, scores in sorted(result.influence_dumps.items())
            for s in scores]
    if dump:
        w.jsonl("influence.jsonl", dump)
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    for t, m in sorted(result.checkpoints.items()):
        save_checkpoint(m, ck / f"round-{t}.txt")

    output_rounds = [r for r in result.records if r.in_output_set]
    mean = lambda key: (float(np.mean([_pair(r)[key] for r in output_rounds]))
                        if output_rounds else None)
    w.summary({
        "strategy": kind,
        "metric": fcfg.metric,
        "new_data_weight": fcfg.train.new_data_weight,
        "warm_start": _pair(result.warm_start),
        "final": _pair(result.final),
        "output_rounds": [r.round for r in output_rounds],
        "output_mean": {k: mean(k) for k in ("test_accuracy", "dp_gap", "eop_gap", "eod_gap")},
        "budget_consumed": result.records[-1].budget_consumed,
    })
    return 0


def _verify_influence(cfg: dict, out: Path):
    w = _Writer(out, cfg)
    inf = cfg["influence"]
    bundle = build_bundle(cfg)
    if inf["checkpoint"]:
        m = load_checkpoint(inf["checkpoint"])
    else:
        sizes = (bundle.train_P.dim, *inf["hidden_sizes"], bundle.train_P.num_classes)
        m = init_model(sizes, derive_seed(cfg["seed"], "init"))
        tc = TrainConfig(**{**cfg["train"], "epochs": inf["warm_epochs"],
                            "seed": derive_seed(cfg["seed"], "train")})
        m = sgd_train(m, bundle.train_P.X, bundle.train_P.labels, tc)[0]
    val = bundle.validation_Qv
    pool = bundle.pool_U
    rng = np.random.default_rng(derive_seed(cfg["seed"], "candidates"))
    ids = np.sort(rng.choice(len(pool), size=min(inf["num_candidates"], len(pool)), replace=False))
    eta = float(inf["eta"])
    vg = validation_gradients(m, val, None, cfg["train"]["grad_scope"])
    acc, _ = influence_table(m, pool.X[ids], vg, 1.0)
    if LabelStrategy(inf["label_strategy"]) is LabelStrategy.MinInfluence:
        labels = np.argmin(np.abs(acc), axis=1)
    else:
        from .model import forward
        labels = np.argmax(forward(m, pool.X[ids]), axis=1)

    rows = []
    for i, y in zip(ids, labels):
        x = pool.X[i]
        big = exact_one_step_oracle(m, x, int(y), val, eta, inf["metric"], cfg["train"]["grad_scope"])
        small = exact_one_step_oracle(m, x, int(y), val, eta / 10, inf["metric"],
                                      cfg["train"]["grad_scope"])
        err = abs(big.delta_loss_exact - big.first_order_loss)
        err_small = abs(small.delta_loss_exact - small.first_order_loss)
        rows.append({
            "candidate_id": int(i), "label": int(y),
            "exact_loss": big.delta_loss_exact, "first_order_loss": big.first_order_loss,
            "exact_fair": big.delta_fair_exact, "first_order_fair": big.first_order_fair,
            "relative_error": float(relative_error(big.delta_loss_exact, big.first_order_loss)),
            "error": err, "error_small_eta": err_small,
            "scales": bool(err_small <= err / 5),
        })
    w.jsonl("scatter.jsonl", rows)
    w.jsonl("records.jsonl", rows)
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    save_checkpoint(m, ck / "model.txt")
    rel = [r["relative_error"] for r in rows]
    w.summary({
        "eta": eta, "num_candidates": len(rows),
        "median_relative_error": float(np.median(rel)),
        "scaling_fraction": float(np.mean([r["scales"] for r in rows])),
    })
    print(f"median relative error {np.median(rel):.4g} over {len(rows)} candidates")
    return 0


def _verify_bounds(cfg: dict, out: Path, threads: int):
    w = _Writer(out, cfg)
    b = cfg["bounds"]
    spec = bounds_mod.SweepSpec(
        num_components=b["num_components"], dim=b["dim"], num_classes=b["num_classes"],
        num_groups=b["num_groups"], frequencies_P=tuple(b["frequencies_P"]),
        frequencies_Q=None if b["frequencies_Q"] is None else tuple(b["frequencies_Q"]),
        dirichlet_alpha=b["dirichlet_alpha"], n_train=b["n_train"], n_test=b["n_test"],
        separation=b["separation"], group=b["group"])
    bcfg = bounds_mod.BoundConfig(
        train=TrainConfig(**b["train"]), hidden_sizes=tuple(b["hidden_sizes"]),
        samples_per_component=b["samples_per_component"], reference_size=b["reference_size"],
        curvature_pairs=b["curvature_pairs"], curvature_radius=b["curvature_radius"],
        delta=b["delta"])
    results = bounds_mod.bound_sweep(spec, bcfg, int(b["trials"]), cfg["seed"], threads)
    w.jsonl("records.jsonl", [{"trial": t, "generalization": g.to_dict(), "disparity": d.to_dict()}
                              for t, (g, d) in enumerate(results)])
    n_gen = sum(g.slack >= 0 for g, _ in results)
    n_disp = sum(d.slack >= 0 for _, d in results)
    w.summary({"trials": len(results), "generalization_nonnegative": n_gen,
               "disparity_nonnegative": n_disp})
    print(f"nonnegative slack: generalization {n_gen}/{len(results)}, "
          f"disparity {n_disp}/{len(results)}")
    return 0


# -- entry point -------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="fairsample", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent trials")
    return parser


def _setup_log(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO)
    log.propagate = False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config_path = Path(args.config)
    try:
        try:
            raw = json.loads(config_path.read_text())
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        cfg = resolve_config(raw, args.command, args.seed, config_path.parent)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out or raw.get("out") or Path("runs") / args.command)
    _setup_log(out)
    log.info("command=%s seed=%s hash=%s", args.command, cfg["seed"], config_hash(cfg))
    stage = args.command
    try:
        if args.command == "run-erm":
            return _run_sampling(cfg, out, "ERM")
        if args.command == "run-fis":
            return _run_sampling(cfg, out, "FIS")
        if args.command == "run-baseline":
            return _run_sampling(cfg, out, cfg["baseline"]["kind"])
        if args.command == "verify-influence":
            return _verify_influence(cfg, out)
        return _verify_bounds(cfg, out, max(1, args.threads))
    except Exception as exc:  # noqa: BLE001 -- reported with the failing stage
        log.exception("stage %s failed", stage)
        print(f"error: stage {stage} failed: {exc}", file=sys.stderr)
        return 1
    finally:
        log.info("done")


if __name__ == "__main__":
    sys.exit(main())
