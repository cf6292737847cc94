"""Command line interface: train, generate, evaluate, benchmark, plot-km.

Every command writes its artifacts atomically into an output directory.
Failures exit nonzero and print a JSON object ``{"error": ..., "type": ...}``
on standard error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import pipeline
from .dataset import ColumnSchema, SplitSpec, SurvivalDataset, load_csv, schema_from_config, split, write_csv
from .km import kaplan_meier, write_svg
from .report import aggregate, evaluate_synthetic
from .toy import weibull_toy

log = logging.getLogger("survgan")


class UsageError(ValueError):
    pass


DEFAULT_METRICS = {"horizons": 5, "seeds": [0, 1, 2, 3, 4], "models": ["cox", "deephit"], "rows": None, "ablations": list(pipeline.ABLATIONS)}


@dataclass
class RunConfig:
    dataset: dict
    pipeline: pipeline.PipelineConfig
    split: SplitSpec = field(default_factory=SplitSpec)
    metrics: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_METRICS))
    output: str = "runs/default"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        if "dataset" not in d:
            raise UsageError("config needs a 'dataset' section")
        ds = dict(d.pop("dataset"))
        if "toy" not in ds:
            for key in ("path", "columns"):
                if key not in ds:
                    raise UsageError(f"dataset section needs '{key}' (or a 'toy' entry)")
        metrics = copy.deepcopy(DEFAULT_METRICS)
        extra = set(d.get("metrics") or {}) - set(metrics)
        if extra:
            raise UsageError(f"unknown metrics keys: {sorted(extra)}")
        metrics.update(d.pop("metrics", None) or {})
        if not metrics["seeds"]:
            raise UsageError("metrics.seeds must be non-empty")
        try:
            pipe = pipeline.PipelineConfig.from_dict(d.pop("pipeline", None))
            sp = SplitSpec(**(d.pop("split", None) or {}))
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
        output = d.pop("output", "runs/default")
        if d:
            raise UsageError(f"unknown config sections: {sorted(d)}")
        return cls(ds, pipe, sp, metrics, output)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "pipeline": self.pipeline.to_dict(),
            "split": {"train_fraction": self.split.train_fraction, "folds": self.split.folds, "seed": self.split.seed},
            "metrics": self.metrics,
            "output": self.output,
        }

    @property
    def time_column(self) -> str:
        return self.dataset.get("time_column", "time")

    @property
    def event_column(self) -> str:
        return self.dataset.get("event_column", "event")

    def schema(self) -> tuple[ColumnSchema, ...]:
        if "toy" in self.dataset:
            from .toy import TOY_SCHEMA

            return TOY_SCHEMA
        return schema_from_config(self.dataset["columns"])

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse config: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config must be a mapping")
    cfg = RunConfig.from_dict(raw)
    base = path.parent
    if "path" in cfg.dataset and not Path(cfg.dataset["path"]).is_absolute():
        cfg.dataset["path"] = str((base / cfg.dataset["path"]).resolve())
    return cfg


def load_dataset(cfg: RunConfig) -> SurvivalDataset:
    if "toy" in cfg.dataset:
        toy = cfg.dataset["toy"] or {}
        return weibull_toy(int(toy.get("n", 2000)), int(toy.get("seed", 0)))
    return load_csv(cfg.dataset["path"], cfg.schema(), cfg.time_column, cfg.event_column)


# helpers


def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_json(path: Path, obj) -> None:
    _atomic_text(path, json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _snapshot(cfg: RunConfig, out: Path, **extra) -> None:
    doc = cfg.to_dict()
    doc.update(extra)
    _atomic_text(out / "config.resolved.yaml", yaml.safe_dump(doc, sort_keys=True))


def _parse_conditions(items: Sequence[str]) -> list[tuple[str, str]]:
    out = []
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"condition must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        out.append((k.strip(), v.strip()))
    return out


def read_time_event(path: str | Path, time_column: str = "time", event_column: str = "event") -> tuple[np.ndarray, np.ndarray]:
    """Just the time and event columns of a dataset CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or time_column not in reader.fieldnames or event_column not in reader.fieldnames:
            raise UsageError(f"{path} needs columns {time_column!r} and {event_column!r}")
        rows = [(float(r[time_column]), int(float(r[event_column]))) for r in reader]
    if not rows:
        raise UsageError(f"{path} has no rows")
    t, e = zip(*rows)
    return np.array(t), np.array(e)


# commands


def cmd_train(args) -> dict:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output)
    seed = args.seed if args.seed is not None else cfg.metrics["seeds"][0]
    pcfg = cfg.pipeline.with_ablation(args.ablation)
    ds = load_dataset(cfg)
    train, test = split(ds, cfg.split)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(train, out / "train.csv", cfg.time_column, cfg.event_column)
    write_csv(test, out / "test.csv", cfg.time_column, cfg.event_column)
    t0 = time.perf_counter()
    model = pipeline.fit(train, pcfg, seed)
    pipeline.save_model(model, out / "model")
    _snapshot(cfg, out, seed=seed, ablation=args.ablation)
    _write_json(out / "diagnostics.json", {"seed": seed, "stages": model.diagnostics, "seconds": time.perf_counter() - t0})
    return {"model": str(out / "model"), "train": str(out / "train.csv"), "test": str(out / "test.csv")}


def cmd_generate(args) -> dict:
    model_dir = Path(args.model)
    if not (model_dir / "model.json").exists():
        raise UsageError(f"no trained model in {model_dir}")
    model = pipeline.load_model(model_dir)
    fixed = dict(pipeline.parse_condition(model.codec, k, v) for k, v in _parse_conditions(args.condition))
    if args.rows is None or args.rows < 0:
        raise UsageError("--rows must be a non-negative integer")
    seed = args.seed if args.seed is not None else 0
    syn = pipeline.generate(model, args.rows, np.random.default_rng(seed), fixed=fixed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tcol, ecol = args.time_column, args.event_column
    write_csv(syn, out, tcol, ecol)
    return {"synthetic": str(out), "rows": syn.n}


def cmd_evaluate(args) -> dict:
    cfg = load_config(args.config)
    schema = cfg.schema()
    tcol, ecol = cfg.time_column, cfg.event_column
    real = load_csv(args.real, schema, tcol, ecol)
    syn = _load_maybe_empty(args.synthetic, schema, tcol, ecol)
    reference = load_csv(args.train, schema, tcol, ecol) if args.train else real
    seed = args.seed if args.seed is not None else cfg.metrics["seeds"][0]
    metrics = evaluate_synthetic(reference, real, syn, cfg.metrics["models"], cfg.metrics["horizons"], seed)
    metrics["meta"] = {"seed": seed, "config_hash": cfg.hash()}
    out = Path(args.out or cfg.output)
    _write_json(out / "metrics.json", metrics)
    _atomic_text(out / "tstr.csv", metrics.pop("tstr_table"))
    curves = {"real": kaplan_meier(reference.times, reference.events)}
    if syn.n:
        curves["synthetic"] = kaplan_meier(syn.times, syn.events)
        curves["synthetic"].to_csv(out / "km_synthetic.csv")
    curves["real"].to_csv(out / "km_real.csv")
    write_svg(out / "km.svg", curves)
    _snapshot(cfg, out, seed=seed)
    return {"metrics": str(out / "metrics.json")}


def _load_maybe_empty(path, schema, tcol, ecol) -> SurvivalDataset:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if len(lines) <= 1:
        return SurvivalDataset.empty(schema)
    return load_csv(path, schema, tcol, ecol)


def run_benchmark(cfg: RunConfig, out: Path, seeds: Sequence[int] | None = None, variants: Sequence[str | None] | None = None) -> dict:
    """Fit every variant on every seed, generate ``M = |train|`` rows (unless configured) and score them."""
    ds = load_dataset(cfg)
    train, test = split(ds, cfg.split)
    seeds = list(cfg.metrics["seeds"] if seeds is None else seeds)
    variants = [None] + list(cfg.metrics["ablations"]) if variants is None else list(variants)
    rows = cfg.metrics["rows"] or train.n
    result: dict = {"meta": {"config_hash": cfg.hash(), "seeds": seeds, "rows": rows}, "variants": {}}
    timings: dict = {}
    for variant in variants:
        name = variant or "full"
        pcfg = cfg.pipeline.with_ablation(variant)
        per_seed = []
        for seed in seeds:
            t0 = time.perf_counter()
            try:
                model = pipeline.fit(train, pcfg, seed)
                syn = pipeline.generate(model, rows, np.random.default_rng(seed))
                rep = evaluate_synthetic(train, test, syn, cfg.metrics["models"], cfg.metrics["horizons"], seed)
                rep.pop("tstr_table")
            except Exception as exc:  # noqa: BLE001 - per-seed failures are part of the report
                log.warning("variant %s seed %d failed: %s", name, seed, exc)
                rep = {"error": f"{type(exc).__name__}: {exc}"}
            rep["seed"] = seed
            per_seed.append(rep)
            timings[f"{name}/{seed}"] = time.perf_counter() - t0
            log.info("variant %s seed %d done in %.1fs", name, seed, timings[f"{name}/{seed}"])
        result["variants"][name] = {"per_seed": per_seed, "summary": aggregate(per_seed)}
    _write_json(out / "benchmark.json", result)
    _write_json(out / "timings.json", timings)
    lines = ["variant,metric,mean,std,n"]
    for name, v in result["variants"].items():
        for key in ("optimism", "short_sightedness", "km_divergence", "jsd", "wasserstein", "tstr.best.c_index", "tstr.best.brier"):
            s = v["summary"].get(key, {"mean": None, "std": None, "n": 0})
            lines.append(f"{name},{key},{s['mean']},{s['std']},{s['n']}")
    _atomic_text(out / "benchmark.csv", "\n".join(lines) + "\n")
    return result


def cmd_benchmark(args) -> dict:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output)
    seeds = [args.seed] if args.seed is not None else None
    variants = [None, args.ablation] if args.ablation else None
    _snapshot(cfg, out)
    run_benchmark(cfg, out, seeds, variants)
    return {"benchmark": str(out / "benchmark.json")}


def cmd_plot_km(args) -> dict:
    rt, re_ = read_time_event(args.real, args.time_column, args.event_column)
    curves = {"real": kaplan_meier(rt, re_)}
    if args.synthetic:
        st, se = read_time_event(args.synthetic, args.time_column, args.event_column)
        curves["synthetic"] = kaplan_meier(st, se)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_svg(out, curves)
    return {"svg": str(out)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="survgan", description="Synthetic censored survival data generation and evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit the generator on the train split of a dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--ablation", choices=pipeline.ABLATIONS)
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("generate", help="sample synthetic rows from a trained model")
    g.add_argument("--model", required=True, help="model directory written by train")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--condition", action="append", default=[], help="pin a condition, e.g. E=1, time_bin=3, sex=F")
    g.add_argument("--time-column", default="time")
    g.add_argument("--event-column", default="event")
    g.set_defaults(fn=cmd_generate)

    e = sub.add_parser("evaluate", help="score a synthetic dataset against real data")
    e.add_argument("--config", required=True)
    e.add_argument("--real", required=True, help="held-out real data (TSTR test set)")
    e.add_argument("--synthetic", required=True)
    e.add_argument("--train", help="real data the generator was fit on; defaults to --real")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_evaluate)

    b = sub.add_parser("benchmark", help="multi-seed evaluation of the full model and its ablations")
    b.add_argument("--config", required=True)
    b.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    b.add_argument("--out")
    b.add_argument("--ablation", choices=pipeline.ABLATIONS, help="compare only this ablation with the full model")
    b.set_defaults(fn=cmd_benchmark)

    k = sub.add_parser("plot-km", help="write Kaplan-Meier curves as SVG")
    k.add_argument("--real", required=True)
    k.add_argument("--synthetic")
    k.add_argument("--out", required=True)
    k.add_argument("--time-column", default="time")
    k.add_argument("--event-column", default="event")
    k.set_defaults(fn=cmd_plot_km)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.fn(args)
    except UsageError as exc:
        print(json.dumps({"error": str(exc), "type": "UsageError"}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level error report
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
