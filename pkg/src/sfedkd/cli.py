"""Command-line interface: run experiments, sweep ablations, pick teachers.

Verbs:
  run                full experiment from a JSON config; emits rounds.jsonl,
                     summary.csv, config.resolved.json, model_final.bin
  ablate             sweep one axis (weights | metric | teachers | mode)
                     over a seed list; emits a mean/std CSV per cell
  select             teacher selection on a CSV of class distributions
  inspect-partition  print per-client class histograms for a config

Exit codes: 0 success, 2 invalid config (with the dotted field path),
3 I/O failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, apply_overrides, load_raw_config, resolve_config
from .data import ClassDistribution, class_distribution, partition_exdir
from .distill import METRICS
from .experiment import build_dataset, run_experiment
from .model import save_params
from .selection import (SelectionInstance, aggregate_objective,
                        brute_force_select, greedy_select, random_select)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _load_config(path: str, overrides: list[str]) -> ExperimentConfig:
    raw = load_raw_config(path)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return resolve_config(raw)


def _write_rounds_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), allow_nan=False) + "\n")


def _summary_row(cfg: ExperimentConfig, records) -> dict:
    top1 = [r.top1 for r in records if r.top1 is not None]
    cons = [r.consistency for r in records if r.consistency is not None]
    final_fm = next((r.forgetting for r in reversed(records) if r.forgetting is not None), None)
    return {
        "mode": cfg.train.mode,
        "rounds": len(records),
        "final_top1": top1[-1] if top1 else None,
        "best_top1": max(top1) if top1 else None,
        "final_forgetting": final_fm,
        "mean_consistency": float(np.mean(cons)) if cons else None,
    }


def _write_summary_csv(path: Path, row: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.set or [])
    result = run_experiment(cfg)
    out_dir = Path(cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.resolved.json", "w") as fh:
        json.dump(cfg.to_resolved_dict(), fh, indent=2)
        fh.write("\n")
    if "jsonl" in cfg.output.formats:
        _write_rounds_jsonl(out_dir / "rounds.jsonl", result.records)
    summary = _summary_row(cfg, result.records)
    if "csv" in cfg.output.formats:
        _write_summary_csv(out_dir / "summary.csv", summary)
    save_params(result.final_model, out_dir / "model_final.bin")
    final = summary["final_top1"]
    print(f"{cfg.train.mode}: {len(result.records)} rounds done"
          + (f", final top1 {final:.4f}" if final is not None else "")
          + f" -> {out_dir}")
    return EXIT_OK


def _ablation_cells(axis: str, cfg: ExperimentConfig):
    """(label_dict, override_list) per cell of the requested sweep axis."""
    if axis == "weights":
        return [
            ({"g": g_label, "h": h_label},
             [f"train.kd.uniform_g={json.dumps(g_label == 'off')}",
              f"train.kd.uniform_h={json.dumps(h_label == 'off')}",
              "train.mode=sfedkd"])
            for g_label in ("off", "on") for h_label in ("off", "on")
        ]
    if axis == "metric":
        return [({"metric": m}, [f"train.kd.metric={m}", "train.mode=sfedkd"])
                for m in METRICS]
    if axis == "teachers":
        return [
            ({"K": k, "solver": solver},
             [f"train.K={k}",
              "train.mode=" + ("sfedkd" if solver == "greedy" else "sfedkd_random_teachers")])
            for k in cfg.ablate.k_values for solver in ("greedy", "random")
        ]
    if axis == "mode":
        return [({"mode": m}, [f"train.mode={m}"])
                for m in ("sfedkd", "fedseq", "fedavg")]
    raise ConfigError("axis", f"unknown ablation axis {axis!r}")


def cmd_ablate(args) -> int:
    raw = load_raw_config(args.config)
    if args.set:
        raw = apply_overrides(raw, args.set)
    base_cfg = resolve_config(raw)
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else base_cfg.ablate.seeds)
    cells = _ablation_cells(args.axis, base_cfg)

    rows = []
    for label, overrides in cells:
        finals = []
        for seed in seeds:
            cell_raw = apply_overrides(copy.deepcopy(raw), list(args.set or []))
            cell_raw = apply_overrides(cell_raw, overrides + [f"master_seed={seed}"])
            result = run_experiment(resolve_config(cell_raw))
            top1 = [r.top1 for r in result.records if r.top1 is not None]
            finals.append(top1[-1] if top1 else float("nan"))
        finals = np.asarray(finals)
        rows.append({**label,
                     "mean_top1": float(finals.mean()),
                     "std_top1": float(finals.std(ddof=1)) if len(finals) > 1 else 0.0,
                     "n_seeds": len(finals)})

    out_dir = Path(base_cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"ablate_{args.axis}.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        label = " ".join(f"{k}={v}" for k, v in row.items()
                         if k not in ("mean_top1", "std_top1", "n_seeds"))
        print(f"{label}: {row['mean_top1']:.4f} +/- {row['std_top1']:.4f}"
              f" ({row['n_seeds']} seeds)")
    print(f"wrote {out_path}")
    return EXIT_OK


def _read_distributions_csv(path) -> list[ClassDistribution]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                values = [float(p) for p in parts]
            except ValueError:
                if rows:
                    raise ConfigError("csv", f"non-numeric row: {line!r}")
                continue  # tolerate one header line
            rows.append(values)
    if not rows:
        raise ConfigError("csv", "no distribution rows found")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ConfigError("csv", "rows have inconsistent lengths")
    dists = []
    for i, row in enumerate(rows):
        vec = np.asarray(row, dtype=np.float64)
        if (vec < 0).any() or vec.sum() <= 0:
            raise ConfigError("csv", f"row {i} is not a valid distribution")
        dists.append(ClassDistribution(vec / vec.sum()))
    return dists


def cmd_select(args) -> int:
    dists = _read_distributions_csv(args.csv)
    if args.solver == "random":
        chosen = random_select(len(dists), args.k, args.seed)
    else:
        inst = SelectionInstance(dists, args.k, args.metric)
        chosen = greedy_select(inst) if args.solver == "greedy" else brute_force_select(inst)
    objective = aggregate_objective(dists, chosen, args.metric)
    print("selected:", ",".join(str(i) for i in chosen))
    print(f"objective: {objective:.6f}")
    return EXIT_OK


def cmd_inspect_partition(args) -> int:
    cfg = _load_config(args.config, args.set or [])
    train, _ = build_dataset(cfg)
    parts = partition_exdir(train, cfg.partition)
    for n, part in enumerate(parts):
        counts = np.bincount(part.labels, minlength=train.c_total)
        dist = class_distribution(part)
        flag = " (empty)" if dist.empty else ""
        print(f"client {n:3d}  n={len(part):5d}  counts={counts.tolist()}{flag}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfedkd",
        description="Sequential federated learning with multi-teacher distillation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config", help="path to the JSON config file")
    p_run.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a config field by dotted path")
    p_run.set_defaults(fn=cmd_run)

    p_ab = sub.add_parser("ablate", help="sweep one ablation axis over seeds")
    p_ab.add_argument("config")
    p_ab.add_argument("--axis", required=True,
                      choices=("weights", "metric", "teachers", "mode"))
    p_ab.add_argument("--seeds", help="comma-separated master seeds "
                                      "(default: the config's ablate.seeds)")
    p_ab.add_argument("--set", action="append", metavar="PATH=VALUE")
    p_ab.set_defaults(fn=cmd_ablate)

    p_sel = sub.add_parser("select", help="teacher selection on a distributions CSV")
    p_sel.add_argument("csv", help="CSV with one class distribution per row")
    p_sel.add_argument("--k", type=int, required=True)
    p_sel.add_argument("--metric", default="L1", choices=METRICS)
    p_sel.add_argument("--solver", default="greedy",
                       choices=("greedy", "exact", "random"))
    p_sel.add_argument("--seed", type=int, default=0, help="seed for --solver random")
    p_sel.set_defaults(fn=cmd_select)

    p_part = sub.add_parser("inspect-partition",
                            help="print per-client class histograms")
    p_part.add_argument("config")
    p_part.add_argument("--set", action="append", metavar="PATH=VALUE")
    p_part.set_defaults(fn=cmd_inspect_partition)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
