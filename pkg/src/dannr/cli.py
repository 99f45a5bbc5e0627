"""``dannr`` command line: generate | train | eval | bench.

Every subcommand takes an optional JSON config document (``--config``);
flags override it. The fully resolved config is written next to the outputs
as ``resolved_config.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from .data import FEATURES, TARGET_NAME, FleetSpec, apply_normalizer, fit_normalizer, generate_fleet, load_csv, \
    save_csv, NormStats
from .evaluation import MODES, EvalReport, average_row, mse, probe_domain_accuracy, run_cell, write_plot_data, \
    write_reports_csv, write_reports_json, config_digest
from .model import SOURCE, TARGET, init_model, load_checkpoint, save_checkpoint
from .nn import ConfigError, SchemaError
from .train import SCHEDULE_KINDS, TrainConfig, TrainingDiverged, train_baseline, train_dannr

log = logging.getLogger("dannr")


class UsageError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _resolve_train(cfg: dict, args) -> TrainConfig:
    train = TrainConfig.from_dict(cfg.get("train", {}))
    if args.seed is not None:
        train.seed = args.seed
    if args.lambda_schedule is not None:
        train.lambda_schedule.kind = args.lambda_schedule
    train.validate()
    return train


def _out_dir(cfg, args) -> Path:
    out = Path(args.out or cfg.get("out", "out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _existing(path, what) -> Path:
    if path is None:
        raise UsageError(f"no {what} path given")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def cmd_generate(cfg: dict, args) -> int:
    spec = FleetSpec.from_dict(cfg.get("fleet", {}))
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    out = _out_dir(cfg, args)
    for ds in generate_fleet(spec):
        save_csv(ds, out / f"{ds.origin}.csv")
    spec.save(out / "fleet_spec.json")
    _write_json(out / "resolved_config.json", {"command": "generate", "fleet": spec.to_dict(), "out": str(out)})
    log.info("wrote %d plant files to %s", spec.n_plants, out)
    return 0


def cmd_train(cfg: dict, args) -> int:
    mode = args.mode or cfg.get("mode", "dannr")
    if mode not in ("baseline", "dannr"):
        raise UsageError(f"unknown training mode {mode!r}")
    train = _resolve_train(cfg, args)
    hidden = tuple(cfg.get("hidden", [60]))
    features = tuple(cfg.get("features", FEATURES))
    target_col = cfg.get("target_column", TARGET_NAME)

    source = load_csv(_existing(cfg.get("source"), "source dataset"), features, target_col, SOURCE)
    if not source.labeled:
        raise SchemaError(f"source dataset lacks target column {target_col!r}")
    stats = fit_normalizer(source)
    source = apply_normalizer(stats, source)
    init = init_model(len(features), hidden, train.seed)
    init.meta.update(norm_stats=stats.to_dict(), features=list(features), target_column=target_col)

    if mode == "dannr":
        # target read without its label column: adaptation never sees target values
        raw_target = load_csv(_existing(cfg.get("target"), "target dataset"), features, None, None)
        target = apply_normalizer(stats, raw_target.with_domain(TARGET))
        model, trace = train_dannr(init, source, target, train)
    else:
        model, trace = train_baseline(init, source, train)

    out = _out_dir(cfg, args)
    save_checkpoint(model, out / "checkpoint.json")
    trace.to_csv(out / "trace.csv")
    _write_json(out / "resolved_config.json", {
        "command": "train", "mode": mode, "train": train.to_dict(), "hidden": list(hidden),
        "features": list(features), "target_column": target_col,
        "source": str(cfg.get("source")), "target": cfg.get("target"), "out": str(out)})
    log.info("trained %s model, final source MSE %.6g", mode, trace.records[-1].source_regression_loss
             if len(trace) else float("nan"))
    return 0


def _checkpoint_and_data(path, ds_path, features, target_col, domain):
    model = load_checkpoint(_existing(path, "checkpoint"))
    if model.input_dim != len(features) or model.meta.get("features", list(features)) != list(features):
        raise SchemaError(f"checkpoint {path} expects features {model.meta.get('features')}, "
                          f"config has {list(features)}")
    stats = NormStats.from_dict(model.meta["norm_stats"])
    raw = load_csv(_existing(ds_path, "dataset"), features, target_col, None).with_domain(domain)
    if not raw.labeled:
        raise SchemaError(f"{ds_path} has no {target_col!r} column to evaluate against")
    return model, apply_normalizer(stats, raw)


def cmd_eval(cfg: dict, args) -> int:
    features = tuple(cfg.get("features", FEATURES))
    target_col = cfg.get("target_column", TARGET_NAME)
    ckpts = cfg.get("checkpoints", {})
    base, src_b = _checkpoint_and_data(ckpts.get("baseline"), cfg.get("source"), features, target_col, SOURCE)
    dann, src_d = _checkpoint_and_data(ckpts.get("dannr"), cfg.get("source"), features, target_col, SOURCE)
    _, tgt_b = _checkpoint_and_data(ckpts.get("baseline"), cfg.get("target"), features, target_col, TARGET)
    _, tgt_d = _checkpoint_and_data(ckpts.get("dannr"), cfg.get("target"), features, target_col, TARGET)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)

    report = EvalReport(
        target_name=cfg.get("target_name", Path(cfg["target"]).stem),
        source_name=cfg.get("source_name", Path(cfg["source"]).stem),
        source_mse_no_tl=mse(base.predict(src_b.X), src_b.y),
        source_mse_tl=mse(dann.predict(src_d.X), src_d.y),
        target_mse_no_tl=mse(base.predict(tgt_b.X), tgt_b.y),
        target_mse_tl=mse(dann.predict(tgt_d.X), tgt_d.y),
        probe_accuracy_baseline=probe_domain_accuracy(base, src_b, tgt_b, seed),
        probe_accuracy_dannr=probe_domain_accuracy(dann, src_d, tgt_d, seed),
        mode="eval", seed=seed,
        config_digest=config_digest(base.meta.get("train_config"), dann.meta.get("train_config")),
    )
    out = _out_dir(cfg, args)
    write_reports_csv([report], out / "report.csv", with_average=False)
    write_reports_json([report], out / "report.json", cfg)
    write_plot_data(out / "plot_data.csv", tgt_b.y, base.predict(tgt_b.X), dann.predict(tgt_d.X))
    _write_json(out / "resolved_config.json", {**cfg, "command": "eval", "seed": seed, "out": str(out)})
    log.info("transfer ratio %.4f", report.transfer_ratio)
    return 0


# --- bench -----------------------------------------------------------------------

def cell_id(mode: str, target: int, seed: int) -> str:
    return f"{mode}-t{target}-s{seed}"


def _run_bench_cell(fleet, mode, target, seed, train_dict, hidden, holdout, cell_dir):
    cfg = TrainConfig.from_dict(train_dict)
    res = run_cell(fleet, mode, target, cfg, hidden, seed, holdout)
    cell_dir = Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    write_plot_data(cell_dir / "plot_data.csv", res.target_eval.y,
                    res.baseline.predict(res.target_eval.X), res.dannr.predict(res.target_eval.X))
    # report last: its presence marks the cell complete
    tmp = cell_dir / "report.json.tmp"
    tmp.write_text(json.dumps(res.report.to_dict(), indent=1), encoding="utf-8")
    tmp.replace(cell_dir / "report.json")
    return res.report


def _load_fleet(cfg, out):
    if "fleet_dir" in cfg:
        d = Path(cfg["fleet_dir"])
        files = sorted(d.glob("plant-*.csv"), key=lambda p: int(p.stem.split("-")[1]))
        if len(files) < 2:
            raise UsageError(f"fleet directory {d} holds fewer than two plant-*.csv files")
        return [load_csv(f, domain=SOURCE) for f in files], {"fleet_dir": str(d)}
    spec = FleetSpec.from_dict(cfg.get("fleet", {}))
    return generate_fleet(spec), {"fleet": spec.to_dict()}


def cmd_bench(cfg: dict, args) -> int:
    train = _resolve_train(cfg, args)
    hidden = tuple(cfg.get("hidden", [60]))
    holdout = cfg.get("holdout")
    modes = [args.mode_bench] if args.mode_bench else cfg.get("modes", list(MODES))
    seeds = cfg.get("seeds", [train.seed + i for i in range(cfg.get("n_seeds", 3))])
    jobs = args.jobs or cfg.get("jobs", 1)
    out = _out_dir(cfg, args)
    fleet, fleet_doc = _load_fleet(cfg, out)

    _write_json(out / "resolved_config.json", {
        "command": "bench", **fleet_doc, "train": train.to_dict(), "hidden": list(hidden),
        "holdout": holdout, "modes": modes, "seeds": seeds, "out": str(out)})

    cells = [(m, t, s) for m in modes for s in seeds for t in range(len(fleet))]
    reports, todo, failed = {}, [], []
    for m, t, s in cells:
        f = out / "cells" / cell_id(m, t, s) / "report.json"
        if f.is_file():
            reports[(m, t, s)] = EvalReport.from_dict(json.loads(f.read_text(encoding="utf-8")))
        else:
            todo.append((m, t, s))
    log.info("%d cells, %d already complete", len(cells), len(cells) - len(todo))

    def args_for(m, t, s):
        return (fleet, m, t, s, train.to_dict(), hidden, holdout, out / "cells" / cell_id(m, t, s))

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(_run_bench_cell, *args_for(*c)): c for c in todo}
            for fut in as_completed(futs):
                c = futs[fut]
                try:
                    reports[c] = fut.result()
                except Exception as exc:  # noqa: BLE001
                    log.error("cell %s failed: %s", cell_id(*c), exc)
                    failed.append(c)
    else:
        for c in todo:
            try:
                reports[c] = _run_bench_cell(*args_for(*c))
                log.info("cell %s done", cell_id(*c))
            except Exception as exc:  # noqa: BLE001
                log.error("cell %s failed: %s", cell_id(*c), exc)
                failed.append(c)

    ordered = [reports[c] for c in cells if c in reports]
    write_reports_csv(ordered, out / "reports.csv", with_average=False)
    write_reports_json(ordered, out / "reports.json", json.loads((out / "resolved_config.json").read_text()))
    _write_aggregate(out / "aggregate.csv", modes, seeds, reports)
    if failed:
        log.error("%d of %d cells failed: %s", len(failed), len(cells), ", ".join(cell_id(*c) for c in failed))
        return 1
    return 0


def _write_aggregate(path, modes, seeds, reports):
    """Per seed, the Average row of each mode; then mean and spread over seeds."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "seed", "n_targets", "source_mse_no_tl", "source_mse_tl",
                    "target_mse_no_tl", "target_mse_tl", "transfer_ratio", "transfer_ratio_std"])
        for m in modes:
            ratios = []
            for s in seeds:
                rs = [r for (mm, _, ss), r in sorted(reports.items()) if mm == m and ss == s]
                if not rs:
                    continue
                avg = average_row(rs)
                ratios.append(avg["transfer_ratio"])
                w.writerow([m, s, len(rs), avg["source_mse_no_tl"], avg["source_mse_tl"],
                            avg["target_mse_no_tl"], avg["target_mse_tl"], avg["transfer_ratio"], ""])
            if ratios:
                w.writerow([m, "average", len(ratios), "", "", "", "", float(np.mean(ratios)),
                            float(np.std(ratios))])


# --- entry point -------------------------------------------------------------------

COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config document")
    common.add_argument("--seed", type=int, metavar="N", help="root seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--jobs", type=int, metavar="N", help="parallel cells (bench)")
    common.add_argument("--lambda-schedule", choices=SCHEDULE_KINDS, dest="lambda_schedule")

    parser = argparse.ArgumentParser(prog="dannr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic fleet as CSV")
    p = sub.add_parser("train", parents=[common], help="train a baseline or DANN-R checkpoint")
    p.add_argument("--mode", choices=["baseline", "dannr"])
    sub.add_parser("eval", parents=[common], help="evaluate baseline and DANN-R checkpoints")
    p = sub.add_parser("bench", parents=[common], help="run the transfer matrix over seeds")
    p.add_argument("--mode", choices=MODES, dest="mode_bench")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DANNR_LOG", "info").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    args.mode = getattr(args, "mode", None)
    args.mode_bench = getattr(args, "mode_bench", None)
    try:
        cfg = _load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return 3
    except (UsageError, ConfigError, SchemaError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
