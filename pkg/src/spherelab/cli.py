"""Command-line entry point: ``spherelab run|verify|compare``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import verify
from .config import RunConfig, load_compare_config, load_config
from .core import norm_histogram
from .errors import ConfigError, DivergenceDetected, SpherelabError
from .harness.runlog import RunLog, atomic_write, fmt
from .harness.train import train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3

# per-variant columns of the side-by-side compare CSV
COMPARE_COLUMNS = ("norm_var", "recall_at_1", "nmi", "f1")


def _err(msg: str) -> None:
    print(f"spherelab: {msg}", file=sys.stderr)


def norms_hist_csv(norms, bins: int = 20) -> str:
    counts, edges = norm_histogram(norms, bins)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("bin_lo", "bin_hi", "count"))
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        w.writerow((fmt(float(lo)), fmt(float(hi)), int(c)))
    return buf.getvalue()


def write_run_outputs(runlog: RunLog, out_dir: str, plots: bool = True) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "runlog.csv": runlog.to_csv(),
        "runlog.json": runlog.to_json(),
    }
    if runlog.final_norms:
        paths["norms_hist.csv"] = norms_hist_csv(runlog.final_norms)
    written = []
    for name, text in paths.items():
        atomic_write(os.path.join(out_dir, name), text)
        written.append(os.path.join(out_dir, name))
    if plots and runlog.records:
        from .plots import plot_run

        written += plot_run(runlog, out_dir)
    return written


def _finalize(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _finalize(load_config(args.config, args.set), args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_CONFIG
    try:
        runlog = train(cfg)
    except DivergenceDetected as exc:
        _err(f"diverged: {exc}")
        if exc.log is not None:
            write_run_outputs(exc.log, cfg.output_dir, plots=False)
        return EXIT_DIVERGED
    except SpherelabError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    for path in write_run_outputs(runlog, cfg.output_dir, plots=not args.no_plots):
        print(path)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_suites(args.suite, seed=args.seed if args.seed is not None else 0)
    sys.stdout.write(verify.format_report(results))
    return EXIT_OK if verify.all_passed(results) else EXIT_VERIFY


def _train_variant(cfg: RunConfig):
    try:
        return train(cfg), None
    except DivergenceDetected as exc:
        return exc.log, str(exc)


def compare_csv(logs: dict) -> str:
    names = list(logs)
    table = {}
    for name, lg in logs.items():
        rows = {r.iter: {"norm_var": r.norm_var} for r in lg.records}
        for m in lg.metrics:
            row = rows.setdefault(m.iter, {})
            row.update(recall_at_1=m.recall[0] if m.recall else None, nmi=m.nmi, f1=m.f1)
        table[name] = rows
    iters = sorted({it for rows in table.values() for it in rows})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter"] + [f"{n}.{c}" for n in names for c in COMPARE_COLUMNS])
    for it in iters:
        w.writerow([it] + [fmt(table[n].get(it, {}).get(c)) for n in names for c in COMPARE_COLUMNS])
    return buf.getvalue()


def _final(lg: RunLog) -> dict:
    last = lg.records[-1] if lg.records else None
    m = lg.metrics[-1] if lg.metrics else None
    return {
        "iterations": last.iter if last else 0,
        "final_norm_var": last.norm_var if last else None,
        "final_norm_mean": last.norm_mean if last else None,
        "final_recall": dict(zip(lg.config["train"]["recall_ks"], m.recall)) if m else None,
        "final_nmi": m.nmi if m else None,
        "final_f1": m.f1 if m else None,
    }


def compare_summary(logs: dict) -> dict:
    """Final values per variant, plus differences from the first (reference) variant."""
    finals = {n: _final(lg) for n, lg in logs.items()}
    ref_name = next(iter(finals))
    ref = finals[ref_name]

    def diff(a, b):
        return None if a is None or b is None else a - b

    deltas = {}
    for n, f in finals.items():
        if n == ref_name:
            continue
        d = {k: diff(f[k], ref[k]) for k in ("final_norm_var", "final_norm_mean", "final_nmi", "final_f1")}
        if f["final_recall"] and ref["final_recall"]:
            d["final_recall"] = {k: f["final_recall"][k] - ref["final_recall"][k] for k in f["final_recall"]}
        ratio = (f["final_norm_var"] / ref["final_norm_var"]
                 if ref["final_norm_var"] and f["final_norm_var"] is not None else None)
        d["norm_var_ratio"] = ratio
        deltas[n] = d
    return {"reference": ref_name, "variants": finals, "deltas": deltas}


def cmd_compare(args) -> int:
    try:
        cc = load_compare_config(args.config, args.set)
        base = _finalize(cc.base, args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_CONFIG
    out_dir = base.output_dir
    cfgs = {v.name: replace(base, regularizer=v.regularizer, output_dir=os.path.join(out_dir, v.name))
            for v in cc.variants}
    try:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = dict(zip(cfgs, pool.map(_train_variant, cfgs.values())))
        else:
            results = {n: _train_variant(c) for n, c in cfgs.items()}
    except SpherelabError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG

    plots = not args.no_plots
    logs = {}
    diverged = []
    for name, (lg, problem) in results.items():
        if problem:
            diverged.append(f"{name}: {problem}")
        if lg is not None:
            write_run_outputs(lg, cfgs[name].output_dir, plots=plots and not problem)
            logs[name] = lg
    os.makedirs(out_dir, exist_ok=True)
    atomic_write(os.path.join(out_dir, "compare.csv"), compare_csv(logs))
    atomic_write(os.path.join(out_dir, "compare_summary.json"),
                 json.dumps(compare_summary(logs), indent=1, sort_keys=True))
    if plots and not diverged:
        from .plots import plot_compare

        plot_compare(logs, out_dir)
    if diverged:
        for d in diverged:
            _err(f"diverged: {d}")
        return EXIT_DIVERGED
    print(os.path.join(out_dir, "compare.csv"))
    print(os.path.join(out_dir, "compare_summary.json"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spherelab", description="Angular metric-learning experiments and checks.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config: bool):
        if needs_config:
            sp.add_argument("--config", required=True, metavar="PATH", help="YAML config file")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="dotted-path override, e.g. regularizer.eta=0.5 (repeatable)")
            sp.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
            sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        sp.add_argument("--seed", type=int, metavar="N", help="random seed override")

    sp = sub.add_parser("run", help="train one configuration")
    common(sp, True)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("verify", help="numerical verification suites")
    sp.add_argument("suite", nargs="?", default="all", choices=(*verify.SUITES, "all"))
    common(sp, False)
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("compare", help="matched-seed runs of regularizer variants")
    common(sp, True)
    sp.add_argument("--jobs", type=int, default=1, metavar="N", help="variants trained in parallel")
    sp.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
