"""Command line entry point: ``auscult {synth,features,assemble,run,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from .errors import AuscultError
from .features import WINDOWINGS, write_feature_csv
from .pipeline import (
    CONFIG_KEYS,
    THREADS_ENV,
    corpus_features,
    default_threads,
    load_config,
    run_pipeline,
)

logger = logging.getLogger("auscult")


def _cmd_synth(args) -> int:
    from .synth import SynthSpec, generate

    spec = SynthSpec(
        n_subjects=args.subjects,
        pathological_fraction=args.frac,
        seed=args.seed,
        snr_db=args.snr,
    )
    manifest = generate(spec, args.out, threads=args.threads or default_threads())
    print(manifest)
    return 0


def _cmd_features(args) -> int:
    out = Path(args.out)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for w in args.windowing:
            table = corpus_features(args.corpus, w, args.threads or default_threads(), args.allow_any_rate)
            path = out / f"features_{w}.csv"
            write_feature_csv(path, table)
            written += [path, path.with_suffix(".json")]
            print(f"{path}: {len(table.meta)} rows x {len(table.names)} features")
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    return 0


def _cmd_assemble(args) -> int:
    from .datasets import build_dataset, write_dataset
    from .features import read_feature_csv

    table = read_feature_csv(args.features)
    meta = None if args.meta == "none" else ("default" if args.meta == "default" else tuple(args.meta.split(",")))
    ds = build_dataset(table, args.variant, meta)
    write_dataset(args.out, ds)
    print(f"{args.out}: {table.windowing} {ds.variant} ( {ds.shape[0]} x {ds.shape[1]} )")
    return 0


def _parse_sets(pairs) -> dict:
    values = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise AuscultError(f"--set expects KEY=VALUE, got {pair!r}")
        k, v = pair.split("=", 1)
        values[k.strip().replace("-", "_")] = v
    return values


def _cmd_run(args) -> int:
    overrides = {k: getattr(args, k) for k in ("corpus", "features", "windowing", "variant", "model", "fusion",
                                                "meta", "k", "repeats", "seed", "out", "threads")}
    if args.allow_novel:
        overrides["allow_novel"] = True
    if args.allow_any_rate:
        overrides["allow_any_rate"] = True
    if args.no_plots:
        overrides["plots"] = False
    overrides.update(_parse_sets(args.set))
    cfg = load_config(args.config, **overrides)
    payload = run_pipeline(cfg)
    rep = payload["report"]
    ci = rep["auc_roc"]["ci_half_width"]
    tail = "" if ci is None else f" ± {ci:.3f}"
    print(f"{payload['label']}: AUC ROC {rep['auc_roc']['mean']:.3f}{tail}")
    return 0


def _cmd_report(args) -> int:
    from .evaluation import aggregate_runs, read_runs_csv
    from .report import plot_curves, table_row, write_json, write_table_csv

    rows, entries = [], []
    for d in args.runs:
        d = Path(d)
        info = json.loads((d / "report.json").read_text(encoding="utf-8"))
        runs = read_runs_csv(d / "runs.csv")
        rep = aggregate_runs(runs)
        rows.append(table_row(info["label"], rep))
        entries.append({"label": info["label"], "source": d.name, "report": rep.to_dict()})
        if args.plots:
            Path(args.plots).mkdir(parents=True, exist_ok=True)
            plot_curves(Path(args.plots) / f"{d.name}.svg", runs, info["label"])
    out = Path(args.out)
    write_table_csv(out, rows)
    write_json(out.with_suffix(".json"), {"rows": entries})
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auscult", description="Lung-sound detection experiments with tree ensembles.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    threads_help = f"worker threads (default: ${THREADS_ENV} or 1)"

    s = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    s.add_argument("--subjects", type=int, default=45)
    s.add_argument("--frac", type=float, default=19 / 45, help="pathological fraction, strictly between 0 and 1")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--snr", type=float, default=-15.0, help="adventitious-to-breath power in dB")
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=0, help=threads_help)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("features", help="extract feature tables from a corpus")
    s.add_argument("--corpus", required=True, help="corpus directory or manifest.csv")
    s.add_argument("--windowing", nargs="+", choices=sorted(WINDOWINGS), default=sorted(WINDOWINGS))
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--threads", type=int, default=0, help=threads_help)
    s.add_argument("--allow-any-rate", action="store_true")
    s.set_defaults(func=_cmd_features)

    s = sub.add_parser("assemble", help="build one dataset variant from a feature table")
    s.add_argument("--features", required=True)
    s.add_argument("--variant", required=True, choices=("raw", "cms", "wms", "c2", "c3", "c6"))
    s.add_argument("--meta", default="none", help="none, default or a comma list of side,level,channel")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_assemble)

    s = sub.add_parser("run", help="cross-validate one configuration and write its report")
    s.add_argument("--config", help="key = value file; flags override it")
    for key in ("corpus", "features", "windowing", "variant", "model", "fusion", "meta", "out"):
        s.add_argument(f"--{key}")
    for key in ("k", "repeats", "seed"):
        s.add_argument(f"--{key}", type=int)
    s.add_argument("--threads", type=int, help=threads_help)
    s.add_argument("--allow-novel", action="store_true", help="permit combinations outside the established set")
    s.add_argument("--allow-any-rate", action="store_true")
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help=f"any config key: {', '.join(CONFIG_KEYS)}")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("report", help="tabulate finished runs")
    s.add_argument("runs", nargs="+", help="run output directories")
    s.add_argument("--out", required=True, help="table CSV (a .json twin is written next to it)")
    s.add_argument("--plots", help="directory for per-run SVG curves")
    s.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AuscultError, OSError, ValueError, KeyError) as exc:
        print(f"auscult {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
