"""Command-line entry point: ``proptax-equity <subcommand> ...``.

Subcommands ``metrics``, ``ablation``, ``census`` and ``synth`` run an
experiment; ``report`` re-emits a summary from an existing report.json.
Values in ``--config`` (JSON) override flags given on the command line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import AssessmentError, ConfigError
from .experiments import (
    OUTPUT_DIR_ENV,
    BootstrapConfig,
    ExperimentConfig,
    default_output_dir,
    run_experiment,
)
from .pipeline.preprocess import PipelineConfig

log = logging.getLogger("proptax_equity")

SUBCOMMAND_KIND = {
    "metrics": "metrics_report",
    "ablation": "ablation",
    "census": "census",
    "synth": "synth_validate",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, required=True, help="experiment seed (required)")
    p.add_argument("--config", type=Path, help="JSON config; its values override flags")
    p.add_argument("--output-dir", default=None,
                   help=f"output directory (default: ${OUTPUT_DIR_ENV} or ./out)")
    p.add_argument("--sales", dest="sales_path", help="sales CSV")
    p.add_argument("--min-sales", type=int, default=100)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--b-outer", type=int, default=999)
    p.add_argument("--b-inner", type=int, default=100)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--tuner-budget", type=int, default=12)
    p.add_argument("--n-trees", type=int, default=200)
    p.add_argument("--model", dest="model_kind", choices=("lasso", "random_forest"))
    p.add_argument("--use-weights", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proptax-equity",
                                     description="Assessment accuracy and regressivity experiments")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="status quo metrics by county-year")
    _add_common(p)

    p = sub.add_parser("ablation", help="sparse vs rich property-feature models")
    _add_common(p)
    p.add_argument("--sparse-k", type=int, default=3)
    p.add_argument("--feature-ranking", help="comma-separated feature order for the sparse model")

    p = sub.add_parser("census", help="status quo vs status quo + census models")
    _add_common(p)
    p.add_argument("--census", dest="census_path", help="census block-group CSV")
    p.add_argument("--keep-cap-states", action="store_true",
                   help="do not drop counties in assessment-cap states")

    p = sub.add_parser("synth", help="generate synthetic counties and validate metrics")
    _add_common(p)
    p.add_argument("--n-counties", type=int, default=1)
    p.add_argument("--market", help="JSON object of MarketConfig fields")

    p = sub.add_parser("report", help="print the summary of an existing report")
    p.add_argument("report_dir", type=Path)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    d = {
        "kind": SUBCOMMAND_KIND[args.command],
        "seed": args.seed,
        "output_dir": args.output_dir or default_output_dir(),
        "sales_path": args.sales_path,
        "min_sales": args.min_sales,
        "n_jobs": args.n_jobs,
        "model_kind": args.model_kind,
        "use_weights": args.use_weights,
        "bootstrap": BootstrapConfig(args.b_outer, args.b_inner, args.level, args.alpha),
        "pipeline": PipelineConfig(tuner_budget=args.tuner_budget, n_trees=args.n_trees, seed=args.seed),
    }
    if args.command == "ablation":
        d["sparse_k"] = args.sparse_k
        if args.feature_ranking:
            d["feature_ranking"] = tuple(s.strip() for s in args.feature_ranking.split(","))
    elif args.command == "census":
        d["census_path"] = args.census_path
        d["exclude_cap_states"] = not args.keep_cap_states
    elif args.command == "synth":
        d["n_counties"] = args.n_counties
        d["market"] = json.loads(args.market) if args.market else {}
    if args.config is not None:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        if "pipeline" in file_cfg:
            base = d["pipeline"].__dict__ | file_cfg.pop("pipeline")
            d["pipeline"] = PipelineConfig.from_dict(base)
        if "bootstrap" in file_cfg:
            d["bootstrap"] = BootstrapConfig(**(d["bootstrap"].__dict__ | file_cfg.pop("bootstrap")))
        d.update(file_cfg)
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        summary = args.report_dir / "summary.txt"
        if not summary.exists():
            print(f"no summary.txt in {args.report_dir}", file=sys.stderr)
            return 2
        sys.stdout.write(summary.read_text())
        return 0
    try:
        config = config_from_args(args)
        report = run_experiment(config)
    except (AssessmentError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    out = Path(config.output_dir)
    sys.stdout.write((out / "summary.txt").read_text())
    if report.failures:
        print(f"failures recorded: {out / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
