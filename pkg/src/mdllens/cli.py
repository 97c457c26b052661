"""Command-line entry points.

    mdllens plan    --config grid.json
    mdllens run     --config grid.json [--resume] [--workers N] [--max-runs K]
    mdllens analyze --config grid.json --out report/
    mdllens metrics --baseline baseline.jsonl --mdl joint.jsonl
    mdllens cka     --reps-a a.csv --reps-b b.csv
    mdllens probe   --config grid.json [--out manifest.csv]

Exit codes: 0 success, 1 usage/config error, 2 run failure(s), 3 missing
prerequisites. ``MDLLENS_CACHE`` overrides the artifact root from the config.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config

USAGE_ERROR = 1
RUN_FAILURE = 2
MISSING_PREREQS = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mdllens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_plan = sub.add_parser("plan", help="enumerate the run catalog for a config")
    p_plan.add_argument("--config", required=True)

    p_run = sub.add_parser("run", help="execute pending catalog rows")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--resume", action="store_true")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--max-runs", type=int, default=None)

    p_an = sub.add_parser("analyze", help="run the analysis pipeline over a grid")
    p_an.add_argument("--config", required=True)
    p_an.add_argument("--out", required=True)
    p_an.add_argument("--no-figures", action="store_true")

    p_me = sub.add_parser("metrics", help="score one prediction log against a baseline")
    p_me.add_argument("--baseline", required=True)
    p_me.add_argument("--mdl", required=True)

    p_ck = sub.add_parser("cka", help="linear CKA between two representation CSVs")
    p_ck.add_argument("--reps-a", required=True)
    p_ck.add_argument("--reps-b", required=True)

    p_pr = sub.add_parser("probe", help="write the probe-set manifest for a config")
    p_pr.add_argument("--config", required=True)
    p_pr.add_argument("--out", default=None)
    return parser


def _cmd_plan(args) -> int:
    from .orchestrator import catalog_path, plan

    config = load_config(args.config)
    catalog = plan(config)
    import os

    os.makedirs(config.artifact_root, exist_ok=True)
    catalog.save(catalog_path(config))
    kinds = {}
    for row in catalog.rows:
        kinds[row.kind] = kinds.get(row.kind, 0) + 1
    print(f"planned {len(catalog.rows)} runs -> {catalog_path(config)}")
    for kind in sorted(kinds):
        print(f"  {kind}: {kinds[kind]}")
    return 0


def _cmd_run(args) -> int:
    from .orchestrator import execute, plan

    config = load_config(args.config)
    catalog = plan(config)
    catalog = execute(
        config,
        catalog,
        resume=args.resume,
        workers=args.workers,
        max_runs=args.max_runs,
    )
    done = sum(1 for r in catalog.rows if r.status == "completed")
    failed = [r for r in catalog.rows if r.status == "failed"]
    pending = len(catalog.rows) - done - len(failed)
    print(f"completed {done}/{len(catalog.rows)} runs ({len(failed)} failed, {pending} pending)")
    for row in failed:
        last = (row.error or "").strip().splitlines()
        print(f"  FAILED {row.run_id}: {last[-1] if last else 'unknown error'}")
    return RUN_FAILURE if failed else 0


def _cmd_analyze(args) -> int:
    from .analysis import analyze
    from .orchestrator import MissingRunsError, catalog_path, plan, RunCatalog
    import os

    config = load_config(args.config)
    cpath = catalog_path(config)
    if os.path.isfile(cpath):
        catalog = RunCatalog.load(cpath)
    else:
        catalog = plan(config)
    try:
        emitted = analyze(config, catalog, args.out, figures=not args.no_figures)
    except MissingRunsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return MISSING_PREREQS
    print(f"emitted {len(emitted)} artifacts under {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    from .metrics import mdl_scores, partition, read_prediction_log

    baseline = read_prediction_log(args.baseline)
    mdl = read_prediction_log(args.mdl)
    report = mdl_scores(partition(baseline), mdl)
    header = (
        "model_id,domain,perfgain,interference,transfer,k,k_prime,"
        "n_correct,n_incorrect,n_total,transfer_undefined,interference_undefined"
    )
    print(header)
    print(
        f"{mdl.model_id},{mdl.domain},{report.perfgain:.9g},{report.interference:.9g},"
        f"{report.transfer:.9g},{report.k},{report.k_prime},{report.n_correct},"
        f"{report.n_incorrect},{report.n_total},"
        f"{'true' if report.transfer_undefined else 'false'},"
        f"{'true' if report.interference_undefined else 'false'}"
    )
    return 0


def _cmd_cka(args) -> int:
    from .similarity import linear_cka, read_representation_csv

    a = read_representation_csv(args.reps_a)
    b = read_representation_csv(args.reps_b)
    score = linear_cka(a, b)
    print(f"{score.value:.9g}")
    return 0


def _cmd_probe(args) -> int:
    from .data import build_domain, probe_set
    import os

    config = load_config(args.config)
    domains = [build_domain(spec, config.task_label(spec.name)) for spec in config.domains]
    probe = probe_set(domains, per_class=config.probe_per_class, seed=config.probe_seed)
    out = args.out or os.path.join(config.artifact_root, "probe_manifest.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    probe.write_manifest(out)
    print(f"wrote {len(probe)} probe samples -> {out}")
    return 0


_COMMANDS = {
    "plan": _cmd_plan,
    "run": _cmd_run,
    "analyze": _cmd_analyze,
    "metrics": _cmd_metrics,
    "cka": _cmd_cka,
    "probe": _cmd_probe,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
