"""Statistical analysis over a completed experiment grid.

Consumes the run catalog's prediction logs and checkpoints and produces CSV
tables, figures, and a text summary under an output directory:

    tables/baseline_accuracy.csv        per-domain baseline accuracy by width
    tables/metrics_raw.csv              one row per (run, domain) with all scores
    tables/metrics_summary.csv          mean/stderr per (width, pairing, weighting, domain, metric)
    tables/relationships.csv            matched directed TL and MDL relationship values
    tables/relationships_undirected.csv averages over both directions
    tables/tl_mdl_correlation.csv       Pearson r and p per (capacity, metric)
    tables/tl_mdl_correlation_undirected.csv
    tables/weighting_ttests.csv         paired t-tests between weighting schemes
    tables/capacity_deltas.csv          per-increment metric changes by domain
    tables/similarity.csv               CKA between single-domain models by width
    tables/similarity_differences.csv   metric gap between more/less similar pairings
    tables/similarity_abs_differences.csv
    tables/transfer_interference_fit.csv best-fit slope of transfer vs interference
    figures/*.png                       convenience plots (all checks read the CSVs)
    summary.txt                         significant tests and noted gaps

Outputs are deterministic: rerunning on the same artifacts yields
byte-identical CSVs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .checkpoint import load_checkpoint
from .config import ExperimentConfig
from .data import build_domain, probe_set
from .metrics import (
    MetricReport,
    aggregate,
    mdl_scores,
    partition,
    read_prediction_log,
)
from .models import WidthConfig, build_model, param_count
from .orchestrator import MissingRunsError, RunCatalog, RunRow
from .similarity import extract_representations, linear_cka
from .stats import StatsError, linear_fit, paired_ttest, pearson

__all__ = [
    "RelationshipValue",
    "directed_relationship",
    "undirected_value",
    "analyze",
    "width_param_counts",
]

METRICS = ("perfgain", "transfer", "interference")


@dataclass(frozen=True)
class RelationshipValue:
    """Directed task relationship: the effect of source on target."""

    source: str
    target: str
    setting: str  # "transfer-learning" | "mdl"
    metric: str
    value: float
    width: float
    trial: int
    weighting: str = "uniform"

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"directed relationship needs source != target, got {self.source}")


def directed_relationship(
    baseline_acc: float, treated: "MetricReport | float", metric: str
) -> float:
    """Value of the source->target relationship for one metric.

    For perfgain this is the accuracy change in percentage points (``treated``
    may be a raw accuracy or a report); transfer and interference are read off
    the treated model's report against the baseline partition.
    """
    if metric == "perfgain":
        if isinstance(treated, MetricReport):
            return treated.perfgain
        return float(treated) - baseline_acc
    if not isinstance(treated, MetricReport):
        raise ValueError(f"metric {metric!r} needs a MetricReport, got {type(treated)}")
    if metric == "transfer":
        return treated.transfer
    if metric == "interference":
        return treated.interference
    raise ValueError(f"unknown metric {metric!r}")


def undirected_value(dir_ab: float, dir_ba: float) -> float:
    return (dir_ab + dir_ba) / 2.0


# ---------------------------------------------------------------------------
# Formatting helpers (CSV output must be byte-stable across reruns)
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return "na"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        if x != x:  # NaN
            return "na"
        return f"{x:.9g}"
    return str(x)


def _write_csv(path: str, header: list[str], rows: Iterable[Iterable]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, path)


def _pairing_str(pairing: tuple[str, ...]) -> str:
    return "+".join(pairing)


def width_param_counts(widths: list[float]) -> dict[float, int]:
    """Backbone parameter count per width multiplier (heads excluded)."""
    return {
        w: param_count(build_model(WidthConfig(w), {0: 2}, seed=0), include_heads=False)
        for w in widths
    }


# ---------------------------------------------------------------------------
# Grid data loading
# ---------------------------------------------------------------------------

@dataclass
class _Cell:
    """Scores of one treated model on one domain."""

    run_id: str
    kind: str  # joint | finetune
    pairing: tuple[str, ...]
    width: float
    weighting: str
    trial: int
    domain: str
    report: MetricReport
    baseline_acc: float
    treated_acc: float


@dataclass
class _GridData:
    config: ExperimentConfig
    param_counts: dict[float, int]
    baseline_acc: dict[tuple[str, float, int], float]  # (domain, width, trial)
    cells: list[_Cell]

    def mdl_cells(self) -> list[_Cell]:
        return [c for c in self.cells if c.kind == "joint"]

    def tl_cells(self) -> list[_Cell]:
        return [c for c in self.cells if c.kind == "finetune"]


def _check_complete(catalog: RunCatalog) -> None:
    missing = [
        f"{r.run_id} ({r.status})" for r in catalog.rows if r.status != "completed"
    ]
    if missing:
        raise MissingRunsError(missing)


def _collect(config: ExperimentConfig, catalog: RunCatalog) -> _GridData:
    _check_complete(catalog)
    rows = catalog.by_id()

    singles = [r for r in catalog.rows if r.kind == "single"]
    baseline_logs = {}
    baseline_acc = {}
    for row in singles:
        domain = row.pairing[0]
        log = read_prediction_log(row.predictions[domain])
        baseline_logs[(domain, row.width, row.trial)] = log
        baseline_acc[(domain, row.width, row.trial)] = log.accuracy

    cells = []
    for row in catalog.rows:
        if row.kind not in ("joint", "finetune"):
            continue
        eval_domains = row.pairing if row.kind == "joint" else (row.pairing[1],)
        for domain in eval_domains:
            key = (domain, row.width, row.trial)
            if key not in baseline_logs:
                raise MissingRunsError([f"single baseline for {key}"])
            part = partition(baseline_logs[key])
            treated_log = read_prediction_log(row.predictions[domain])
            report = mdl_scores(part, treated_log)
            cells.append(
                _Cell(
                    run_id=row.run_id,
                    kind=row.kind,
                    pairing=row.pairing,
                    width=row.width,
                    weighting=row.weighting,
                    trial=row.trial,
                    domain=domain,
                    report=report,
                    baseline_acc=baseline_acc[key],
                    treated_acc=treated_log.accuracy,
                )
            )
    return _GridData(
        config=config,
        param_counts=width_param_counts(config.widths),
        baseline_acc=baseline_acc,
        cells=cells,
    )


# ---------------------------------------------------------------------------
# Individual tables
# ---------------------------------------------------------------------------

def _baseline_table(data: _GridData) -> list[list]:
    rows = []
    for spec in sorted(data.config.domains, key=lambda s: s.name):
        for width in data.config.widths:
            accs = [
                data.baseline_acc[(spec.name, width, t)]
                for t in range(data.config.trials)
            ]
            mean = float(np.mean(accs))
            std = float(np.std(accs, ddof=1)) if len(accs) > 1 else None
            rows.append([data.param_counts[width], spec.name, mean, std, len(accs)])
    return rows


def _metrics_raw_table(data: _GridData) -> list[list]:
    rows = []
    for c in sorted(data.cells, key=lambda c: (c.run_id, c.domain)):
        r = c.report
        rows.append(
            [
                c.run_id,
                data.param_counts[c.width],
                c.width,
                _pairing_str(c.pairing),
                c.weighting,
                c.trial,
                c.domain,
                "mdl" if c.kind == "joint" else "tl",
                r.perfgain,
                r.interference,
                r.transfer,
                r.k,
                r.k_prime,
                r.n_correct,
                r.n_incorrect,
                r.n_total,
                r.transfer_undefined,
                r.interference_undefined,
                c.baseline_acc,
                c.treated_acc,
            ]
        )
    return rows


def _metrics_summary_table(data: _GridData) -> list[list]:
    groups: dict[tuple, list[MetricReport]] = {}
    for c in data.mdl_cells():
        groups.setdefault((c.width, c.pairing, c.weighting, c.domain), []).append(c.report)
    rows = []
    for (width, pairing, weighting, domain) in sorted(groups):
        agg = aggregate(groups[(width, pairing, weighting, domain)])
        for metric, m in (
            ("perfgain", agg.perfgain),
            ("transfer", agg.transfer),
            ("interference", agg.interference),
        ):
            rows.append(
                [
                    data.param_counts[width],
                    _pairing_str(pairing),
                    weighting,
                    domain,
                    metric,
                    m.mean,
                    m.stderr,
                    m.n_used,
                ]
            )
    return rows


def _relationship_rows(data: _GridData) -> list[dict]:
    """Matched directed relationships for the two settings.

    The MDL value of source->target comes from the 2-domain joint model on
    {source, target} scored on the target; the TL value from the model
    pretrained on source and finetuned on target. TL values are matched to
    every configured weighting of the joint run.
    """
    tl = {}
    for c in data.tl_cells():
        source, target = c.pairing
        for metric in METRICS:
            tl[(source, target, c.width, c.trial, metric)] = directed_relationship(
                c.baseline_acc, c.report, metric
            )

    out = []
    for c in data.mdl_cells():
        if len(c.pairing) != 2:
            continue  # directed relationships are defined for 2-domain models
        target = c.domain
        source = next(n for n in c.pairing if n != target)
        for metric in METRICS:
            key = (source, target, c.width, c.trial, metric)
            if key not in tl:
                continue
            out.append(
                {
                    "width": c.width,
                    "metric": metric,
                    "source": source,
                    "target": target,
                    "trial": c.trial,
                    "weighting": c.weighting,
                    "tl_value": tl[key],
                    "mdl_value": directed_relationship(c.baseline_acc, c.report, metric),
                }
            )
    out.sort(
        key=lambda r: (r["width"], r["metric"], r["source"], r["target"], r["trial"], r["weighting"])
    )
    return out


def _undirected_rows(rel_rows: list[dict]) -> list[dict]:
    directed = {
        (r["width"], r["metric"], r["source"], r["target"], r["trial"], r["weighting"]): r
        for r in rel_rows
    }
    out = []
    seen = set()
    for r in rel_rows:
        a, b = sorted((r["source"], r["target"]))
        key = (r["width"], r["metric"], a, b, r["trial"], r["weighting"])
        if key in seen:
            continue
        other = directed.get((r["width"], r["metric"], r["target"], r["source"], r["trial"], r["weighting"]))
        if other is None:
            continue
        seen.add(key)
        out.append(
            {
                "width": r["width"],
                "metric": r["metric"],
                "pair": f"{a}+{b}",
                "trial": r["trial"],
                "weighting": r["weighting"],
                "tl_value": undirected_value(r["tl_value"], other["tl_value"]),
                "mdl_value": undirected_value(r["mdl_value"], other["mdl_value"]),
            }
        )
    out.sort(key=lambda r: (r["width"], r["metric"], r["pair"], r["trial"], r["weighting"]))
    return out


def _correlation_table(
    rel_rows: list[dict], param_counts: dict[float, int]
) -> tuple[list[list], list[str]]:
    """Pearson r between TL and MDL relationship values per (capacity, metric)."""
    rows, notes = [], []
    widths = sorted({r["width"] for r in rel_rows})
    for width in widths:
        for metric in METRICS:
            xs = [r["tl_value"] for r in rel_rows if r["width"] == width and r["metric"] == metric]
            ys = [r["mdl_value"] for r in rel_rows if r["width"] == width and r["metric"] == metric]
            if len(xs) < 3:
                notes.append(
                    f"correlation skipped for width {width} / {metric}: only {len(xs)} pairs"
                )
                continue
            try:
                res = pearson(xs, ys)
            except StatsError as exc:
                notes.append(f"correlation undefined for width {width} / {metric}: {exc}")
                continue
            rows.append(
                [
                    param_counts[width],
                    metric,
                    res.statistic,
                    res.p_value,
                    res.n,
                    res.dof,
                    res.significant_at_95,
                ]
            )
    return rows, notes


def _ttest_table(data: _GridData) -> tuple[list[list], list[str]]:
    """Paired t-tests between weighting schemes, paired on (pairing, domain, trial)."""
    values: dict[tuple, dict[tuple, float]] = {}
    for c in data.mdl_cells():
        for metric in METRICS:
            values.setdefault((c.width, c.weighting, metric), {})[
                (c.pairing, c.domain, c.trial)
            ] = directed_relationship(c.baseline_acc, c.report, metric)

    weightings = data.config.weightings
    rows, sig_lines = [], []
    for width in data.config.widths:
        for metric in METRICS:
            for i, wa in enumerate(weightings):
                for wb in weightings[i + 1 :]:
                    va = values.get((width, wa, metric), {})
                    vb = values.get((width, wb, metric), {})
                    keys = sorted(set(va) & set(vb))
                    if len(keys) < 2:
                        continue
                    res = paired_ttest([va[k] for k in keys], [vb[k] for k in keys])
                    rows.append(
                        [
                            data.param_counts[width],
                            metric,
                            wa,
                            wb,
                            res.statistic,
                            res.p_value,
                            res.dof,
                            res.n,
                            res.significant_at_95,
                        ]
                    )
                    if res.significant_at_95:
                        sig_lines.append(
                            f"width {data.param_counts[width]} params, {metric}: "
                            f"{wa} vs {wb} differ (t={res.statistic:.4g}, p={res.p_value:.4g})"
                        )
    return rows, sig_lines


def _capacity_delta_table(data: _GridData) -> tuple[list[list], list[str]]:
    """Mean metric change per width increment, per domain (MDL cells only)."""
    if len(data.config.widths) < 2:
        return [], ["capacity deltas skipped: fewer than two widths configured"]
    rows = []
    domains = sorted({c.domain for c in data.mdl_cells()})
    for domain in domains:
        for metric in METRICS:
            series = []
            for width in data.config.widths:
                vals = [
                    directed_relationship(c.baseline_acc, c.report, metric)
                    for c in data.mdl_cells()
                    if c.domain == domain and c.width == width
                ]
                if vals:
                    series.append((width, float(np.mean(vals))))
            for (w1, v1), (w2, v2) in zip(series, series[1:]):
                rows.append(
                    [
                        domain,
                        metric,
                        data.param_counts[w1],
                        data.param_counts[w2],
                        v2 - v1,
                    ]
                )
    return rows, []


# ---------------------------------------------------------------------------
# Similarity tables (need checkpoints and the probe set)
# ---------------------------------------------------------------------------

def _similarity_scores(
    data: _GridData, catalog: RunCatalog
) -> tuple[dict[tuple[float, str, str], tuple[float, float, int]], list[str]]:
    """Mean/std/n of CKA between single-domain models, per width and pair."""
    config = data.config
    if len(config.domains) < 2:
        return {}, ["similarity skipped: fewer than two domains"]
    domains = [build_domain(spec, config.task_label(spec.name)) for spec in config.domains]
    probe = probe_set(domains, per_class=config.probe_per_class, seed=config.probe_seed)

    rows_by_id = catalog.by_id()
    scores: dict[tuple[float, str, str], tuple[float, float, int]] = {}
    names = sorted(spec.name for spec in config.domains)
    for width in config.widths:
        reps: dict[str, list] = {}
        for name in names:
            reps[name] = []
            for trial in range(config.trials):
                from .orchestrator import single_run_id

                row = rows_by_id[single_run_id(name, width, trial)]
                model = load_checkpoint(row.checkpoint)
                reps[name].append(
                    extract_representations(model, probe, model_id=row.run_id)
                )
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                vals = [
                    linear_cka(ra, rb).value for ra, rb in zip(reps[a], reps[b])
                ]
                scores[(width, a, b)] = (
                    float(np.mean(vals)),
                    float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                    len(vals),
                )
    return scores, []


def _similarity_tables(
    data: _GridData,
    sim_scores: dict[tuple[float, str, str], tuple[float, float, int]],
) -> tuple[list[list], list[list], list[list], list[str]]:
    sim_rows = [
        [data.param_counts[w], a, b, mean, std, n]
        for (w, a, b), (mean, std, n) in sorted(sim_scores.items())
    ]
    if not sim_scores:
        return sim_rows, [], [], []

    # rank each domain's 2-domain pairings by partner similarity
    notes: list[str] = []
    diff_rows: list[list] = []
    absdiff: dict[tuple[float, str, str], list[float]] = {}
    pairings2 = [p for p in data.config.pairings if len(p) == 2]
    domains = sorted({d for p in pairings2 for d in p})

    mean_by_cell: dict[tuple, list[float]] = {}
    for c in data.mdl_cells():
        if len(c.pairing) != 2:
            continue
        for metric in METRICS:
            mean_by_cell.setdefault((c.width, c.weighting, c.pairing, c.domain, metric), []).append(
                directed_relationship(c.baseline_acc, c.report, metric)
            )

    for domain in domains:
        partners = sorted({next(x for x in p if x != domain) for p in pairings2 if domain in p})
        if len(partners) < 2:
            notes.append(
                f"similarity differences skipped for {domain}: only {len(partners)} pairing(s)"
            )
            continue
        for width in data.config.widths:
            ranked = sorted(
                partners,
                key=lambda p: sim_scores[(width, *sorted((domain, p)))][0],
            )
            less_sim, more_sim = ranked[0], ranked[-1]
            for weighting in data.config.weightings:
                for metric in METRICS:
                    key_more = (
                        width,
                        weighting,
                        next(p for p in pairings2 if domain in p and more_sim in p),
                        domain,
                        metric,
                    )
                    key_less = (
                        width,
                        weighting,
                        next(p for p in pairings2 if domain in p and less_sim in p),
                        domain,
                        metric,
                    )
                    if key_more not in mean_by_cell or key_less not in mean_by_cell:
                        continue
                    diff = float(
                        np.mean(mean_by_cell[key_more]) - np.mean(mean_by_cell[key_less])
                    )
                    diff_rows.append(
                        [
                            data.param_counts[width],
                            weighting,
                            domain,
                            metric,
                            _pairing_str(tuple(sorted((domain, more_sim)))),
                            _pairing_str(tuple(sorted((domain, less_sim)))),
                            diff,
                        ]
                    )
                    absdiff.setdefault((width, weighting, metric), []).append(abs(diff))

    abs_rows = [
        [data.param_counts[w], weighting, metric, float(np.mean(vals)), len(vals)]
        for (w, weighting, metric), vals in sorted(absdiff.items())
    ]
    return sim_rows, diff_rows, abs_rows, notes


def _fit_table(data: _GridData) -> tuple[list[list], list[str]]:
    """Best-fit line of transfer (y) against interference (x) over MDL cells."""
    rows, notes = [], []
    groups: dict[str, list[tuple[float, float]]] = {"all": []}
    for c in data.mdl_cells():
        pt = (c.report.interference, c.report.transfer)
        groups.setdefault(c.weighting, []).append(pt)
        groups["all"].append(pt)
    for weighting in sorted(groups):
        pts = groups[weighting]
        if len(pts) < 2:
            continue
        try:
            fit = linear_fit([p[0] for p in pts], [p[1] for p in pts])
        except StatsError as exc:
            notes.append(f"transfer/interference fit skipped for {weighting}: {exc}")
            continue
        rows.append([weighting, fit.slope, fit.intercept, fit.r_squared, len(pts)])
    return rows, notes


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _emit_figures(data: _GridData, fig_dir: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    log_params = {w: np.log10(data.param_counts[w]) for w in data.config.widths}
    for metric in METRICS:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for weighting in data.config.weightings:
            xs, ys, es = [], [], []
            for width in data.config.widths:
                vals = [
                    directed_relationship(c.baseline_acc, c.report, metric)
                    for c in data.mdl_cells()
                    if c.width == width and c.weighting == weighting
                ]
                if not vals:
                    continue
                xs.append(log_params[width])
                ys.append(np.mean(vals))
                es.append(np.std(vals, ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0)
            if xs:
                ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=weighting)
        ax.set_xlabel("log10 backbone parameters")
        ax.set_ylabel(f"{metric} [%]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(fig_dir, f"{metric}_vs_capacity.png"), dpi=120)
        plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for weighting in data.config.weightings:
        pts = [
            (c.report.interference, c.report.transfer)
            for c in data.mdl_cells()
            if c.weighting == weighting
        ]
        if pts:
            ax.scatter([p[0] for p in pts], [p[1] for p in pts], s=14, label=weighting)
    ax.set_xlabel("interference [%]")
    ax.set_ylabel("transfer [%]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(fig_dir, "transfer_vs_interference.png"), dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def analyze(
    config: ExperimentConfig,
    catalog: RunCatalog,
    out_dir: str,
    figures: bool = True,
) -> dict[str, str]:
    """Run the full analysis pipeline and emit the report artifacts.

    Requires every cataloged run to be completed; otherwise raises
    ``MissingRunsError`` naming the gaps. Returns a mapping of table name to
    emitted path.
    """
    data = _collect(config, catalog)
    tables_dir = os.path.join(out_dir, "tables")
    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(tables_dir, exist_ok=True)
    os.makedirs(fig_dir, exist_ok=True)

    emitted: dict[str, str] = {}
    notes: list[str] = []

    def emit(name: str, header: list[str], rows: list[list]) -> None:
        path = os.path.join(tables_dir, f"{name}.csv")
        _write_csv(path, header, rows)
        emitted[name] = path
        if not rows:
            notes.append(f"table {name} is empty for this grid")

    emit(
        "baseline_accuracy",
        ["width_params", "domain", "mean", "std", "n"],
        _baseline_table(data),
    )

    has_treated = bool(data.cells)
    if has_treated:
        emit(
            "metrics_raw",
            [
                "run_id",
                "width_params",
                "width_multiplier",
                "pairing",
                "weighting",
                "trial",
                "domain",
                "setting",
                "perfgain",
                "interference",
                "transfer",
                "k",
                "k_prime",
                "n_correct",
                "n_incorrect",
                "n_total",
                "transfer_undefined",
                "interference_undefined",
                "baseline_acc",
                "treated_acc",
            ],
            _metrics_raw_table(data),
        )
        emit(
            "metrics_summary",
            ["width_params", "pairing", "weighting", "domain", "metric", "mean", "stderr", "n"],
            _metrics_summary_table(data),
        )

        fit_rows, fit_notes = _fit_table(data)
        notes.extend(fit_notes)
        emit(
            "transfer_interference_fit",
            ["weighting", "slope", "intercept", "r_squared", "n"],
            fit_rows,
        )

        ttest_rows, sig_lines = _ttest_table(data)
        emit(
            "weighting_ttests",
            ["width_params", "metric", "weighting_a", "weighting_b", "t", "p", "dof", "n", "significant_at_95"],
            ttest_rows,
        )

        delta_rows, delta_notes = _capacity_delta_table(data)
        notes.extend(delta_notes)
        emit(
            "capacity_deltas",
            ["domain", "metric", "from_width_params", "to_width_params", "delta"],
            delta_rows,
        )
    else:
        sig_lines = []
        notes.append("no joint or finetune runs in catalog: baseline tables only")

    if data.tl_cells() and data.mdl_cells():
        rel_rows = _relationship_rows(data)
        emit(
            "relationships",
            ["width_params", "metric", "source", "target", "trial", "weighting", "tl_value", "mdl_value"],
            [
                [
                    data.param_counts[r["width"]],
                    r["metric"],
                    r["source"],
                    r["target"],
                    r["trial"],
                    r["weighting"],
                    r["tl_value"],
                    r["mdl_value"],
                ]
                for r in rel_rows
            ],
        )
        corr_rows, corr_notes = _correlation_table(rel_rows, data.param_counts)
        notes.extend(corr_notes)
        emit(
            "tl_mdl_correlation",
            ["width_params", "metric", "r", "p", "n", "dof", "significant_at_95"],
            corr_rows,
        )

        und_rows = _undirected_rows(rel_rows)
        emit(
            "relationships_undirected",
            ["width_params", "metric", "pair", "trial", "weighting", "tl_value", "mdl_value"],
            [
                [
                    data.param_counts[r["width"]],
                    r["metric"],
                    r["pair"],
                    r["trial"],
                    r["weighting"],
                    r["tl_value"],
                    r["mdl_value"],
                ]
                for r in und_rows
            ],
        )
        und_corr_rows, und_notes = _correlation_table(
            [dict(r, source=r["pair"], target="") for r in und_rows], data.param_counts
        )
        notes.extend(und_notes)
        emit(
            "tl_mdl_correlation_undirected",
            ["width_params", "metric", "r", "p", "n", "dof", "significant_at_95"],
            und_corr_rows,
        )
    elif data.mdl_cells():
        notes.append("transfer-learning arm absent: TL/MDL correlation tables skipped")

    if has_treated:
        sim_scores, sim_notes = _similarity_scores(data, catalog)
        notes.extend(sim_notes)
        sim_rows, diff_rows, abs_rows, tab_notes = _similarity_tables(data, sim_scores)
        notes.extend(tab_notes)
        emit("similarity", ["width_params", "domain_a", "domain_b", "mean", "std", "n"], sim_rows)
        emit(
            "similarity_differences",
            ["width_params", "weighting", "domain", "metric", "more_similar_pairing", "less_similar_pairing", "difference"],
            diff_rows,
        )
        emit(
            "similarity_abs_differences",
            ["width_params", "weighting", "metric", "mean_abs_difference", "n_domains"],
            abs_rows,
        )

    if figures and has_treated:
        _emit_figures(data, fig_dir)

    summary_path = os.path.join(out_dir, "summary.txt")
    tmp = f"{summary_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("grid summary\n============\n")
        fh.write(f"domains: {', '.join(s.name for s in config.domains)}\n")
        fh.write(f"widths: {', '.join(_fmt(w) for w in config.widths)}\n")
        fh.write(f"weightings: {', '.join(config.weightings)}\n")
        fh.write(f"trials: {config.trials}\n")
        fh.write(f"runs: {len(catalog.rows)} completed\n\n")
        fh.write("significant weighting differences (paired t-test, alpha=0.05)\n")
        if sig_lines:
            for line in sig_lines:
                fh.write(f"  - {line}\n")
        else:
            fh.write("  none\n")
        fh.write("\nnotes and gaps\n")
        if notes:
            for line in notes:
                fh.write(f"  - {line}\n")
        else:
            fh.write("  none\n")
    os.replace(tmp, summary_path)
    emitted["summary"] = summary_path
    return emitted
