"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 1-6 are self-contained and fast. Criteria 7-9 run on the desk-scale
grids declared in configs/desk_grid.json and configs/tl_grid.json; executing
those grids from scratch is hours of CPU training, so the tests drive the
orchestrator with resume semantics: completed artifacts are verified and
reused, pending rows are trained. Run `scripts/run_desk_grids.sh` (or
`mdllens run --config configs/...`) beforehand to pre-populate them.
"""

import csv
import dataclasses
import math
import os
import time

import numpy as np
import pytest
import torch
from scipy import integrate

import mdllens.analysis as analysis
import mdllens.stats as stats
from mdllens.config import load_config
from mdllens.data import SyntheticDomainParams, make_synthetic_domain
from mdllens.metrics import PredictionLog, mdl_scores, partition
from mdllens.models import WidthConfig, build_model, group_count, param_count
from mdllens.orchestrator import RunCatalog, catalog_path, execute, plan
from mdllens.similarity import RepresentationMatrix, linear_cka
from mdllens.training import TrainConfig, TrainLog, step_losses, train_single
from mdllens.weighting import (
    CovHistory,
    TaskLossVector,
    UncertaintyState,
    cov_update,
    uncertainty_weights,
    uniform_weights,
)

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(REPO_ROOT, "configs")


def report(criterion: str, started: float, budget: float | None = None, enforce: bool = True):
    elapsed = time.time() - started
    print(f"\nACCEPTANCE {criterion}: PASS ({elapsed:.1f}s)")
    if budget is not None and enforce:
        assert elapsed < budget, f"{criterion} exceeded its runtime budget ({elapsed:.0f}s)"


# ---------------------------------------------------------------------------
# Criterion 1: metric identity over >= 10^4 random log pairs
# ---------------------------------------------------------------------------

def test_c1_metric_identity_suite():
    t0 = time.time()
    rng = np.random.default_rng(20240817)
    pairs = 10_000
    for i in range(pairs):
        n = int(rng.integers(20, 50))
        p_base = rng.uniform(0.2, 0.8)
        base = rng.random(n) < p_base
        # force a non-degenerate partition
        base[0], base[1] = True, False
        mdl = rng.random(n) < rng.uniform(0.2, 0.8)

        base_log = PredictionLog(
            "b", "d", [(f"s{j}", 0, 0 if ok else 1) for j, ok in enumerate(base)]
        )
        mdl_log = PredictionLog(
            "m", "d", [(f"s{j}", 0, 0 if ok else 1) for j, ok in enumerate(mdl)]
        )
        r = mdl_scores(partition(base_log), mdl_log)

        # brute-force oracle: count the four correctness cells sample by sample
        n11 = int(np.sum(base & mdl))
        n10 = int(np.sum(base & ~mdl))
        n01 = int(np.sum(~base & mdl))
        n00 = int(np.sum(~base & ~mdl))
        assert (r.k, r.k_prime) == (n11, n01)
        assert (r.n_correct, r.n_incorrect, r.n_total) == (n11 + n10, n01 + n00, n)
        # exact integer identity before percentage scaling
        assert (r.k + r.k_prime - r.n_correct) == r.k_prime - (r.n_correct - r.k)
        assert 100 * (r.k + r.k_prime - r.n_correct) == (
            100 * r.k_prime - 100 * (r.n_correct - r.k)
        )
        # oracle-recomputed percentages are bit-identical
        assert r.perfgain == 100.0 * (n11 + n01 - (n11 + n10)) / n
        assert r.interference == 100.0 * n10 / (n11 + n10)
        assert r.transfer == 100.0 * n01 / (n01 + n00)
    report("C1 metric identity", t0, budget=10.0)


# ---------------------------------------------------------------------------
# Criterion 2: CKA property suite
# ---------------------------------------------------------------------------

def _rep(x, model_id="m"):
    return RepresentationMatrix(
        model_id=model_id, sample_ids=[f"s{i}" for i in range(len(x))], features=np.asarray(x, float)
    )


def test_c2_cka_property_suite():
    t0 = time.time()
    rng = np.random.default_rng(7)

    x = rng.normal(size=(80, 24))
    assert abs(linear_cka(_rep(x), _rep(x)).value - 1.0) < 1e-9

    for _ in range(10):
        x = rng.normal(size=(60, 10))
        q, _r = np.linalg.qr(rng.normal(size=(10, 10)))
        assert abs(linear_cka(_rep(x), _rep(x @ q, "q")).value - 1.0) < 1e-7
        y = rng.normal(size=(60, 14))
        base = linear_cka(_rep(x), _rep(y, "y")).value
        for c in (0.02, 5.0):
            assert abs(linear_cka(_rep(c * x), _rep(y, "y")).value - base) < 1e-7

    # feature-space formula vs centered-Gram HSIC formula
    for _ in range(50):
        n = int(rng.integers(20, 60))
        x = rng.normal(size=(n, int(rng.integers(3, 12))))
        y = rng.normal(size=(n, int(rng.integers(3, 12))))
        h = np.eye(n) - np.ones((n, n)) / n
        k, l = h @ (x @ x.T) @ h, h @ (y @ y.T) @ h
        gram = np.sum(k * l) / math.sqrt(np.sum(k * k) * np.sum(l * l))
        assert abs(linear_cka(_rep(x), _rep(y, "y")).value - gram) < 1e-7

    for seed in range(20):
        g = np.random.default_rng(seed)
        a = g.normal(size=(200, 16))
        b = g.normal(size=(200, 16))
        assert linear_cka(_rep(a), _rep(b, "b")).value < 0.2
    report("C2 CKA properties", t0, budget=30.0)


# ---------------------------------------------------------------------------
# Criterion 3: weighting algebra
# ---------------------------------------------------------------------------

def test_c3_weighting_algebra():
    t0 = time.time()
    assert uniform_weights(["a", "b", "c"]) == {"a": 1.0, "b": 1.0, "c": 1.0}

    state = UncertaintyState([0, 1]).double()
    weights, reg = uncertainty_weights(state)
    assert abs(float(weights[0].detach()) - 1.0) < 1e-9
    assert abs(float(reg.detach()) - 2 * math.log(2)) < 1e-9

    with torch.no_grad():
        state.s["1"].fill_(math.log(4.0))
    weights, reg = uncertainty_weights(state)
    assert abs(float(weights[1].detach()) - 0.25) < 1e-9
    assert abs(float(reg.detach()) - (math.log(2) + math.log(5))) < 1e-9

    # regularizer gradient against central finite differences
    state = UncertaintyState([0, 1, 2]).double()
    with torch.no_grad():
        state.s["0"].fill_(-0.9)
        state.s["2"].fill_(1.7)
    _, reg = uncertainty_weights(state)
    reg.backward()
    eps = 1e-6
    for key, p in state.s.items():
        with torch.no_grad():
            p += eps
            hi = float(uncertainty_weights(state)[1].detach())
            p -= 2 * eps
            lo = float(uncertainty_weights(state)[1].detach())
            p += eps
        assert abs(float(p.grad) - (hi - lo) / (2 * eps)) < 1e-5

    # CoV: post-warmup weights sum to the task count; zero variance -> uniform
    hist = CovHistory(tasks=(0, 1, 2), warmup_steps=5)
    rng = np.random.default_rng(0)
    weights = None
    for _ in range(40):
        losses = {t: 1.0 + float(rng.uniform(0.0, 0.8)) for t in (0, 1, 2)}
        weights, hist = cov_update(hist, TaskLossVector(losses))
    assert abs(sum(weights.values()) - 3.0) < 1e-9

    hist = CovHistory(tasks=(0, 1), warmup_steps=3)
    for _ in range(10):
        weights, hist = cov_update(hist, TaskLossVector({0: 2.0, 1: 0.5}))
    assert weights == {0: 1.0, 1: 1.0}
    report("C3 weighting algebra", t0, budget=5.0)


# ---------------------------------------------------------------------------
# Criterion 4: statistics vs oracles
# ---------------------------------------------------------------------------

def test_c4_statistics_vs_oracles():
    t0 = time.time()
    r = stats.pearson([1, 2, 3, 4, 5], [2, 1, 4, 3, 5])
    assert abs(r.statistic - 0.8) < 1e-6
    assert abs(r.p_value - 0.10408803866182799) < 1e-4

    t = stats.paired_ttest([1, 2, 3], [0, 0, 0])
    assert abs(t.statistic - 2 * math.sqrt(3)) < 1e-6
    assert t.dof == 2
    assert abs(t.p_value - 0.07417990022744853) < 1e-4

    fit = stats.linear_fit([0, 1, 2], [0, 0, 3])
    assert abs(fit.slope - 1.5) < 1e-6
    assert abs(fit.intercept + 0.5) < 1e-6
    assert abs(fit.r_squared - 0.75) < 1e-6

    def t_pdf(x, dof):
        c = math.gamma((dof + 1) / 2) / (math.sqrt(dof * math.pi) * math.gamma(dof / 2))
        return c * (1 + x * x / dof) ** (-(dof + 1) / 2)

    for dof in range(1, 31):
        for tv in (-10.0, -4.0, -1.3, -0.2, 0.0, 0.6, 2.1, 5.0, 10.0):
            quad, _ = integrate.quad(t_pdf, 0.0, abs(tv), args=(dof,), epsabs=1e-12, epsrel=1e-12)
            oracle = 0.5 + math.copysign(quad, tv)
            assert abs(stats.student_t_cdf(tv, dof) - oracle) < 1e-6, (tv, dof)
    report("C4 statistics oracles", t0, budget=30.0)


# ---------------------------------------------------------------------------
# Criterion 5: model structure
# ---------------------------------------------------------------------------

def test_c5_model_structure():
    t0 = time.time()
    for mult, target in ((0.25, 29_000), (0.5, 116_000), (1.0, 463_000), (2.0, 1_848_000)):
        n = param_count(build_model(WidthConfig(mult), {0: 100}), include_heads=False)
        assert abs(n - target) / target <= 0.10, (mult, n)

    for c in range(1, 257):
        assert group_count(c, 2) == max(1, min(32, c // 2))

    model = build_model(WidthConfig(0.25), {0: 6, 1: 9}, seed=0)
    x = torch.randn(4, 3, 32, 32)
    before = model(x)
    with torch.no_grad():
        for p in model.heads["1"].parameters():
            p.add_(2.5)
    after = model(x)
    assert torch.equal(before.logits[0], after.logits[0])

    model.zero_grad()
    out = model(x)
    out.logits[0].sum().backward()
    for p in model.heads["1"].parameters():
        assert p.grad is None or p.grad.abs().sum() == 0
    for p in model.heads["0"].parameters():
        assert p.grad is not None and p.grad.abs().sum() > 0
    report("C5 model structure", t0, budget=120.0)


# ---------------------------------------------------------------------------
# Criterion 6: training sanity
# ---------------------------------------------------------------------------

def test_c6_training_sanity():
    t0 = time.time()
    # (a) a 0.25x model drives a 32-sample synthetic subset to 100% train acc
    dom = make_synthetic_domain(
        SyntheticDomainParams(4, 8, 8, shift_seed=0, noise_std=0.05), name="tiny"
    )
    dom = dataclasses.replace(dom, test=dom.train)
    cfg = TrainConfig(epochs=60, seed=0, batch_size=8, lr=0.05)
    _, log = train_single(dom, WidthConfig(0.25), cfg)
    final = log.final_accuracy("tiny")
    assert final == 100.0, f"train accuracy only reached {final}"

    # (b) loss gradient matches central finite differences at 1e-3 relative
    from mdllens.data import mixed_batches, Batch

    model = build_model(WidthConfig(0.25), {0: 4}, seed=1).double()
    batch = next(mixed_batches([dom], 32, epoch_seed=0))
    batch = Batch(batch.images.astype(np.float64), batch.labels, batch.tasks, batch.sample_ids)

    class Unit:
        def torch_parameters(self):
            return []

        def compute(self, losses):
            return {0: 1.0}, None

    total, _ = step_losses(model, batch, Unit())
    total.backward()
    p = model.backbone.blocks[3].conv1.weight
    grad = float(p.grad[0, 0, 1, 1])
    eps = 1e-6
    with torch.no_grad():
        p[0, 0, 1, 1] += eps
        hi, _ = step_losses(model, batch, Unit())
        p[0, 0, 1, 1] -= 2 * eps
        lo, _ = step_losses(model, batch, Unit())
        p[0, 0, 1, 1] += eps
    fd = (float(hi.detach()) - float(lo.detach())) / (2 * eps)
    assert abs(grad - fd) <= 1e-3 * max(abs(fd), 1e-12)

    # (c) LR milestone values exact
    from mdllens.training import default_milestones, lr_at_epoch, SINGLE_MILESTONE_FRACTIONS

    tcfg = TrainConfig(lr=0.1, lr_decay=0.1, epochs=250)
    ms = default_milestones(250, SINGLE_MILESTONE_FRACTIONS)
    assert ms == (140, 210)
    assert lr_at_epoch(tcfg, ms, 0) == 0.1
    assert lr_at_epoch(tcfg, ms, 139) == 0.1
    assert lr_at_epoch(tcfg, ms, 140) == 0.1 * 0.1
    assert lr_at_epoch(tcfg, ms, 210) == 0.1 * 0.1 * 0.1
    report("C6 training sanity", t0, budget=300.0)


# ---------------------------------------------------------------------------
# Criteria 7-9: desk-scale grids (resumable; see module docstring)
# ---------------------------------------------------------------------------

def _run_grid(config_rel_path: str, cache_dir: str, workers: int = 2):
    """Plan + execute a grid with resume, pinning the artifact root."""
    prev = os.environ.get("MDLLENS_CACHE")
    os.environ["MDLLENS_CACHE"] = cache_dir
    try:
        config = load_config(os.path.join(CONFIG_DIR, config_rel_path))
        catalog = execute(config, plan(config), resume=True, workers=workers)
        bad = [r.run_id for r in catalog.rows if r.status != "completed"]
        assert not bad, f"runs failed or pending: {bad[:5]} (+{max(0, len(bad)-5)} more)"
        return config, catalog
    finally:
        if prev is None:
            os.environ.pop("MDLLENS_CACHE", None)
        else:
            os.environ["MDLLENS_CACHE"] = prev


def _read_table(out_dir: str, name: str) -> list[dict]:
    with open(os.path.join(out_dir, "tables", f"{name}.csv")) as fh:
        return list(csv.DictReader(fh))


def test_c7_desk_scale_mdl_grid():
    t0 = time.time()
    cache = os.path.join(REPO_ROOT, "artifacts", "desk_grid")
    config, catalog = _run_grid("desk_grid.json", cache)
    out_dir = os.path.join(REPO_ROOT, "artifacts", "desk_report")
    analysis.analyze(config, catalog, out_dir, figures=True)
    raw = [r for r in _read_table(out_dir, "metrics_raw") if r["setting"] == "mdl"]
    assert len(raw) == 36  # 18 joint runs x 2 domains

    # (a) transfer and interference strictly positive in every cell
    for row in raw:
        assert float(row["transfer"]) > 0.0, row["run_id"]
        assert float(row["interference"]) > 0.0, row["run_id"]
        assert row["transfer_undefined"] == "false"
        assert row["interference_undefined"] == "false"

    # (b) capacity direction with a one-sided 1pp allowance
    def mean_metric(width_mult, metric):
        vals = [float(r[metric]) for r in raw if float(r["width_multiplier"]) == width_mult]
        assert len(vals) == 18
        return sum(vals) / len(vals)

    inter_small, inter_large = mean_metric(0.25, "interference"), mean_metric(1.0, "interference")
    trans_small, trans_large = mean_metric(0.25, "transfer"), mean_metric(1.0, "transfer")
    print(
        f"\n  interference 0.25x={inter_small:.2f}% 1x={inter_large:.2f}% | "
        f"transfer 0.25x={trans_small:.2f}% 1x={trans_large:.2f}%"
    )
    assert inter_large <= inter_small + 1.0, "interference did not shrink with capacity"
    assert trans_large >= trans_small - 1.0, "transfer did not grow with capacity"

    # (c) transfer-vs-interference admits a negative best-fit slope
    fit_rows = {r["weighting"]: r for r in _read_table(out_dir, "transfer_interference_fit")}
    slope = float(fit_rows["all"]["slope"])
    print(f"  transfer-vs-interference slope (all cells) = {slope:.3f}")
    assert slope < 0.0
    report("C7 desk-scale MDL grid", t0)


def test_c8_tl_mdl_correlation_pipeline():
    t0 = time.time()
    cache = os.path.join(REPO_ROOT, "artifacts", "tl_grid")
    config, catalog = _run_grid("tl_grid.json", cache)
    out_dir = os.path.join(REPO_ROOT, "artifacts", "tl_report")
    analysis.analyze(config, catalog, out_dir, figures=False)

    corr = _read_table(out_dir, "tl_mdl_correlation")
    rel = _read_table(out_dir, "relationships")
    capacities = {r["width_params"] for r in rel}
    assert len(capacities) == 2

    # a finite r and p for every (capacity, metric)
    seen = {(r["width_params"], r["metric"]) for r in corr}
    for cap in capacities:
        for metric in ("perfgain", "transfer", "interference"):
            assert (cap, metric) in seen, f"missing correlation row for {cap}/{metric}"
    for row in corr:
        assert math.isfinite(float(row["r"]))
        assert math.isfinite(float(row["p"])) and 0.0 <= float(row["p"]) <= 1.0

    # spreadsheet-style recomputation from the emitted relationship CSV
    for crow in corr:
        xs = [
            float(r["tl_value"])
            for r in rel
            if r["width_params"] == crow["width_params"] and r["metric"] == crow["metric"]
        ]
        ys = [
            float(r["mdl_value"])
            for r in rel
            if r["width_params"] == crow["width_params"] and r["metric"] == crow["metric"]
        ]
        n = len(xs)
        assert n == int(crow["n"])
        mx, my = sum(xs) / n, sum(ys) / n
        sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
        sxx = sum((a - mx) ** 2 for a in xs)
        syy = sum((b - my) ** 2 for b in ys)
        r_hand = sxy / math.sqrt(sxx * syy)
        assert abs(float(crow["r"]) - r_hand) < 1e-9, (crow, r_hand)
    report("C8 TL/MDL correlation pipeline", t0)


def _micro_doc(out_dir):
    return {
        "out_dir": str(out_dir),
        "trials": 1,
        "widths": [0.25],
        "weightings": ["uniform", "cov"],
        "pairings": [["a", "b"]],
        "arms": {"mdl": True, "transfer_learning": True},
        "probe": {"per_class": 2, "seed": 0},
        "train": {"single_epochs": 1, "joint_epochs": 1, "finetune_epochs": 1, "batch_size": 32},
        "domains": [
            {
                "name": name,
                "num_classes": 3,
                "train_per_class": 8,
                "source": {"type": "synthetic", "shift_seed": s, "noise_std": 0.1, "test_per_class": 4},
            }
            for name, s in (("a", 0), ("b", 3))
        ],
    }


def test_c9_determinism_and_resume(tmp_path):
    import json as _json

    from mdllens.config import parse_config

    t0 = time.time()

    # (i) full rerun of a grid is bit-identical: loss curves and analysis CSVs
    cfg1 = parse_config(_micro_doc(tmp_path / "r1"))
    cfg2 = parse_config(_micro_doc(tmp_path / "r2"))
    cat1 = execute(cfg1, plan(cfg1), workers=1)
    cat2 = execute(cfg2, plan(cfg2), workers=1)
    for r1, r2 in zip(cat1.rows, cat2.rows):
        assert r1.checkpoint_sha256 == r2.checkpoint_sha256
        assert TrainLog.load(r1.trainlog).loss_curve() == TrainLog.load(r2.trainlog).loss_curve()
    rep1, rep2 = tmp_path / "rep1", tmp_path / "rep2"
    e1 = analysis.analyze(cfg1, cat1, str(rep1), figures=False)
    e2 = analysis.analyze(cfg2, cat2, str(rep2), figures=False)
    for name in e1:
        if name == "summary":
            continue
        with open(e1[name], "rb") as f1, open(e2[name], "rb") as f2:
            assert f1.read() == f2.read(), name

    # (ii) killing mid-grid and resuming matches the uninterrupted catalog
    cfg3 = parse_config(_micro_doc(tmp_path / "r3"))
    cat3 = execute(cfg3, plan(cfg3), workers=1, max_runs=2)
    assert sum(r.status == "completed" for r in cat3.rows) == 2
    cat3 = execute(cfg3, plan(cfg3), resume=True, workers=1)

    def canon(catalog, root):
        out = []
        for r in sorted(catalog.rows, key=lambda r: r.run_id):
            d = r.to_dict()
            d["checkpoint"] = os.path.relpath(d["checkpoint"], root)
            d["trainlog"] = os.path.relpath(d["trainlog"], root)
            d["predictions"] = {k: os.path.relpath(v, root) for k, v in d["predictions"].items()}
            out.append(d)
        return out

    assert canon(cat3, cfg3.artifact_root) == canon(cat1, cfg1.artifact_root)

    # (iii) the desk grid itself resumes as a no-op and re-analyzes bit-identically
    cache = os.path.join(REPO_ROOT, "artifacts", "desk_grid")
    config, catalog = _run_grid("desk_grid.json", cache, workers=1)
    mtimes = {r.run_id: os.path.getmtime(r.checkpoint) for r in catalog.rows}
    config, catalog = _run_grid("desk_grid.json", cache, workers=1)
    for row in catalog.rows:
        assert os.path.getmtime(row.checkpoint) == mtimes[row.run_id]
    repa, repb = tmp_path / "desk_a", tmp_path / "desk_b"
    ea = analysis.analyze(config, catalog, str(repa), figures=False)
    eb = analysis.analyze(config, catalog, str(repb), figures=False)
    for name in ea:
        if name == "summary":
            continue
        with open(ea[name], "rb") as f1, open(eb[name], "rb") as f2:
            assert f1.read() == f2.read(), name
    report("C9 determinism and resume", t0)
