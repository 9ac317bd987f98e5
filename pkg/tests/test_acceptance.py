"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds and sizes are fixed in advance; nothing here is tuned to the
observed outcome. Criteria 4 to 6 leave the noise convention open and are
run with N(0, 0.1) read as standard deviation 0.1; the variance-reading
numbers are printed alongside for information.

``TL2_C5_REPLICATIONS`` (default 100) selects the size of the d = 12 run;
20 gives the reduced smoke variant.
"""

import os
import time

import numpy as np
import pytest

from oracles import brute_force_cell_fit
from tl2.core import GAUSSIAN, Dataset, Role, RngSeed, split_target
from tl2.diagnostics import (
    PipelineConfig,
    decompose_risk,
    dumps,
    error_reduction,
    loglog_slope,
    oracle_split,
    population_model,
    rate_probe,
    well_specified_target,
)
from tl2.selection import Schedule, SelectionConfig, anneal_select, select_over
from tl2.source import FunctionSource, bandwidth_rule_source, nw_fit
from tl2.synth import SyntheticSpec, gen_source, gen_target, sq_norm
from tl2.tessellation import grid_tessellation, neighbor_move, single_cell
from tl2.transfer import Fallback, FitConfig, TransferModel, bandwidth_rule_transfer, fit_cell

SEED = 0
C5_REPS = int(os.environ.get("TL2_C5_REPLICATIONS", "100"))


def train_set(X, y):
    return Dataset(np.asarray(X, dtype=float), y, Role.TARGET_TRAIN)


def cell_weights(X, z, center, cfg):
    return cfg.kx.profile(np.linalg.norm(X - center, axis=1) / cfg.h) * cfg.kz.profile(np.abs(z) / cfg.hbar)


def random_cell_problem(rng, n_lo=5, n_hi=30):
    """A random cell of a random tessellation, with points drawn inside it."""
    d = int(rng.integers(1, 3))
    H = single_cell(d, 10)
    for _ in range(int(rng.integers(0, 6))):
        H = neighbor_move(H, rng)
    cell = H.cell(int(rng.integers(H.n_cells)))
    lo, hi = np.array(cell.lo), np.array(cell.hi)
    n = int(rng.integers(n_lo, n_hi + 1))
    X = lo + (hi - lo) * rng.random((n, d))
    cfg = FitConfig(h=float(rng.uniform(0.2, 0.8)), hbar=float(rng.uniform(0.2, 0.8)))
    return cell, X, FunctionSource(sq_norm, d), cfg


# -- 1 ------------------------------------------------------------------------------


def test_criterion_1_exact_recovery(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst_coef = worst_stat = 0.0
    equivariant = True
    for _ in range(200):
        cell, X, src, cfg = random_cell_problem(rng, 5, 30)
        yc = src.predict(np.array([cell.center]))[0]
        a, b = rng.uniform(-3, 3, 2)
        fit = fit_cell(cell, train_set(X, a * (src.predict(X) - yc) + b), src, cfg)
        if fit.fallback is Fallback.NONE:
            worst_coef = max(worst_coef, abs(fit.a - a), abs(fit.b - b))

        y = rng.normal(size=len(X)) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        fit = fit_cell(cell, train_set(X, y), src, cfg)
        if fit.fallback is not Fallback.NONE:
            continue
        z = src.predict(X) - fit.y_center
        w = cell_weights(X, z, np.array(cell.center), cfg)
        r = y - fit.a * z - fit.b
        scale = np.sum(w * np.abs(y))
        worst_stat = max(worst_stat, abs(np.sum(w * r)) / scale, abs(np.sum(w * z * r)) / scale)

        c = 2.0 ** int(rng.integers(-4, 5))
        scaled = fit_cell(cell, train_set(X, c * y), src, cfg)
        equivariant &= (scaled.a, scaled.b) == (c * fit.a, c * fit.b)
    elapsed = time.perf_counter() - t0
    ok = worst_coef <= 1e-10 and worst_stat <= 1e-9 and equivariant and elapsed < 5
    verdict(
        1,
        ok,
        f"max coefficient error {worst_coef:.2e} (<= 1e-10), max relative stationarity residual "
        f"{worst_stat:.2e} (<= 1e-9), exact equivariance {equivariant}, {elapsed:.1f} s (< 5 s)",
    )


# -- 2 ------------------------------------------------------------------------------


def test_criterion_2_wls_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 2)
    worst = 0.0
    checked = 0
    while checked < 50:
        cell, X, src, cfg = random_cell_problem(rng, 5, 30)
        y = rng.uniform(-2, 2) * src.predict(X) + rng.uniform(-2, 2) + rng.normal(scale=0.3, size=len(X))
        fit = fit_cell(cell, train_set(X, y), src, cfg)
        assert fit.fallback is Fallback.NONE
        z = src.predict(X) - fit.y_center
        w = cell_weights(X, z, np.array(cell.center), cfg)
        a, b = brute_force_cell_fit(y, z, w, box=50.0)
        worst = max(worst, abs(fit.a - a), abs(fit.b - b))
        checked += 1
    elapsed = time.perf_counter() - t0
    verdict(2, worst <= 1e-6 and elapsed < 30, f"50 cells, max |coef - brute force| {worst:.2e} (<= 1e-6), {elapsed:.1f} s (< 30 s)")


# -- 3 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_3_nw_rate(verdict):
    t0 = time.perf_counter()
    res = rate_probe("nw-source", [250, 1000, 4000], replications=50, seed=SEED, noise=0.1)
    elapsed = time.perf_counter() - t0
    meds = ", ".join(f"{v:.2e}" for v in res.medians)
    verdict(
        3,
        -1.0 <= res.slope <= -0.4 and elapsed < 120,
        f"median MSE {meds}, slope {res.slope:.3f} (in [-1.0, -0.4]), {elapsed:.0f} s (< 120 s)",
    )


# -- 4 to 6 --------------------------------------------------------------------------


def e_red_run(d, target, n_s, reps, m=None, variance=False, seed=SEED):
    spec = SyntheticSpec(d=d, n_s=n_s, n_t=20, target=target, noise_is_variance=variance)
    return error_reduction(spec, PipelineConfig(m=m), reps, seed).e_red


@pytest.mark.slow
def test_criterion_4_positive_transfer(verdict):
    t0 = time.perf_counter()
    sd = {d: e_red_run(d, "target1", 100 * d, 100) for d in (1, 2)}
    elapsed = time.perf_counter() - t0
    var = {d: e_red_run(d, "target1", 100 * d, 100, variance=True) for d in (1, 2)}
    print(f"info criterion 4 (variance reading): median E_red d=1 {var[1]:.3f}, d=2 {var[2]:.3f}")
    verdict(
        4,
        min(sd.values()) > 0.1 and elapsed < 600,
        f"median E_red d=1 {sd[1]:.3f}, d=2 {sd[2]:.3f} (> 0.1), {elapsed:.0f} s (< 600 s)",
    )


PAPER_TABLE_1 = {2000: 0.13, 4000: 0.23, 6000: 0.26}


@pytest.mark.slow
def test_criterion_5_table1_monotonicity(verdict):
    t0 = time.perf_counter()
    vals = {n: e_red_run(12, "target2", n, C5_REPS) for n in PAPER_TABLE_1}
    elapsed = time.perf_counter() - t0
    v = [vals[n] for n in PAPER_TABLE_1]
    agree = ", ".join(
        f"n_S={n}: {vals[n]:.3f} vs {p:.2f} {'within' if abs(vals[n] - p) <= 0.15 else 'outside'} 0.15"
        for n, p in PAPER_TABLE_1.items()
    )
    print(f"info criterion 5 agreement: {agree}")
    budget = 60 * 60 if C5_REPS > 20 else 12 * 60
    verdict(
        5,
        v[0] < v[1] < v[2] and elapsed < budget,
        f"{C5_REPS} replications, median E_red {v[0]:.3f} / {v[1]:.3f} / {v[2]:.3f} at n_S = 2000 / 4000 / 6000 "
        f"(strictly increasing required), {elapsed:.0f} s (< {budget} s)",
    )


@pytest.mark.slow
def test_criterion_6_wrong_split(verdict):
    t0 = time.perf_counter()
    e20 = e_red_run(1, "target1", 100, 100, m=20)
    e19 = e_red_run(1, "target1", 100, 100, m=19)
    elapsed = time.perf_counter() - t0
    v20 = e_red_run(1, "target1", 100, 100, m=20, variance=True)
    v19 = e_red_run(1, "target1", 100, 100, m=19, variance=True)
    print(f"info criterion 6 (variance reading): m=20 {v20:.3f}, m=19 {v19:.3f}")
    verdict(
        6,
        -0.1 <= e19 < e20 and elapsed < 600,
        f"median E_red m=19 {e19:.3f} < m=20 {e20:.3f} and >= -0.1, {elapsed:.0f} s (< 600 s)",
    )


# -- 7 ------------------------------------------------------------------------------


MOM_FAMILY = [grid_tessellation(1, 20, [[]])] + [grid_tessellation(1, 20, [[k]]) for k in (4, 8, 10, 12, 16)]


@pytest.mark.slow
def test_criterion_7_mom_robustness(verdict):
    """Target 1, d = 1, 80 target points: 40 validation points of which 2 are shifted by +50."""
    t0 = time.perf_counter()
    hits = {"erm": 0, "mom": 0}
    b1_equal = True
    blocks = None
    for r in range(100):
        rs = RngSeed(SEED, r)
        spec = SyntheticSpec(d=1, n_s=200, n_t=80)
        src_data = gen_source(spec, rs.child(0))
        source = nw_fit(src_data, GAUSSIAN, bandwidth_rule_source(src_data.n, 1))
        train, validate = split_target(gen_target(spec, rs.child(1)), rs.child(2))
        cfg = FitConfig(*bandwidth_rule_transfer(train.n, "experiment-n13"))
        Xe = rs.child(4).random((20_000, 1))
        clean = [
            float(np.mean((select_over([H], train, validate, source, cfg).model.predict(Xe) - spec.f_t(Xe)) ** 2))
            for H in MOM_FAMILY
        ]
        best = MOM_FAMILY[int(np.argmin(clean))]
        y = validate.y.copy()
        y[rs.child(5).choice(validate.n, 2, replace=False)] += 50.0
        dirty = validate.with_responses(y)
        erm = select_over(MOM_FAMILY, train, dirty, source, cfg, SelectionConfig("erm"), rs.child(3))
        mom = select_over(MOM_FAMILY, train, dirty, source, cfg, SelectionConfig("mom"), rs.child(3))
        one = select_over(MOM_FAMILY, train, dirty, source, cfg, SelectionConfig("mom", blocks=1), rs.child(3))
        blocks = mom.blocks
        hits["erm"] += erm.chosen == best
        hits["mom"] += mom.chosen == best
        b1_equal &= one.chosen == erm.chosen and all(
            c.risk.mom_risk == e.risk.mean_risk for c, e in zip(one.candidates, erm.candidates)
        )
    elapsed = time.perf_counter() - t0
    verdict(
        7,
        hits["mom"] >= hits["erm"] and b1_equal and elapsed < 300,
        f"clean-optimal chosen by MoM (B={blocks}) {hits['mom']}/100 vs ERM {hits['erm']}/100, "
        f"B=1 MoM identical to ERM {b1_equal}, {elapsed:.0f} s (< 300 s)",
    )


# -- 8 ------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_decomposition(verdict):
    t0 = time.perf_counter()
    H = oracle_split(1)
    config = FitConfig()
    base = SyntheticSpec(d=1, n_s=1000, n_t=500, target=well_specified_target)
    pop = population_model(H, base, config, np.random.default_rng(SEED))

    def run(n_s, n_t, r):
        spec = SyntheticSpec(d=1, n_s=n_s, n_t=n_t, target=well_specified_target)
        rs = RngSeed(SEED, r)
        source = nw_fit(gen_source(spec, rs.child(0)), GAUSSIAN, bandwidth_rule_source(n_s, 1))
        train = gen_target(spec, rs.child(1)).with_role(Role.TARGET_TRAIN)
        return decompose_risk(H, spec, train, source, config, 20_000, rs.child(2), population=pop)

    first = run(1000, 500, 0)
    # the population fit is exact in exact arithmetic, so Approx is squared
    # rounding residue: allow a few ulps of the largest target value on top of 3 se
    f_max = float(np.abs(well_specified_target(np.linspace(0, 1, 1001)[:, None])).max())
    floor = (8 * np.finfo(float).eps * f_max) ** 2
    approx_ok = abs(first.approx) <= 3 * first.se["approx"] + floor
    plug = [float(np.median([run(n_s, 500, r).plug for r in range(20)])) for n_s in (100, 1000, 10_000)]
    n_t1 = (125, 500, 2000)
    fit = [float(np.median([run(1000, n, r).fit for r in range(20)])) for n in n_t1]
    fit_slope = loglog_slope(n_t1, fit)
    elapsed = time.perf_counter() - t0
    verdict(
        8,
        approx_ok and plug[0] > plug[1] > plug[2] and fit_slope <= -0.5 and elapsed < 600,
        f"Approx {first.approx:.2e} (3 se = {3 * first.se['approx']:.2e}, rounding floor {floor:.1e}); "
        f"Plug {plug[0]:.2e} > {plug[1]:.2e} > {plug[2]:.2e}; Fit slope {fit_slope:.3f} (<= -0.5); "
        f"{elapsed:.0f} s (< 600 s)",
    )


# -- 9 ------------------------------------------------------------------------------


def test_criterion_9_determinism(verdict):
    t0 = time.perf_counter()
    spec = SyntheticSpec(d=1, n_s=100, n_t=20)
    cfg = PipelineConfig(selection=SelectionConfig(schedule=Schedule(steps=60)))
    a, b = (error_reduction(spec, cfg, 5, seed=3) for _ in range(2))
    reports_equal = a.table() == b.table() and dumps(a.summary()) == dumps(b.summary())

    rs = RngSeed(3, 0)
    src = gen_source(spec, rs.child(0))
    source = nw_fit(src, GAUSSIAN, bandwidth_rule_source(src.n, 1))
    train, validate = split_target(gen_target(spec, rs.child(1)), rs.child(2))
    fc = FitConfig(*bandwidth_rule_transfer(train.n, "experiment-n13"))
    s1 = anneal_select(1, 20, train, validate, source, fc, SelectionConfig(), np.random.default_rng(9))
    s2 = anneal_select(1, 20, train, validate, source, fc, SelectionConfig(), np.random.default_rng(9))
    reports_equal &= s1.to_json() == s2.to_json()

    X = np.random.default_rng(4).random((1000, 1))
    back = TransferModel.from_json(s1.model.to_json())
    round_trip = bool(np.array_equal(back.predict(X), s1.model.predict(X)))
    elapsed = time.perf_counter() - t0
    verdict(
        9,
        reports_equal and round_trip and elapsed < 10,
        f"byte-identical reports {reports_equal}, round-trip predictions equal at 1000 points {round_trip}, "
        f"{elapsed:.1f} s (< 10 s)",
    )
