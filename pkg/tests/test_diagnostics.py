import math

import numpy as np
import pytest

from tl2.core import GAUSSIAN, Dataset, InvalidInput, InvalidParameter, Role
from tl2.diagnostics import (
    ExperimentResult,
    IngestedProblem,
    PipelineConfig,
    ReplicationResult,
    decompose_risk,
    e_red,
    error_reduction,
    loglog_slope,
    mse_against_truth,
    oracle_split,
    rate_probe,
    transfer_function_error,
    well_specified_target,
)
from tl2.selection import Schedule, SelectionConfig
from tl2.source import nw_fit
from tl2.synth import SyntheticSpec, gen_source, gen_target, sq_norm
from tl2.transfer import FitConfig

FAST = PipelineConfig(selection=SelectionConfig(schedule=Schedule(steps=30)), n_eval=500)


def test_mse_of_truth_is_zero(rng):
    assert mse_against_truth(sq_norm, sq_norm, 2, 100, rng) == (0.0, 0.0)


def test_mse_of_unit_shift(rng):
    mse, se = mse_against_truth(lambda X: sq_norm(X) + 1, sq_norm, 2, 100, rng)
    assert mse == pytest.approx(1.0, abs=1e-12) and se == pytest.approx(0.0, abs=1e-12)


def test_mse_fourth_moment(rng):
    mse, se = mse_against_truth(lambda X: np.zeros(len(X)), sq_norm, 1, 50_000, rng)
    assert abs(mse - 0.2) <= 3 * se


def test_mse_needs_points(rng):
    with pytest.raises(InvalidParameter):
        mse_against_truth(sq_norm, sq_norm, 1, 0, rng)


@pytest.mark.parametrize("nw, tl, expected", [(1.0, 0.74, 0.26), (0.5, 0.5, 0.0), (1.0, 1.26, -0.26)])
def test_e_red_arithmetic(nw, tl, expected):
    assert e_red(nw, tl) == pytest.approx(expected, abs=1e-15)


def test_e_red_zero_baseline():
    with pytest.raises(InvalidInput):
        e_red(0.0, 1.0)


def test_loglog_slope_exact():
    assert loglog_slope([10, 100, 1000], [1.0, 0.1, 0.01]) == pytest.approx(-1.0)


def test_error_reduction_identity_and_medians():
    res = error_reduction(SyntheticSpec(d=1, n_s=100, n_t=20), FAST, replications=5, seed=1)
    for r in res.replications:
        assert r.e_red == (r.mse_nw - r.mse_tl2) / r.mse_nw
    assert res.e_red == float(np.median([r.e_red for r in res.replications]))
    lines = res.table().splitlines()
    assert lines[0] == "replication,mse_nw,mse_tl2,e_red,n_cells,chosen" and len(lines) == 6


def test_error_reduction_deterministic():
    spec = SyntheticSpec(d=2, n_s=200, n_t=20)
    assert error_reduction(spec, FAST, 3, seed=4).table() == error_reduction(spec, FAST, 3, seed=4).table()


def test_replications_are_independent_streams():
    spec = SyntheticSpec(d=1, n_s=100, n_t=20)
    a = error_reduction(spec, FAST, 3, seed=4).replications
    b = error_reduction(spec, FAST, 2, seed=4).replications
    assert a[:2] == b


def test_error_reduction_validation():
    with pytest.raises(InvalidParameter):
        error_reduction(SyntheticSpec(), FAST, replications=0)
    with pytest.raises(InvalidInput):
        error_reduction(SyntheticSpec(n_t=3), FAST, replications=1)
    with pytest.raises(InvalidInput):
        error_reduction(object(), FAST, replications=1)


def test_ingested_problem_uses_held_out_rows(rng):
    X = rng.random((200, 2))
    source = Dataset(X[:100], X[:100].sum(axis=1), Role.SOURCE)
    pool = Dataset(X[100:], 2 * X[100:].sum(axis=1), Role.TARGET)
    res = error_reduction(IngestedProblem(source, pool, 40), FAST, replications=3, seed=2)
    assert len(res.replications) == 3
    with pytest.raises(InvalidInput):
        IngestedProblem(source, pool, 100)


def test_summary_record():
    res = ExperimentResult([ReplicationResult(0, 1.0, 0.5, 0.5, 2, "10/20")], "x")
    assert res.summary() == {
        "label": "x",
        "replications": 1,
        "median_e_red": 0.5,
        "median_mse_nw": 1.0,
        "median_mse_tl2": 0.5,
        "mean_e_red": 0.5,
    }


# -- decomposition ------------------------------------------------------------------


def _decomposition(seed, n_s=200, n_t=200, n_pop=20_000):
    spec = SyntheticSpec(d=1, n_s=n_s, n_t=n_t, target=well_specified_target, noise=0.1)
    rng = np.random.default_rng(seed)
    source = nw_fit(gen_source(spec, rng), GAUSSIAN, n_s ** (-1 / 3))
    train = gen_target(spec, rng).with_role(Role.TARGET_TRAIN)
    return decompose_risk(oracle_split(1), spec, train, source, FitConfig(), 20_000, rng, n_pop)


def test_decomposition_components_nonnegative_and_bounded():
    rep = _decomposition(0)
    for k in ("approx", "fit", "plug", "excess"):
        assert getattr(rep, k) >= -3 * rep.se[k]
    assert rep.excess <= rep.total_bound + 3 * rep.se["excess"]


def test_well_specified_approx_vanishes():
    rep = _decomposition(1)
    assert rep.approx <= 3 * rep.se["approx"] + 1e-20


def test_decomposition_needs_synthetic_spec():
    with pytest.raises(InvalidInput):
        decompose_risk(oracle_split(1), None, None, None, FitConfig(), 10, np.random.default_rng(0))


# -- rate probes ----------------------------------------------------------------------


def test_probe_validation():
    with pytest.raises(InvalidParameter):
        rate_probe("n_T-parametric", [10, 20], 2)
    with pytest.raises(InvalidParameter):
        rate_probe("speed", [10, 20, 40], 2)


def test_probe_reproducible():
    a = rate_probe("nw-source", [50, 100, 200], 3, seed=5, n_mc=2000)
    b = rate_probe("nw-source", [50, 100, 200], 3, seed=5, n_mc=2000)
    assert a == b and a.to_dict()["axis"] == "nw-source"


def test_n_t_parametric_slope():
    res = rate_probe("n_T-parametric", [100, 400, 1600], 20, seed=0, n_mc=5000)
    assert -1.3 <= res.slope <= -0.6


def test_n_s_plugin_slope():
    res = rate_probe("n_S-plugin", [250, 1000, 4000], 20, seed=0, n_mc=5000)
    assert -1.0 <= res.slope <= -0.35


def test_l_bias_slope():
    res = rate_probe("L-bias", [2, 4, 8, 16], 1, seed=0, n_mc=20_000, h=10.0, n_fixed=200_000)
    assert res.slope <= -2


def test_transfer_function_error_decreases():
    errs = [transfer_function_error(n, 10, seed=1) for n in (200, 800, 3200)]
    assert errs[0] > errs[1] > errs[2]
