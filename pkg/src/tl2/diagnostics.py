"""Experiment harness: error reduction, risk decomposition and rate probes."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from tl2.core import GAUSSIAN, Dataset, InvalidInput, InvalidParameter, Kernel, Role, RngSeed, split_target
from tl2.selection import SelectionConfig, SelectionReport, anneal_select
from tl2.source import FunctionSource, bandwidth_rule_source, nw_fit
from tl2.synth import SyntheticSpec, gen_source, gen_target, sq_norm
from tl2.tessellation import Tessellation, uniform_grid
from tl2.transfer import FitConfig, TransferModel, bandwidth_rule_transfer, fit_transfer


def mse_against_truth(predictor, truth, d: int, n_eval: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo L2 distance under the uniform law on [0,1]^d.

    Returns ``(mse, standard_error)``.
    """
    if n_eval < 1:
        raise InvalidParameter(f"n_eval must be >= 1, got {n_eval}")
    X = rng.random((n_eval, d))
    return _mc_mean((np.asarray(predictor(X)) - np.asarray(truth(X))) ** 2)


def _mc_mean(v: NDArray[np.float64]) -> tuple[float, float]:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    se = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(np.mean(v)), se


def loglog_slope(sizes, values) -> float:
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(values, float)), 1)[0])


# -- the (TL)^2 pipeline -------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the end-to-end estimator needs besides data.

    Bandwidth rules: the source and the target-only baseline use
    ``bandwidth_rule_source`` rules; the transfer step uses
    ``bandwidth_rule_transfer`` with ``n`` the size of the training half.
    ``m = None`` puts splits on the ``1/n_T`` grid.
    """

    m: int | None = None
    beta_s: float = 1.0
    source_kernel: str = "gaussian"
    source_rule: str = "appendix-optimal"
    source_bandwidth: float | None = None
    baseline_rule: str = "appendix-optimal"
    baseline_bandwidth: float | None = None
    transfer_rule: str = "experiment-n13"
    transfer_bandwidths: tuple[float, float] | None = None
    kx: str = "gaussian"
    kz: str = "gaussian"
    restrict_to_cell: bool = True
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    n_eval: int = 2000

    def source_h(self, n: int, d: int) -> float:
        return bandwidth_rule_source(n, d, self.beta_s, self.source_rule, self.source_bandwidth)

    def baseline_h(self, n: int, d: int) -> float:
        return bandwidth_rule_source(n, d, self.beta_s, self.baseline_rule, self.baseline_bandwidth)

    def fit_config(self, n_train: int) -> FitConfig:
        h, hbar = bandwidth_rule_transfer(n_train, self.transfer_rule, value=self.transfer_bandwidths)
        return FitConfig(h=h, hbar=hbar, kx=Kernel(self.kx), kz=Kernel(self.kz), restrict_to_cell=self.restrict_to_cell)


@dataclass
class PipelineFit:
    source: object
    baseline: object
    report: SelectionReport
    model: TransferModel


def run_pipeline(
    source_data: Dataset,
    target: Dataset,
    cfg: PipelineConfig,
    split_rng: np.random.Generator,
    anneal_rng: np.random.Generator,
) -> PipelineFit:
    """Fit the source, the target-only baseline and the selected transfer model."""
    d = target.dim
    if target.n < 4:
        raise InvalidInput(f"need at least 4 target points, got {target.n}")
    source = nw_fit(source_data, Kernel(cfg.source_kernel), cfg.source_h(source_data.n, d), cfg.beta_s)
    full = target.with_role(Role.TARGET)
    baseline = nw_fit(full, Kernel(cfg.source_kernel), cfg.baseline_h(full.n, d), cfg.beta_s)
    train, validate = split_target(full, split_rng)
    m = cfg.m if cfg.m is not None else target.n
    report = anneal_select(d, m, train, validate, source, cfg.fit_config(train.n), cfg.selection, anneal_rng)
    return PipelineFit(source, baseline, report, report.model)


# -- error reduction -----------------------------------------------------------


@dataclass(frozen=True)
class ReplicationResult:
    replication: int
    mse_nw: float
    mse_tl2: float
    e_red: float
    n_cells: int
    chosen: str


def e_red(mse_nw: float, mse_tl2: float) -> float:
    if not mse_nw > 0:
        raise InvalidInput("error reduction undefined for a zero baseline error")
    return (mse_nw - mse_tl2) / mse_nw


@dataclass(frozen=True)
class ExperimentResult:
    """Per-replication errors with their medians.

    The identity ``e_red = (mse_nw - mse_tl2) / mse_nw`` holds row by row;
    the aggregate ``e_red`` is the median of the per-replication values.
    """

    replications: list[ReplicationResult]
    label: str = ""

    @property
    def e_red(self) -> float:
        return float(np.median([r.e_red for r in self.replications]))

    @property
    def mse_nw(self) -> float:
        return float(np.median([r.mse_nw for r in self.replications]))

    @property
    def mse_tl2(self) -> float:
        return float(np.median([r.mse_tl2 for r in self.replications]))

    def table(self, delimiter: str = ",") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        w.writerow(["replication", "mse_nw", "mse_tl2", "e_red", "n_cells", "chosen"])
        for r in self.replications:
            w.writerow([r.replication, repr(r.mse_nw), repr(r.mse_tl2), repr(r.e_red), r.n_cells, r.chosen])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "label": self.label,
            "replications": len(self.replications),
            "median_e_red": self.e_red,
            "median_mse_nw": self.mse_nw,
            "median_mse_tl2": self.mse_tl2,
            "mean_e_red": float(np.mean([r.e_red for r in self.replications])),
        }


@dataclass(frozen=True)
class IngestedProblem:
    """Real-data transfer problem: all source points plus a target pool.

    Each replication subsamples ``n_target`` target points; the rest of the
    pool is the held-out evaluation set.
    """

    source: Dataset
    target_pool: Dataset
    n_target: int

    def __post_init__(self):
        if not 4 <= self.n_target < self.target_pool.n:
            raise InvalidInput(
                f"n_target must be in [4, {self.target_pool.n - 1}] for a pool of {self.target_pool.n}"
            )


def replicate(problem, cfg: PipelineConfig, r: int, seed: int) -> ReplicationResult:
    rs = RngSeed(seed, r)
    if isinstance(problem, SyntheticSpec):
        src = gen_source(problem, rs.child(0))
        tgt = gen_target(problem, rs.child(1))
        fit = run_pipeline(src, tgt, cfg, rs.child(2), rs.child(3))
        Xe = rs.child(4).random((cfg.n_eval, problem.d))
        truth = problem.f_t(Xe)
        mse_nw = float(np.mean((fit.baseline.predict(Xe) - truth) ** 2))
        mse_tl = float(np.mean((fit.model.predict(Xe) - truth) ** 2))
    elif isinstance(problem, IngestedProblem):
        pool = problem.target_pool
        perm = rs.child(1).permutation(pool.n)
        tgt = pool.subset(np.sort(perm[: problem.n_target]), Role.TARGET)
        held = pool.subset(np.sort(perm[problem.n_target :]), Role.TEST)
        fit = run_pipeline(problem.source, tgt, cfg, rs.child(2), rs.child(3))
        mse_nw = float(np.mean((fit.baseline.predict(held.X) - held.y) ** 2))
        mse_tl = float(np.mean((fit.model.predict(held.X) - held.y) ** 2))
    else:
        raise InvalidInput(f"unsupported problem type {type(problem).__name__}")
    return ReplicationResult(
        r, mse_nw, mse_tl, e_red(mse_nw, mse_tl), fit.report.chosen.n_cells, str(fit.report.chosen)
    )


def error_reduction(problem, cfg: PipelineConfig = PipelineConfig(), replications: int = 100, seed: int = 0, label: str = "") -> ExperimentResult:
    """Run the pipeline ``replications`` times and compare with target-only NW."""
    if replications < 1:
        raise InvalidParameter(f"need at least one replication, got {replications}")
    reps = [replicate(problem, cfg, r, seed) for r in range(replications)]
    return ExperimentResult(reps, label)


# -- risk decomposition -------------------------------------------------------


@dataclass(frozen=True)
class DecompositionReport:
    """Squared L2 distances between the four functions of the error chain.

    ``approx``: target vs. population cellwise linearisation;
    ``fit``: population linearisation vs. the fit using the true source;
    ``plug``: that fit vs. the plug-in estimator; ``excess``: target vs.
    plug-in estimator. ``se`` holds Monte Carlo standard errors.
    """

    approx: float
    fit: float
    plug: float
    excess: float
    se: dict

    @property
    def total_bound(self) -> float:
        return 2.0 * (self.approx + self.fit + self.plug)


def population_model(H: Tessellation, spec: SyntheticSpec, config: FitConfig, rng, n_pop: int = 100_000) -> TransferModel:
    """Cellwise weighted regression of the noiseless target on the true score."""
    X = rng.random((n_pop, spec.d))
    pop = Dataset(X, spec.f_t(X), Role.TARGET_TRAIN)
    return fit_transfer(H, pop, FunctionSource(spec.f_s, spec.d), config)


def decompose_risk(
    H: Tessellation,
    spec,
    train: Dataset,
    source,
    config: FitConfig,
    n_mc: int,
    rng: np.random.Generator,
    n_pop: int = 100_000,
    population: TransferModel | None = None,
) -> DecompositionReport:
    if not isinstance(spec, SyntheticSpec):
        raise InvalidInput("decomposition needs a synthetic problem with known regression functions")
    pop = population if population is not None else population_model(H, spec, config, rng, n_pop)
    oracle = fit_transfer(H, train, FunctionSource(spec.f_s, spec.d), config)
    plug = fit_transfer(H, train, source, config)
    X = rng.random((n_mc, spec.d))
    ft, gp, go, fh = spec.f_t(X), pop.predict(X), oracle.predict(X), plug.predict(X)
    terms = {
        "approx": _mc_mean((ft - gp) ** 2),
        "fit": _mc_mean((gp - go) ** 2),
        "plug": _mc_mean((go - fh) ** 2),
        "excess": _mc_mean((ft - fh) ** 2),
    }
    return DecompositionReport(
        terms["approx"][0],
        terms["fit"][0],
        terms["plug"][0],
        terms["excess"][0],
        {k: v[1] for k, v in terms.items()},
    )


def well_specified_target(X) -> NDArray[np.float64]:
    """Affine in |x|^2 on each side of x_1 = 1/2 (exact transfer structure)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = sq_norm(X)
    return np.where(X[:, 0] <= 0.5, 2.0 * y + 1.0, 0.5 - y)


def smooth_target(X) -> NDArray[np.float64]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.cos(3.0 * np.sqrt(sq_norm(X)))


def oracle_split(d: int = 1) -> Tessellation:
    return Tessellation(d, 2, ((1,),) + ((),) * (d - 1))


# -- rate probes --------------------------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    axis: str
    sizes: list
    medians: list
    slope: float

    def to_dict(self) -> dict:
        return asdict(self)


PROBE_AXES = ("n_T-parametric", "n_S-plugin", "L-bias", "nw-source")


def rate_probe(
    axis: str,
    sizes,
    replications: int = 20,
    seed: int = 0,
    *,
    noise: float = 0.1,
    n_mc: int = 20_000,
    h: float = 0.5,
    n_fixed: int | None = None,
) -> ProbeResult:
    """Log-log slope of median risk against one sample-size or complexity axis.

    Recipes (all d = 1, source |x|^2, uniform design, variance-``noise``
    Gaussian errors):

    * ``n_T-parametric``: oracle split, piecewise-affine target, true source
      scores (no plug-in error, no bias); excess risk vs. training size.
    * ``n_S-plugin``: same instance with ``n_fixed`` (default 500) training
      points; plug-in term vs. source size.
    * ``L-bias``: noiseless smooth target, uniform grids with ``L`` cells,
      approximation term from the population fit.
    * ``nw-source``: MSE of the source Nadaraya-Watson fit at the
      rate-optimal bandwidth vs. source size.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3:
        raise InvalidParameter("a rate probe needs at least three sizes")
    if axis not in PROBE_AXES:
        raise InvalidParameter(f"unknown probe axis {axis!r}; choose from {PROBE_AXES}")
    config = FitConfig(h=h, hbar=h)
    d = 1
    medians = []
    for i, n in enumerate(sizes):
        vals = []
        for r in range(replications):
            rs = RngSeed(seed, r)
            rng = rs.child(i)
            if axis == "n_T-parametric":
                spec = SyntheticSpec(d=d, n_s=1, n_t=n, target=well_specified_target, noise=noise)
                train = gen_target(spec, rng).with_role(Role.TARGET_TRAIN)
                model = fit_transfer(oracle_split(d), train, FunctionSource(sq_norm, d), config)
                vals.append(mse_against_truth(model.predict, spec.f_t, d, n_mc, rng)[0])
            elif axis == "n_S-plugin":
                spec = SyntheticSpec(d=d, n_s=n, n_t=n_fixed or 500, target=well_specified_target, noise=noise)
                src = gen_source(spec, rng)
                source = nw_fit(src, GAUSSIAN, bandwidth_rule_source(n, d, 1.0, "appendix-optimal"))
                train = gen_target(spec, rng).with_role(Role.TARGET_TRAIN)
                oracle = fit_transfer(oracle_split(d), train, FunctionSource(sq_norm, d), config)
                plug = fit_transfer(oracle_split(d), train, source, config)
                vals.append(mse_against_truth(plug.predict, oracle.predict, d, n_mc, rng)[0])
            elif axis == "L-bias":
                spec = SyntheticSpec(d=d, n_s=1, n_t=1, target=smooth_target, noise=0.0)
                pop = population_model(uniform_grid(d, n, n), spec, config, rng, n_pop=n_fixed or 100_000)
                vals.append(mse_against_truth(pop.predict, spec.f_t, d, n_mc, rng)[0])
            else:
                spec = SyntheticSpec(d=d, n_s=n, n_t=1, noise=noise)
                src = gen_source(spec, rng)
                source = nw_fit(src, GAUSSIAN, bandwidth_rule_source(n, d, 1.0, "appendix-optimal"))
                vals.append(mse_against_truth(source.predict, spec.f_s, d, n_mc, rng)[0])
            if axis == "L-bias":
                # deterministic given the population sample; one replication suffices
                break
        medians.append(float(np.median(vals)))
    return ProbeResult(axis, sizes, medians, loglog_slope(sizes, medians))


def transfer_function_error(n_train: int, replications: int, seed: int = 0, noise: float = 0.01, h: float = 0.5, beta_g: float = 2.0, n_grid: int = 41) -> float:
    """Median squared error of the estimated transfer function on one cell.

    Setting: d = 1, source f_S(x) = x, target f_T = f_S^2 (so g(y) = y^2) on
    a single cell centred at 1/2, true source scores, and ``hbar`` from the
    theory-optimal rule. The error is averaged over a grid of source values
    within ``hbar`` of the cell's center score.
    """
    H = Tessellation(1, 2, ((),))
    _, hbar = bandwidth_rule_transfer(n_train, "theory-optimal", h=h, d=1, beta_g=beta_g)
    config = FitConfig(h=h, hbar=hbar)
    ident = FunctionSource(lambda X: X[:, 0], 1)
    spec = SyntheticSpec(d=1, n_s=1, n_t=n_train, target=lambda X: X[:, 0] ** 2, noise=noise)
    ys = np.linspace(0.5 - hbar, 0.5 + hbar, n_grid)
    errs = []
    for r in range(replications):
        train = gen_target(spec, RngSeed(seed, r).generator()).with_role(Role.TARGET_TRAIN)
        model = fit_transfer(H, train, ident, config)
        est = model.transfer_function(np.full((n_grid, 1), 0.5), ys)
        errs.append(float(np.mean((est - ys**2) ** 2)))
    return float(np.median(errs))


def dumps(obj) -> str:
    """Stable text form of a summary record."""
    return json.dumps(obj, sort_keys=True, indent=1)
