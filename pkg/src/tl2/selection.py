"""Tessellation selection on the validation half of the target sample.

Candidates are scored by their squared validation error, either the plain
mean (ERM) or a median of block means (MoM). ``anneal_select`` searches the
tessellation space by Metropolis moves and returns the best tessellation it
has seen.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from tl2.core import Dataset, InvalidInput, InvalidParameter, Role
from tl2.tessellation import (
    AdmissibilityConstants,
    Tessellation,
    check_admissible,
    neighbor_move,
    single_cell,
)
from tl2.transfer import FitConfig, ScoreCache, TransferModel, fit_transfer


@dataclass(frozen=True)
class RiskEstimate:
    mean_risk: float
    mom_risk: float
    n_validate: int
    blocks: int = 1

    def value(self, method: str) -> float:
        return self.mom_risk if method == "mom" else self.mean_risk

    def to_dict(self) -> dict:
        return {
            "mean_risk": self.mean_risk,
            "mom_risk": self.mom_risk,
            "n_validate": self.n_validate,
            "blocks": self.blocks,
        }


def _check_validate(validate: Dataset):
    if validate.role is not Role.TARGET_VALIDATE:
        raise InvalidInput(f"risk is computed on target-validate data, got {validate.role.value}")
    if validate.n == 0:
        raise InvalidInput("empty validation sample")


def squared_losses(model, validate: Dataset, scores=None) -> NDArray[np.float64]:
    if isinstance(model, TransferModel):
        pred = model.predict(validate.X, scores=scores)
    else:
        pred = np.asarray(model(validate.X), dtype=np.float64).reshape(-1)
    return (validate.y - pred) ** 2


def empirical_risk(model, validate: Dataset) -> float:
    """Mean squared validation error of ``model``."""
    _check_validate(validate)
    return float(np.mean(squared_losses(model, validate)))


def mom_blocks(n: int, B: int, rng: np.random.Generator) -> list[NDArray[np.int64]]:
    """Random permutation cut into ``B`` contiguous blocks of ``n // B`` points.

    The remainder is dropped. Indices inside a block are sorted, so with
    ``B = 1`` the single block is ``0..n-1`` in order.
    """
    if B < 1 or B > n:
        raise InvalidParameter(f"need 1 <= B <= n, got B={B}, n={n}")
    perm = rng.permutation(n)
    size = n // B
    return [np.sort(perm[k * size : (k + 1) * size]) for k in range(B)]


def mom_from_losses(losses: NDArray[np.float64], blocks) -> float:
    means = sorted(float(np.mean(losses[idx])) for idx in blocks)
    # lower median for even block counts
    return means[(len(means) - 1) // 2]


def mom_risk(model, validate: Dataset, B: int, rng: np.random.Generator) -> float:
    _check_validate(validate)
    if B > validate.n:
        raise InvalidInput(f"{B} blocks requested for {validate.n} validation points")
    return mom_from_losses(squared_losses(model, validate), mom_blocks(validate.n, B, rng))


def mom_block_rule(n_candidates: int, delta: float) -> int:
    """Smallest odd ``B >= max(5, ceil(log(n_candidates / delta)))``."""
    if n_candidates < 1 or not 0 < delta < 1:
        raise InvalidParameter(f"need n_candidates >= 1 and delta in (0,1), got {n_candidates}, {delta}")
    B = max(5, math.ceil(math.log(n_candidates / delta)))
    return B if B % 2 else B + 1


@dataclass(frozen=True)
class Schedule:
    """Annealing schedule.

    With ``relative_t0`` the starting temperature is ``t0`` times the risk of
    the single-cell start, so the schedule is insensitive to response scale.
    """

    t0: float = 1.0
    alpha: float = 0.95
    steps: int = 300
    moves_per_step: int = 1
    relative_t0: bool = True

    def __post_init__(self):
        if self.t0 < 0 or not 0 < self.alpha < 1 or self.steps < 0 or self.moves_per_step < 1:
            raise InvalidParameter(f"invalid annealing schedule {self}")


@dataclass(frozen=True)
class SelectionConfig:
    method: str = "erm"
    blocks: int | None = None
    delta: float = 0.05
    schedule: Schedule = field(default_factory=Schedule)
    l_max: int | None = None
    check_admissibility: bool = False
    enforce: tuple[str, ...] = ()
    constants: AdmissibilityConstants = field(default_factory=AdmissibilityConstants)

    def __post_init__(self):
        if self.method not in ("erm", "mom"):
            raise InvalidParameter(f"method must be 'erm' or 'mom', got {self.method!r}")


@dataclass(frozen=True)
class Candidate:
    tessellation: Tessellation
    risk: RiskEstimate
    admissibility: dict | None = None

    def to_dict(self) -> dict:
        out = {"tessellation": self.tessellation.to_dict(), "risk": self.risk.to_dict()}
        if self.admissibility is not None:
            out["admissibility"] = self.admissibility
        return out


@dataclass(frozen=True)
class TraceStep:
    step: int
    temperature: float
    proposal: str
    risk: float | None
    accepted: bool
    uniform: float | None = None
    rejected_l_max: bool = False
    rejected_inadmissible: bool = False

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "temperature": self.temperature,
            "proposal": self.proposal,
            "risk": self.risk,
            "accepted": self.accepted,
            "uniform": self.uniform,
            "rejected_l_max": self.rejected_l_max,
            "rejected_inadmissible": self.rejected_inadmissible,
        }


@dataclass(frozen=True)
class SelectionReport:
    candidates: list[Candidate]
    chosen: Tessellation
    method: str
    blocks: int
    trace: list[TraceStep] = field(default_factory=list)
    seed: int | None = None
    model: TransferModel | None = field(default=None, compare=False)

    @property
    def chosen_risk(self) -> float:
        return min(c.risk.value(self.method) for c in self.candidates)

    def to_dict(self, include_trace: bool = True) -> dict:
        out = {
            "method": self.method,
            "blocks": self.blocks,
            "seed": self.seed,
            "chosen": self.chosen.to_dict(),
            "chosen_risk": self.chosen_risk,
            "n_candidates": len(self.candidates),
            "candidates": [c.to_dict() for c in self.candidates],
        }
        if include_trace:
            out["trace"] = [t.to_dict() for t in self.trace]
        return out

    def to_json(self, include_trace: bool = True) -> str:
        return json.dumps(self.to_dict(include_trace), sort_keys=True, indent=1)


class _Scorer:
    """Fits and scores tessellations on fixed data, caching by tessellation."""

    def __init__(self, train, validate, source, fit_config, sel: SelectionConfig, rng, n_candidates: int):
        _check_validate(validate)
        self.train, self.validate, self.source = train, validate, source
        self.fit_config, self.sel = fit_config, sel
        self.train_scores = source.predict(train.X)
        self.val_scores = source.predict(validate.X)
        self.centers = ScoreCache(source)
        self.B = 1
        if sel.method == "mom":
            self.B = sel.blocks if sel.blocks is not None else mom_block_rule(n_candidates, sel.delta)
            if self.B > validate.n:
                raise InvalidInput(f"{self.B} blocks requested for {validate.n} validation points")
        # one block layout shared by every candidate, so their MoM risks are comparable
        self.blocks = mom_blocks(validate.n, self.B, rng) if sel.method == "mom" else None
        self.seen: dict[Tessellation, Candidate] = {}
        self._admissible: dict[Tessellation, bool] = {}
        self.models: dict[Tessellation, TransferModel] = {}

    def fit(self, H: Tessellation) -> TransferModel:
        if H not in self.models:
            self.models[H] = fit_transfer(
                H, self.train, self.source, self.fit_config, self.train_scores, self.centers
            )
        return self.models[H]

    def admissibility(self, H: Tessellation):
        return check_admissible(
            H,
            self.train,
            self.fit_config.h,
            self.fit_config.hbar,
            self.source,
            self.sel.constants,
            train_scores=self.train_scores,
        )

    def admissible(self, H: Tessellation) -> bool:
        if H not in self._admissible:
            rep = self.admissibility(H)
            self._admissible[H] = all(getattr(rep, f"{c}_ok") for c in self.sel.enforce)
        return self._admissible[H]

    def score(self, H: Tessellation) -> Candidate:
        if H in self.seen:
            return self.seen[H]
        model = self.fit(H)
        losses = squared_losses(model, self.validate, scores=self.val_scores)
        mean = float(np.mean(losses))
        mom = mom_from_losses(losses, self.blocks) if self.blocks is not None else mean
        adm = self.admissibility(H).summary() if self.sel.check_admissibility else None
        cand = Candidate(H, RiskEstimate(mean, mom, self.validate.n, self.B), adm)
        self.seen[H] = cand
        # fitted models are only kept for scored candidates still worth returning
        if len(self.models) > 64:
            self.models.clear()
        return cand

    def best(self, cands) -> Candidate:
        m = self.sel.method
        return min(cands, key=lambda c: (c.risk.value(m), c.tessellation.sort_key))


def select_over(
    candidates,
    train: Dataset,
    validate: Dataset,
    source,
    fit_config: FitConfig = FitConfig(),
    sel: SelectionConfig = SelectionConfig(),
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> SelectionReport:
    """Fit every candidate on ``train``, score on ``validate``, return the argmin.

    Ties go to fewer cells, then to the lexicographically smaller breakpoints.
    """
    candidates = list(candidates)
    if not candidates:
        raise InvalidInput("no candidate tessellations")
    rng = rng if rng is not None else np.random.default_rng(seed)
    scorer = _Scorer(train, validate, source, fit_config, sel, rng, len(candidates))
    scored = [scorer.score(H) for H in candidates]
    best = scorer.best(scored)
    return SelectionReport(scored, best.tessellation, sel.method, scorer.B, [], seed, scorer.fit(best.tessellation))


def anneal_select(
    d: int,
    m: int,
    train: Dataset,
    validate: Dataset,
    source,
    fit_config: FitConfig = FitConfig(),
    sel: SelectionConfig = SelectionConfig(),
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> SelectionReport:
    """Metropolis search over tessellations on the ``1/m`` grid.

    Starts from the single cell. Each proposal is one ``neighbor_move``;
    proposals with more than ``l_max`` cells are rejected without scoring.
    A proposal is accepted when its risk drops, otherwise with probability
    ``exp(-delta / T)``; the temperature is multiplied by ``alpha`` after
    every step. The best tessellation ever visited is returned.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    sched = sel.schedule
    scorer = _Scorer(train, validate, source, fit_config, sel, rng, sched.steps * sched.moves_per_step + 1)
    method = sel.method
    l_max = sel.l_max if sel.l_max is not None else m**d

    current = scorer.score(single_cell(d, m))
    cur_risk = current.risk.value(method)
    T = sched.t0 * cur_risk if sched.relative_t0 else sched.t0
    trace = []
    for step in range(sched.steps):
        for _ in range(sched.moves_per_step):
            H = neighbor_move(current.tessellation, rng)
            if H.n_cells > l_max:
                trace.append(TraceStep(step, T, str(H), None, False, None, True))
                continue
            if sel.enforce and not scorer.admissible(H):
                trace.append(TraceStep(step, T, str(H), None, False, None, False, True))
                continue
            cand = scorer.score(H)
            r = cand.risk.value(method)
            delta = r - cur_risk
            u = None
            if delta < 0:
                accept = True
            elif T > 0:
                u = float(rng.random())
                accept = u < math.exp(-delta / T)
            else:
                accept = False
            trace.append(TraceStep(step, T, str(H), r, accept, u))
            if accept:
                current, cur_risk = cand, r
        T *= sched.alpha
    # every proposal that lowered the risk was accepted, so the best scored
    # candidate is also the best state the chain visited
    scored = list(scorer.seen.values())
    chosen = scorer.best(scored)
    return SelectionReport(scored, chosen.tessellation, method, scorer.B, trace, seed, scorer.fit(chosen.tessellation))
