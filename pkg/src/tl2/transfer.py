"""Cellwise affine transfer of the source estimate onto the target.

On every cell of a tessellation the target responses are regressed on the
centred source score ``z_i = f_S(X_i) - f_S(x_cell)`` by weighted least
squares, with weights ``K_x(|X_i - x_cell| / h) * K_z(|z_i| / hbar)``. The
prediction at ``x`` is ``a * (f_S(x) - f_S(x_cell)) + b`` for the cell
containing ``x``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from tl2.core import GAUSSIAN, Dataset, InvalidInput, InvalidParameter, Kernel, Role, as_points
from tl2.source import SourceModel
from tl2.tessellation import MAX_DENSE_CELLS, Cell, Tessellation

WEIGHT_FLOOR = 1e-300


class Fallback(str, enum.Enum):
    NONE = "none"
    RIDGE = "ridge"
    MEAN = "mean"
    EMPTY = "empty"


@dataclass(frozen=True)
class FitConfig:
    """Kernels, bandwidths and numerical safeguards for the cellwise fits.

    ``restrict_to_cell`` selects whether only training points inside the
    cell enter its regression (the default) or every training point, with the
    kernel windows alone doing the localisation.
    """

    h: float = 0.5
    hbar: float = 0.5
    kx: Kernel = GAUSSIAN
    kz: Kernel = GAUSSIAN
    restrict_to_cell: bool = True
    eig_tol: float = 1e-10
    ridge: float = 1e-8

    def __post_init__(self):
        if not (self.h > 0 and self.hbar > 0):
            raise InvalidParameter(f"bandwidths must be positive, got h={self.h}, hbar={self.hbar}")

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "hbar": self.hbar,
            "kx": self.kx.shape.value,
            "kz": self.kz.shape.value,
            "restrict_to_cell": self.restrict_to_cell,
            "eig_tol": self.eig_tol,
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "FitConfig":
        rec = dict(rec)
        rec["kx"] = Kernel(rec.get("kx", "gaussian"))
        rec["kz"] = Kernel(rec.get("kz", "gaussian"))
        return cls(**rec)


def bandwidth_rule_transfer(
    n: int,
    mode: str = "experiment-n13",
    *,
    h: float | None = None,
    d: int | None = None,
    beta_g: float | None = None,
    value: tuple[float, float] | None = None,
) -> tuple[float, float]:
    """Bandwidths ``(h, hbar)`` for the transfer step.

    ``experiment-n13`` gives ``n**(-1/3)`` for both; ``theory-optimal`` takes
    ``h`` and returns ``hbar = (n * h**d) ** (-1 / (2 beta_g + 1))``;
    ``fixed`` passes ``value`` through.
    """
    if n < 1:
        raise InvalidParameter(f"n must be >= 1, got {n}")
    if mode == "experiment-n13":
        b = n ** (-1.0 / 3.0)
        return b, b
    if mode == "theory-optimal":
        if h is None or d is None or beta_g is None or not h > 0 or not beta_g > 0:
            raise InvalidParameter("theory-optimal needs positive h, beta_g and a dimension d")
        return float(h), (n * h**d) ** (-1.0 / (2.0 * beta_g + 1.0))
    if mode == "fixed":
        if value is None or len(value) != 2 or not (value[0] > 0 and value[1] > 0):
            raise InvalidParameter(f"fixed mode needs two positive bandwidths, got {value}")
        return float(value[0]), float(value[1])
    raise InvalidParameter(f"unknown transfer bandwidth mode {mode!r}")


@dataclass(frozen=True)
class CellFit:
    a: float
    b: float
    y_center: float
    n_window: int
    gram_min_eig: float
    fallback: Fallback = Fallback.NONE

    def g(self, y: ArrayLike) -> NDArray[np.float64] | float:
        """Cellwise transfer function ``y -> a (y - y_center) + b``."""
        if self.fallback is Fallback.EMPTY:
            return np.full_like(np.asarray(y, dtype=np.float64), self.b)[()]
        return self.a * (np.asarray(y, dtype=np.float64) - self.y_center) + self.b


def solve_cell(
    center: ArrayLike,
    X: NDArray[np.float64],
    y: NDArray[np.float64],
    z: NDArray[np.float64],
    y_center: float,
    config: FitConfig,
    empty_value: float,
) -> CellFit:
    """Weighted least squares of ``y`` on ``(1, z)`` around one cell center.

    ``X``, ``y`` and ``z`` are the points entering this cell's regression and
    their centred source scores.
    """
    center = np.asarray(center, dtype=np.float64)
    if X.shape[0] == 0:
        return CellFit(0.0, float(empty_value), float(y_center), 0, 0.0, Fallback.EMPTY)
    w = config.kx.profile(np.linalg.norm(X - center, axis=1) / config.h) * config.kz.profile(
        np.abs(z) / config.hbar
    )
    keep = w > WEIGHT_FLOOR
    n_window = int(keep.sum())
    if n_window == 0:
        return CellFit(0.0, float(empty_value), float(y_center), 0, 0.0, Fallback.EMPTY)
    w, y, z = w[keep], y[keep], z[keep]
    s0, s1, s2 = w.sum(), w @ z, w @ (z * z)
    gram = np.array([[s0, s1], [s1, s2]])
    min_eig = float(max(np.linalg.eigvalsh(gram)[0], 0.0))
    if n_window == 1:
        return CellFit(0.0, float(y[0]), float(y_center), 1, min_eig, Fallback.MEAN)
    trace = s0 + s2
    if min_eig < config.eig_tol * trace:
        lam = config.ridge * trace / 2.0
        b, a = np.linalg.solve(gram + lam * np.eye(2), np.array([w @ y, w @ (z * y)]))
        return CellFit(float(a), float(b), float(y_center), n_window, min_eig, Fallback.RIDGE)
    # centred form of the 2x2 normal equations; better conditioned than the raw sums
    zbar = s1 / s0
    ybar = (w @ y) / s0
    dz = z - zbar
    a = (w @ (dz * (y - ybar))) / (w @ (dz * dz))
    b = ybar - a * zbar
    return CellFit(float(a), float(b), float(y_center), n_window, min_eig, Fallback.NONE)


def fit_cell(
    cell: Cell,
    train: Dataset,
    source,
    config: FitConfig,
    train_scores: NDArray[np.float64] | None = None,
    in_cell: NDArray[np.bool_] | None = None,
) -> CellFit:
    """Fit the affine transfer on one cell.

    Only training points inside ``cell`` are used unless
    ``config.restrict_to_cell`` is off. An empty cell gets slope 0 and the
    global training mean as intercept.
    """
    scores = source.predict(train.X) if train_scores is None else train_scores
    y_center = float(source.predict(np.array([cell.center]))[0])
    if config.restrict_to_cell:
        if in_cell is None:
            in_cell = np.array([cell.contains(x) for x in train.X], dtype=bool)
        X, y, s = train.X[in_cell], train.y[in_cell], scores[in_cell]
    else:
        X, y, s = train.X, train.y, scores
    return solve_cell(cell.center, X, y, s - y_center, y_center, config, _global_mean(train))


def _global_mean(train: Dataset) -> float:
    return float(np.mean(train.y)) if train.n else 0.0


@dataclass(frozen=True, eq=False)
class TransferModel:
    """Source model + tessellation + one affine fit per cell.

    ``cell_fits`` holds the fits of cells that received training data; every
    other cell uses the empty-cell rule (slope 0, intercept ``global_mean``).
    """

    source: object
    tessellation: Tessellation
    config: FitConfig
    cell_fits: dict[int, CellFit]
    global_mean: float
    _arrays: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        keys = np.array(sorted(self.cell_fits), dtype=np.int64)
        fits = [self.cell_fits[int(k)] for k in keys]
        a = np.array([f.a for f in fits])
        b = np.array([f.b for f in fits])
        yc = np.array([f.y_center if f.fallback is not Fallback.EMPTY else 0.0 for f in fits])
        object.__setattr__(self, "_arrays", (keys, a, b, yc))

    @property
    def h(self) -> float:
        return self.config.h

    @property
    def hbar(self) -> float:
        return self.config.hbar

    def fit_for(self, index: int) -> CellFit:
        if index in self.cell_fits:
            return self.cell_fits[index]
        center = self.tessellation.cell(index).center
        yc = float(self.source.predict(np.array([center]))[0])
        return CellFit(0.0, self.global_mean, yc, 0, 0.0, Fallback.EMPTY)

    @property
    def fits(self) -> list[CellFit]:
        if self.tessellation.n_cells > MAX_DENSE_CELLS:
            raise InvalidInput("too many cells to list; use fit_for(index)")
        return [self.fit_for(i) for i in range(self.tessellation.n_cells)]

    def _coefficients(self, loc: NDArray[np.int64]):
        keys, a, b, yc = self._arrays
        if not len(keys):
            return np.zeros(loc.shape), np.full(loc.shape, self.global_mean), np.zeros(loc.shape)
        pos = np.minimum(np.searchsorted(keys, loc), len(keys) - 1)
        hit = keys[pos] == loc
        return (
            np.where(hit, a[pos], 0.0),
            np.where(hit, b[pos], self.global_mean),
            np.where(hit, yc[pos], 0.0),
        )

    def predict(self, X: ArrayLike, scores: NDArray[np.float64] | None = None) -> NDArray[np.float64]:
        X = as_points(X, self.tessellation.d)
        s = self.source.predict(X) if scores is None else scores
        a, b, yc = self._coefficients(self.tessellation.locate_many(X))
        return a * (s - yc) + b

    def transfer_function(self, X: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
        X = as_points(X, self.tessellation.d)
        a, b, yc = self._coefficients(self.tessellation.locate_many(X))
        return a * (np.asarray(y, dtype=np.float64) - yc) + b

    def __call__(self, X):
        return self.predict(X)

    # -- serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        if not isinstance(self.source, SourceModel):
            raise InvalidInput("only models built on a fitted Nadaraya-Watson source can be serialised")
        src = self.source
        return {
            "format": "tl2-transfer-model/1",
            "tessellation": self.tessellation.to_dict(),
            "fit_config": self.config.to_dict(),
            "global_mean": self.global_mean,
            "cells": [
                {
                    "index": k,
                    "a": f.a,
                    "b": f.b,
                    "y_center": f.y_center,
                    "fallback": f.fallback.value,
                    "n_window": f.n_window,
                    "gram_min_eig": f.gram_min_eig,
                }
                for k, f in sorted(self.cell_fits.items())
            ],
            "source": {
                "kernel": src.kernel.shape.value,
                "bandwidth": src.bandwidth,
                "beta_s": src.beta_s,
                "X": src.data.X.tolist(),
                "y": src.data.y.tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, rec: dict) -> "TransferModel":
        s = rec["source"]
        source = SourceModel(
            Dataset(np.array(s["X"], dtype=np.float64), np.array(s["y"], dtype=np.float64), Role.SOURCE),
            Kernel(s["kernel"]),
            float(s["bandwidth"]),
            float(s["beta_s"]),
        )
        fits = {
            int(c["index"]): CellFit(
                float(c["a"]),
                float(c["b"]),
                float(c["y_center"]),
                int(c["n_window"]),
                float(c["gram_min_eig"]),
                Fallback(c["fallback"]),
            )
            for c in rec["cells"]
        }
        return cls(
            source,
            Tessellation.from_dict(rec["tessellation"]),
            FitConfig.from_dict(rec["fit_config"]),
            fits,
            float(rec["global_mean"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "TransferModel":
        return cls.from_dict(json.loads(text))


class ScoreCache:
    """Memoises source predictions at cell centers across many fits."""

    def __init__(self, source):
        self.source = source
        self._cache: dict[tuple[float, ...], float] = {}

    def at(self, centers: NDArray[np.float64]) -> NDArray[np.float64]:
        keys = [tuple(c) for c in centers.tolist()]
        missing = [k for k in dict.fromkeys(keys) if k not in self._cache]
        if missing:
            vals = self.source.predict(np.array(missing, dtype=np.float64))
            self._cache.update(zip(missing, vals.tolist()))
        return np.array([self._cache[k] for k in keys], dtype=np.float64)


def fit_transfer(
    H: Tessellation,
    train: Dataset,
    source,
    config: FitConfig = FitConfig(),
    train_scores: NDArray[np.float64] | None = None,
    center_cache: ScoreCache | None = None,
) -> TransferModel:
    """Fit every cell of ``H`` on the target training sample.

    ``train_scores`` (source predictions at the training points) and
    ``center_cache`` let a caller fitting many tessellations on the same data
    skip repeated source evaluations.
    """
    if train.role is not Role.TARGET_TRAIN:
        raise InvalidInput(f"transfer fits use target-train data, got {train.role.value}")
    if train.dim != H.d:
        raise InvalidInput(f"data dimension {train.dim} != tessellation dimension {H.d}")
    scores = source.predict(train.X) if train_scores is None else np.asarray(train_scores)
    cache = center_cache if center_cache is not None else ScoreCache(source)
    gmean = _global_mean(train)
    loc = H.locate_many(train.X)

    if config.restrict_to_cell:
        order = np.argsort(loc, kind="stable")
        cells, starts = np.unique(loc[order], return_index=True)
        bounds = list(starts[1:]) + [len(order)]
        centers = H.centers(cells)
        ycs = cache.at(centers)
        fits = {}
        for k, c, yc, lo, hi in zip(cells.tolist(), centers, ycs, starts, bounds):
            idx = order[lo:hi]
            fits[k] = solve_cell(c, train.X[idx], train.y[idx], scores[idx] - yc, yc, config, gmean)
    else:
        if H.n_cells > MAX_DENSE_CELLS:
            raise InvalidInput("unrestricted fits need every cell; tessellation too large")
        cells = np.arange(H.n_cells)
        centers = H.centers(cells)
        ycs = cache.at(centers)
        fits = {
            int(k): solve_cell(c, train.X, train.y, scores - yc, yc, config, gmean)
            for k, c, yc in zip(cells, centers, ycs)
        }
    return TransferModel(source, H, config, fits, gmean)


def predict_transfer(model: TransferModel, x: ArrayLike) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size != model.tessellation.d or x.ndim > 1:
        raise InvalidInput(f"expected a point of dimension {model.tessellation.d}, got shape {x.shape}")
    return float(model.predict(x.reshape(1, -1))[0])


def transfer_function_at(model: TransferModel, x: ArrayLike, y: float) -> float:
    """Estimated transfer function of the cell containing ``x``, evaluated at source value ``y``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size != model.tessellation.d or x.ndim > 1:
        raise InvalidInput(f"expected a point of dimension {model.tessellation.d}, got shape {x.shape}")
    return float(model.transfer_function(x.reshape(1, -1), np.array([y]))[0])


def with_fits(model: TransferModel, fits: dict[int, CellFit]) -> TransferModel:
    """Same model with replaced cell fits (handy for constructing test instances)."""
    return replace(model, cell_fits=fits)
