"""Nadaraya-Watson estimator for the source regression function."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from tl2.core import GAUSSIAN, Dataset, InvalidInput, InvalidParameter, Kernel, Role, as_points

DENOM_FLOOR = 1e-300
# keep each query block's distance matrix around 4M entries
_BLOCK_ENTRIES = 4_000_000


def bandwidth_rule_source(n_s: int, d: int, beta_s: float = 1.0, rule="appendix-optimal", value=None) -> float:
    """Source bandwidth.

    ``rule`` is one of

    * ``"algorithm-box"``: ``n_s ** (-1 / (2d + beta_s))``
    * ``"appendix-optimal"``: ``n_s ** (-1 / (2 beta_s + d))``, the MSE-rate optimal choice
    * ``"n13"``: ``n_s ** (-1/3)``
    * ``"fixed"``: returns ``value``
    """
    if n_s < 1 or d < 1:
        raise InvalidParameter(f"need n_s >= 1 and d >= 1, got n_s={n_s}, d={d}")
    if not beta_s > 0:
        raise InvalidParameter(f"beta_s must be positive, got {beta_s}")
    if rule == "algorithm-box":
        return n_s ** (-1.0 / (2 * d + beta_s))
    if rule == "appendix-optimal":
        return n_s ** (-1.0 / (2 * beta_s + d))
    if rule == "n13":
        return n_s ** (-1.0 / 3.0)
    if rule == "fixed":
        if value is None or not value > 0:
            raise InvalidParameter(f"fixed bandwidth must be positive, got {value}")
        return float(value)
    raise InvalidParameter(f"unknown bandwidth rule {rule!r}")


@dataclass(frozen=True, eq=False)
class SourceModel:
    """A fitted Nadaraya-Watson regressor.

    Predictions are weighted averages of the training responses with
    weights ``K(|X_i - x| / h)``; whenever every weight underflows below
    ``1e-300`` the response of the nearest training point is returned instead.
    """

    data: Dataset
    kernel: Kernel = GAUSSIAN
    bandwidth: float = 1.0
    beta_s: float = 1.0

    @property
    def dim(self) -> int:
        return self.data.dim

    def predict(self, x: ArrayLike, return_flags: bool = False):
        pts = as_points(x, self.dim)
        out = np.empty(pts.shape[0])
        flags = np.zeros(pts.shape[0], dtype=bool)
        X, y, h = self.data.X, self.data.y, self.bandwidth
        step = max(1, _BLOCK_ENTRIES // max(1, X.shape[0]))
        for start in range(0, pts.shape[0], step):
            q = pts[start : start + step]
            dist = cdist(q, X)
            w = self.kernel.profile(dist / h)
            den = w.sum(axis=1)
            # row-wise reduction, so a query's value does not depend on its batch
            num = (w * y).sum(axis=1)
            ok = den >= DENOM_FLOOR
            block = np.empty(q.shape[0])
            block[ok] = num[ok] / den[ok]
            if not ok.all():
                block[~ok] = y[np.argmin(dist[~ok], axis=1)]
            out[start : start + step] = block
            flags[start : start + step] = ~ok
        if return_flags:
            return out, flags
        return out

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        return self.predict(x)


def nw_fit(data: Dataset, kernel: Kernel = GAUSSIAN, h_s: float = 1.0, beta_s: float = 1.0) -> SourceModel:
    if data.n == 0:
        raise InvalidInput("cannot fit on an empty dataset")
    if data.role not in (Role.SOURCE, Role.TARGET):
        raise InvalidInput(f"Nadaraya-Watson fit expects source (or full target) data, got {data.role.value}")
    if not (h_s > 0 and math.isfinite(h_s)):
        raise InvalidParameter(f"bandwidth must be positive, got {h_s}")
    return SourceModel(data, kernel, float(h_s), float(beta_s))


def nw_predict(model: SourceModel, x: ArrayLike) -> float:
    """Prediction at a single point."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim > 1 or (x.ndim == 1 and x.shape[0] != model.dim) or (x.ndim == 0 and model.dim != 1):
        raise InvalidInput(f"expected a point of dimension {model.dim}, got shape {x.shape}")
    return float(model.predict(x.reshape(1, -1))[0])


@dataclass(frozen=True)
class FunctionSource:
    """Wraps a known regression function so it can stand in for a fitted source.

    Used for oracle-score fits, where the true source function replaces its
    estimate inside the transfer step.
    """

    fn: object
    dim: int

    def predict(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(self.fn(as_points(x, self.dim)), dtype=np.float64).reshape(-1)

    def __call__(self, x):
        return self.predict(x)
