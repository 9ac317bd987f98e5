"""Synthetic source/target problems on [0,1]^d with uniform design."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from tl2.core import Dataset, InvalidInput, InvalidParameter, Role, as_points
from tl2.tessellation import Tessellation

NOISE_LEVEL = 0.1


def sq_norm(X: ArrayLike) -> NDArray[np.float64]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.sum(X * X, axis=1)


def target1(x: ArrayLike) -> NDArray[np.float64] | float:
    """sin(|x|) where x_1 >= 1/2, exp(|x|) where x_1 < 1/2."""
    X = np.asarray(x, dtype=np.float64)
    scalar = X.ndim <= 1
    X = np.atleast_2d(X) if X.ndim else X.reshape(1, 1)
    r = np.sqrt(np.sum(X * X, axis=1))
    out = np.where(X[:, 0] >= 0.5, np.sin(r), np.exp(r))
    return float(out[0]) if scalar else out


def target2(x: ArrayLike) -> NDArray[np.float64] | float:
    """sin(|x|) where |x| >= 1/2, exp(|x|) where |x| < 1/2."""
    X = np.asarray(x, dtype=np.float64)
    scalar = X.ndim <= 1
    X = np.atleast_2d(X) if X.ndim else X.reshape(1, 1)
    r = np.sqrt(np.sum(X * X, axis=1))
    out = np.where(r >= 0.5, np.sin(r), np.exp(r))
    return float(out[0]) if scalar else out


TARGETS: dict[str, Callable] = {"target1": target1, "target2": target2}


@dataclass(frozen=True)
class SyntheticSpec:
    """One synthetic transfer problem.

    ``noise`` is the second parameter of the Gaussian noise law and
    ``noise_is_variance`` says how to read it: the default reads N(0, 0.1)
    as variance 0.1, i.e. standard deviation sqrt(0.1).
    """

    d: int = 1
    n_s: int = 100
    n_t: int = 20
    target: str | Callable = "target1"
    source_fn: Callable = sq_norm
    noise: float = NOISE_LEVEL
    noise_is_variance: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.n_s < 1 or self.n_t < 1:
            raise InvalidParameter(f"need d, n_s, n_t >= 1, got {self.d}, {self.n_s}, {self.n_t}")
        if self.noise < 0:
            raise InvalidParameter(f"noise must be nonnegative, got {self.noise}")
        if isinstance(self.target, str) and self.target not in TARGETS:
            raise InvalidParameter(f"unknown target {self.target!r}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.noise) if self.noise_is_variance else self.noise

    @property
    def target_fn(self) -> Callable:
        return TARGETS[self.target] if isinstance(self.target, str) else self.target

    def f_t(self, X: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(self.target_fn(as_points(X, self.d)), dtype=np.float64).reshape(-1)

    def f_s(self, X: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(self.source_fn(as_points(X, self.d)), dtype=np.float64).reshape(-1)


def _draw(fn, spec: SyntheticSpec, n: int, rng: np.random.Generator, role: Role) -> Dataset:
    X = rng.random((n, spec.d))
    noise = rng.standard_normal(n)
    y = fn(X)
    if spec.sigma > 0:
        y = y + spec.sigma * noise
    return Dataset(X, y, role)


def gen_source(spec: SyntheticSpec, rng: np.random.Generator | None = None) -> Dataset:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return _draw(spec.f_s, spec, spec.n_s, rng, Role.SOURCE)


def gen_target(spec: SyntheticSpec, rng: np.random.Generator | None = None, n: int | None = None) -> Dataset:
    rng = rng if rng is not None else np.random.default_rng(spec.seed + 1)
    return _draw(spec.f_t, spec, spec.n_t if n is None else n, rng, Role.TARGET)


@dataclass(frozen=True)
class OraclePieces:
    """The split at x_1 = 1/2 and, when defined, the cellwise maps with f_T = g(f_S)."""

    tessellation: Tessellation
    g: tuple[Callable, ...] | None

    def transfer(self, X: ArrayLike) -> NDArray[np.float64]:
        if self.g is None:
            raise InvalidInput("cellwise maps are not functions of the score in d > 1")
        X = as_points(X, self.tessellation.d)
        loc = self.tessellation.locate_many(X)
        y = sq_norm(X)
        out = np.empty(len(y))
        for k, g in enumerate(self.g):
            out[loc == k] = g(y[loc == k])
        return out


def oracle_transfer_pieces(spec: SyntheticSpec, m: int = 2) -> OraclePieces:
    """Oracle partition for Target 1 on the ``1/m`` grid (``m`` even).

    In d = 1, the score y = x^2 is invertible on each side, giving
    g_left = exp(sqrt(y)) and g_right = sin(sqrt(y)). In higher dimension only
    the partition is returned. Points exactly on x_1 = 1/2 belong to the
    left cell here but to the sin branch of Target 1; that set has measure zero.
    """
    if spec.target != "target1":
        raise InvalidInput("oracle pieces are only available for target1")
    if m % 2:
        raise InvalidInput(f"the split at 1/2 is off the 1/{m} grid")
    H = Tessellation(spec.d, m, ((m // 2,),) + ((),) * (spec.d - 1))
    g = None
    if spec.d == 1:
        g = (lambda y: np.exp(np.sqrt(y)), lambda y: np.sin(np.sqrt(y)))
    return OraclePieces(H, g)
