"""Shared domain types: samples, datasets, kernels and seeded random streams."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

ATOL = 1e-12


class InvalidInput(ValueError):
    """Raised when data handed to an operation violates its preconditions."""


class InvalidParameter(InvalidInput):
    """Raised for out-of-range configuration values (bandwidths, block counts, ...)."""


class Role(str, enum.Enum):
    SOURCE = "source"
    TARGET_TRAIN = "target-train"
    TARGET_VALIDATE = "target-validate"
    # full target sample before the train/validate split, and held-out evaluation data
    TARGET = "target"
    TEST = "test"


@dataclass(frozen=True)
class LabeledSample:
    x: tuple[float, ...]
    y: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Points of [0,1]^d with real responses.

    ``X`` has shape ``(n, d)`` and ``y`` shape ``(n,)``. Both are stored as
    read-only float64 arrays so a dataset can be shared freely.
    """

    X: NDArray[np.float64]
    y: NDArray[np.float64]
    role: Role = Role.SOURCE

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.float64, copy=True).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[1] < 1:
            raise InvalidInput(f"X must be a 2-d array of points, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise InvalidInput(f"{X.shape[0]} points but {y.shape[0]} responses")
        if not np.all(np.isfinite(y)):
            raise InvalidInput("responses must be finite")
        if X.size and (np.any(X < 0.0) or np.any(X > 1.0) or not np.all(np.isfinite(X))):
            raise InvalidInput("every coordinate must lie in [0, 1]; rescale features first")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "role", Role(self.role))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(tuple(map(float, x)), float(y)) for x, y in zip(self.X, self.y)]

    @classmethod
    def from_samples(cls, samples, role=Role.SOURCE) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise InvalidInput("no samples")
        return cls(np.array([s.x for s in samples]), np.array([s.y for s in samples]), role)

    def subset(self, idx, role: Role | None = None) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.role if role is None else role)

    def with_role(self, role: Role) -> "Dataset":
        return Dataset(self.X, self.y, role)

    def with_responses(self, y) -> "Dataset":
        return Dataset(self.X, y, self.role)


def split_target(target: Dataset, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Split a target sample into training and validation halves.

    A random permutation is applied first; the training half has
    ``floor(n/2)`` points and the validation half the rest.
    """
    n = target.n
    if n < 2:
        raise InvalidInput(f"need at least 2 target points to split, got {n}")
    perm = rng.permutation(n)
    n1 = n // 2
    return (
        target.subset(np.sort(perm[:n1]), Role.TARGET_TRAIN),
        target.subset(np.sort(perm[n1:]), Role.TARGET_VALIDATE),
    )


_GAUSS_PEAK = 1.0 / math.sqrt(2.0 * math.pi)


class KernelShape(str, enum.Enum):
    GAUSSIAN = "gaussian"
    EPANECHNIKOV = "epanechnikov"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class Kernel:
    """Radial smoothing kernel K(u); vector arguments are reduced by Euclidean norm."""

    shape: KernelShape = KernelShape.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "shape", KernelShape(self.shape))

    @property
    def compact(self) -> bool:
        return self.shape is not KernelShape.GAUSSIAN

    def profile(self, r: ArrayLike) -> NDArray[np.float64]:
        """Evaluate K at (already normalised) distances ``r >= 0``."""
        r = np.abs(np.asarray(r, dtype=np.float64))
        if self.shape is KernelShape.GAUSSIAN:
            return _GAUSS_PEAK * np.exp(-0.5 * r * r)
        inside = r <= 1.0
        if self.shape is KernelShape.EPANECHNIKOV:
            return np.where(inside, 0.75 * (1.0 - r * r), 0.0)
        return np.where(inside, 0.5, 0.0)

    def __call__(self, u: ArrayLike) -> float:
        return float(self.profile(_norm(u)))


def _norm(u: ArrayLike) -> float:
    u = np.asarray(u, dtype=np.float64)
    return float(abs(u)) if u.ndim == 0 else float(np.linalg.norm(u))


def kernel_eval(k: Kernel, u: ArrayLike, bandwidth: float) -> float:
    """K(u / bandwidth), without the bandwidth**-d normalisation."""
    if not bandwidth > 0:
        raise InvalidParameter(f"bandwidth must be positive, got {bandwidth}")
    return float(k.profile(_norm(u) / bandwidth))


GAUSSIAN = Kernel(KernelShape.GAUSSIAN)
EPANECHNIKOV = Kernel(KernelShape.EPANECHNIKOV)
UNIFORM = Kernel(KernelShape.UNIFORM)


@dataclass(frozen=True)
class RngSeed:
    """A (seed, stream) pair; parallel work gets its own stream id."""

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or self.stream < 0:
            raise InvalidParameter("seed must be a 64-bit unsigned integer, stream >= 0")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.stream,))))

    def child(self, *keys: int) -> np.random.Generator:
        return np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.stream, *keys)))
        )


def make_rng(seed: int = 0, stream: int = 0) -> np.random.Generator:
    return RngSeed(seed, stream).generator()


def as_points(x: ArrayLike, d: int) -> NDArray[np.float64]:
    """Coerce a point or a batch of points to shape ``(n, d)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if x.shape[0] == d else x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != d:
        raise InvalidInput(f"expected points of dimension {d}, got shape {np.shape(x)}")
    return x
