"""Axis-aligned product tessellations of [0,1]^d on a 1/m grid.

A tessellation is given by, for each axis, a sorted set of integer
breakpoints ``k`` in ``1..m-1`` (the split sits at ``k/m``). Cells are the
products of the per-axis intervals. Each interval is half-open on the left,
``(lo, hi]``, except the first one on every axis which also contains 0, so
every point of the cube falls in exactly one cell.

Cells are indexed in row-major order over the per-axis interval indices
(axis 0 most significant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.typing import ArrayLike, NDArray

from tl2.core import Dataset, InvalidInput, InvalidParameter, Role, as_points

MAX_DENSE_CELLS = 100_000


@dataclass(frozen=True)
class Cell:
    index: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    center: tuple[float, ...]
    klo: tuple[int, ...]
    khi: tuple[int, ...]

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def diameter(self) -> float:
        return math.sqrt(sum(w * w for w in self.widths))

    @property
    def inscribed_radius(self) -> float:
        # largest ball around the center that fits in the box
        return min(self.widths) / 2.0

    def measure(self, m: int) -> Fraction:
        out = Fraction(1)
        for a, b in zip(self.klo, self.khi):
            out *= Fraction(b - a, m)
        return out

    def contains(self, x: ArrayLike) -> bool:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        for xj, a, b in zip(x, self.lo, self.hi):
            if xj > b or xj < a or (xj == a and a > 0.0):
                return False
        return True


@dataclass(frozen=True)
class Tessellation:
    d: int
    m: int
    breakpoints: tuple[tuple[int, ...], ...]
    _edges: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise InvalidInput(f"need d >= 1 and m >= 1, got d={self.d}, m={self.m}")
        bps = tuple(tuple(int(k) for k in axis) for axis in self.breakpoints)
        if len(bps) != self.d:
            raise InvalidInput(f"expected {self.d} breakpoint lists, got {len(bps)}")
        for j, axis in enumerate(bps):
            if any(k < 1 or k > self.m - 1 for k in axis):
                raise InvalidInput(f"axis {j}: breakpoints must lie in 1..{self.m - 1}, got {axis}")
            if any(a >= b for a, b in zip(axis, axis[1:])):
                raise InvalidInput(f"axis {j}: breakpoints must be sorted and distinct, got {axis}")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "_edges", tuple(np.array([k / self.m for k in axis]) for axis in bps))

    # -- structure -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(axis) + 1 for axis in self.breakpoints)

    @property
    def n_cells(self) -> int:
        return math.prod(self.shape)

    @property
    def l_max(self) -> int:
        return self.m**self.d

    @property
    def sort_key(self):
        return (self.n_cells, self.breakpoints)

    def axis_bounds(self, j: int) -> list[tuple[int, int]]:
        ks = (0, *self.breakpoints[j], self.m)
        return list(zip(ks[:-1], ks[1:]))

    def cell(self, index: int) -> Cell:
        if not 0 <= index < self.n_cells:
            raise InvalidInput(f"cell index {index} out of range for {self.n_cells} cells")
        sub = []
        rem = index
        for size in reversed(self.shape):
            rem, r = divmod(rem, size)
            sub.append(r)
        sub.reverse()
        klo, khi = [], []
        for j, s in enumerate(sub):
            a, b = self.axis_bounds(j)[s]
            klo.append(a)
            khi.append(b)
        lo = tuple(a / self.m for a in klo)
        hi = tuple(b / self.m for b in khi)
        center = tuple((a + b) / (2 * self.m) for a, b in zip(klo, khi))
        return Cell(index, lo, hi, center, tuple(klo), tuple(khi))

    @property
    def cells(self) -> list[Cell]:
        if self.n_cells > MAX_DENSE_CELLS:
            raise InvalidInput(f"{self.n_cells} cells is too many to list; use cell(index)")
        return [self.cell(i) for i in range(self.n_cells)]

    def centers(self, indices) -> NDArray[np.float64]:
        return np.array([self.cell(int(i)).center for i in indices], dtype=np.float64).reshape(-1, self.d)

    # -- lookup ----------------------------------------------------------

    def locate_many(self, X: ArrayLike) -> NDArray[np.int64]:
        X = as_points(X, self.d)
        if np.any(X < 0.0) or np.any(X > 1.0):
            raise InvalidInput("points must lie in [0, 1]^d")
        idx = np.zeros(X.shape[0], dtype=np.int64)
        for j, (edges, size) in enumerate(zip(self._edges, self.shape)):
            # number of edges strictly below x_j = index of the (lo, hi] interval
            idx = idx * size + np.searchsorted(edges, X[:, j], side="left")
        return idx

    def locate(self, x: ArrayLike) -> int:
        x = np.asarray(x, dtype=np.float64)
        if x.size != self.d:
            raise InvalidInput(f"expected a point of dimension {self.d}, got shape {x.shape}")
        return int(self.locate_many(x.reshape(1, -1))[0])

    # -- serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        return {"d": self.d, "m": self.m, "breakpoints": [list(a) for a in self.breakpoints]}

    @classmethod
    def from_dict(cls, rec: dict) -> "Tessellation":
        return cls(int(rec["d"]), int(rec["m"]), tuple(tuple(a) for a in rec["breakpoints"]))

    def to_text(self) -> str:
        lines = [f"tessellation d={self.d} m={self.m}"]
        for j, axis in enumerate(self.breakpoints):
            lines.append(f"axis {j}:" + "".join(f" {k}" for k in axis))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Tessellation":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        try:
            head = dict(tok.split("=") for tok in lines[0].split()[1:])
            d, m = int(head["d"]), int(head["m"])
            axes = [tuple(int(k) for k in ln.split(":", 1)[1].split()) for ln in lines[1 : 1 + d]]
        except (IndexError, KeyError, ValueError) as exc:
            raise InvalidInput(f"malformed tessellation record: {exc}") from exc
        return cls(d, m, tuple(axes))

    def __str__(self) -> str:
        return "|".join(",".join(map(str, a)) for a in self.breakpoints) + f"/{self.m}"


def grid_tessellation(d: int, m: int, breakpoints=None) -> Tessellation:
    if breakpoints is None:
        breakpoints = [()] * d
    return Tessellation(d, m, tuple(tuple(sorted(a)) for a in breakpoints))


def single_cell(d: int, m: int) -> Tessellation:
    return Tessellation(d, m, ((),) * d)


def full_grid(d: int, m: int) -> Tessellation:
    return Tessellation(d, m, (tuple(range(1, m)),) * d)


def uniform_grid(d: int, m: int, cells_per_axis: int) -> Tessellation:
    """``cells_per_axis`` equal intervals per axis; requires it to divide ``m``."""
    if m % cells_per_axis:
        raise InvalidInput(f"{cells_per_axis} does not divide m={m}")
    step = m // cells_per_axis
    return Tessellation(d, m, (tuple(range(step, m, step)),) * d)


# -- moves -------------------------------------------------------------------


def neighbor_move(H: Tessellation, rng: np.random.Generator) -> Tessellation:
    """Propose a tessellation one elementary edit away from ``H``.

    Edits: add a breakpoint on a uniformly chosen (non-full) axis, remove an
    existing breakpoint, or shift one by one grid step. The edit type is
    uniform over the three; an inapplicable type is replaced by a uniform
    draw among the applicable ones. With no applicable edit ``H`` is returned.
    """
    m = H.m
    bps = [list(a) for a in H.breakpoints]
    open_axes = [j for j, a in enumerate(bps) if len(a) < m - 1]
    existing = [(j, k) for j, a in enumerate(bps) for k in a]
    shifts = [
        (j, k, k + s)
        for j, k in existing
        for s in (-1, 1)
        if 1 <= k + s <= m - 1 and (k + s) not in bps[j]
    ]
    applicable = [t for t, ok in (("add", open_axes), ("remove", existing), ("shift", shifts)) if ok]
    if not applicable:
        return H
    kind = ("add", "remove", "shift")[rng.integers(3)]
    if kind not in applicable:
        kind = applicable[rng.integers(len(applicable))]
    if kind == "add":
        j = open_axes[rng.integers(len(open_axes))]
        free = [k for k in range(1, m) if k not in bps[j]]
        bps[j].append(free[rng.integers(len(free))])
    elif kind == "remove":
        j, k = existing[rng.integers(len(existing))]
        bps[j].remove(k)
    else:
        j, k, k2 = shifts[rng.integers(len(shifts))]
        bps[j][bps[j].index(k)] = k2
    return Tessellation(H.d, m, tuple(tuple(sorted(a)) for a in bps))


# -- admissibility -----------------------------------------------------------


@dataclass(frozen=True)
class AdmissibilityConstants:
    c_mass: float = 1.0
    c_rad: float = 4.0
    r_loc: float = 0.25


@dataclass(frozen=True)
class CellDiagnostics:
    index: int
    mass: int
    diameter: float
    inscribed_radius: float
    ess: int
    gram_min_eig: float
    gram_max_eig: float


@dataclass(frozen=True)
class AdmissibilityReport:
    """Per-cell diagnostics and the three admissibility clauses.

    ``cells`` lists every cell when the tessellation is small enough to
    enumerate, otherwise only occupied cells (``n_empty`` counts the rest).
    The report is advisory; nothing downstream refuses a failing tessellation.
    """

    cells: list[CellDiagnostics]
    n_cells: int
    n_train: int
    n_empty: int
    h: float
    hbar: float
    constants: AdmissibilityConstants
    mass_threshold: float
    radius_threshold: float
    shape_threshold: float
    mass_ok: bool
    radius_ok: bool
    shape_ok: bool

    @property
    def admissible(self) -> bool:
        return self.mass_ok and self.radius_ok and self.shape_ok

    def summary(self) -> dict:
        return {
            "admissible": self.admissible,
            "mass_ok": self.mass_ok,
            "radius_ok": self.radius_ok,
            "shape_ok": self.shape_ok,
            "min_mass": min([c.mass for c in self.cells] + ([0] if self.n_empty else [])),
            "n_empty": self.n_empty,
        }


def _gram_eigs(z: NDArray[np.float64]) -> tuple[float, float]:
    if z.size == 0:
        return 0.0, 0.0
    G = np.array([[1.0, z.mean()], [z.mean(), np.mean(z * z)]])
    lo, hi = np.linalg.eigvalsh(G)
    return float(max(lo, 0.0)), float(hi)


def check_admissible(
    H: Tessellation,
    train: Dataset,
    h: float,
    hbar: float,
    source,
    constants: AdmissibilityConstants = AdmissibilityConstants(),
    train_scores: NDArray[np.float64] | None = None,
) -> AdmissibilityReport:
    """Measure the admissibility clauses of ``H`` against the training sample.

    Mass is the number of training points in each cell, compared with
    ``c_mass * n * h**d``; diameter against ``c_rad * h``; the inscribed
    radius around the cell center against ``r_loc * h``. Also reported per
    cell: the effective sample size (training points within ``h`` of the
    center whose source score is within ``hbar`` of the center's score) and
    the eigenvalues of the normalised design Gram matrix on features
    ``(1, score - center score)``.
    """
    if train.role is not Role.TARGET_TRAIN:
        raise InvalidInput(f"admissibility is measured on target-train data, got {train.role.value}")
    n, d = train.n, H.d
    scores = source.predict(train.X) if train_scores is None else train_scores
    loc = H.locate_many(train.X) if n else np.zeros(0, dtype=np.int64)
    occupied, counts = np.unique(loc, return_counts=True)
    count_of = dict(zip(occupied.tolist(), counts.tolist()))
    indices = range(H.n_cells) if H.n_cells <= MAX_DENSE_CELLS else occupied.tolist()

    cells = []
    cell_list = [H.cell(int(i)) for i in indices]
    if cell_list:
        centers = np.array([c.center for c in cell_list])
        center_scores = source.predict(centers)
    for c, yc in zip(cell_list, center_scores if cell_list else []):
        inside = loc == c.index
        z = scores[inside] - yc
        near = (np.linalg.norm(train.X - np.array(c.center), axis=1) <= h) & (np.abs(scores - yc) <= hbar)
        lo, hi = _gram_eigs(z)
        cells.append(
            CellDiagnostics(
                index=c.index,
                mass=count_of.get(c.index, 0),
                diameter=c.diameter,
                inscribed_radius=c.inscribed_radius,
                ess=int(near.sum()),
                gram_min_eig=lo,
                gram_max_eig=hi,
            )
        )

    mass_thr = constants.c_mass * n * h**d
    rad_thr = constants.c_rad * h
    shape_thr = constants.r_loc * h
    n_empty = H.n_cells - len(occupied)
    # geometric clauses are per-axis for product grids, so they cover every cell
    widths = [[(b - a) / H.m for a, b in H.axis_bounds(j)] for j in range(d)]
    max_diam = math.sqrt(sum(max(w) ** 2 for w in widths))
    min_rad = min(min(w) for w in widths) / 2.0
    min_mass = min(counts.tolist() + ([0] if n_empty else []))
    return AdmissibilityReport(
        cells=cells,
        n_cells=H.n_cells,
        n_train=n,
        n_empty=n_empty,
        h=h,
        hbar=hbar,
        constants=constants,
        mass_threshold=mass_thr,
        radius_threshold=rad_thr,
        shape_threshold=shape_thr,
        mass_ok=bool(min_mass >= mass_thr),
        radius_ok=bool(max_diam <= rad_thr),
        shape_ok=bool(min_rad >= shape_thr),
    )
