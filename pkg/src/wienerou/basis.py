"""Haar system, Schauder tents, pairings and the two path norms.

Indexing follows ``i = d*(r-1) + j``: Haar index ``r`` carries the shape,
``j`` the coordinate of R^d.  ``r = 1`` is the constant Haar function (the
"root"); otherwise ``r = 2**m + k`` with level ``m >= 0`` and offset
``1 <= k <= 2**m``.  Fields live on dyadic grids deep enough that every
tent is linear between neighbouring nodes, which makes norms and pairings
exact rather than approximate.
"""

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class GridDepthError(ValueError):
    """A grid is too coarse to resolve the basis functions in use."""


class NormKind(enum.Enum):
    SUP = "sup"
    L1 = "l1"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("norm", "")
        aliases = {"sup": cls.SUP, "c": cls.SUP, "l1": cls.L1}
        if key not in aliases:
            raise ValueError(f"unknown norm kind {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class BasisIndex:
    """Global index ``i`` split into Haar index, coordinate, level and offset.

    ``level`` and ``offset`` are ``None`` for the root function ``r = 1``.
    """

    i: int
    r: int
    j: int
    d: int
    level: int | None
    offset: int | None

    @property
    def is_root(self):
        return self.r == 1

    @property
    def support_points(self):
        """Left end, midpoint and right end of the tent's support."""
        if self.is_root:
            return 0.0, None, 1.0
        m, k = self.level, self.offset
        return (k - 1) / 2**m, (2 * k - 1) / 2 ** (m + 1), k / 2**m


def decompose_index(i, d):
    if i < 1 or d < 1:
        raise ValueError("need i >= 1 and d >= 1")
    r, j = divmod(i - 1, d)
    r += 1
    j += 1
    if r == 1:
        return BasisIndex(i, 1, j, d, None, None)
    m = (r - 1).bit_length() - 1
    return BasisIndex(i, r, j, d, m, r - 2**m)


def compose_index(r, j, d):
    if not 1 <= j <= d or r < 1:
        raise ValueError(f"invalid Haar index/coordinate ({r}, {j}) for d={d}")
    return d * (r - 1) + j


def haar_level(r):
    """Level ``m`` of Haar index ``r >= 2`` (``-1`` for the root)."""
    return -1 if r == 1 else (r - 1).bit_length() - 1


def deepest_level(n, d):
    """Deepest Haar level among global indices ``1..n``."""
    return haar_level((n - 1) // d + 1)


def haar_eval(r, t):
    if not 0.0 <= t < 1.0:
        raise ValueError(f"Haar functions are evaluated on [0, 1); got t={t}")
    if r == 1:
        return 1.0
    m = haar_level(r)
    k = r - 2**m
    scale = 2.0 ** (m / 2)
    w = 2.0 ** (m + 1)
    if (2 * k - 2) / w <= t < (2 * k - 1) / w:
        return scale
    if (2 * k - 1) / w <= t < 2 * k / w:
        return -scale
    return 0.0


def tent_value(r, s):
    """Scalar Schauder function of Haar index ``r`` at ``s`` (array-friendly)."""
    s = np.asarray(s, dtype=float)
    if r == 1:
        return s.copy()
    m = haar_level(r)
    k = r - 2**m
    a, c, b = (k - 1) / 2**m, (2 * k - 1) / 2 ** (m + 1), k / 2**m
    up = np.clip(s - a, 0.0, None)
    down = np.clip(b - s, 0.0, None)
    return 2.0 ** (m / 2) * np.where(s <= c, np.minimum(up, c - a), down)


def schauder_eval(idx, s):
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1]; got {s}")
    out = np.zeros(idx.d)
    out[idx.j - 1] = float(tent_value(idx.r, s))
    return out


@dataclass(frozen=True)
class DyadicGrid:
    depth: int

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("grid depth must be >= 1")

    @property
    def size(self):
        return 2**self.depth + 1

    @property
    def step(self):
        return 2.0**-self.depth

    @property
    def nodes(self):
        return np.arange(self.size) * self.step

    def require(self, level):
        """Raise unless tents up to Haar level ``level`` are linear between nodes."""
        if self.depth < level + 1:
            raise GridDepthError(
                f"grid depth {self.depth} cannot resolve Haar level {level}; "
                f"need depth >= {level + 1}")


@dataclass
class GridField:
    """Samples ``values[q, j]`` of an R^d-valued path at the nodes of ``grid``."""

    values: np.ndarray
    grid: DyadicGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.grid.size:
            raise ValueError("field values do not match the grid size")

    @property
    def d(self):
        return self.values.shape[1]


@lru_cache(maxsize=32)
def _tent_matrix(R, depth):
    nodes = np.arange(2**depth + 1) * 2.0**-depth
    mat = np.stack([tent_value(r, nodes) for r in range(1, R + 1)])
    mat.setflags(write=False)
    return mat


def tent_matrix(R, grid):
    """``T[r-1, q] = S_r(s_q)`` for Haar indices ``1..R`` (scalar tents)."""
    grid.require(haar_level(R))
    return _tent_matrix(R, grid.depth)


def schauder_field(idx, grid):
    grid.require(-1 if idx.is_root else idx.level)
    vals = np.zeros((grid.size, idx.d))
    vals[:, idx.j - 1] = tent_value(idx.r, grid.nodes)
    return GridField(vals, grid)


def synthesize(coeffs, grid, d):
    """Values of ``sum_i coeffs[..., i-1] * S_i`` on ``grid``; shape ``(..., Q, d)``.

    ``coeffs`` has a trailing axis whose length is a multiple of ``d``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[-1]
    if n % d:
        raise ValueError("coefficient count must be a multiple of d")
    R = n // d
    tents = tent_matrix(R, grid)
    by_r = coeffs.reshape(coeffs.shape[:-1] + (R, d))
    return np.einsum("...rj,rq->...qj", by_r, tents, optimize=True)


def schauder_pairing(idx, gamma):
    """``<S_i, gamma>`` = Stieltjes integral of the Haar function against ``gamma``."""
    grid = gamma.grid
    col = gamma.values[:, idx.j - 1]
    if idx.is_root:
        return float(col[-1])
    grid.require(idx.level)
    s1, s2, s3 = idx.support_points
    q1, q2, q3 = (int(round(s * 2**grid.depth)) for s in (s1, s2, s3))
    c = 2.0 ** (idx.level / 2)
    return float(2 * c * col[q2] - c * col[q1] - c * col[q3])


@lru_cache(maxsize=32)
def _pairing_matrix(R, depth):
    Q = 2**depth + 1
    P = np.zeros((R, Q))
    P[0, -1] = 1.0
    for r in range(2, R + 1):
        m = haar_level(r)
        k = r - 2**m
        c = 2.0 ** (m / 2)
        step = 2 ** (depth - m)
        q1 = (k - 1) * step
        P[r - 1, q1] -= c
        P[r - 1, q1 + step // 2] += 2 * c
        P[r - 1, q1 + step] -= c
    P.setflags(write=False)
    return P


def pair_all(values, grid, n, d):
    """All pairings ``<S_i, field>``, ``i = 1..n``, for fields ``values[..., q, j]``."""
    R = -(-n // d)
    grid.require(haar_level(R))
    P = _pairing_matrix(R, grid.depth)
    out = np.einsum("rq,...qj->...rj", P, values, optimize=True)
    return out.reshape(out.shape[:-2] + (R * d,))[..., :n]


def haar_gram(R):
    """Exact ``int_0^1 H_r H_r' dt`` for ``r, r' <= R`` via finest-cell midpoints."""
    depth = haar_level(R) + 1 if R > 1 else 0
    mids = (np.arange(2**depth) + 0.5) * 2.0**-depth
    H = np.array([[haar_eval(r, t) for t in mids] for r in range(1, R + 1)])
    return H @ H.T * 2.0**-depth


def _abs_integral_cells(a, b, width):
    """Exact integral of |linear interpolant| over cells with end values a, b."""
    same = a * b >= 0
    absum = np.abs(a) + np.abs(b)
    with np.errstate(invalid="ignore", divide="ignore"):
        cross = np.where(absum > 0, (a * a + b * b) / np.where(absum > 0, absum, 1.0), 0.0)
    return width * np.where(same, absum, cross) / 2


def sup_norms(values):
    """Sup norm of fields ``values[..., q, j]`` (max over nodes and components)."""
    return np.abs(values).max(axis=(-2, -1))


def l1_norms(values, step):
    """L1 norm of piecewise-linear fields; zero crossings handled exactly."""
    a = values[..., :-1, :]
    b = values[..., 1:, :]
    return _abs_integral_cells(a, b, step).sum(axis=(-2, -1))


def field_norms(values, step, kind):
    kind = NormKind.parse(kind)
    if kind is NormKind.SUP:
        return sup_norms(values)
    return l1_norms(values, step)


def norm(field, kind):
    return float(field_norms(field.values, field.grid.step, kind))


def schauder_norm(idx, kind):
    """Closed-form norm of a single Schauder function."""
    kind = NormKind.parse(kind)
    if idx.is_root:
        return 1.0 if kind is NormKind.SUP else 0.5
    m = idx.level
    if kind is NormKind.SUP:
        return 2.0 ** (-(m + 2) / 2)
    return 2.0 ** (-(3 * m + 4) / 2)
