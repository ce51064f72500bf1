"""Scalar and tensor quadratic variation of the field and their limits.

The limit of the scalar quadratic variation is ``t * theta`` with
``theta = 2 E||sum_i sqrt(lambda_i) xi_i S_i||**2``; the tensor quadratic
variation converges to ``t * Theta`` whose kernel is
``2 sum_i lambda_i S_i(u) (x) S_i(v)``.
"""

import math
import warnings
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import basis, rng
from .ou_field import synthesize_coeffs, truncation_size
from .parallel import accumulate


@dataclass(frozen=True)
class Partition:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2 or pts[0] != 0.0:
            raise ValueError("a partition starts at 0 and has at least two points")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("partition points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def mesh(self):
        return float(np.diff(self.points).max())

    @property
    def horizon(self):
        return float(self.points[-1])

    @classmethod
    def uniform(cls, T, K):
        return cls(np.linspace(0.0, T, K + 1))

    @classmethod
    def random_subgrid(cls, times, K, seed):
        """``K`` cells whose interior points are drawn without replacement from ``times``."""
        times = np.asarray(times, dtype=float)
        u = rng.uniforms(seed, 0, rng.stream_id(rng.EXPERIMENT, 1), times.size - 2)[0]
        inner = np.sort(np.argsort(u, kind="stable")[: K - 1] + 1)
        return cls(np.concatenate([[times[0]], times[inner], [times[-1]]]))

    def indices_in(self, times, tol=1e-12):
        """Positions of the partition points inside the time grid ``times``."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(times, self.points - tol)
        ok = (idx < times.size) & (np.abs(times[np.minimum(idx, times.size - 1)] - self.points) <= tol)
        if not ok.all():
            raise ValueError("partition is not nested in the path time grid")
        return idx


@dataclass
class QVEstimate:
    """Path-averaged quadratic variation against its reference ``t * theta``.

    ``theta_provenance`` is one of ``"MC"``, ``"quadrature"``, ``"closed-form"``.
    """

    kind: basis.NormKind
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    theta: float | None = None
    theta_se: float = 0.0
    theta_provenance: str = "MC"
    n_paths: int = 0
    terminal: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, kind, times, samples, theta=None, theta_se=0.0, provenance="MC"):
        samples = np.asarray(samples, dtype=float)
        N = samples.shape[0]
        se = samples.std(axis=0, ddof=1) / math.sqrt(N) if N > 1 else np.zeros(samples.shape[1])
        return cls(basis.NormKind.parse(kind), np.asarray(times, dtype=float),
                   samples.mean(axis=0), se, theta, theta_se, provenance, N, samples[:, -1])

    @property
    def reference(self):
        return None if self.theta is None else self.times * self.theta

    def terminal_z(self):
        """(QV(T) - T theta) in units of the combined standard error."""
        T = self.times[-1]
        err = math.hypot(self.se[-1], T * self.theta_se)
        return (self.mean[-1] - T * self.theta) / err

    def slope(self):
        """Least-squares slope of the mean QV against t."""
        return float(np.polyfit(self.times, self.mean, 1)[0])

    def max_deviation(self):
        return float(np.abs(self.mean - self.reference).max())


def increment_norms(coeff_incs, grid, d, kind):
    """Norms of the fields with coefficient increments ``coeff_incs[..., n]``."""
    vals = synthesize_coeffs(coeff_incs, grid, d)
    return basis.field_norms(vals, grid.step, kind)


def partition_qv_paths(path, partition, kind, grid):
    """Cumulative ``sum ||X_{t_j} - X_{t_{j-1}}||**2`` per path; shape ``(P, K+1)``."""
    idx = partition.indices_in(path.times)
    G = path.G[:, idx, :]
    sq = increment_norms(np.diff(G, axis=1), grid, path.d, kind) ** 2
    return np.concatenate([np.zeros((G.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1)


def scalar_qv_partition(path, partition, kind, grid, theta=None, theta_se=0.0,
                        provenance="MC"):
    """Partition quadratic variation averaged over the paths of ``path``."""
    samples = partition_qv_paths(path, partition, kind, grid)
    return QVEstimate.from_samples(kind, partition.points, samples, theta, theta_se, provenance)


def regularized_qv_paths(path, delta, kind, grid):
    """``(1/delta) int_0^t ||X_{s+delta} - X_s||**2 ds`` by left-point sums on the path grid.

    Returns ``(times, values)`` where ``times`` are the grid points ``t`` with
    ``t + delta`` inside the simulated horizon and ``values`` has shape
    ``(P, len(times))``.
    """
    steps = np.diff(path.times)
    h = float(steps[0])
    if not np.allclose(steps, h, rtol=1e-9, atol=0):
        raise ValueError("regularized estimates need a uniform path grid")
    if delta < h * (1 - 1e-9):
        raise ValueError("delta is smaller than the path time step")
    lag = int(round(delta / h))
    if abs(lag * h - delta) > 1e-9 * delta:
        raise ValueError("delta must be an integer multiple of the path time step")
    K = path.times.size - 1 - lag
    if K < 1:
        raise ValueError("path horizon too short for this delta")
    inc = path.G[:, lag:lag + K, :] - path.G[:, :K, :]
    sq = increment_norms(inc, grid, path.d, kind) ** 2
    vals = np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1) * (h / delta)
    return path.times[:K + 1], vals


def regularized_qv(path, delta, kind, grid, theta=None, theta_se=0.0, provenance="MC"):
    times, samples = regularized_qv_paths(path, delta, kind, grid)
    return QVEstimate.from_samples(kind, times, samples, theta, theta_se, provenance)


def theta_samples(spec, kind, M, grid, seed, path_ids):
    """Per-draw ``2 ||sum_i sqrt(lambda_i) xi_i S_i||**2``."""
    n = truncation_size(M, spec.d)
    xi = rng.normal_grid(seed, path_ids, rng.THETA, n, 1)[:, 0, :]
    coeffs = xi * np.sqrt(spec.lambdas(n))
    return 2.0 * increment_norms(coeffs, grid, spec.d, kind) ** 2


def theta_mc(spec, kind, M, N, seed, grid=None, workers=1, chunk_size=4096):
    """Monte Carlo ``theta`` with its standard error."""
    if N < 2:
        raise ValueError("need N >= 2")
    grid = grid or basis.DyadicGrid(M + 1)

    def chunk(ids):
        v = theta_samples(spec, kind, M, grid, seed, ids)
        return np.array([v.sum(), (v * v).sum()])

    s, s2 = accumulate(chunk, N, workers, chunk_size)
    mean = s / N
    var = max(s2 / N - mean * mean, 0.0) * N / (N - 1)
    return float(mean), math.sqrt(var / N)


def expected_abs_product(sx, sy, rho, tol=1e-9):
    """``E|XY|`` for centred jointly normal X, Y with sds ``sx, sy`` and correlation ``rho``."""
    rho = np.asarray(rho, dtype=float)
    excess = np.abs(rho) - 1.0
    if np.any(excess > tol):
        warnings.warn(f"correlation exceeds 1 by {excess.max():.3g}; clamping", RuntimeWarning)
    rho = np.clip(rho, -1.0, 1.0)
    return (2.0 / np.pi) * sx * sy * (rho * np.arcsin(rho) + np.sqrt(1.0 - rho * rho))


def _gl_nodes(depth, order):
    x, w = np.polynomial.legendre.leggauss(order)
    cells = 2**depth
    left = np.arange(cells)[:, None] / cells
    nodes = (left + (x[None, :] + 1) / (2 * cells)).ravel()
    weights = np.tile(w / (2 * cells), cells)
    return nodes, weights


def theta_l1_quadrature(spec, M, quad_depth=None, order=8, block=512):
    """Deterministic ``theta`` for the L1 norm.

    ``theta = 2 sum_{a,b} int int E|g_a(u) g_b(v)| du dv`` for the Gaussian
    field ``g = sum_i sqrt(lambda_i) xi_i S_i``, integrated with composite
    Gauss-Legendre on dyadic cells of depth ``quad_depth``.
    """
    if quad_depth is None:
        quad_depth = M + 3
    if quad_depth < M + 2:
        raise ValueError("quad_depth must be >= M + 2")
    d = spec.d
    n = truncation_size(M, d)
    R = n // d
    lam = spec.lambdas(n).reshape(R, d)
    u, w = _gl_nodes(quad_depth, order)
    T = np.stack([basis.tent_value(r, u) for r in range(1, R + 1)])
    sig = np.sqrt(np.einsum("ra,rq->aq", lam, T * T))
    mean_sig = sig @ w
    total = 0.0
    for a in range(d):
        Ta = T * np.sqrt(lam[:, a])[:, None]
        diag = 0.0
        for q0 in range(0, u.size, block):
            cov = Ta[:, q0:q0 + block].T @ Ta
            ss = np.outer(sig[a, q0:q0 + block], sig[a])
            with np.errstate(invalid="ignore", divide="ignore"):
                rho = np.where(ss > 0, cov / np.where(ss > 0, ss, 1.0), 0.0)
            diag += w[q0:q0 + block] @ expected_abs_product(ss, 1.0, rho) @ w
        total += diag
        for b in range(d):
            if b != a:
                total += (2.0 / np.pi) * mean_sig[a] * mean_sig[b]
    return 2.0 * total


@dataclass
class TensorKernel:
    """Kernel ``values[a, b, p, q] = K_ab(u_p, v_q)`` on a dyadic grid in each variable."""

    values: np.ndarray
    grid: basis.DyadicGrid
    provenance: str = "closed-form"

    @property
    def d(self):
        return self.values.shape[0]

    def transpose(self):
        return TensorKernel(self.values.transpose(1, 0, 3, 2), self.grid, self.provenance)


def kernel_from_coeffs(C, grid, d):
    """Kernel ``sum_{i,i'} C_{i i'} S_i(u) (x) S_{i'}(v)`` from a coefficient matrix."""
    n = C.shape[0]
    R = n // d
    T = basis.tent_matrix(R, grid)
    C4 = C.reshape(R, d, R, d)
    vals = np.einsum("rasb,rp,sq->abpq", C4, T, T, optimize=True)
    return vals


def theta_tensor_closed_form(spec, M, grid):
    """``Theta`` kernel ``2 sum_i lambda_i S_i(u) (x) S_i(v)``."""
    n = truncation_size(M, spec.d)
    C = np.diag(2.0 * spec.lambdas(n))
    vals = kernel_from_coeffs(C, grid, spec.d)
    # BLAS summation order leaves ~1e-16 asymmetry; averaging makes it exact
    vals = 0.5 * (vals + vals.transpose(1, 0, 3, 2))
    return TensorKernel(vals, grid, "closed-form")


def tensor_qv_coeffs(path, delta, t=None):
    """Path-summed ``(h/(t delta)) sum_s dG_s dG_s^T`` with ``dG_s = G(s+delta) - G(s)``."""
    steps = np.diff(path.times)
    h = float(steps[0])
    if not np.allclose(steps, h, rtol=1e-9, atol=0):
        raise ValueError("regularized estimates need a uniform path grid")
    if delta < h * (1 - 1e-9):
        raise ValueError("delta is smaller than the path time step")
    lag = int(round(delta / h))
    if abs(lag * h - delta) > 1e-9 * delta:
        raise ValueError("delta must be an integer multiple of the path time step")
    if t is None:
        t = path.times[-1] - lag * h
    K = int(round(t / h))
    if K + lag > path.times.size - 1:
        raise ValueError("path horizon too short for t + delta")
    inc = path.G[:, lag:lag + K, :] - path.G[:, :K, :]
    flat = inc.reshape(-1, inc.shape[-1])
    return (flat.T @ flat) * (h / (t * delta))


def tensor_qv(path, delta, grid, t=None):
    """Path-averaged tensor quadratic variation kernel divided by ``t``."""
    C = tensor_qv_coeffs(path, delta, t) / path.n_paths
    n = C.shape[0]
    pad = (-n) % path.d
    if pad:
        C = np.pad(C, ((0, pad), (0, pad)))
    return TensorKernel(kernel_from_coeffs(C, grid, path.d), grid, "MC")


def theta_tensor_mc(spec, M, points, N, seed, workers=1, chunk_size=8192):
    """Direct sampling of ``2 E[g(u) (x) g(v)]`` at node pairs ``points = [(u, v), ...]``.

    Returns the mean and standard error per point, shape ``(len(points), d, d)``.
    """
    d = spec.d
    n = truncation_size(M, d)
    R = n // d
    pts = np.asarray(points, dtype=float)
    Tu = np.stack([basis.tent_value(r, pts[:, 0]) for r in range(1, R + 1)])
    Tv = np.stack([basis.tent_value(r, pts[:, 1]) for r in range(1, R + 1)])
    root = np.sqrt(spec.lambdas(n)).reshape(R, d)

    def chunk(ids):
        xi = rng.normal_grid(seed, ids, rng.TENSOR_XI, n, 1)[:, 0, :].reshape(-1, R, d) * root
        gu = np.einsum("pra,rk->pka", xi, Tu)
        gv = np.einsum("pra,rk->pka", xi, Tv)
        prod = 2.0 * gu[:, :, :, None] * gv[:, :, None, :]
        return prod.sum(axis=0), (prod * prod).sum(axis=0)

    s, s2 = accumulate(chunk, N, workers, chunk_size)
    mean = s / N
    var = np.maximum(s2 / N - mean * mean, 0.0) * N / (N - 1)
    return mean, np.sqrt(var / N)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@nb.njit(cache=True)
def _h(a, b):
    if a * b >= 0.0:
        return 0.5 * (abs(a) + abs(b))
    return (a * a + b * b) / (2.0 * (abs(a) + abs(b)))


@nb.njit(cache=True)
def _abs_bilinear_unit(k00, k10, k01, k11, glx, glw):
    # integral over [0,1]^2 of |bilinear interpolant|; g0, g1 are the x=0, x=1 edges
    a0, b0 = k00, k01 - k00
    a1, b1 = k10, k11 - k10
    cuts = np.empty(4)
    nc = 0
    cuts[nc] = 0.0
    nc += 1
    for a, b in ((a0, b0), (a1, b1)):
        if b != 0.0:
            y = -a / b
            if 0.0 < y < 1.0:
                cuts[nc] = y
                nc += 1
    cuts[nc] = 1.0
    nc += 1
    cuts[:nc].sort()
    total = 0.0
    for c in range(nc - 1):
        y1, y2 = cuts[c], cuts[c + 1]
        if y2 <= y1:
            continue
        ym = 0.5 * (y1 + y2)
        g0m = a0 + b0 * ym
        g1m = a1 + b1 * ym
        if g0m * g1m >= 0.0:
            total += (y2 - y1) * 0.5 * abs(g0m + g1m)
            continue
        p, q = a0 - a1, b0 - b1
        z1, z2 = p + q * y1, p + q * y2
        zmax = max(abs(z1), abs(z2))
        if abs(z2 - z1) < 1e-6 * zmax or min(abs(z1), abs(z2)) < 1e-12 * zmax:
            acc = 0.0
            for k in range(glx.shape[0]):
                y = ym + 0.5 * (y2 - y1) * glx[k]
                acc += glw[k] * _h(a0 + b0 * y, a1 + b1 * y)
            total += 0.5 * (y2 - y1) * acc
            continue
        # g0, g1 as affine functions of z = g0 - g1; |g0| + |g1| = |z| on this piece
        c0 = a0 - b0 * p / q
        e0 = b0 / q
        c1 = a1 - b1 * p / q
        e1 = b1 / q
        A = e0 * e0 + e1 * e1
        B = 2.0 * (c0 * e0 + c1 * e1)
        C = c0 * c0 + c1 * c1
        sgn = 1.0 if z1 + z2 > 0.0 else -1.0
        val = A * (z2 * z2 - z1 * z1) / 2.0 + B * (z2 - z1) + C * math.log(z2 / z1)
        total += val / (2.0 * sgn * q)
    return total


@nb.njit(cache=True)
def _abs_bilinear_grid(K, wx, wy, glx, glw):
    total = 0.0
    for p in range(K.shape[0] - 1):
        for q in range(K.shape[1] - 1):
            total += _abs_bilinear_unit(K[p, q], K[p + 1, q], K[p, q + 1], K[p + 1, q + 1],
                                        glx, glw)
    return total * wx * wy


def pi_norm_l1(kernel):
    """``sum_ab int int |K_ab(u, v)| du dv`` for a piecewise-bilinear kernel, exactly."""
    vals = np.ascontiguousarray(kernel.values, dtype=float)
    h = kernel.grid.step
    return float(sum(_abs_bilinear_grid(vals[a, b], h, h, _GL_X, _GL_W)
                     for a in range(vals.shape[0]) for b in range(vals.shape[1])))
