"""Exact simulation of the OU coordinate ensemble and the field it drives.

Coordinate ``i`` is the time-changed OU process ``G_i(lambda_i t)``, an
ordinary OU process with rate ``lambda_i`` and stationary law N(0, 1).  Over
a step of length ``u`` it moves by the exact transition
``g e^{-lambda u} + sqrt(1 - e^{-2 lambda u}) xi``.  The field is
``X_t = sum_i G_i(lambda_i t) S_i``.

The martingale part ``Y_i = sqrt(2 lambda_i) B_i`` is sampled jointly with the
OU step.  The Gaussian vector (OU noise, increment of B) over one step has
correlation ``rho`` with ``rho**2 = 2 tanh(lambda u / 2) / (lambda u)``.
"""

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from . import basis, rng
from .parallel import map_paths

INITIAL_KINDS = ("zero", "stationary")


def ou_step(g, lam, u, xi):
    """Exact OU transition of ``G(lambda .)`` over a time step ``u``."""
    if lam <= 0 or u < 0:
        raise ValueError("need lambda > 0 and u >= 0")
    return g * math.exp(-lam * u) + math.sqrt(-math.expm1(-2.0 * lam * u)) * xi


@nb.njit(inline="always")
def _y_loading(lam, u):
    # (a, b) with dY = a xi1 + b xi2, a = sqrt(2 lam u) rho
    x = lam * u
    if x <= 0.0:
        return 0.0, 0.0
    rho2 = 2.0 * math.tanh(0.5 * x) / x if x > 1e-8 else 1.0 - x * x / 12.0
    sd = math.sqrt(2.0 * x)
    return sd * math.sqrt(rho2), sd * math.sqrt(max(0.0, 1.0 - rho2))


@nb.njit(cache=True, nogil=True)
def _simulate(seed, path_ids, lam, times, g0, stationary, want_y, G, Y):
    P = path_ids.shape[0]
    K = times.shape[0] - 1
    n = lam.shape[0]
    ou_base = np.uint64(rng.OU_NOISE) << np.uint64(32)
    y_base = np.uint64(rng.Y_NOISE) << np.uint64(32)
    init_base = np.uint64(rng.INITIAL) << np.uint64(32)
    for p in range(P):
        pid = path_ids[p]
        for i in range(n):
            if stationary:
                g = rng.normal_at(rng.stream_key(seed, pid, init_base | np.uint64(i)), 0)
            else:
                g = g0[p, i]
            G[p, 0, i] = g
            k1 = rng.stream_key(seed, pid, ou_base | np.uint64(i))
            if want_y:
                k2 = rng.stream_key(seed, pid, y_base | np.uint64(i))
                Y[p, 0, i] = 0.0
            last_u = -1.0
            e = s = a = b = 0.0
            for c in range(K):
                u = times[c + 1] - times[c]
                if u != last_u:
                    # uniform grids pay for the transcendental functions once
                    e = math.exp(-lam[i] * u)
                    s = math.sqrt(-math.expm1(-2.0 * lam[i] * u))
                    a, b = _y_loading(lam[i], u)
                    last_u = u
                xi = rng.normal_at(k1, c)
                g = g * e + s * xi
                G[p, c + 1, i] = g
                if want_y:
                    Y[p, c + 1, i] = Y[p, c, i] + a * xi + b * rng.normal_at(k2, c)


@dataclass
class FieldPath:
    """A batch of simulated paths.

    Attributes:
        times: time grid ``t_0 = 0 < ... < t_K``.
        G: coordinates ``G_i(lambda_i t_j)``, shape ``(P, K+1, n)``.
        lam: ``lambda_1 .. lambda_n``.
        d: dimension of the field's values.
        Y: martingale parts on the same grid when simulated with noise.
        path_ids: ids of the RNG streams behind each path.
    """

    times: np.ndarray
    G: np.ndarray
    lam: np.ndarray
    d: int
    Y: np.ndarray | None = None
    path_ids: np.ndarray | None = None

    @property
    def n(self):
        return self.G.shape[-1]

    @property
    def n_paths(self):
        return self.G.shape[0]

    @property
    def level(self):
        return basis.deepest_level(self.n, self.d)

    @property
    def g0(self):
        return self.G[:, 0, :]

    def field(self, j_time, grid):
        """Field values at time index ``j_time`` for every path; shape ``(P, Q, d)``."""
        return synthesize_coeffs(self.G[:, j_time, :], grid, self.d)

    def subsample(self, stride):
        """Keep every ``stride``-th time point (exact, since steps are exact)."""
        Y = None if self.Y is None else self.Y[:, ::stride]
        return FieldPath(self.times[::stride], self.G[:, ::stride], self.lam, self.d,
                         Y, self.path_ids)


def truncation_size(M, d):
    """Number of coordinates ``d * 2**(M+1)`` covering levels root..M."""
    return d * 2 ** (M + 1)


def resolve_initials(initials, n):
    """Normalize an initial-condition request to ``"stationary"`` or a length-``n`` array.

    Accepts ``None``/``"zero"``, ``"stationary"``, a scalar (every coordinate)
    or a sequence (zero-padded to ``n``).
    """
    if initials is None or (isinstance(initials, str) and initials == "zero"):
        return np.zeros(n)
    if isinstance(initials, str):
        if initials != "stationary":
            raise ValueError(f"unknown initial condition {initials!r}")
        return "stationary"
    arr = np.asarray(initials, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.ndim == 1:
        if arr.size > n:
            return arr[:n].copy()
        return np.concatenate([arr, np.zeros(n - arr.size)])
    return arr


def _check_times(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or times[0] != 0.0:
        raise ValueError("time grid must be one-dimensional and start at 0")
    if np.any(np.diff(times) < 0):
        raise ValueError("time grid must be nondecreasing")
    return times


def simulate_ensemble(spec, initials, time_grid, seed, n=None, path_ids=(0,),
                      with_noise=False):
    """Simulate coordinates ``G_i(lambda_i t)`` exactly on ``time_grid``.

    Args:
        spec: SpectrumSpec, or an array of rates ``lambda_1 .. lambda_n``.
        initials: see :func:`resolve_initials`; a ``(P, n)`` array gives
            per-path starts.
        time_grid: nondecreasing times starting at 0.
        seed: 64-bit seed.
        n: number of coordinates (defaults to the length of ``initials``).
        path_ids: stream ids of the paths to simulate.
        with_noise: also build the coupled martingale parts ``Y``.

    Returns:
        FieldPath for the requested paths.
    """
    times = _check_times(time_grid)
    ids = np.atleast_1d(np.asarray(path_ids, dtype=np.uint64))
    if n is None:
        if isinstance(initials, (str, type(None))) or np.ndim(initials) == 0:
            raise ValueError("n is required unless initials is an array")
        n = np.shape(initials)[-1]
    lam, d = _rates(spec, n)
    init = resolve_initials(initials, n)
    stationary = isinstance(init, str)
    g0 = np.zeros((ids.size, n)) if stationary else np.broadcast_to(init, (ids.size, n))
    g0 = np.ascontiguousarray(g0, dtype=float)
    G = np.empty((ids.size, times.size, n))
    Y = np.empty_like(G) if with_noise else np.empty((1, 1, 1))
    _simulate(np.uint64(seed), ids, lam, times, g0, stationary, with_noise, G, Y)
    return FieldPath(times, G, lam, d, Y if with_noise else None, ids)


def _rates(spec, n):
    if hasattr(spec, "lambdas"):
        return np.ascontiguousarray(spec.lambdas(n), dtype=float), spec.d
    lam = np.asarray(spec, dtype=float)
    if lam.size < n:
        raise ValueError("not enough rates for the requested coordinates")
    return np.ascontiguousarray(lam[:n]), 1


def synthesize_coeffs(coeffs, grid, d):
    """Field values ``sum_i coeffs_i S_i`` on ``grid``; coefficients are zero-padded to whole Haar blocks."""
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[-1]
    pad = (-n) % d
    if pad:
        coeffs = np.concatenate([coeffs, np.zeros(coeffs.shape[:-1] + (pad,))], axis=-1)
    return basis.synthesize(coeffs, grid, d)


def synthesize_field(path, j_time, grid, p=0):
    """Field of path ``p`` at time index ``j_time`` as a GridField."""
    return basis.GridField(synthesize_coeffs(path.G[p, j_time], grid, path.d), grid)


def simulate_Y_increments(spec, partition, n, seed, path_ids=(0,)):
    """Independent N(0, 2 lambda_i dt_j) increments; shape ``(P, K, n)``."""
    times = _check_times(partition)
    lam, _ = _rates(spec, n)
    dt = np.diff(times)
    xi = rng.normal_grid(seed, path_ids, rng.Y_NOISE, n, dt.size)
    return xi * np.sqrt(2.0 * lam[None, None, :] * dt[None, :, None])


def synthesize_A(spec, initials, t):
    """Deterministic part ``e^{-lambda_i t} G_i(0)``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    g0 = np.asarray(initials, dtype=float)
    lam, _ = _rates(spec, g0.shape[-1])
    return g0 * np.exp(-lam * t)


@dataclass
class DecompositionSample:
    """``X = Y + Z + A`` in coordinates on a coarse grid.

    All arrays have shape ``(P, K+1, n)``.  ``Z`` is the residual
    ``X - Y - A``; ``Z_quad`` is the independent trapezoid quadrature of
    ``-lambda int (G(lambda u) - e^{-lambda u} G(0)) du`` on the fine grid.
    """

    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    A: np.ndarray
    Z_quad: np.ndarray


def decompose_path(path, substeps=16):
    """Split a path simulated with noise into martingale, drift and initial parts.

    Args:
        path: FieldPath carrying ``Y``; its grid is treated as the fine grid.
        substeps: fine steps per coarse cell.

    Returns:
        DecompositionSample on every ``substeps``-th time point.
    """
    if path.Y is None:
        raise ValueError("path has no noise record; simulate with with_noise=True")
    K = path.times.size - 1
    if K % substeps:
        raise ValueError("substeps must divide the number of fine steps")
    lam = path.lam
    t = path.times
    drift = path.G - np.exp(-lam[None, None, :] * t[None, :, None]) * path.g0[:, None, :]
    dt = np.diff(t)[None, :, None]
    cells = 0.5 * (drift[:, 1:] + drift[:, :-1]) * dt
    zq = np.concatenate([np.zeros_like(drift[:, :1]), -lam * np.cumsum(cells, axis=1)], axis=1)
    idx = np.arange(0, K + 1, substeps)
    X = path.G[:, idx]
    Y = path.Y[:, idx]
    A = np.exp(-lam[None, None, :] * t[idx][None, :, None]) * path.g0[:, None, :]
    return DecompositionSample(t[idx], X, Y, X - Y - A, A, zq[:, idx])


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class MomentScan:
    t: float
    u: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    slope: float


def fourth_moment_scan(spec, initials, t, u_list, N, seed, M, grid, workers=1,
                       kind=basis.NormKind.SUP, chunk_size=256):
    """Monte Carlo ``E||X_{t+u} - X_t||**4`` for each ``u`` plus the log-log slope.

    The times ``t + u`` are visited on one path, so estimates for different
    ``u`` share their randomness.
    """
    u = np.sort(np.asarray(u_list, dtype=float))
    if np.any(u <= 0) or np.any(u > 1):
        raise ValueError("u values must lie in (0, 1]")
    n = truncation_size(M, spec.d)
    grid.require(basis.deepest_level(n, spec.d))
    times = np.concatenate([[0.0], [t] if t > 0 else [], t + u])
    base = 1 if t > 0 else 0

    def chunk(ids):
        path = simulate_ensemble(spec, initials, times, seed, n=n, path_ids=ids)
        dX = path.G[:, base + 1:, :] - path.G[:, base:base + 1, :]
        vals = synthesize_coeffs(dX, grid, spec.d)
        return basis.field_norms(vals, grid.step, kind) ** 4

    m4 = map_paths(chunk, N, workers, chunk_size)
    mean = m4.mean(axis=0)
    se = m4.std(axis=0, ddof=1) / math.sqrt(N)
    return MomentScan(float(t), u, mean, se, loglog_slope(u, mean))

