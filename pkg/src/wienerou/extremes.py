"""Running maxima of OU coordinates: tail integral, norming constants, Gumbel checks.

For one coordinate with rate ``lambda`` started at zero drift,
``V(t) = G(lambda t) - G(0) e^{-lambda t} = e^{-lambda t} W(e^{2 lambda t} - 1)``.
Its running maximum over ``[0, T]`` has the tail ``Fbar`` below, asymptotically.

Running maxima on a grid of ``2**depth`` steps are computed by refining
``W`` as a Brownian bridge in the clock ``s = e^{2 lambda t} - 1``.  Each
grid node has a fixed random-stream counter, so grids of different depth are
nested and share their values.  Refinement is lazy: an interval is skipped
when the chance that the bridge crosses the current record there is below
``eps``.
"""

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import stats

from . import rng
from .parallel import accumulate, map_paths

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class QuadratureError(RuntimeError):
    """The tail quadrature did not reach its tolerance."""


class BracketError(ValueError):
    """No sign change found while bracketing a norming constant."""


@dataclass(frozen=True)
class TailModel:
    lam: float
    T: float = 1.0
    panels: int = 2048
    rtol: float = 1e-9

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("tail computations assume lambda >= 1")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def S(self):
        return math.expm1(2.0 * self.lam * self.T)


def _nodes(model, x, panels):
    # s = e^v, uniform panels in v; below s = x^2/1600 the argument of phi
    # exceeds 40 and the integrand underflows, so the range starts there
    lo = 2.0 * math.log(x) - math.log(1600.0)
    hi = math.log(model.S)
    if lo >= hi:
        return np.empty(0), np.empty(0)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    v = (edges[:-1, None] + half[:, None] * (_GL_X[None, :] + 1.0)).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    s = np.exp(v)
    return s, w * s


def _with_error(model, x, fn):
    coarse = fn(*_nodes(model, x, model.panels // 2))
    fine = fn(*_nodes(model, x, model.panels))
    err = abs(fine - coarse)
    if err > model.rtol * abs(fine) + 1e-300:
        raise QuadratureError(f"tail quadrature error estimate {err:.3g} exceeds "
                              f"tolerance (value {fine:.6g})")
    return fine, err


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def tail_Fbar(model, x, return_error=False):
    """``int_0^S (1/2s) z phi(z) ds + Phibar(x sqrt((S+1)/S))`` with ``z = x sqrt((s+1)/s)``."""
    if x <= 0:
        raise ValueError("x must be positive")

    def integral(s, w):
        z = x * np.sqrt((s + 1.0) / s)
        return float(w @ (z * _phi(z) / (2.0 * s)))

    val, err = _with_error(model, x, integral)
    S = model.S
    val += float(stats.norm.sf(x * math.sqrt((S + 1.0) / S)))
    return (val, err) if return_error else val


def _mu_density(s):
    return (s + 2.0) / (2.0 * np.sqrt(s) * (s + 1.0) ** 1.5)


def _psi_moments(model, x, powers, panels=None):
    s, w = _nodes(model, x, panels or model.panels)
    r = (s + 1.0) / s
    base = w * _phi(x * np.sqrt(r)) * _mu_density(s)
    return [float(base @ r**k) for k in powers]


def tail_Fbar_prime(model, x):
    """``Fbar'(x) = int psi (s+1)/s mu(ds) - x^2 int psi ((s+1)/s)^2 mu(ds)``."""
    if x <= 0:
        raise ValueError("x must be positive")
    m1, m2 = _psi_moments(model, x, (1, 2))
    c1, c2 = _psi_moments(model, x, (1, 2), model.panels // 2)
    fine, coarse = m1 - x * x * m2, c1 - x * x * c2
    if abs(fine - coarse) > model.rtol * abs(fine) + 1e-300:
        raise QuadratureError("tail derivative quadrature did not converge")
    return fine


def tail_Fbar_second(model, x):
    """``Fbar''(x) = -3x int psi r^2 mu(ds) + x^3 int psi r^3 mu(ds)``, ``r = (s+1)/s``."""
    m2, m3 = _psi_moments(model, x, (2, 3))
    return -3.0 * x * m2 + x**3 * m3


def von_mises_ratio(model, x, h=1e-4):
    """``Fbar Fbar'' / Fbar'^2`` with ``Fbar''`` from central differences of ``Fbar'``."""
    second = (tail_Fbar_prime(model, x + h) - tail_Fbar_prime(model, x - h)) / (2 * h)
    return tail_Fbar(model, x) * second / tail_Fbar_prime(model, x) ** 2


@dataclass(frozen=True)
class NormingConstants:
    n: int
    c: float
    d: float
    residual: float


def norming_constants(model, n, x_max=50.0, rtol=1e-10):
    """``d_n = Fbar^{-1}(1/n)`` by bisection and ``c_n = Fbar(d_n) / (-Fbar'(d_n))``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    target = 1.0 / n
    lo, hi = 1e-6, 1.0
    if tail_Fbar(model, lo) <= target:
        raise BracketError(f"Fbar stays below 1/{n} on (0, x_max]; no quantile exists")
    while tail_Fbar(model, hi) > target:
        lo, hi = hi, 2.0 * hi
        if hi > x_max:
            raise BracketError(f"could not bracket 1/{n} below x = {x_max}")
    d = 0.5 * (lo + hi)
    for _ in range(200):
        d = 0.5 * (lo + hi)
        f = tail_Fbar(model, d)
        if abs(f - target) < rtol * target:
            break
        if f > target:
            lo = d
        else:
            hi = d
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    fb = tail_Fbar(model, d)
    return NormingConstants(int(n), fb / -tail_Fbar_prime(model, d), d, abs(fb - target) / target)


@nb.njit(inline="always")
def _node_id(level, q):
    # endpoint t = T is node 1; odd q at level >= 1 gets 2**(level-1) + (q-1)/2 + 1
    if level == 0:
        return 1
    return (1 << (level - 1)) + (q - 1) // 2 + 1


@nb.njit(cache=True, nogil=True)
def _bridge_tables(clock, levels, wgt, sdv):
    # interpolation weight and conditional sd of every coarse midpoint
    m = 1 << levels
    sdv[m] = math.sqrt(clock[m])
    for lv in range(1, levels + 1):
        stride = m >> lv
        for q in range(1, 1 << lv, 2):
            a, b, mid = (q - 1) * stride, (q + 1) * stride, q * stride
            sa, sb, sm = clock[a], clock[b], clock[mid]
            wgt[mid] = (sm - sa) / (sb - sa)
            sdv[mid] = math.sqrt((sm - sa) * (sb - sm) / (sb - sa))


@nb.njit(cache=True, nogil=True)
def _coarse_path(key, levels, W, wgt, sdv):
    m = 1 << levels
    W[0] = 0.0
    W[m] = sdv[m] * rng.normal_at(key, 1)
    for lv in range(1, levels + 1):
        stride = m >> lv
        for q in range(1, 1 << lv, 2):
            a, b, mid = (q - 1) * stride, (q + 1) * stride, q * stride
            W[mid] = W[a] + wgt[mid] * (W[b] - W[a]) + sdv[mid] * rng.normal_at(
                key, _node_id(lv, q))


@nb.njit(cache=True, nogil=True)
def _refine_max(key, lam, T, depth, level, q, Wa, Wb, R, log_inv_eps, prune,
                stack_l, stack_q, stack_a, stack_b):
    # explicit-stack DFS below the cell [q, q+1] * 2**-level * T
    stack_l[0], stack_q[0], stack_a[0], stack_b[0] = level, q, Wa, Wb
    top = 1
    while top > 0:
        top -= 1
        lv, qq, wa, wb = stack_l[top], stack_q[top], stack_a[top], stack_b[top]
        if lv >= depth:
            continue
        inv = 1.0 / (1 << lv)
        sa = math.expm1(2.0 * lam * T * qq * inv)
        sb = math.expm1(2.0 * lam * T * (qq + 1) * inv)
        if prune:
            ba = R * math.sqrt(sa + 1.0)
            bb = R * math.sqrt(sb + 1.0)
            if wa < ba and wb < bb and 2.0 * (ba - wa) * (bb - wb) > log_inv_eps * (sb - sa):
                continue
        qm = 2 * qq + 1
        sm = math.expm1(2.0 * lam * T * qm * 0.5 * inv)
        mean = wa + (sm - sa) / (sb - sa) * (wb - wa)
        sd = math.sqrt((sm - sa) * (sb - sm) / (sb - sa))
        wm = mean + sd * rng.normal_at(key, _node_id(lv + 1, qm))
        v = wm / math.sqrt(sm + 1.0)
        if v > R:
            R = v
        stack_l[top], stack_q[top], stack_a[top], stack_b[top] = lv + 1, 2 * qq + 1, wm, wb
        top += 1
        stack_l[top], stack_q[top], stack_a[top], stack_b[top] = lv + 1, 2 * qq, wa, wm
        top += 1
    return R


@nb.njit(cache=True, nogil=True)
def _group_maxima(seed, sample_ids, stream_ids, lams, T, depth, coarse, log_inv_eps, prune,
                  out):
    # out[b] = max over the group's paths and grid times of V; V(0) = 0 is included
    G = lams.shape[0]
    lv0 = min(coarse, depth)
    m = 1 << lv0
    W = np.empty((G, m + 1))
    clock = np.empty((G, m + 1))
    scale = np.empty((G, m + 1))
    wgt = np.empty((G, m + 1))
    sdv = np.empty((G, m + 1))
    for g in range(G):
        for q in range(m + 1):
            clock[g, q] = math.expm1(2.0 * lams[g] * T * q / m)
            scale[g, q] = 1.0 / math.sqrt(clock[g, q] + 1.0)
        _bridge_tables(clock[g], lv0, wgt[g], sdv[g])
    stack_l = np.empty(depth + 2, dtype=np.int64)
    stack_q = np.empty(depth + 2, dtype=np.int64)
    stack_a = np.empty(depth + 2)
    stack_b = np.empty(depth + 2)
    base = np.uint64(rng.LEVY) << np.uint64(32)
    for b in range(sample_ids.shape[0]):
        R = 0.0
        for g in range(G):
            key = rng.stream_key(seed, sample_ids[b], base | stream_ids[g])
            _coarse_path(key, lv0, W[g], wgt[g], sdv[g])
            for q in range(1, m + 1):
                v = W[g, q] * scale[g, q]
                if v > R:
                    R = v
        for g in range(G):
            key = rng.stream_key(seed, sample_ids[b], base | stream_ids[g])
            for q in range(m):
                if lv0 >= depth:
                    break
                if prune:
                    # same test as inside _refine_max, done here to skip the call
                    ba = R / scale[g, q]
                    bb = R / scale[g, q + 1]
                    wa, wb = W[g, q], W[g, q + 1]
                    if (wa < ba and wb < bb and 2.0 * (ba - wa) * (bb - wb)
                            > log_inv_eps * (clock[g, q + 1] - clock[g, q])):
                        continue
                R = _refine_max(key, lams[g], T, depth, lv0, q, W[g, q], W[g, q + 1], R,
                                log_inv_eps, prune, stack_l, stack_q, stack_a, stack_b)
        out[b] = R


def running_maxima(seed, sample_ids, lams, T, depth=12, stream_ids=None, coarse=6,
                   eps=1e-15, lazy=True):
    """Max over a group of paths of their running maxima on ``2**depth`` grid steps.

    Args:
        seed: 64-bit seed.
        sample_ids: one independent group per id.
        lams: rate of each path in the group.
        T: horizon.
        depth: grid depth; grids are nested across depths.
        stream_ids: per-path stream indices (default ``0..G-1``).
        coarse: depth evaluated for every path before lazy refinement.
        eps: per-interval crossing probability below which refinement stops.
        lazy: refine every interval when False (reference implementation).
    """
    ids = np.atleast_1d(np.asarray(sample_ids, dtype=np.uint64))
    lams = np.ascontiguousarray(lams, dtype=float)
    if stream_ids is None:
        stream_ids = np.arange(lams.size)
    streams = np.ascontiguousarray(stream_ids, dtype=np.uint64)
    out = np.empty(ids.size)
    _group_maxima(np.uint64(seed), ids, streams, lams, float(T), int(depth), int(coarse),
                  -math.log(eps), bool(lazy), out)
    return out


def simulate_maxima(lams, T, N, seed, depth=12, stream_ids=None, workers=1, chunk_size=64):
    """``N`` independent group maxima (see :func:`running_maxima`)."""
    return map_paths(lambda ids: running_maxima(seed, ids, lams, T, depth, stream_ids),
                     N, workers, chunk_size)


@dataclass
class GumbelReport:
    n: int
    n_samples: int
    ks: float
    ks_pvalue: float
    median: float
    c_n: float
    d_n: float


def gumbel_convergence_check(model, n, N, seed, depth=12, workers=1):
    """KS distance between ``(M^(n) - d_n)/c_n`` and the standard Gumbel law."""
    if n < 2 or N < 2:
        raise ValueError("need n >= 2 and N >= 2")
    nc = norming_constants(model, n)
    M = simulate_maxima(np.full(n, model.lam), model.T, N, seed, depth, workers=workers)
    z = (M - nc.d) / nc.c
    ks = stats.kstest(z, stats.gumbel_r.cdf)
    return GumbelReport(int(n), int(N), float(ks.statistic), float(ks.pvalue),
                        float(np.median(z)), nc.c, nc.d)


def level_indices(spec, m):
    """Global indices ``d 2**m < i <= d 2**(m+1)``."""
    return np.arange(spec.d * 2**m + 1, spec.d * 2 ** (m + 1) + 1)


@dataclass
class MomentEstimate:
    mean: float
    se: float
    shape: float

    @property
    def ratio(self):
        return self.mean / self.shape


def max_moment_estimate(spec, m, T, k, N, seed, depth=12, workers=1):
    """``E[(G*_{m,T})**k]`` with the bound shape ``(ln lambda_{d 2**(m+1)})**(k/2) + m**(k/2)``."""
    if not spec.appendix_ok:
        raise ValueError("max-moment estimates assume lambda_1 >= 1")
    if k not in (1, 2, 3, 4):
        raise ValueError("k must be 1, 2, 3 or 4")
    idx = level_indices(spec, m)
    lam_all = spec.lambdas(int(idx[-1]))
    lams = lam_all[idx - 1]
    M = simulate_maxima(lams, T, N, seed, depth, stream_ids=idx, workers=workers)
    v = M**k
    shape = math.log(lam_all[-1]) ** (k / 2) + m ** (k / 2)
    return MomentEstimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(N)), shape)


@nb.njit(cache=True, nogil=True)
def _abs_max_batch(seed, ids, n, k, out):
    base = np.uint64(rng.GAUSS_MAX) << np.uint64(32)
    for b in range(ids.shape[0]):
        key = rng.stream_key(seed, ids[b], base)
        best = 0.0
        for i in range(n):
            v = abs(rng.normal_at(key, i))
            if v > best:
                best = v
        out[b] = best**k


@dataclass
class GaussMaxEstimate:
    n: int
    k: int
    mean: float
    se: float

    @property
    def ratio_log(self):
        """Estimate over ``(ln n)**(k/2)``."""
        return self.mean / math.log(self.n) ** (self.k / 2)


def gaussian_max_moment(n, k, N, seed, workers=1, chunk_size=512):
    """``E[max_{i<=n} |xi_i|**k]`` over ``N`` independent batches."""
    if n < 2:
        raise ValueError("n must be >= 2")

    def chunk(ids):
        out = np.empty(ids.size)
        _abs_max_batch(np.uint64(seed), ids, int(n), float(k), out)
        return np.array([out.sum(), (out * out).sum()])

    s, s2 = accumulate(chunk, N, workers, chunk_size)
    mean = s / N
    var = max(s2 / N - mean * mean, 0.0) * N / (N - 1)
    return GaussMaxEstimate(int(n), int(k), float(mean), math.sqrt(var / N))
