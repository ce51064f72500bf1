"""Mehler semigroup, Dirichlet form and the cylindrical Ito formula.

Everything here works in coordinates: under Wiener measure the pairings
``<S_i, gamma>`` are iid N(0, 1), and along the process they are the OU
coordinates ``G_i(lambda_i t)``.  A cylindrical function only sees its first
``k`` coordinates.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from . import basis, rng
from .ou_field import resolve_initials, simulate_ensemble, synthesize_coeffs
from .parallel import accumulate


@dataclass(frozen=True)
class CylindricalFn:
    """``f(s; x_1..x_k)`` with caller-supplied partial derivatives.

    All callbacks take ``(s, x)`` with ``x`` of shape ``(..., k)`` and must be
    stateless.  ``grad`` and ``hess_diag`` return shape ``(..., k)``.
    """

    name: str
    k: int
    f: object
    grad: object
    hess_diag: object
    ds: object = None
    polynomial_growth: bool = True

    def __call__(self, s, x):
        return self.f(s, x)

    def time_partial(self, s, x):
        if self.ds is None:
            return np.zeros(np.shape(x)[:-1])
        return self.ds(s, x)

    def validate(self, seed=0, n_points=20, step=1e-4, rtol=1e-5):
        """Compare the supplied partials with central differences at random points.

        Raises:
            ValueError: naming the first partial that disagrees.
        """
        pts = rng.normals(seed, np.arange(n_points), rng.stream_id(rng.EXPERIMENT, 7), self.k + 1)
        for row in pts:
            s, x = 0.5 + 0.25 * math.tanh(row[0]), row[1:]
            f0 = float(self.f(s, x))
            scale = 1.0 + abs(f0)
            checks = []
            for i in range(self.k):
                e = np.zeros(self.k)
                e[i] = step
                fp, fm = float(self.f(s, x + e)), float(self.f(s, x - e))
                checks.append((f"d/dx{i + 1}", (fp - fm) / (2 * step), self.grad(s, x)[i]))
                checks.append((f"d2/dx{i + 1}2", (fp - 2 * f0 + fm) / step**2,
                               self.hess_diag(s, x)[i]))
            fs = (float(self.f(s + step, x)) - float(self.f(s - step, x))) / (2 * step)
            checks.append(("d/ds", fs, float(self.time_partial(s, x))))
            for label, fd, given in checks:
                if abs(fd - given) > rtol * max(scale, abs(given)) + 10 * step**2 * scale:
                    raise ValueError(
                        f"{self.name}: supplied {label} = {given:.8g} but finite "
                        f"differences give {fd:.8g} at x = {x}")
        return self


def _zeros_like_x(s, x):
    return np.zeros(np.shape(x))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _catalog():
    def sig_grad(s, x):
        a, b = _sigmoid(x[..., 0]), _sigmoid(x[..., 1])
        return np.stack([a * (1 - a) * b, a * b * (1 - b)], axis=-1)

    def sig_hess(s, x):
        a, b = _sigmoid(x[..., 0]), _sigmoid(x[..., 1])
        return np.stack([a * (1 - a) * (1 - 2 * a) * b, a * b * (1 - b) * (1 - 2 * b)], axis=-1)

    fns = [
        CylindricalFn("constant", 1, lambda s, x: np.ones(np.shape(x)[:-1]),
                      _zeros_like_x, _zeros_like_x),
        CylindricalFn("linear", 1, lambda s, x: x[..., 0] + 0.0,
                      lambda s, x: np.ones(np.shape(x)), _zeros_like_x),
        CylindricalFn("quadratic", 1, lambda s, x: x[..., 0] ** 2,
                      lambda s, x: 2 * x, lambda s, x: np.full(np.shape(x), 2.0)),
        CylindricalFn("sigmoid_product", 2,
                      lambda s, x: _sigmoid(x[..., 0]) * _sigmoid(x[..., 1]),
                      sig_grad, sig_hess, polynomial_growth=False),
        CylindricalFn("trig_poly", 2,
                      lambda s, x: np.sin(x[..., 0]) + 0.5 * np.cos(2 * x[..., 1]),
                      lambda s, x: np.stack([np.cos(x[..., 0]), -np.sin(2 * x[..., 1])], -1),
                      lambda s, x: np.stack([-np.sin(x[..., 0]), -2 * np.cos(2 * x[..., 1])], -1),
                      polynomial_growth=False),
        CylindricalFn("time_linear", 1, lambda s, x: s * x[..., 0],
                      lambda s, x: np.broadcast_to(np.asarray(s, float)[..., None], np.shape(x)) + 0.0,
                      _zeros_like_x, ds=lambda s, x: x[..., 0] + 0.0),
    ]
    return {fn.name: fn for fn in fns}


CATALOG = _catalog()


def get_function(name):
    try:
        return CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown cylindrical function {name!r}; "
                         f"choose from {sorted(CATALOG)}") from None


@dataclass(frozen=True)
class MehlerSample:
    """Contraction ``e^{-lambda_i t}`` and noise scale ``sqrt(1 - e^{-2 lambda_i t})``."""

    t: float
    contraction: np.ndarray
    scale: np.ndarray

    @classmethod
    def at(cls, lam, t):
        lam = np.asarray(lam, dtype=float)
        return cls(float(t), np.exp(-lam * t), np.sqrt(-np.expm1(-2.0 * lam * t)))

    def apply(self, x0, xi):
        return x0 * self.contraction + self.scale * xi


def _mean_se(s, s2, N):
    mean = s / N
    var = max(s2 / N - mean * mean, 0.0) * N / max(N - 1, 1)
    return float(mean), math.sqrt(var / N)


def _initial_coords(initials, k):
    init = resolve_initials(initials, k)
    if isinstance(init, str):
        raise ValueError("Mehler estimates need fixed initial coordinates")
    return np.asarray(init, dtype=float)[:k]


def mehler_expectation(F, initials, spec, t, N, seed, workers=1, chunk_size=8192):
    """``E F(X_t)`` from ``int F(T_t x0 + y) mu_t(dy)`` by Monte Carlo in coordinates."""
    x0 = _initial_coords(initials, F.k)
    if t == 0:
        return float(F(0.0, x0)), 0.0
    if t < 0:
        raise ValueError("t must be >= 0")
    ms = MehlerSample.at(spec.lambdas(F.k), t)

    def chunk(ids):
        xi = rng.normal_grid(seed, ids, rng.MEHLER, F.k, 1)[:, 0, :]
        v = F(t, ms.apply(x0, xi))
        return np.array([v.sum(), (v * v).sum()])

    s, s2 = accumulate(chunk, N, workers, chunk_size)
    return _mean_se(s, s2, N)


def pathwise_expectations(F_list, initials, spec, t, N, seed, M, grid=None, workers=1,
                          chunk_size=2048):
    """``E F(X_t)`` for each ``F`` by simulating the truncated field.

    Paths are synthesized on ``grid`` and paired with ``S_1..S_k``; all
    functions share the same paths.  Returns ``[(mean, se), ...]``.
    """
    n = spec.d * 2 ** (M + 1)
    k = max(F.k for F in F_list)
    if k > n:
        raise ValueError("cylindrical function uses more coordinates than simulated")
    grid = grid or basis.DyadicGrid(M + 1)
    init = _initial_coords(initials, n)

    def chunk(ids):
        path = simulate_ensemble(spec, init, [0.0, t], seed, n=n, path_ids=ids)
        field = synthesize_coeffs(path.G[:, -1, :], grid, spec.d)
        x = basis.pair_all(field, grid, k, spec.d)
        out = np.empty((len(F_list), 2))
        for j, F in enumerate(F_list):
            v = F(t, x[:, :F.k])
            out[j] = v.sum(), (v * v).sum()
        return out

    acc = accumulate(chunk, N, workers, chunk_size)
    return [_mean_se(s, s2, N) for s, s2 in acc]


def pathwise_expectation(F, initials, spec, t, N, seed, M, grid=None, workers=1,
                         chunk_size=2048):
    """``E F(X_t)`` by simulating the truncated field and pairing it with ``S_1..S_k``."""
    return pathwise_expectations([F], initials, spec, t, N, seed, M, grid, workers,
                                 chunk_size)[0]


def _gauss_grid(k, order):
    x, w = hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    mesh = np.stack(np.meshgrid(*([x] * k), indexing="ij"), axis=-1).reshape(-1, k)
    wts = np.prod(np.stack(np.meshgrid(*([w] * k), indexing="ij"), axis=-1).reshape(-1, k), axis=1)
    return mesh, wts


def dirichlet_form(F, H, spec, order=32, N=200_000, seed=0):
    """``sum_{i<=k} lambda_i E[d_i f d_i h]`` under iid N(0, 1) coordinates.

    Returns:
        ``(value, mode)`` where mode is ``"quadrature"`` for ``k <= 4`` and
        ``"MC"`` otherwise.
    """
    k = max(F.k, H.k)
    if k < 1:
        raise ValueError("cylindrical functions need k >= 1")
    lam = spec.lambdas(k)

    def integrand(x):
        gf = _pad(F.grad(0.0, x[..., :F.k]), k)
        gh = _pad(H.grad(0.0, x[..., :H.k]), k)
        return (gf * gh) @ lam

    if k <= 4:
        x, w = _gauss_grid(k, order)
        return float(w @ integrand(x)), "quadrature"
    x = rng.normal_grid(seed, np.arange(N), rng.EXPERIMENT, k, 1)[:, 0, :]
    return float(integrand(x).mean()), "MC"


def _pad(g, k):
    g = np.asarray(g, dtype=float)
    if g.shape[-1] == k:
        return g
    return np.concatenate([g, np.zeros(g.shape[:-1] + (k - g.shape[-1],))], axis=-1)


@dataclass
class GeneratorRow:
    t: float
    quotient: float
    se: float
    target: float

    @property
    def error(self):
        return abs(self.quotient - self.target)


def generator_limit_check(F, H, spec, t_list, N=100_000, seed=0, order=32):
    """Quotients ``(1/t) E_nu[(F(x) - E_x F(X_t)) H(x)]`` against ``E(F, H)``.

    For ``k <= 2`` both expectations use Gauss-Hermite quadrature, otherwise
    Monte Carlo with one inner Mehler draw per outer point.
    """
    k = max(F.k, H.k)
    lam = spec.lambdas(k)
    target, _ = dirichlet_form(F, H, spec, order)
    rows = []
    for t in t_list:
        ms = MehlerSample.at(lam, t)
        if k <= 2:
            x, w = _gauss_grid(k, order)
            inner = x[:, None, :] * ms.contraction + ms.scale * x[None, :, :]
            EF = F(t, inner[..., :F.k]) @ w
            diff = F(0.0, x[:, :F.k]) - EF
            q = float(w @ (diff * H(0.0, x[:, :H.k]))) / t
            rows.append(GeneratorRow(float(t), q, 0.0, target))
        else:
            x = rng.normal_grid(seed, np.arange(N), rng.INITIAL, k, 1)[:, 0, :]
            xi = rng.normal_grid(seed, np.arange(N), rng.MEHLER, k, 1)[:, 0, :]
            y = ms.apply(x, xi)
            v = (F(0.0, x[:, :F.k]) - F(t, y[:, :F.k])) * H(0.0, x[:, :H.k]) / t
            rows.append(GeneratorRow(float(t), float(v.mean()),
                                     float(v.std(ddof=1) / math.sqrt(N)), target))
    return rows


def ito_residual(F, path):
    """Per-path residual of the cylindrical Ito formula with left-point sums.

    ``F(T, X_T) - F(0, X_0) - sum ds F h - sum_i sum_j d_i f dG_i - sum_i lambda_i sum_j d_i^2 f h``.
    """
    steps = np.diff(path.times)
    h = float(steps[0])
    if not np.allclose(steps, h, rtol=1e-9, atol=0):
        raise ValueError("the Ito residual needs a uniform time grid")
    if F.k > path.n:
        raise ValueError("cylindrical function uses more coordinates than simulated")
    G = path.G[:, :, :F.k]
    s = path.times[:-1]
    left = G[:, :-1, :]
    sgrid = np.broadcast_to(s[None, :], left.shape[:2])
    dG = np.diff(G, axis=1)
    T = path.times[-1]
    res = F(T, G[:, -1]) - F(0.0, G[:, 0])
    res = res - h * F.time_partial(sgrid, left).sum(axis=1)
    res = res - (F.grad(sgrid, left) * dG).sum(axis=(1, 2))
    res = res - h * (F.hess_diag(sgrid, left) @ path.lam[:F.k]).sum(axis=1)
    return res


@dataclass
class FindimRow:
    n: int
    value: float
    se: float


def findim_exactness_check(F_list, t_list, spec, k, n_list, N, seed, initials="stationary",
                           workers=1, chunk_size=4096):
    """``E prod_m F_m(X^(n)_{t_m})`` for the process truncated to ``n`` coordinates.

    Only coordinates ``i <= min(n, k)`` are simulated and each has its own
    random stream, so every ``n >= k`` runs the same computation.
    """
    if len(F_list) != len(t_list):
        raise ValueError("need one time per factor")
    if any(F.k > k for F in F_list):
        raise ValueError("factors must depend on the first k coordinates only")
    times = np.concatenate([[0.0], np.asarray(t_list, dtype=float)])
    order = np.argsort(times[1:], kind="stable")
    if np.any(np.diff(times[1:][order]) < 0) or times[1:].min() < 0:
        raise ValueError("times must be nonnegative")
    grid_times = np.concatenate([[0.0], times[1:][order]])
    rows = []
    for n in n_list:
        m = min(int(n), k)
        init = initials
        if not isinstance(initials, str):
            init = resolve_initials(initials, k)[:m]

        def chunk(ids, m=m, init=init):
            path = simulate_ensemble(spec.lambdas(m), init, grid_times, seed, n=m, path_ids=ids)
            prod = np.ones(ids.size)
            for pos, (F, t) in enumerate(zip(F_list, t_list)):
                j = 1 + int(np.where(order == pos)[0][0])
                x = np.zeros((ids.size, k))
                x[:, :m] = path.G[:, j, :]
                prod = prod * F(t, x[:, :F.k])
            return np.array([prod.sum(), (prod * prod).sum()])

        s, s2 = accumulate(chunk, N, workers, chunk_size)
        mean, se = _mean_se(s, s2, N)
        rows.append(FindimRow(int(n), mean, se))
    return rows
