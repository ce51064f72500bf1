"""Diffusion eigenvalue sequences and their summability conditions."""

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Verdict(enum.Enum):
    CONVERGES = "ConvergesAnalytically"
    DIVERGES = "DivergesAnalytically"
    PLAUSIBLE = "NumericallyPlausible"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class SpectrumSpec:
    """Nondecreasing positive sequence ``lambda_i``.

    Families: ``power`` (``a * i**alpha``), ``log`` (``a * ln(i+1)**p``) and
    ``explicit`` (a stored list).  Build with the classmethods.
    """

    family: str
    params: tuple
    d: int = 1
    values: tuple = field(default=(), repr=False)

    @classmethod
    def power(cls, a, alpha, d=1):
        if a <= 0 or alpha < 0:
            raise ValueError("power law needs a > 0 and alpha >= 0")
        return cls("power", (float(a), float(alpha)), int(d))

    @classmethod
    def log(cls, a, p, d=1):
        if a <= 0 or p <= 0:
            raise ValueError("log law needs a > 0 and p > 0")
        return cls("log", (float(a), float(p)), int(d))

    @classmethod
    def explicit(cls, values, d=1):
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValueError("explicit spectrum needs at least one value")
        if min(vals) <= 0:
            raise ValueError("explicit spectrum values must be positive")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError("explicit spectrum must be nondecreasing")
        return cls("explicit", (), int(d), vals)

    @classmethod
    def _degenerate(cls, values, d=1):
        # test-only: zeros and non-monotone entries allowed (single-term spectra)
        return cls("explicit", ("unchecked",), int(d), tuple(float(v) for v in values))

    @property
    def appendix_ok(self):
        """Whether ``lambda_1 >= 1``, the standing assumption of the extreme-value results."""
        return self.lambda_at(1) >= 1.0

    def lambda_at(self, i):
        return float(self.lambdas(i)[i - 1])

    def lambdas(self, n):
        """``lambda_1 .. lambda_n`` as an array."""
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        idx = np.arange(1, n + 1, dtype=float)
        if self.family == "power":
            a, alpha = self.params
            return a * idx**alpha
        if self.family == "log":
            a, p = self.params
            return a * np.log1p(idx) ** p
        if n > len(self.values):
            raise IndexError(
                f"explicit spectrum has {len(self.values)} values; index {n} requested")
        return np.array(self.values[:n])

    def to_dict(self):
        out = {"family": self.family, "d": self.d}
        if self.family == "power":
            out.update(a=self.params[0], alpha=self.params[1])
        elif self.family == "log":
            out.update(a=self.params[0], p=self.params[1])
        else:
            out["values"] = list(self.values)
            if self.params == ("unchecked",):
                out["unchecked"] = True
        return out

    @classmethod
    def from_dict(cls, cfg):
        fam = cfg.get("family", "power")
        d = int(cfg.get("d", 1))
        if fam == "power":
            return cls.power(cfg.get("a", 1.0), cfg.get("alpha", 0.25), d)
        if fam == "log":
            return cls.log(cfg.get("a", 1.0), cfg.get("p", 1.0), d)
        if fam == "explicit":
            if cfg.get("unchecked", False):
                return cls._degenerate(cfg["values"], d)
            return cls.explicit(cfg["values"], d)
        raise ValueError(f"unknown spectrum family {fam!r}")


@dataclass
class ConditionReport:
    condition: str
    terms: np.ndarray
    partial_sums: np.ndarray
    verdict: Verdict
    tail_estimate: float | None = None

    @property
    def converges(self):
        return self.verdict in (Verdict.CONVERGES, Verdict.PLAUSIBLE)


def _numeric_verdict(terms, window=10, max_ratio=0.95):
    """Tail heuristic: the last ``window`` terms must shrink by a ratio below ``max_ratio``."""
    tail = np.asarray(terms[-window:], dtype=float)
    if tail.size < window or np.any(tail <= 0):
        if tail.size and np.all(tail == 0):
            return Verdict.PLAUSIBLE, 0.0
        return Verdict.INCONCLUSIVE, None
    ratios = tail[1:] / tail[:-1]
    r = float(ratios.max())
    if r < max_ratio:
        return Verdict.PLAUSIBLE, float(tail[-1] * r / (1 - r))
    return Verdict.INCONCLUSIVE, None


def _level_max(initials, d, m):
    lo, hi = d * 2**m, d * 2 ** (m + 1)
    block = np.abs(np.asarray(initials[lo:hi], dtype=float))
    return float(block.max()) if block.size else 0.0


def _report(name, terms, analytic):
    terms = np.asarray(terms, dtype=float)
    sums = np.cumsum(terms)
    if analytic is not None:
        return ConditionReport(name, terms, sums, analytic)
    verdict, tail = _numeric_verdict(terms)
    return ConditionReport(name, terms, sums, verdict, tail)


def check_closability(spec, M_max):
    """Partial sums of ``sum_m 2**-m * lambda_{d 2**m}``."""
    if M_max < 1:
        raise ValueError("M_max must be >= 1")
    lam = spec.lambdas(spec.d * 2**M_max)
    terms = [2.0**-m * lam[spec.d * 2**m - 1] for m in range(M_max + 1)]
    analytic = None
    if spec.family == "power":
        analytic = Verdict.CONVERGES if spec.params[1] < 1 else Verdict.DIVERGES
    elif spec.family == "log":
        analytic = Verdict.CONVERGES
    return _report("closability", terms, analytic)


def _initial_terms(spec, initials, M_max, shift):
    d = spec.d
    need = d * 2 ** (M_max + 1)
    if initials is None:
        initials = np.zeros(need)
    initials = np.asarray(initials, dtype=float)
    if initials.size < need:
        raise ValueError(f"need initials up to index {need}; got {initials.size}")
    lam = spec.lambdas(need)
    terms = []
    for m in range(M_max + 1):
        lam_m = lam[d * 2 ** (m + shift) - 1]
        terms.append(2.0 ** (-m / 2) * lam_m * (_level_max(initials, d, m) + math.sqrt(m)))
    return terms


def _initials_condition(name, spec, initials, M_max, shift):
    if M_max < 1:
        raise ValueError("M_max must be >= 1")
    terms = _initial_terms(spec, initials, M_max, shift)
    analytic = None
    # the analytic classification treats the supplied initials as a bounded sequence
    if spec.family == "power":
        analytic = Verdict.CONVERGES if spec.params[1] < 0.5 else Verdict.DIVERGES
    elif spec.family == "log":
        analytic = Verdict.CONVERGES
    return _report(name, terms, analytic)


def check_qv_condition(spec, initials, M_max):
    """Partial sums of ``sum_m 2**(-m/2) lambda_{d 2**(m+1)} (max|G_i(0)| + sqrt m)``."""
    return _initials_condition("qv", spec, initials, M_max, 1)


def check_approx_condition(spec, initials, M_max):
    """As :func:`check_qv_condition` with ``lambda_{d 2**m}``."""
    return _initials_condition("approx", spec, initials, M_max, 0)


def check_all(spec, initials, M_max):
    """The three reports plus a flag that the nesting qv => approx, closability holds."""
    reports = {
        "closability": check_closability(spec, M_max),
        "approx": check_approx_condition(spec, initials, M_max),
        "qv": check_qv_condition(spec, initials, M_max),
    }
    nested = True
    if reports["qv"].converges:
        nested = reports["approx"].converges and reports["closability"].converges
        # termwise domination behind the nesting, checked on the computed range
        nested &= bool(np.all(reports["approx"].terms <= reports["qv"].terms + 1e-300))
    return reports, nested
