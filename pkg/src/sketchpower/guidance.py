"""A-priori sketch-size selection from a storage budget and a decay class.

The budget is T double-precision words per data column for the three
binary32 sketches, i.e. T = (c(l+s) + d)/2 with aspect ratio c = m/n.  The
power-sketch size is then l = T/c (half the budget), and the rangefinder
size s follows the decay class of the spectrum:

    flat                  s = r
    poly, alpha < 1/2     s = r
    poly, alpha ~ 1/2     s = proj_[r, T/(c+1)]( -((T+c)/(c+1)) / W_-1(-(T+c)/((c+1) n e)) - 1 )
    poly, alpha > 1/2     s = max(r, ((2 alpha - 1)(T+3) - (c+1)) / (2 (c+1) alpha))
    exp, alpha < 1/(2T)   s = r
    exp, alpha >= 1/(2T)  s = T/(c+1)

where W_-1 is the lower real branch of the Lambert W function.  The
"alpha ~ 1/2" band is fixed to |alpha - 1/2| <= 0.05.  After flooring s and
clamping to [r, floor(T/(c+1))], the remaining sizes follow the budget
identity: l = floor(T/c) and d = floor(2T - c(l+s)).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .approximators import SketchConfig
from .precision_model import PrecisionPlan

__all__ = [
    "DecayKind",
    "SpectrumClass",
    "BudgetSpec",
    "InfeasibleBudgetError",
    "lambert_w_minus1",
    "select_sizes",
    "select_sizes_double",
    "classify_spectrum",
    "derive_mixed_sizes",
]

HALF_BAND = 0.05  # width of the alpha ~ 1/2 crossover band


class DecayKind(enum.Enum):
    FLAT = "flat"
    POLY = "poly"
    EXP = "exp"


@dataclass(frozen=True)
class SpectrumClass:
    kind: DecayKind
    alpha: float | None = None

    def __post_init__(self):
        if self.kind is not DecayKind.FLAT and (self.alpha is None or self.alpha <= 0):
            raise ValueError(f"{self.kind.value} decay requires alpha > 0, got {self.alpha}")


@dataclass(frozen=True)
class BudgetSpec:
    """Normalized storage budget: T words per column, n columns, c = m/n."""

    t: float
    n: int
    r: int
    c: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"aspect ratio must be positive, got {self.c}")
        if self.r < 1:
            raise ValueError(f"target rank must be >= 1, got {self.r}")
        if self.t <= 2 * self.r:
            raise ValueError(f"budget T={self.t} must exceed 2r={2 * self.r}")


class InfeasibleBudgetError(ValueError):
    def __init__(self, t, minimal_t):
        self.minimal_feasible_t = minimal_t
        super().__init__(
            f"budget T={t} cannot satisfy the sketch-size constraints after rounding; "
            f"minimal feasible T is {minimal_t}"
        )


_BRANCH_POINT = -1.0 / math.e


def lambert_w_minus1(a: float) -> float:
    """The W_-1 branch: the solution w <= -1 of w e^w = a for -1/e <= a < 0.

    Halley iteration from a bracketed initial guess (branch-point series near
    -1/e, log-log asymptote near 0); converges to |w e^w - a| <= 1e-13 |a|.
    """
    if a >= 0 or a < _BRANCH_POINT * (1 + 1e-15):
        raise ValueError(f"lambert_w_minus1 requires -1/e <= a < 0, got {a}")
    if a <= _BRANCH_POINT * (1 - 1e-12):
        return -1.0
    if a > -0.27:
        log_neg = math.log(-a)
        w = log_neg - math.log(-log_neg)
    else:
        p = math.sqrt(2.0 * (1.0 + math.e * a))
        w = -1.0 - p - p * p / 3.0
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - a
        if abs(f) <= 1e-13 * abs(a):
            break
        fp = ew * (w + 1.0)
        fpp = ew * (w + 2.0)
        w -= f / (fp - f * fpp / (2.0 * fp))
        if w > -1.0:
            w = -1.0 - 1e-12  # stay on the lower branch; fp = 0 at w = -1
    return w


def _raw_s(cls: SpectrumClass, t: float, n: int, c: float, r: int) -> float:
    if cls.kind is DecayKind.FLAT:
        return float(r)
    a = cls.alpha
    if cls.kind is DecayKind.POLY:
        if a < 0.5 - HALF_BAND:
            return float(r)
        if abs(a - 0.5) <= HALF_BAND:
            arg = -(t + c) / ((c + 1.0) * n * math.e)
            w = lambert_w_minus1(arg)
            return -((t + c) / (c + 1.0)) / w - 1.0
        return max(float(r), ((2.0 * a - 1.0) * (t + 3.0) - (c + 1.0)) / (2.0 * (c + 1.0) * a))
    # exponential decay
    if a < 1.0 / (2.0 * t):
        return float(r)
    return t / (c + 1.0)


def derive_mixed_sizes(t: float, c: float, s: int) -> tuple[int, int]:
    """(d, l) from the budget identity once s is fixed: l = T/c, d = 2T - c(l+s)."""
    l = math.floor(t / c)
    d = math.floor(2.0 * t - c * (l + s))
    return d, l


def _resolve(cls: SpectrumClass, t: float, n: int, c: float, r: int):
    upper = math.floor(t / (c + 1.0))
    s = min(max(math.floor(_raw_s(cls, t, n, c, r)), r), upper)
    d, l = derive_mixed_sizes(t, c, s)
    feasible = upper >= r and l >= s + 1 and d >= s
    return s, d, l, feasible


def select_sizes(cls: SpectrumClass, budget: BudgetSpec) -> SketchConfig:
    """Sketch sizes for the mixed-precision power pipeline under budget T.

    Raises :class:`InfeasibleBudgetError` (naming the minimal feasible T)
    when rounding leaves no valid configuration.  The returned sizes satisfy
    r <= s <= d and s < l, and conserve the budget up to rounding slack:
    T - 1/2 <= (c(l+s) + d)/2 <= T.

    The fast-exponential rule saturates its clamp at s = T/(c+1), which
    leaves the corange solve square (d = s); that is the table's stated
    choice, but with binary32 sketches the square solve amplifies rounding
    noise, so callers wanting oversampling headroom may lower s.
    """
    s, d, l, feasible = _resolve(cls, budget.t, budget.n, budget.c, budget.r)
    if not feasible:
        t_min = budget.t
        for cand in range(2 * budget.r + 1, 2 * budget.r + 10001):
            if _resolve(cls, float(cand), budget.n, budget.c, budget.r)[3]:
                t_min = cand
                break
        raise InfeasibleBudgetError(budget.t, t_min)
    return SketchConfig(r=budget.r, s=s, d=d, l=l, plan=PrecisionPlan.MIXED_SINGLE_DOUBLE)


def _model_tail_sq(cls: SpectrumClass, n: int) -> np.ndarray:
    """tail[j] = sum_{i > j} sigma_i^2 for the idealized class spectrum."""
    i = np.arange(1, n + 1, dtype=np.float64)
    if cls.kind is DecayKind.FLAT:
        sq = np.ones(n)
    elif cls.kind is DecayKind.POLY:
        sq = i ** (-2.0 * cls.alpha)
    else:
        sq = np.exp(-2.0 * cls.alpha * i)
    return np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])


def select_sizes_double(cls: SpectrumClass, t_hat: float, n: int, r: int, c: float = 1.0) -> tuple[int, int]:
    """(s, d) for the plain two-sketch pipeline in binary64 under c*s + d = T-hat.

    Minimizes the pipeline's expected-error model
    (d/(d-s-1)) * (s/(s-rho-1)) * tail(rho+1)^2 over integer s and rho, using
    the idealized class spectrum; the analogue of the mixed-plan table for
    the no-power-sketch case.
    """
    tail = _model_tail_sq(cls, n)
    best = None
    s_max = int((t_hat - 2) // (1 + c))
    for s in range(r + 2, max(r + 2, s_max) + 1):
        d = math.floor(t_hat - c * s)
        if d < s + 2:
            continue
        rho = np.arange(r, s - 1)
        vals = (d / (d - s - 1.0)) * (s / (s - rho - 1.0)) * tail[rho]
        j = int(np.argmin(vals))
        if best is None or vals[j] < best[0]:
            best = (float(vals[j]), s, d)
    if best is None:
        raise InfeasibleBudgetError(t_hat, math.ceil((r + 2) * (1 + c) + 2))
    return best[1], best[2]


def classify_spectrum(singular_values) -> SpectrumClass:
    """Fit log sigma_i against {-alpha log i} and {-alpha i}; best fit wins.

    Returns flat when both fitted rates fall below 0.05 (or come out
    non-positive).  Requires at least 10 positive values.
    """
    sv = np.asarray(singular_values, dtype=np.float64).ravel()
    if sv.size < 10:
        raise ValueError(f"need at least 10 singular values, got {sv.size}")
    if np.any(sv <= 0):
        raise ValueError("singular values must be positive to classify decay")
    y = np.log(sv)
    idx = np.arange(1, sv.size + 1, dtype=np.float64)
    fits = {}
    for kind, x in ((DecayKind.POLY, np.log(idx)), (DecayKind.EXP, idx)):
        design = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        fits[kind] = (-float(coef[1]), float(resid @ resid))
    alpha_p, sse_p = fits[DecayKind.POLY]
    alpha_e, sse_e = fits[DecayKind.EXP]
    if alpha_p < HALF_BAND and alpha_e < HALF_BAND:
        return SpectrumClass(DecayKind.FLAT)
    candidates = [
        (sse, kind, alpha)
        for (kind, (alpha, sse)) in fits.items()
        if alpha >= HALF_BAND
    ]
    if not candidates:
        return SpectrumClass(DecayKind.FLAT)
    _, kind, alpha = min(candidates, key=lambda c: c[0])
    return SpectrumClass(kind, alpha)
