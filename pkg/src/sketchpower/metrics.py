"""Quantitative evaluation: relative errors, error-source decomposition,
subspace angles, tail energies, distortion ratios, oracle sweeps, and
computable evaluators for the probabilistic error bounds.

All evaluators here materialize the data matrix; they are meant for
desk-scale validation, not for the streaming path.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as la

from . import guidance, synthetic
from .approximators import (
    ApproxResult,
    tyuc17,
    tyuc17_spi,
)
from .matrix_core import as_f64, lstsq
from .spi import SpiParams
from .stream_ingest import LinearUpdate, PipelineKind, open_stream
from .test_matrices import GAUSSIAN, TestMatrixKind
from .precision_model import PrecisionPlan

logger = logging.getLogger(__name__)

__all__ = [
    "ErrorReport",
    "RelativeErrors",
    "RangeExtraErrors",
    "MetricUnsupportedError",
    "relative_error",
    "range_extra_errors",
    "canonical_angle_sines",
    "tail_energy",
    "distortion_ratio",
    "BoundInputsFro",
    "BoundInputsSpec",
    "SpectralBound",
    "bound_frobenius_q1",
    "bound_spectral_general_q",
    "frobenius_event_statistic",
    "SweepRow",
    "SweepTable",
    "oracle_sweep",
]

_ZERO_BASELINE_RTOL = 1e-12
_EXACT_FIT_RTOL = 1e-12


class MetricUnsupportedError(ValueError):
    """A metric that is undefined for the given pipeline's decomposition."""


@dataclass
class ErrorReport:
    """Per-trial metrics; None marks a metric unavailable for the pipeline."""

    s_f: Optional[float] = None
    s_inf: Optional[float] = None
    range_err_f: Optional[float] = None
    range_err_s: Optional[float] = None
    extra_err_f: Optional[float] = None
    extra_err_s: Optional[float] = None
    canon_angle_sines: Optional[np.ndarray] = None
    wall_ms: Optional[float] = None
    flags: frozenset = frozenset()


@dataclass
class RelativeErrors:
    s_f: float
    s_inf: float
    flags: frozenset = frozenset()


@dataclass
class RangeExtraErrors:
    range_f: float
    range_s: float
    extra_f: float
    extra_s: float
    flags: frozenset = frozenset()


def _baselines(a: np.ndarray, r: int) -> tuple[float, float]:
    """(Frobenius, spectral) distance of A to its best rank-r approximation."""
    sv = la.svdvals(a, check_finite=False)
    bf = float(np.sqrt(np.sum(sv[r:] ** 2))) if r < sv.size else 0.0
    bs = float(sv[r]) if r < sv.size else 0.0
    return bf, bs


def relative_error(
    a,
    result: ApproxResult,
    r: int,
    baselines: Optional[tuple[float, float]] = None,
) -> RelativeErrors:
    """Reconstruction error relative to the best rank-r approximation.

    ``S = ||A - A_hat|| / ||A - [A]_r|| - 1`` in Frobenius and spectral norm.
    If A is itself (numerically) rank <= r the ratio is undefined: absolute
    errors are returned with a ``zero_baseline`` flag.  A reconstruction that
    fits A to roundoff while the baseline is positive is reported as zero
    error with an ``exact_fit`` flag.
    """
    a = as_f64(a)
    resid = a - result.reconstruct()
    num_f = float(np.linalg.norm(resid))
    num_s = float(la.svdvals(resid, check_finite=False)[0])
    base_f, base_s = baselines if baselines is not None else _baselines(a, r)
    scale = float(np.linalg.norm(a))
    if base_f <= _ZERO_BASELINE_RTOL * max(scale, 1e-300):
        return RelativeErrors(num_f, num_s, frozenset({"zero_baseline"}))
    if num_f <= _EXACT_FIT_RTOL * scale:
        return RelativeErrors(0.0, 0.0, frozenset({"exact_fit"}))
    return RelativeErrors(num_f / base_f - 1.0, num_s / base_s - 1.0)


def range_extra_errors(
    a,
    result: ApproxResult,
    r: int,
    baselines: Optional[tuple[float, float]] = None,
) -> RangeExtraErrors:
    """Split the reconstruction error into its two orthogonal sources.

    RangeError is the orthogonal-projection error ``||A - U U^T A|| /
    ||A - [A]_r|| - 1``; ExtraError is the sketch-and-solve remainder
    ``||U U-tilde^T (Q^T A - (Psi Q)^+ Psi A)|| / ||A - [A]_r||`` (no
    subtraction of one).  The orthogonal-projection pipeline has no second
    source, so its ExtraError is exactly zero.  Undefined for the two-sided
    pipelines.
    """
    if result.kind in (PipelineKind.TYUC19, PipelineKind.TYUC19_SPI):
        raise MetricUnsupportedError(
            "range/extra decomposition is undefined for the two-sided core pipelines"
        )
    a = as_f64(a)
    base_f, base_s = baselines if baselines is not None else _baselines(a, r)
    flags = set()
    proj_resid = a - result.u @ (result.u.T @ a)
    range_f = float(np.linalg.norm(proj_resid))
    range_s = float(la.svdvals(proj_resid, check_finite=False)[0])
    if result.kind is PipelineKind.RSVD_ONEPASS:
        extra_f = extra_s = 0.0
    else:
        if result.psi is None:
            raise MetricUnsupportedError("result lacks the corange test matrix needed for ExtraError")
        psi = result.psi
        fitted = lstsq(psi @ result.q_factor, psi @ a).x
        e = result.u @ (result.u_tilde.T @ (result.q_factor.T @ a - fitted))
        extra_f = float(np.linalg.norm(e))
        extra_s = float(la.svdvals(e, check_finite=False)[0])
    scale = float(np.linalg.norm(a))
    if base_f <= _ZERO_BASELINE_RTOL * max(scale, 1e-300):
        flags.add("zero_baseline")
        return RangeExtraErrors(range_f, range_s, extra_f, extra_s, frozenset(flags))
    return RangeExtraErrors(
        range_f / base_f - 1.0,
        range_s / base_s - 1.0,
        extra_f / base_f,
        extra_s / base_s,
        frozenset(flags),
    )


def _orthonormalized(u: np.ndarray, name: str) -> np.ndarray:
    k = u.shape[1]
    if np.linalg.norm(u.T @ u - np.eye(k)) > 1e-8 * math.sqrt(k):
        warnings.warn(f"{name} is not orthonormal; re-orthonormalizing", stacklevel=3)
        u, _ = np.linalg.qr(u)
    return u


def canonical_angle_sines(u_est, u_true, how_many: Optional[int] = None) -> np.ndarray:
    """Sines of the smallest principal angles between two column spaces.

    Equal to ``sqrt(1 - sigma_i^2)`` for the singular values of
    ``U_true^T U_est``, returned ascending; evaluated through the complement
    projection ``(I - U_true U_true^T) U_est`` so that angles far below
    sqrt(eps) are still resolved.  Non-orthonormal inputs are
    re-orthonormalized with a warning.
    """
    u_est = _orthonormalized(as_f64(u_est), "u_est")
    u_true = _orthonormalized(as_f64(u_true), "u_true")
    resid = u_est - u_true @ (u_true.T @ u_est)
    sines = np.minimum(la.svdvals(resid, check_finite=False), 1.0)
    sines = sines[::-1]
    return sines[:how_many] if how_many is not None else sines


def tail_energy(singular_values, k: int) -> float:
    """sqrt(sum of sigma_i^2 for i >= k), with 1-based k; 0 beyond the end."""
    if k < 1:
        raise ValueError(f"tail index must be >= 1, got {k}")
    sv = np.asarray(singular_values, dtype=np.float64).ravel()
    if k > sv.size:
        return 0.0
    return float(np.sqrt(np.sum(sv[k - 1 :] ** 2)))


@dataclass
class DistortionResult:
    ratios: np.ndarray
    skipped: int = 0


def distortion_ratio(a, phi) -> DistortionResult:
    """Elementwise sigma_i(A Phi) / sigma_i(A) over the shared index range.

    Singular values of A that are numerically zero (below 1e-13 of the
    largest) are skipped and counted in ``skipped``.
    """
    a = as_f64(a)
    phi_a = as_f64(phi)
    sv_a = la.svdvals(a, check_finite=False)
    sv_s = la.svdvals(a @ phi_a, check_finite=False)
    k = min(sv_a.size, sv_s.size)
    keep = sv_a[:k] > 1e-13 * (sv_a[0] if sv_a.size else 0.0)
    return DistortionResult(ratios=sv_s[:k][keep] / sv_a[:k][keep], skipped=int(k - keep.sum()))


# -- error-bound evaluators ---------------------------------------------------


@dataclass(frozen=True)
class BoundInputsFro:
    """Inputs of the expected Frobenius-error bound for one power iteration."""

    varrho: int
    l: int
    s: int
    d: int
    xi_hat: float
    singular_values: Sequence[float]

    def validate(self):
        if not (self.l > self.s >= self.varrho + 4):
            raise ValueError(f"hypotheses need l > s >= varrho+4, got l={self.l}, s={self.s}, varrho={self.varrho}")
        if self.d <= self.s + 1:
            raise ValueError(f"hypotheses need d > s+1, got d={self.d}, s={self.s}")
        if self.xi_hat <= 1.0:
            raise ValueError(f"conditioning constant must exceed 1, got {self.xi_hat}")


def bound_frobenius_q1(inp: BoundInputsFro) -> float:
    """Expected squared Frobenius error bound, single power iteration.

    (d/(d-s-1)) [ (1 + eps xi^2) tau_{p+1}^2
                  + delta xi^2 sum_{j>p} sigma_j^6 / sigma_p^4
                  + mu xi^2 tau_{p+1}^2 sum_{j>p} sigma_j^4 / sigma_p^4 ]
    with p = varrho, eps = 2p/(l-p-1) and delta, mu the combinatorial
    coefficients below.
    """
    inp.validate()
    p, l, s, d = inp.varrho, inp.l, inp.s, inp.d
    sv = np.asarray(inp.singular_values, dtype=np.float64).ravel()
    den = (s - p) ** 2 * (l - p) * (l - p - 1) * (l - p - 3)
    if den <= 0 or (d - s - 1) <= 0 or (l - p - 1) <= 0:
        raise ValueError("bound denominators must be positive; hypotheses violated")
    eps = 2.0 * p / (l - p - 1)
    e2 = math.e**2
    delta = e2 * (s + p) * p * (l - 1) * (l**2 + 2 * l) / den
    mu = e2 * (s + p) * p * (l - 1) * l / den
    tail_sq = float(np.sum(sv[p:] ** 2))
    s4 = float(np.sum(sv[p:] ** 4))
    s6 = float(np.sum(sv[p:] ** 6))
    sig_p4 = float(sv[p - 1] ** 4)
    xi2 = inp.xi_hat**2
    inner = (1.0 + eps * xi2) * tail_sq
    if tail_sq > 0.0:
        inner += delta * xi2 * s6 / sig_p4 + mu * xi2 * tail_sq * s4 / sig_p4
    return d / (d - s - 1.0) * inner


@dataclass(frozen=True)
class BoundInputsSpec:
    """Inputs of the spectral-norm deviation bound for general q >= 1."""

    varrho: int
    k: int
    l: int
    s: int
    d: int
    q: int
    u: float
    t: float
    beta: float
    singular_values: Sequence[float]

    def validate(self):
        if not (self.varrho < self.k <= self.l - 4):
            raise ValueError(f"hypotheses need varrho < k <= l-4, got varrho={self.varrho}, k={self.k}, l={self.l}")
        if self.varrho > self.s - 4:
            raise ValueError(f"hypotheses need varrho <= s-4, got varrho={self.varrho}, s={self.s}")
        if self.d < self.s + 4:
            raise ValueError(f"hypotheses need d >= s+4, got d={self.d}, s={self.s}")
        if self.q < 1 or self.t < 1.0 or self.u <= 0 or self.beta <= 0:
            raise ValueError("need q >= 1, t >= 1, u > 0, beta > 0")


@dataclass
class SpectralBound:
    bound: float
    failure_probability: float
    gamma3: float


def bound_spectral_general_q(inp: BoundInputsSpec) -> SpectralBound:
    """Deviation bound on the spectral reconstruction error, any q >= 1.

    Also returns the failure probability
    ``p = 3 e^{-u^2/2} + 2 t^{-(d-s)} + 2 t^{-(l-k)} + 2 t^{-(s-varrho)} + e^{-beta^2/2}``
    and the power-sensitive factor gamma3, which decreases to 1 as q grows.
    """
    inp.validate()
    p, k, l, s, d, q = inp.varrho, inp.k, inp.l, inp.s, inp.d, inp.q
    u, t, beta = inp.u, inp.t, inp.beta
    sv = np.asarray(inp.singular_values, dtype=np.float64).ravel()
    sig = lambda i: float(sv[i - 1]) if i <= sv.size else 0.0

    eta1 = 1.0 + t * math.sqrt(3.0 * s / (d - s + 1))
    eta2 = t * math.e * math.sqrt(d) / (d - s + 1)
    eta3 = t * math.e * math.sqrt(l) / (l - k + 1)
    eta4 = 1.0 + t * math.sqrt(3.0 * k / (l - k + 1))
    gamma1 = (
        1.0
        + t * math.sqrt(3.0 * s / (d - s + 1))
        + t * math.e * math.sqrt(d * l) / (d - s + 1)
        + u * t * math.e * math.sqrt(d) / (d - s + 1)
    )
    gamma2 = math.e * l / (l - k + 1)
    gamma3 = (
        1.0
        + t * math.sqrt(3.0 * p / (s - p + 1))
        + t * math.e * (math.sqrt(s * l) + u * math.sqrt(s)) / (s - p + 1)
    ) ** (1.0 / (2 * q + 1))

    tau_k1 = tail_energy(sv, k + 1)
    bound = ((eta1 + u * eta2) * eta3 + eta2 * eta4) * tau_k1
    bound += ((eta1 + u * eta2) * (eta3 + eta4) + u * eta3) * sig(k + 1)
    bound += (
        gamma1
        * gamma2
        * gamma3
        * (
            (1.0 + math.sqrt(k / l) + beta / math.sqrt(l)) * sig(p + 1)
            + (1.0 + beta / math.sqrt(l)) * sig(k + 1)
            + tau_k1 / math.sqrt(l)
        )
    )
    p_fail = (
        3.0 * math.exp(-(u**2) / 2.0)
        + 2.0 * t ** (-(d - s))
        + 2.0 * t ** (-(l - k))
        + 2.0 * t ** (-(s - p))
        + math.exp(-(beta**2) / 2.0)
    )
    return SpectralBound(bound=bound, failure_probability=p_fail, gamma3=gamma3)


def frobenius_event_statistic(v, singular_values, varrho: int, omega, phi) -> float:
    """The conditioning statistic of the Frobenius bound's screening event.

    With the right singular factors split at varrho (V1, V2 and Sigma1,
    Sigma2) and the projected test matrices Omega_i = V_i^T Omega,
    Phi_i = V_i^T Phi, returns
    ``|| (I + Phi1 Phi2^T Sigma2^2 Omega2 Omega1^+ Sigma1^-2 (Phi1 Phi1^T)^-1)^-1 ||_2``.
    A trial belongs to the screening event when this is below the chosen
    conditioning constant.
    """
    v = as_f64(v)
    sv = np.asarray(singular_values, dtype=np.float64).ravel()
    p = varrho
    v1, v2 = v[:, :p], v[:, p : sv.size]
    omega = as_f64(omega)
    phi = as_f64(phi)
    o1, o2 = v1.T @ omega, v2.T @ omega
    f1, f2 = v1.T @ phi, v2.T @ phi
    h = (sv[p:, None] ** 2) * o2 @ np.linalg.pinv(o1) / sv[:p][None, :] ** 2
    mid = np.eye(p) + f1 @ f2.T @ h @ np.linalg.inv(f1 @ f1.T)
    return float(la.svdvals(np.linalg.inv(mid), check_finite=False)[0])


# -- oracle sweep -------------------------------------------------------------


@dataclass
class SweepRow:
    s: int
    d: int
    l: int
    q: int
    mean_s_f: float
    mean_s_inf: float


@dataclass
class SweepTable:
    rows: list[SweepRow] = field(default_factory=list)

    def best(self) -> SweepRow:
        return min(self.rows, key=lambda row: row.mean_s_f)

    def best_for_q(self, q: int) -> SweepRow:
        return min((row for row in self.rows if row.q == q), key=lambda row: row.mean_s_f)


def _sweep_sizes(algo: PipelineKind, budget_t: float, c: float, s: int) -> Optional[tuple[int, int]]:
    if algo is PipelineKind.TYUC17:
        d = math.floor(budget_t - c * s)
        return (d, 0) if d >= s else None
    d, l = guidance.derive_mixed_sizes(budget_t, c, s)
    return (d, l) if (d >= s and l >= s + 1) else None


def oracle_sweep(
    data_spec: synthetic.SyntheticSpec,
    algo: PipelineKind,
    budget_t: float,
    r: int,
    q_set: Iterable[int] = (1,),
    trials: int = 20,
    *,
    test_kind: TestMatrixKind = GAUSSIAN,
    plan: Optional[PrecisionPlan] = None,
) -> SweepTable:
    """Mean errors over an exhaustive sweep of the rangefinder size s.

    For each feasible s in [r, T/(c+1)] the remaining sizes follow the
    budget; the best row is the oracle error at that budget.  Supports the
    plain two-sketch pipeline (binary64, budget c*s + d = T) and its powered
    version (binary32 sketches, budget (c(l+s)+d)/2 = T).  Infeasible rows
    are skipped and logged.
    """
    if algo not in (PipelineKind.TYUC17, PipelineKind.TYUC17_SPI):
        raise ValueError(f"oracle sweep supports the two-sketch pipelines, not {algo.value}")
    if plan is None:
        plan = PrecisionPlan.ALL_DOUBLE if algo is PipelineKind.TYUC17 else PrecisionPlan.MIXED_SINGLE_DOUBLE
    c = data_spec.m / data_spec.n
    q_list = sorted(set(q_set)) if algo is PipelineKind.TYUC17_SPI else [0]
    s_max = math.floor(budget_t / (c + 1.0))
    grid = []
    for s in range(r, s_max + 1):
        sizes = _sweep_sizes(algo, budget_t, c, s)
        if sizes is None:
            logger.info("sweep: skipping infeasible s=%d at budget T=%s", s, budget_t)
            continue
        grid.append((s, *sizes))
    if not grid:
        raise guidance.InfeasibleBudgetError(budget_t, 2 * r + 2)

    sums: dict[tuple[int, int], np.ndarray] = {
        (s, q): np.zeros(2) for (s, _, _) in grid for q in q_list
    }
    for trial in range(trials):
        a = synthetic.generate(data_spec.with_trial(trial)).data
        base = _baselines(a, r)
        for s, d, l in grid:
            stream = open_stream(
                algo, data_spec.m, data_spec.n, s, d, l,
                base_seed=data_spec.base_seed, trial=trial, test_kind=test_kind, plan=plan,
            )
            sk = stream.ingest(LinearUpdate.dense(a)).finalize()
            for q in q_list:
                result = tyuc17(sk, r) if algo is PipelineKind.TYUC17 else tyuc17_spi(sk, SpiParams(q=q), r)
                rel = relative_error(a, result, r, baselines=base)
                sums[(s, q)] += (rel.s_f, rel.s_inf)

    table = SweepTable()
    for s, d, l in grid:
        for q in q_list:
            acc = sums[(s, q)] / trials
            table.rows.append(SweepRow(s=s, d=d, l=l, q=q, mean_s_f=float(acc[0]), mean_s_inf=float(acc[1])))
    return table
