"""End-to-end one-pass low-rank approximation pipelines.

Every pipeline consumes a finalized single-pass :class:`SketchSet` and
returns rank-r factors plus the intermediates needed by the error-source
metrics.  Sketches stored in binary32 are upcast to binary64 at the entry of
the factorization stage (the cast points of the precision model); all
numerical kernels run in binary64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from .matrix_core import lstsq, qr_economy, svd_truncated
from .precision_model import PrecisionPlan
from .spi import SpiParams, spi_plain, spi_stabilized, spi_variant
from .stream_ingest import PipelineKind, SketchSet

__all__ = [
    "SketchConfig",
    "ApproxResult",
    "tyuc17",
    "tyuc17_spi",
    "tyuc17_spi_variant",
    "rsvd_onepass",
    "tyuc19",
    "tyuc19_spi",
]

_TRI_TOL = 1e-12


@dataclass(frozen=True)
class SketchConfig:
    """Target rank and sketch sizes; q is the power-iteration count."""

    r: int
    s: int
    d: int = 0
    l: int = 0
    q: int = 0
    plan: PrecisionPlan = PrecisionPlan.ALL_DOUBLE

    def validate(self, kind: PipelineKind) -> None:
        if self.r < 1 or self.s < self.r:
            raise ValueError(f"need 1 <= r <= s, got r={self.r}, s={self.s}")
        if kind in (PipelineKind.TYUC17, PipelineKind.TYUC17_SPI, PipelineKind.TYUC17_SPI_VARIANT):
            if self.d < self.s:
                raise ValueError(f"corange sketch size d={self.d} must be >= s={self.s}")
        if kind in (PipelineKind.TYUC17_SPI, PipelineKind.TYUC17_SPI_VARIANT, PipelineKind.TYUC19_SPI):
            if self.l <= self.s:
                raise ValueError(f"power sketch size l={self.l} must exceed s={self.s}")
        if kind in (PipelineKind.TYUC19, PipelineKind.TYUC19_SPI) and self.d <= self.s:
            raise ValueError(f"core sketch size d={self.d} must exceed s={self.s}")


@dataclass
class ApproxResult:
    """Rank-r factors plus the intermediates the metrics need.

    ``u`` is m x r with orthonormal columns, ``sv`` the non-increasing
    singular values, ``v`` n x r.  Two-sketch pipelines retain (Q, B) and the
    corange test matrix; the two-sided pipelines retain (Q, core, P).
    """

    kind: PipelineKind
    u: np.ndarray
    sv: np.ndarray
    v: np.ndarray
    q_factor: np.ndarray
    u_tilde: np.ndarray
    b: Optional[np.ndarray] = None
    core: Optional[np.ndarray] = None
    p_factor: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    flags: frozenset = frozenset()

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sv) @ self.v.T


def _require(sk: SketchSet, kinds, *names) -> None:
    if sk.pass_count != 1:
        raise ValueError(f"sketches must come from exactly one pass, got pass_count={sk.pass_count}")
    if sk.kind not in kinds:
        raise ValueError(f"sketch set of kind {sk.kind.value} not usable here")
    for name in names:
        if getattr(sk, name) is None:
            raise ValueError(f"sketch set lacks required sketch {name!r}")


_TYUC17_FAMILY = (PipelineKind.TYUC17, PipelineKind.TYUC17_SPI, PipelineKind.TYUC17_SPI_VARIANT)


def _stored(y_hat: np.ndarray, sk: SketchSet) -> np.ndarray:
    """Model the powered rangefinder's residence in binary32 sketch space.

    Under the mixed plan the iterate overwrites the binary32 sketch buffer
    before its upcast, so it passes through one binary32 rounding.
    """
    if sk.plan is PrecisionPlan.MIXED_SINGLE_DOUBLE:
        return y_hat.astype(np.float32).astype(np.float64)
    return y_hat


def _qb_finish(kind, y_hat, w, psi, r, flags) -> ApproxResult:
    """Shared tail of the oblique pipelines: QR, corange solve, truncation."""
    qres = qr_economy(y_hat)
    if qres.rank_deficient:
        flags.add("rangefinder_rank_deficient")
    solve = lstsq(psi @ qres.q, w)
    if solve.ill_conditioned:
        flags.add("corange_solve_ill_conditioned")
    trunc = svd_truncated(solve.x, r)
    return ApproxResult(
        kind=kind,
        u=qres.q @ trunc.u,
        sv=trunc.s,
        v=trunc.v,
        q_factor=qres.q,
        u_tilde=trunc.u,
        b=solve.x,
        psi=psi,
        flags=frozenset(flags),
    )


def tyuc17(sk: SketchSet, r: int) -> ApproxResult:
    """Rangefinder QR plus corange least squares: A ~ Q ((Psi Q)^+ W)."""
    _require(sk, _TYUC17_FAMILY, "y", "w", "psi")
    return _qb_finish(PipelineKind.TYUC17, sk.y.as_f64(), sk.w.as_f64(), sk.psi.as_f64(), r, set())


def tyuc17_spi(sk: SketchSet, params: SpiParams, r: int) -> ApproxResult:
    """TYUC17 with the rangefinder powered through the wide sketch Z."""
    _require(sk, (PipelineKind.TYUC17_SPI,), "y", "w", "z", "psi")
    y = sk.y.as_f64()
    flags = set()
    if params.q == 0:
        y_hat = y
    elif params.use_stabilized:
        out = spi_stabilized(sk.z.as_f64(), y, params.q)
        if out.rank_collapse:
            flags.add("power_iteration_rank_collapse")
        y_hat = out.y_hat
    else:
        y_hat = spi_plain(sk.z.as_f64(), y, params.q)
    if params.q > 0:
        y_hat = _stored(y_hat, sk)
    return _qb_finish(PipelineKind.TYUC17_SPI, y_hat, sk.w.as_f64(), sk.psi.as_f64(), r, flags)


def tyuc17_spi_variant(sk: SketchSet, omega_tilde, q: int, r: int, force: bool = False) -> ApproxResult:
    """Storage-reduced SPI: the rangefinder is synthesized as Z (Z^T Z)^q O."""
    _require(sk, _TYUC17_FAMILY, "w", "z", "psi")
    o = omega_tilde.as_f64() if hasattr(omega_tilde, "as_f64") else np.asarray(omega_tilde, dtype=np.float64)
    y_hat = _stored(spi_variant(sk.z.as_f64(), o, q, force=force), sk)
    return _qb_finish(PipelineKind.TYUC17_SPI_VARIANT, y_hat, sk.w.as_f64(), sk.psi.as_f64(), r, set())


def rsvd_onepass(sk: SketchSet, r: int) -> ApproxResult:
    """Orthogonal-projection one-pass pipeline for row-streamed data.

    With W = A^T A Omega, the triangular solve R^-T W^T equals Q^T A exactly,
    so the approximation has no sketch-and-solve error source.
    """
    _require(sk, (PipelineKind.RSVD_ONEPASS,), "y", "w")
    if sk.s < r:
        raise ValueError(f"sketch size s={sk.s} must be >= target rank r={r}")
    flags = set()
    qres = qr_economy(sk.y.as_f64())
    wt = sk.w.as_f64().T
    # Directions below the sketches' storage-precision noise floor cannot be
    # trusted; a singular solve there would amplify rounding junk.
    tol = max(_TRI_TOL, 50.0 * float(np.finfo(sk.y.data.dtype).eps))
    diag = np.abs(np.diag(qres.r))
    if diag.min() < tol * max(diag.max(), 1e-300):
        flags.add("triangular_solve_singular")
        b, *_ = np.linalg.lstsq(qres.r.T, wt, rcond=tol)
    else:
        b = la.solve_triangular(qres.r, wt, trans="T", lower=False, check_finite=False)
    trunc = svd_truncated(b, r)
    return ApproxResult(
        kind=PipelineKind.RSVD_ONEPASS,
        u=qres.q @ trunc.u,
        sv=trunc.s,
        v=trunc.v,
        q_factor=qres.q,
        u_tilde=trunc.u,
        b=b,
        flags=frozenset(flags),
    )


def _two_sided_finish(kind, y_hat, x_hat, k, phi, psi, r, flags) -> ApproxResult:
    q_res = qr_economy(y_hat)
    p_res = qr_economy(x_hat.T)
    if q_res.rank_deficient or p_res.rank_deficient:
        flags.add("rangefinder_rank_deficient")
    # Two-sided core fit (Phi Q) C (Psi P)^T ~ K, solved left then right.
    left = lstsq(phi @ q_res.q, k)
    right = lstsq(psi @ p_res.q, left.x.T)
    if left.ill_conditioned or right.ill_conditioned:
        flags.add("core_solve_ill_conditioned")
    core = right.x.T
    trunc = svd_truncated(core, r)
    return ApproxResult(
        kind=kind,
        u=q_res.q @ trunc.u,
        sv=trunc.s,
        v=p_res.q @ trunc.v,
        q_factor=q_res.q,
        u_tilde=trunc.u,
        core=core,
        p_factor=p_res.q,
        flags=frozenset(flags),
    )


def tyuc19(sk: SketchSet, r: int) -> ApproxResult:
    """Two-sided pipeline: range and corange bases plus a d x d core sketch."""
    _require(sk, (PipelineKind.TYUC19,), "y", "x", "k", "phi", "psi")
    if sk.d <= sk.s:
        raise ValueError(f"core sketch size d={sk.d} must exceed s={sk.s}")
    return _two_sided_finish(
        PipelineKind.TYUC19,
        sk.y.as_f64(),
        sk.x.as_f64(),
        sk.k.as_f64(),
        sk.phi.as_f64(),
        sk.psi.as_f64(),
        r,
        set(),
    )


def tyuc19_spi(sk: SketchSet, omega_tilde, gamma_tilde, q: int, r: int) -> ApproxResult:
    """Two-sided pipeline with both bases powered through wide sketches.

    Y-hat = Z (Z^T Z)^q O and X-hat = G (W W^T)^q W, where O (l x s) and
    G (s x l) are small test matrices; the rest follows the two-sided solve.
    """
    _require(sk, (PipelineKind.TYUC19_SPI,), "z", "w", "k", "phi", "psi")
    if sk.d <= sk.s:
        raise ValueError(f"core sketch size d={sk.d} must exceed s={sk.s}")
    if sk.l < 2 * sk.s:
        raise ValueError(f"conversion storage contract requires l >= 2s, got l={sk.l}, s={sk.s}")
    o = omega_tilde.as_f64() if hasattr(omega_tilde, "as_f64") else np.asarray(omega_tilde, dtype=np.float64)
    g = gamma_tilde.as_f64() if hasattr(gamma_tilde, "as_f64") else np.asarray(gamma_tilde, dtype=np.float64)
    z = sk.z.as_f64()
    w = sk.w.as_f64()
    y_hat = _stored(spi_variant(z, o, q), sk)
    x_hat = _stored(spi_variant(w.T, g.T, q).T, sk)
    return _two_sided_finish(
        PipelineKind.TYUC19_SPI, y_hat, x_hat, sk.k.as_f64(), sk.phi.as_f64(), sk.psi.as_f64(), r, set()
    )
