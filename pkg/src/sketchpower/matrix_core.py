"""Dense-matrix contract and the three numerical kernels everything else uses.

The kernels (economy QR, truncated SVD, least-squares via pseudoinverse) run
exclusively in binary64; binary32 exists only as a *storage* precision and
callers upcast at the boundary.  Rank deficiency and ill conditioning are
reported through flags on the result objects, never as exceptions: the caller
decides what to do.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

__all__ = [
    "Precision",
    "DenseMatrix",
    "QrResult",
    "TruncatedSvd",
    "LstsqResult",
    "qr_economy",
    "svd_truncated",
    "lstsq",
    "as_f64",
]

# Rank-deficiency / conditioning thresholds of the kernel contracts.
QR_RANK_TOL = 1e-14
LSTSQ_COND_TOL = 1e-12


class Precision(enum.Enum):
    """Storage precision of a matrix; all arithmetic happens in binary64."""

    BINARY32 = "binary32"
    BINARY64 = "binary64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.BINARY32 else np.float64)

    @property
    def words_per_entry(self) -> float:
        """Storage cost of one entry in double-precision words."""
        return 0.5 if self is Precision.BINARY32 else 1.0


def _precision_of(dtype) -> Precision:
    if np.dtype(dtype) == np.float32:
        return Precision.BINARY32
    if np.dtype(dtype) == np.float64:
        return Precision.BINARY64
    raise TypeError(f"unsupported element dtype {dtype!r}")


@dataclass(frozen=True)
class DenseMatrix:
    """A real matrix with a declared element precision, stored row-major.

    Carrier type for data matrices, sketches and factors.  Entries must be
    finite; construction through :meth:`from_array` enforces this.
    """

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = self.data
        if a.ndim != 2:
            raise ValueError(f"expected a 2-d array, got ndim={a.ndim}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"matrix dimensions must be >= 1, got {a.shape}")
        _precision_of(a.dtype)
        if not a.flags["C_CONTIGUOUS"]:
            object.__setattr__(self, "data", np.ascontiguousarray(a))

    @classmethod
    def from_array(cls, a, precision: Precision | None = None, check_finite: bool = True) -> "DenseMatrix":
        a = np.asarray(a)
        dtype = precision.dtype if precision is not None else (
            a.dtype if a.dtype in (np.float32, np.float64) else np.float64
        )
        a = np.ascontiguousarray(a, dtype=dtype)
        if check_finite and not np.isfinite(a).all():
            raise ValueError("matrix contains non-finite entries")
        return cls(a)

    @classmethod
    def zeros(cls, rows: int, cols: int, precision: Precision = Precision.BINARY64) -> "DenseMatrix":
        return cls(np.zeros((rows, cols), dtype=precision.dtype))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def precision(self) -> Precision:
        return _precision_of(self.data.dtype)

    @property
    def words(self) -> float:
        """Storage cost in double-precision words."""
        return self.rows * self.cols * self.precision.words_per_entry

    def to_precision(self, precision: Precision) -> "DenseMatrix":
        if precision is self.precision:
            return self
        return DenseMatrix(self.data.astype(precision.dtype))

    def as_f64(self) -> np.ndarray:
        """The payload upcast to binary64 (no copy if already binary64)."""
        return self.data if self.data.dtype == np.float64 else self.data.astype(np.float64)


def as_f64(m) -> np.ndarray:
    """Accept a DenseMatrix or array and return a binary64 ndarray."""
    if isinstance(m, DenseMatrix):
        return m.as_f64()
    a = np.asarray(m)
    return a if a.dtype == np.float64 else a.astype(np.float64)


@dataclass
class QrResult:
    """Economy QR factors plus a rank-deficiency flag (never a failure)."""

    q: np.ndarray
    r: np.ndarray
    rank_deficient: bool


@dataclass
class TruncatedSvd:
    """Leading singular triplets: u (m x r), s (r,) non-increasing, v (n x r)."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


@dataclass
class LstsqResult:
    x: np.ndarray
    ill_conditioned: bool


def _require_f64(m, name: str) -> np.ndarray:
    a = m.data if isinstance(m, DenseMatrix) else np.asarray(m)
    if a.dtype != np.float64:
        raise TypeError(f"{name} must be binary64; upcast at the storage boundary first")
    return a


def qr_economy(m) -> QrResult:
    """Thin QR of a tall matrix.

    Q has orthonormal columns spanning range(M); R is upper triangular with
    Q @ R == M to working precision.  A diagonal entry of R below
    ``QR_RANK_TOL * ||M||_F`` raises the ``rank_deficient`` flag.
    """
    a = _require_f64(m, "M")
    if a.shape[0] < a.shape[1]:
        raise ValueError(f"qr_economy expects rows >= cols, got {a.shape}")
    q, r = la.qr(a, mode="economic", check_finite=False)
    scale = float(np.linalg.norm(a))
    deficient = bool(np.min(np.abs(np.diag(r))) < QR_RANK_TOL * scale) if scale > 0 else True
    return QrResult(q=q, r=r, rank_deficient=deficient)


def svd_truncated(m, r: int) -> TruncatedSvd:
    """The r leading singular triplets of M; the best rank-r approximation.

    Ties ``sigma_r == sigma_{r+1}`` return one valid subspace; callers that
    compare subspaces must use gap-separated spectra.
    """
    a = _require_f64(m, "M")
    if r < 1:
        raise ValueError(f"truncation rank must be >= 1, got {r}")
    if r > min(a.shape):
        raise ValueError(f"truncation rank {r} exceeds min(shape)={min(a.shape)}")
    u, s, vt = la.svd(a, full_matrices=False, check_finite=False)
    return TruncatedSvd(u=u[:, :r], s=s[:r], v=vt[:r].T)


def lstsq(c, rhs) -> LstsqResult:
    """Minimize ||C X - Rhs||_F; equals pinv(C) @ Rhs.

    If the smallest singular value of C is below ``LSTSQ_COND_TOL`` times the
    largest, the minimum-norm solution is returned and ``ill_conditioned`` is
    set.
    """
    a = _require_f64(c, "C")
    b = _require_f64(rhs, "Rhs")
    if a.shape[0] < a.shape[1]:
        raise ValueError(f"lstsq expects rows >= cols, got {a.shape}")
    x, _, _, sv = np.linalg.lstsq(a, b, rcond=LSTSQ_COND_TOL)
    smax = sv[0] if sv.size else 0.0
    flag = bool(smax == 0.0 or sv[-1] < LSTSQ_COND_TOL * smax)
    return LstsqResult(x=x, ill_conditioned=flag)
