"""Synthetic data matrices with exactly prescribed spectra.

Three families, all built as ``U diag(sigma) V^T`` with random orthonormal
factors (thin QR of a standard Gaussian matrix):

* low-rank plus noise: sigma = (1, ..., 1) with ``plateau`` ones, plus a dense
  Gaussian perturbation scaled by ``snr * plateau / n^2``;
* polynomial decay: sigma = (1 x plateau, 2^-alpha, 3^-alpha, ...);
* exponential decay: sigma = (1 x plateau, e^-alpha, e^-2 alpha, ...).

Generators are pure functions of their :class:`SyntheticSpec`; the same spec
always yields the same matrix.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .matrix_core import DenseMatrix, Precision
from .test_matrices import SeedSpec, Stream, rng_for

__all__ = [
    "Family",
    "SyntheticSpec",
    "prescribed_spectrum",
    "generate",
    "stream_row_blocks",
    "write_spim",
]


class Family(enum.Enum):
    LOWRANK_NOISE = "lowrank"
    POLY_DECAY = "poly"
    EXP_DECAY = "exp"


@dataclass(frozen=True)
class SyntheticSpec:
    family: Family
    m: int = 1000
    n: int = 1000
    plateau: int = 10           # number of leading unit singular values
    alpha: float = 1.0          # decay rate for poly / exp families
    snr: float = 1e-2           # noise level gamma for the low-rank family
    base_seed: int = 0
    trial: int = 0

    def __post_init__(self):
        if self.plateau > min(self.m, self.n):
            raise ValueError("plateau rank exceeds matrix dimensions")

    def with_trial(self, trial: int) -> "SyntheticSpec":
        return replace(self, trial=trial)


def prescribed_spectrum(spec: SyntheticSpec) -> np.ndarray:
    """The exact singular values the generator installs (noise excluded)."""
    k = min(spec.m, spec.n)
    r = spec.plateau
    sv = np.ones(k)
    tail = np.arange(2, k - r + 2, dtype=np.float64)
    if spec.family is Family.POLY_DECAY:
        sv[r:] = tail ** (-spec.alpha)
    elif spec.family is Family.EXP_DECAY:
        sv[r:] = np.exp(-spec.alpha * (tail - 1.0))
    else:
        sv[r:] = 0.0
    return sv


def _orthonormal(rows: int, cols: int, seed: SeedSpec) -> np.ndarray:
    g = rng_for(seed).standard_normal((rows, cols))
    q, _ = np.linalg.qr(g)
    return q


def _factors(spec: SyntheticSpec):
    k = spec.plateau if spec.family is Family.LOWRANK_NOISE else min(spec.m, spec.n)
    u = _orthonormal(spec.m, k, SeedSpec(spec.base_seed, Stream.DATA_LEFT, spec.trial))
    v = _orthonormal(spec.n, k, SeedSpec(spec.base_seed, Stream.DATA_RIGHT, spec.trial))
    sv = prescribed_spectrum(spec)[:k]
    return u, sv, v


def generate(spec: SyntheticSpec) -> DenseMatrix:
    u, sv, v = _factors(spec)
    a = (u * sv) @ v.T
    if spec.family is Family.LOWRANK_NOISE and spec.snr > 0.0:
        noise = rng_for(SeedSpec(spec.base_seed, Stream.DATA_NOISE, spec.trial))
        a = a + (spec.snr * spec.plateau / spec.n**2) * noise.standard_normal((spec.m, spec.n))
    return DenseMatrix.from_array(a, check_finite=False)


def stream_row_blocks(spec: SyntheticSpec, block_rows: int) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (start_row, block) pairs reproducing generate(spec) exactly.

    The signal part is assembled per block from the factors; the noise matrix
    of the low-rank family is drawn once so that streamed and materialized
    data are bit-identical.
    """
    if block_rows < 1:
        raise ValueError("block_rows must be >= 1")
    u, sv, v = _factors(spec)
    noise = None
    if spec.family is Family.LOWRANK_NOISE and spec.snr > 0.0:
        rng = rng_for(SeedSpec(spec.base_seed, Stream.DATA_NOISE, spec.trial))
        noise = (spec.snr * spec.plateau / spec.n**2) * rng.standard_normal((spec.m, spec.n))
    vt = v.T
    for start in range(0, spec.m, block_rows):
        stop = min(start + block_rows, spec.m)
        block = (u[start:stop] * sv) @ vt
        if noise is not None:
            block = block + noise[start:stop]
        yield start, block


# Raw binary export: magic "SPIM", version u16 LE, element code u8
# (0 = binary64, 1 = binary32), reserved u8, rows u64 LE, cols u64 LE,
# payload row-major.
SPIM_MAGIC = b"SPIM"
SPIM_VERSION = 1


def write_spim(path, matrix: DenseMatrix, precision: Precision | None = None) -> None:
    m = matrix if precision is None else matrix.to_precision(precision)
    code = 1 if m.precision is Precision.BINARY32 else 0
    header = SPIM_MAGIC + np.array([SPIM_VERSION], dtype="<u2").tobytes()
    header += bytes([code, 0])
    header += np.array([m.rows, m.cols], dtype="<u8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        dt = np.dtype("<f4" if code == 1 else "<f8")
        fh.write(np.ascontiguousarray(m.data, dtype=dt).tobytes())
