"""Mixed-precision storage strategy: cast schedules and an exact storage ledger.

Storage is counted in double-precision words (a binary32 entry costs half a
word).  Under the mixed plan the large sketches are held in binary32, which
doubles the affordable sketch sizes under a fixed word budget; they are
upcast to binary64 right before orthonormalization and the solves, reusing
the space of the sketch that is no longer needed.  The ledger proves the
space reuse is feasible; actual buffers are allocated fresh (byte aliasing is
modeled, not performed).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .matrix_core import Precision

__all__ = [
    "PrecisionPlan",
    "LedgerError",
    "LedgerEntry",
    "StorageLedger",
    "CastPoint",
    "plan_mixed",
    "cast_schedule",
    "accuracy_floor",
    "sketch_precisions",
    "simulate_storage",
]


class PrecisionPlan(enum.Enum):
    ALL_DOUBLE = "all_double"
    MIXED_SINGLE_DOUBLE = "mixed_single_double"


class LedgerError(RuntimeError):
    """Raised when a cast schedule's space reuse is infeasible."""


def plan_mixed(m: int, n: int, s: int, d: int) -> int:
    """Power-sketch size l making single {Y, W, Z} fit the double {Y, W} budget.

    Solves m*l = m*s + d*n, rounded up: the freed binary32 words of Z then
    cover the binary64 upcast of Y-hat and W exactly (equality for m = n,
    where l = s + d).
    """
    if min(m, n, s, d) < 1:
        raise ValueError("plan_mixed requires m, n, s, d >= 1")
    return -((m * s + d * n) // -m)  # ceil


def accuracy_floor(plan: PrecisionPlan) -> float:
    """Expected relative-error floor of a plan (a guide, not an assertion)."""
    return 1.2e-7 if plan is PrecisionPlan.MIXED_SINGLE_DOUBLE else 2.2e-16


_SINGLE_SKETCHES_MIXED = {
    # Per pipeline: which sketches are stored binary32 under the mixed plan.
    # The two-sided core sketch K stays binary64 throughout.
    "tyuc17": ("w",),
    "tyuc17_spi": ("y", "w", "z"),
    "tyuc17_spi_variant": ("w", "z"),
    "rsvd_onepass": ("y", "w"),
    "tyuc19": ("y", "x"),
    "tyuc19_spi": ("z", "w"),
}

_ALL_SKETCHES = {
    "tyuc17": ("y", "w"),
    "tyuc17_spi": ("y", "w", "z"),
    "tyuc17_spi_variant": ("w", "z"),
    "rsvd_onepass": ("y", "w"),
    "tyuc19": ("y", "x", "k"),
    "tyuc19_spi": ("z", "w", "k"),
}


def sketch_precisions(pipeline: str, plan: PrecisionPlan) -> dict[str, Precision]:
    """Storage precision of each sketch of a pipeline under a plan."""
    if pipeline not in _ALL_SKETCHES:
        raise ValueError(f"unknown pipeline {pipeline!r}")
    single = _SINGLE_SKETCHES_MIXED[pipeline] if plan is PrecisionPlan.MIXED_SINGLE_DOUBLE else ()
    return {
        name: Precision.BINARY32 if name in single else Precision.BINARY64
        for name in _ALL_SKETCHES[pipeline]
    }


@dataclass(frozen=True)
class CastPoint:
    """One precision conversion in a pipeline's schedule."""

    stage: str                 # where in the pipeline the cast happens
    matrices: tuple[str, ...]  # sketch labels converted binary32 -> binary64
    reuses: str | None         # label whose freed space covers the conversion


def cast_schedule(plan: PrecisionPlan, pipeline: str) -> tuple[CastPoint, ...]:
    """Ordered cast points of a pipeline.

    Mixed plans upcast the binary32 sketches to binary64 immediately before
    the QR / least-squares stage; the power sketch Z is dropped at that point
    and its words are reused.  all_double plans have no casts.
    """
    if pipeline not in _ALL_SKETCHES:
        raise ValueError(f"unknown pipeline {pipeline!r}")
    if plan is PrecisionPlan.ALL_DOUBLE:
        return ()
    if pipeline == "tyuc17":
        # Corange sketch is single; the small solve result is upcast before
        # the truncation SVD, reusing the corange space (needs d >= 2s).
        return (CastPoint("before_truncation", ("b",), reuses="w"),)
    if pipeline == "tyuc17_spi":
        return (CastPoint("before_qr_and_solve", ("y", "w"), reuses="z"),)
    if pipeline == "tyuc17_spi_variant":
        return (
            CastPoint("gram_matrix", ("ztz",), reuses=None),
            CastPoint("before_qr", ("y",), reuses="z"),
        )
    if pipeline == "rsvd_onepass":
        return (CastPoint("before_qr_and_solve", ("y", "w"), reuses=None),)
    if pipeline == "tyuc19":
        return (CastPoint("before_qr", ("y", "x"), reuses=None),)
    return (  # tyuc19_spi
        CastPoint("gram_matrices", ("ztz", "wwt"), reuses=None),
        CastPoint("before_qr", ("y", "x"), reuses=("z", "w")),
    )


@dataclass
class LedgerEntry:
    label: str
    rows: int
    cols: int
    precision: Precision

    @property
    def words(self) -> float:
        return self.rows * self.cols * self.precision.words_per_entry


@dataclass
class StorageLedger:
    """Exact storage accounting in double-precision words.

    ``entries`` logs every allocation (freed or not); ``peak_words`` is the
    running maximum of live words.  Internally counts half-words so binary32
    buffers stay exact.
    """

    entries: list[LedgerEntry] = field(default_factory=list)
    _live: dict = field(default_factory=dict)
    _current2: int = 0
    _peak2: int = 0

    def alloc(self, label: str, rows: int, cols: int, precision: Precision) -> None:
        if label in self._live:
            raise LedgerError(f"buffer {label!r} already allocated")
        e = LedgerEntry(label, rows, cols, precision)
        self.entries.append(e)
        self._live[label] = e
        self._current2 += self._half_words(e)
        self._peak2 = max(self._peak2, self._current2)

    def free(self, label: str) -> float:
        e = self._live.pop(label, None)
        if e is None:
            raise LedgerError(f"buffer {label!r} is not live")
        self._current2 -= self._half_words(e)
        return e.words

    def convert(self, label: str, to: Precision, reuse_freed_words: float = 0.0) -> None:
        """Re-declare a live buffer's precision, checking space reuse.

        The extra words needed by the conversion must be covered by words
        freed at the same schedule point, else the cast is infeasible.
        """
        e = self._live.get(label)
        if e is None:
            raise LedgerError(f"buffer {label!r} is not live")
        extra = e.rows * e.cols * (to.words_per_entry - e.precision.words_per_entry)
        if extra > reuse_freed_words + 1e-9:
            raise LedgerError(
                f"upcasting {label!r} needs {extra} words but only {reuse_freed_words} were freed"
            )
        self._current2 += int(round(2 * extra))
        self._peak2 = max(self._peak2, self._current2)
        new = LedgerEntry(e.label, e.rows, e.cols, to)
        self._live[label] = new
        self.entries.append(new)

    @staticmethod
    def _half_words(e: LedgerEntry) -> int:
        return int(round(2 * e.words))

    @property
    def current_words(self) -> float:
        return self._current2 / 2

    @property
    def peak_words(self) -> float:
        return self._peak2 / 2

    def csv_rows(self) -> list[tuple]:
        return [(e.label, e.rows, e.cols, e.precision.value, e.words) for e in self.entries]


def simulate_storage(
    pipeline: str,
    plan: PrecisionPlan,
    m: int,
    n: int,
    s: int,
    d: int = 0,
    l: int = 0,
) -> StorageLedger:
    """Run a pipeline's allocation/cast schedule through a fresh ledger.

    Follows the big-buffer accounting convention: the large sketch buffers (and, for
    the storage-reduced variants, the l x l Gram matrix plus an s-word
    buffer); test matrices and O(s^2) iterates are disregarded.
    """
    prec = sketch_precisions(pipeline, plan)
    led = StorageLedger()
    shapes = {
        "y": (m, s),
        "w": {
            "tyuc17": (d, n), "tyuc17_spi": (d, n), "tyuc17_spi_variant": (d, n),
            "rsvd_onepass": (n, s), "tyuc19_spi": (l, n),
        }.get(pipeline),
        "z": (m, l),
        "x": (s, n),
        "k": (d, d),
    }
    for name in _ALL_SKETCHES[pipeline]:
        r, c = shapes[name]
        led.alloc(name, r, c, prec[name])

    if plan is PrecisionPlan.ALL_DOUBLE:
        return led

    if pipeline == "tyuc17":
        led.alloc("b", s, n, Precision.BINARY32)
        freed = led.free("w")
        led.convert("b", Precision.BINARY64, reuse_freed_words=freed)
    elif pipeline == "tyuc17_spi":
        # Y-hat overwrites Y during the power iterations; then Z is dropped
        # and its words cover the binary64 copies of Y-hat and W (the word
        # balance m*l = m*s + d*n, up to rounding).
        freed = led.free("z")
        led.convert("y", Precision.BINARY64, reuse_freed_words=freed)
        freed -= m * s / 2
        led.convert("w", Precision.BINARY64, reuse_freed_words=freed)
    elif pipeline == "tyuc17_spi_variant":
        if s > l // 2:
            raise LedgerError(f"variant storage contract requires s <= l/2, got s={s}, l={l}")
        led.alloc("ztz", l, l, Precision.BINARY64)
        led.alloc("colbuf", 1, s, Precision.BINARY64)
        led.free("ztz")
        led.free("colbuf")
        # Y-hat lands in the first s columns of Z; dropping Z releases the
        # remaining l - s columns, which must cover the binary64 upcast.
        freed = led.free("z") - m * s / 2
        led.alloc("y", m, s, Precision.BINARY32)
        led.convert("y", Precision.BINARY64, reuse_freed_words=freed)
    elif pipeline == "rsvd_onepass":
        for name in ("y", "w"):
            led.convert(name, Precision.BINARY64, reuse_freed_words=float("inf"))
    elif pipeline == "tyuc19":
        for name in ("y", "x"):
            led.convert(name, Precision.BINARY64, reuse_freed_words=float("inf"))
    elif pipeline == "tyuc19_spi":
        if s > l // 2:
            raise LedgerError(f"conversion contract requires l >= 2s, got s={s}, l={l}")
        led.alloc("ztz", l, l, Precision.BINARY64)
        led.alloc("colbuf", 1, s, Precision.BINARY64)
        led.free("ztz")
        led.free("colbuf")
        freed_z = led.free("z") - m * s / 2
        led.alloc("y", m, s, Precision.BINARY32)
        led.convert("y", Precision.BINARY64, reuse_freed_words=freed_z)
        led.alloc("wwt", l, l, Precision.BINARY64)
        led.free("wwt")
        freed_w = led.free("w") - s * n / 2
        led.alloc("x", s, n, Precision.BINARY32)
        led.convert("x", Precision.BINARY64, reuse_freed_words=freed_w)
    return led
