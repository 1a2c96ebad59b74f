"""Benchmark harness: dataset generation, pipeline runs, guidance, sweeps, CSV.

Budget convention: ``--budget T`` is the total sketch storage T*n in
double-precision words.  Mixed-precision plans map T through the storage
identity (three binary32 sketches, l = T/c); all-double plans spend the same
T words without the factor-2 halving (c*s + d = T for the two-sketch
pipeline).  ``--guidance auto`` resolves sizes as a pure function of the
dataset spec, T and r, so identical invocations produce identical CSVs.

Timing is opt-in (``--timing``): the wall_ms column is left empty by default
so that equal seeds give byte-identical output across runs and worker-pool
sizes (workers come from the SKETCHPOWER_WORKERS environment variable).
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import guidance, metrics, synthetic
from .approximators import (
    rsvd_onepass,
    tyuc17,
    tyuc17_spi,
    tyuc17_spi_variant,
    tyuc19,
    tyuc19_spi,
)
from .precision_model import PrecisionPlan, simulate_storage
from .spi import SpiParams
from .stream_ingest import LinearUpdate, PipelineKind, open_stream, read_matrix
from .test_matrices import GAUSSIAN, SeedSpec, Stream, TestMatrixKind, generate, stream_seed

CSV_HEADER = [
    "algo", "dataset", "param", "alpha_or_gamma", "budget_T", "r", "s", "d", "l", "q",
    "trial", "seed", "S_F", "S_inf", "range_err_F", "range_err_S",
    "extra_err_F", "extra_err_S", "wall_ms",
]

SWEEP_HEADER = ["s", "d", "l", "q", "mean_SF", "mean_Sinf", "is_oracle", "is_guided"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


@dataclass
class RunConfig:
    algo: str
    data: str = "poly"
    file: Optional[str] = None
    alpha: float = 1.0
    gamma: float = 1e-2
    rank: int = 10
    plateau: int = 10
    m: int = 1000
    n: int = 1000
    budget: Optional[float] = None
    s: Optional[int] = None
    d: Optional[int] = None
    l: Optional[int] = None
    q: int = 1
    trials: int = 20
    base_seed: int = 0
    precision: Optional[str] = None
    guidance_mode: str = "manual"
    test_matrix: str = "sparse_rademacher"
    sparsity: float = 0.01
    stabilize: str = "auto"
    timing: bool = False
    block_rows: Optional[int] = None
    out: Optional[str] = None


def _pipeline_kind(algo: str) -> PipelineKind:
    try:
        return PipelineKind(algo)
    except ValueError:
        raise SystemExit(f"unknown algorithm {algo!r}")


def _default_plan(kind: PipelineKind) -> PrecisionPlan:
    if kind in (PipelineKind.TYUC17_SPI, PipelineKind.TYUC17_SPI_VARIANT, PipelineKind.TYUC19_SPI):
        return PrecisionPlan.MIXED_SINGLE_DOUBLE
    return PrecisionPlan.ALL_DOUBLE


def _plan_of(cfg: RunConfig, kind: PipelineKind) -> PrecisionPlan:
    if cfg.precision is None:
        return _default_plan(kind)
    if cfg.precision in ("double", "all_double"):
        return PrecisionPlan.ALL_DOUBLE
    if cfg.precision in ("mixed", "mixed_single_double"):
        return PrecisionPlan.MIXED_SINGLE_DOUBLE
    raise SystemExit(f"unknown precision plan {cfg.precision!r}")


def _test_kind(cfg: RunConfig) -> TestMatrixKind:
    if cfg.test_matrix == "gaussian":
        return GAUSSIAN
    return TestMatrixKind(cfg.test_matrix, cfg.sparsity)


def _dataset_spec(cfg: RunConfig) -> Optional[synthetic.SyntheticSpec]:
    if cfg.data == "file":
        return None
    family = {
        "lowrank": synthetic.Family.LOWRANK_NOISE,
        "poly": synthetic.Family.POLY_DECAY,
        "exp": synthetic.Family.EXP_DECAY,
    }.get(cfg.data)
    if family is None:
        raise SystemExit(f"unknown dataset family {cfg.data!r}")
    return synthetic.SyntheticSpec(
        family=family, m=cfg.m, n=cfg.n, plateau=cfg.plateau,
        alpha=cfg.alpha, snr=cfg.gamma, base_seed=cfg.base_seed,
    )


def _spectrum_class(cfg: RunConfig, file_matrix: Optional[np.ndarray]) -> guidance.SpectrumClass:
    if cfg.data == "lowrank":
        return guidance.SpectrumClass(guidance.DecayKind.FLAT)
    if cfg.data == "poly":
        return guidance.SpectrumClass(guidance.DecayKind.POLY, cfg.alpha)
    if cfg.data == "exp":
        return guidance.SpectrumClass(guidance.DecayKind.EXP, cfg.alpha)
    sv = np.linalg.svd(file_matrix, compute_uv=False)
    return guidance.classify_spectrum(sv[sv > sv[0] * 1e-14])


def _two_sided_budget_s(t_hat: float, n: int, c: float, words_per_side: float) -> int:
    # Solve words_per_side*(c+1)*s*n + 4 s^2 = t_hat*n with d = l/1 = 2s,
    # then shrink until the budget holds after rounding.
    a, b = 4.0 / n, words_per_side * (c + 1.0)
    s = int((-b + math.sqrt(b * b + 4 * a * t_hat)) / (2 * a))
    while s > 1 and words_per_side * (c + 1.0) * s + 4.0 * s * s / n > t_hat:
        s -= 1
    return max(s, 1)


def _auto_sizes(cfg: RunConfig, kind: PipelineKind, plan: PrecisionPlan, file_matrix) -> tuple[int, int, int]:
    if cfg.budget is None:
        raise SystemExit("--guidance auto requires --budget")
    cls = _spectrum_class(cfg, file_matrix)
    c = cfg.m / cfg.n
    t = float(cfg.budget)
    try:
        return _auto_sizes_inner(cfg, kind, plan, cls, c, t)
    except ValueError as exc:
        raise SystemExit(f"infeasible parameter resolution: {exc}")


def _auto_sizes_inner(cfg, kind, plan, cls, c, t) -> tuple[int, int, int]:
    if kind in (PipelineKind.TYUC17_SPI, PipelineKind.TYUC17_SPI_VARIANT):
        t_eff = t if plan is PrecisionPlan.MIXED_SINGLE_DOUBLE else t / 2.0
        conf = guidance.select_sizes(cls, guidance.BudgetSpec(t=t_eff, n=cfg.n, r=cfg.rank, c=c))
        s, d, l = conf.s, conf.d, conf.l
        if kind is PipelineKind.TYUC17_SPI_VARIANT and s > l // 2:
            s = l // 2  # the variant's conversion contract caps s at l/2
        return s, d, l
    if kind is PipelineKind.TYUC17:
        t_eff = t if plan is PrecisionPlan.ALL_DOUBLE else 2.0 * t
        s, d = guidance.select_sizes_double(cls, t_eff, cfg.n, cfg.rank, c)
        return s, d, 0
    if kind is PipelineKind.RSVD_ONEPASS:
        words = 1.0 if plan is PrecisionPlan.ALL_DOUBLE else 0.5
        s = max(cfg.rank, math.floor(t / ((1.0 + c) * words)))
        return s, 0, 0
    # Two-sided pipelines: minimal documented mapping with d = 2s (and
    # l = 2s for the powered variant).
    words = 1.0 if plan is PrecisionPlan.ALL_DOUBLE else 0.5
    if kind is PipelineKind.TYUC19:
        s = _two_sided_budget_s(t, cfg.n, c, words)
        return s, 2 * s, 0
    s = _two_sided_budget_s(t, cfg.n, c, 2.0 * words)
    return s, 2 * s, 2 * s


def _resolve_sizes(cfg: RunConfig, kind: PipelineKind, plan: PrecisionPlan, file_matrix) -> tuple[int, int, int]:
    if cfg.guidance_mode == "auto":
        return _auto_sizes(cfg, kind, plan, file_matrix)
    if cfg.s is None:
        raise SystemExit("manual guidance requires --s (and --d/--l as the algorithm needs)")
    s = cfg.s
    d = cfg.d if cfg.d is not None else 0
    l = cfg.l if cfg.l is not None else 0
    if kind in (PipelineKind.TYUC17, PipelineKind.TYUC17_SPI, PipelineKind.TYUC17_SPI_VARIANT) and d == 0:
        raise SystemExit(f"{kind.value} requires --d")
    if kind in (PipelineKind.TYUC17_SPI, PipelineKind.TYUC17_SPI_VARIANT, PipelineKind.TYUC19_SPI) and l == 0:
        raise SystemExit(f"{kind.value} requires --l")
    if kind is PipelineKind.TYUC19 and d == 0:
        raise SystemExit("tyuc19 requires --d")
    return s, d, l


def _spi_params(cfg: RunConfig) -> SpiParams:
    stab = {"auto": None, "on": True, "off": False}.get(cfg.stabilize)
    if stab is None and cfg.stabilize != "auto":
        raise SystemExit(f"unknown stabilize mode {cfg.stabilize!r}")
    return SpiParams(q=cfg.q, stabilize=stab)


def _approximate(kind, sk, cfg: RunConfig, trial: int):
    r = cfg.rank
    if kind is PipelineKind.TYUC17:
        return tyuc17(sk, r)
    if kind is PipelineKind.TYUC17_SPI:
        return tyuc17_spi(sk, _spi_params(cfg), r)
    if kind is PipelineKind.TYUC17_SPI_VARIANT:
        omt = generate(GAUSSIAN, sk.l, sk.s, SeedSpec(cfg.base_seed, Stream.OMEGA_TILDE, trial))
        return tyuc17_spi_variant(sk, omt, cfg.q, r)
    if kind is PipelineKind.RSVD_ONEPASS:
        return rsvd_onepass(sk, r)
    if kind is PipelineKind.TYUC19:
        return tyuc19(sk, r)
    omt = generate(GAUSSIAN, sk.l, sk.s, SeedSpec(cfg.base_seed, Stream.OMEGA_TILDE, trial))
    gmt = generate(GAUSSIAN, sk.s, sk.l, SeedSpec(cfg.base_seed, Stream.GAMMA_TILDE, trial))
    return tyuc19_spi(sk, omt, gmt, cfg.q, r)


def _dataset_columns(cfg: RunConfig) -> tuple[str, str, Optional[float]]:
    if cfg.data == "file":
        return "file", cfg.file or "", None
    return cfg.data, str(cfg.plateau), cfg.gamma if cfg.data == "lowrank" else cfg.alpha


def _run_one_trial(cfg, kind, plan, sizes, trial, shared_a, shared_base):
    s, d, l = sizes
    if shared_a is None:
        spec = _dataset_spec(cfg).with_trial(trial)
        a = synthetic.generate(spec).data
        base = metrics._baselines(a, cfg.rank)
    else:
        a, base = shared_a, shared_base
    stream = open_stream(
        kind, a.shape[0], a.shape[1], s, d, l,
        base_seed=cfg.base_seed, trial=trial, test_kind=_test_kind(cfg), plan=plan,
    )
    # The orthogonal-projection pipeline requires row-wise delivery.
    upd = LinearUpdate.row_block(0, a) if kind is PipelineKind.RSVD_ONEPASS else LinearUpdate.dense(a)
    sk = stream.ingest(upd).finalize()
    t0 = time.perf_counter()
    result = _approximate(kind, sk, cfg, trial)
    wall_ms = (time.perf_counter() - t0) * 1e3
    rel = metrics.relative_error(a, result, cfg.rank, baselines=base)
    try:
        re = metrics.range_extra_errors(a, result, cfg.rank, baselines=base)
        range_f, range_s, extra_f, extra_s = re.range_f, re.range_s, re.extra_f, re.extra_s
    except metrics.MetricUnsupportedError:
        range_f = range_s = extra_f = extra_s = None
    report = metrics.ErrorReport(
        s_f=rel.s_f,
        s_inf=rel.s_inf,
        range_err_f=range_f,
        range_err_s=range_s,
        extra_err_f=extra_f,
        extra_err_s=extra_s,
        wall_ms=wall_ms if cfg.timing else None,
        flags=rel.flags,
    )
    return {
        "trial": trial,
        "seed": stream_seed(SeedSpec(cfg.base_seed, Stream.OMEGA, trial)),
        "S_F": report.s_f,
        "S_inf": report.s_inf,
        "range_err_F": report.range_err_f,
        "range_err_S": report.range_err_s,
        "extra_err_F": report.extra_err_f,
        "extra_err_S": report.extra_err_s,
        "wall_ms": report.wall_ms,
    }


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("SKETCHPOWER_WORKERS", "1")))
    except ValueError:
        return 1


def run(cfg: RunConfig, out=None) -> int:
    """Execute one benchmark configuration; returns a process exit code."""
    kind = _pipeline_kind(cfg.algo)
    plan = _plan_of(cfg, kind)

    shared_a = shared_base = None
    file_matrix = None
    if cfg.data == "file":
        if not cfg.file:
            raise SystemExit("--data file requires --file PATH")
        file_matrix = read_matrix(cfg.file).data
        shared_a = file_matrix
        shared_base = metrics._baselines(shared_a, cfg.rank)

    sizes = _resolve_sizes(cfg, kind, plan, file_matrix)
    dataset, param, alpha_or_gamma = _dataset_columns(cfg)
    prefix = [cfg.algo, dataset, param, alpha_or_gamma, cfg.budget, cfg.rank,
              sizes[0], sizes[1] or None, sizes[2] or None, cfg.q]

    rows = [None] * cfg.trials
    failures = []
    workers = _workers()
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {
                pool.submit(_run_one_trial, cfg, kind, plan, sizes, t, shared_a, shared_base): t
                for t in range(cfg.trials)
            }
            for fut in concurrent.futures.as_completed(futs):
                t = futs[fut]
                try:
                    rows[t] = fut.result()
                except Exception as exc:  # noqa: BLE001 - enumerate failing trials
                    failures.append((t, exc))
    else:
        for t in range(cfg.trials):
            try:
                rows[t] = _run_one_trial(cfg, kind, plan, sizes, t, shared_a, shared_base)
            except Exception as exc:  # noqa: BLE001
                failures.append((t, exc))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    metric_keys = ["S_F", "S_inf", "range_err_F", "range_err_S", "extra_err_F", "extra_err_S", "wall_ms"]
    for t, row in enumerate(rows):
        if row is None:
            continue
        writer.writerow([_fmt(x) for x in prefix] + [str(t), str(row["seed"])]
                        + [_fmt(row[k]) for k in metric_keys])
    done = [r for r in rows if r is not None]
    if done:
        for label, reducer in (("mean", np.mean), ("std", lambda v: np.std(v, ddof=0))):
            stats = []
            for k in metric_keys:
                vals = [r[k] for r in done if r[k] is not None]
                stats.append(float(reducer(vals)) if vals else None)
            writer.writerow([_fmt(x) for x in prefix] + [label, ""] + [_fmt(x) for x in stats])

    _emit(buf.getvalue(), cfg.out if out is None else out)
    for t, exc in sorted(failures):
        print(f"trial {t} failed: {exc}", file=sys.stderr)
    return 0 if not failures else 1


def run_sweep(cfg: RunConfig, out=None) -> int:
    """Oracle sweep over s at fixed budget; marks the oracle and guided rows."""
    kind = _pipeline_kind(cfg.algo)
    if kind not in (PipelineKind.TYUC17, PipelineKind.TYUC17_SPI):
        raise SystemExit("sweep supports tyuc17 and tyuc17_spi")
    if cfg.budget is None:
        raise SystemExit("sweep requires --budget")
    if cfg.data == "file":
        raise SystemExit("sweep runs on synthetic dataset specs")
    plan = _plan_of(cfg, kind)
    spec = _dataset_spec(cfg)
    table = metrics.oracle_sweep(
        spec, kind, float(cfg.budget), cfg.rank,
        q_set=(cfg.q,) if kind is PipelineKind.TYUC17_SPI else (0,),
        trials=cfg.trials, test_kind=_test_kind(cfg), plan=plan,
    )
    try:
        guided_s = _auto_sizes(cfg, kind, plan, None)[0]
    except SystemExit:
        guided_s = None
    best = table.best()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in table.rows:
        writer.writerow([
            row.s, row.d or "", row.l or "", row.q,
            _fmt(row.mean_s_f), _fmt(row.mean_s_inf),
            "1" if row is best else "0",
            "1" if guided_s is not None and row.s == guided_s else "0",
        ])
    _emit(buf.getvalue(), cfg.out if out is None else out)
    return 0


def emit_spectrum(cfg: RunConfig, out=None) -> int:
    """Index, sigma_i pairs: prescribed for synthetic specs, computed for files."""
    if cfg.data == "file":
        if not cfg.file:
            raise SystemExit("--data file requires --file PATH")
        a = read_matrix(cfg.file).data
        sv = np.linalg.svd(a, compute_uv=False)
    else:
        sv = synthetic.prescribed_spectrum(_dataset_spec(cfg))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "sigma"])
    for i, v in enumerate(sv, start=1):
        writer.writerow([i, _fmt(float(v))])
    _emit(buf.getvalue(), cfg.out if out is None else out)
    return 0


def emit_ledger(cfg: RunConfig, out=None) -> int:
    """Storage-ledger dump (label, rows, cols, precision, words) for a pipeline."""
    kind = _pipeline_kind(cfg.algo)
    plan = _plan_of(cfg, kind)
    sizes = _resolve_sizes(cfg, kind, plan, None)
    led = simulate_storage(kind.value, plan, cfg.m, cfg.n, sizes[0], sizes[1], sizes[2])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "rows", "cols", "precision", "words"])
    for row in led.csv_rows():
        writer.writerow([row[0], row[1], row[2], row[3], _fmt(float(row[4]))])
    writer.writerow(["peak", "", "", "", _fmt(led.peak_words)])
    _emit(buf.getvalue(), cfg.out if out is None else out)
    return 0


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _build_parser(defaults: Optional[dict] = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchpower-bench",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("run", "run trials of one pipeline and emit per-trial CSV rows"),
        ("sweep", "oracle sweep of the rangefinder size at a fixed budget"),
        ("spectrum", "emit the singular-value spectrum of a dataset"),
        ("ledger", "emit the storage-ledger accounting of a pipeline"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON file of defaults mirroring the flags (flags override)")
        p.add_argument("--algo", default="tyuc17_spi",
                       choices=[k.value for k in PipelineKind])
        p.add_argument("--data", default="poly", choices=["lowrank", "poly", "exp", "file"])
        p.add_argument("--file", help="input matrix (SPIM binary or MatrixMarket)")
        p.add_argument("--alpha", type=float, default=1.0, help="decay rate of poly/exp data")
        p.add_argument("--gamma", type=float, default=1e-2, help="noise level of lowrank data")
        p.add_argument("--rank", type=int, default=10, help="target rank r")
        p.add_argument("--plateau", type=int, default=10, help="number of leading unit singular values")
        p.add_argument("--m", type=int, default=1000)
        p.add_argument("--n", type=int, default=1000)
        p.add_argument("--budget", type=float, help="storage budget T (words per column)")
        p.add_argument("--s", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--l", type=int)
        p.add_argument("--q", type=int, default=1, help="power-iteration count")
        p.add_argument("--trials", type=int, default=20)
        p.add_argument("--base-seed", type=int, default=0, dest="base_seed")
        p.add_argument("--precision", choices=["double", "mixed"],
                       help="storage plan (default: mixed for the powered pipelines, double otherwise)")
        p.add_argument("--guidance", default=None, choices=["manual", "auto", "sweep"],
                       dest="guidance_mode")
        p.add_argument("--test-matrix", default="sparse_rademacher", dest="test_matrix",
                       choices=["gaussian", "sparse_rademacher", "sparse_sign", "countsketch"])
        p.add_argument("--sparsity", type=float, default=0.01)
        p.add_argument("--stabilize", default="auto", choices=["auto", "on", "off"])
        p.add_argument("--timing", action="store_true",
                       help="fill wall_ms (breaks byte-reproducibility of the CSV)")
        p.add_argument("--block-rows", type=int, dest="block_rows")
        p.add_argument("--out", "-o", help="output CSV path (default: stdout)")
        if defaults:
            p.set_defaults(**defaults)  # config file values; flags still win
    return parser


def _merge_config_file(argv) -> argparse.Namespace:
    args = _build_parser().parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            defaults = json.load(fh)
        unknown = set(defaults) - set(vars(args))
        if unknown:
            raise SystemExit(f"unknown keys in config file: {sorted(unknown)}")
        args = _build_parser(defaults).parse_args(argv)
    return args


def main(argv=None) -> int:
    args = _merge_config_file(argv)
    command = args.command
    fields = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if fields.get("guidance_mode") is None:
        fields["guidance_mode"] = "manual" if fields.get("s") is not None else "auto"
    cfg = RunConfig(**fields)
    if command == "run":
        if cfg.guidance_mode == "sweep":
            return run_sweep(cfg)
        return run(cfg)
    if command == "sweep":
        return run_sweep(cfg)
    if command == "spectrum":
        return emit_spectrum(cfg)
    return emit_ledger(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
