import dataclasses

import numpy as np
import pytest

from sketchpower.approximators import (
    SketchConfig,
    rsvd_onepass,
    tyuc17,
    tyuc17_spi,
    tyuc17_spi_variant,
    tyuc19,
    tyuc19_spi,
)
from sketchpower.precision_model import PrecisionPlan
from sketchpower.spi import SpiParams
from sketchpower.stream_ingest import LinearUpdate, PipelineKind, open_stream
from sketchpower.test_matrices import GAUSSIAN, SeedSpec, Stream, generate


def _rank_r_matrix(m, n, r, seed, svals=None):
    rng = np.random.default_rng(seed)
    u = np.linalg.qr(rng.standard_normal((m, r)))[0]
    v = np.linalg.qr(rng.standard_normal((n, r)))[0]
    if svals is None:
        svals = np.linspace(2.0, 1.0, r)
    return (u * svals) @ v.T


def _sketch(kind, a, s, d=0, l=0, seed=0, plan=PrecisionPlan.ALL_DOUBLE):
    m, n = a.shape
    st = open_stream(kind, m, n, s, d, l, base_seed=seed, plan=plan)
    upd = LinearUpdate.row_block(0, a) if kind is PipelineKind.RSVD_ONEPASS else LinearUpdate.dense(a)
    return st.ingest(upd).finalize()


def _sines(u, w):
    qu = np.linalg.qr(u)[0]
    qw = np.linalg.qr(w)[0]
    return np.linalg.norm(qu - qw @ (qw.T @ qu), 2)


def test_tyuc17_exact_recovery():
    a = _rank_r_matrix(90, 70, 5, seed=0)
    sk = _sketch(PipelineKind.TYUC17, a, s=9, d=20, seed=1)
    res = tyuc17(sk, 5)
    assert np.linalg.norm(a - res.reconstruct()) <= 1e-10 * np.linalg.norm(a)
    assert np.linalg.norm(res.u.T @ res.u - np.eye(5)) <= 1e-10 * np.sqrt(5)


def test_tyuc17_zero_matrix():
    sk = _sketch(PipelineKind.TYUC17, np.zeros((20, 15)), s=3, d=7, seed=2)
    res = tyuc17(sk, 2)
    assert np.allclose(res.sv, 0.0)
    assert not res.reconstruct().any()


def test_tyuc17_spi_q0_matches_tyuc17_subspace():
    a = _rank_r_matrix(60, 50, 4, seed=3) + 0.01 * np.random.default_rng(3).standard_normal((60, 50))
    sk = _sketch(PipelineKind.TYUC17_SPI, a, s=8, d=18, l=12, seed=4)
    res0 = tyuc17_spi(sk, SpiParams(q=0), 4)
    res17 = tyuc17(sk, 4)
    assert _sines(res0.q_factor, res17.q_factor) <= 1e-10


def test_tyuc17_spi_empirical_constant_with_gap():
    # Exact rank k (> s) with a 1e3 gap after the target rank: the powered
    # rangefinder drives the reconstruction error down to a small multiple of
    # sigma_{r+1}.
    m = n = 400
    r, s, d, l, k = 5, 10, 30, 40, 15
    svals = np.concatenate([np.full(r, 1e3), np.linspace(1.0, 0.8, k - r)])
    cs = []
    for t in range(20):
        a = _rank_r_matrix(m, n, k, seed=100 + t, svals=svals)
        sk = _sketch(PipelineKind.TYUC17_SPI, a, s=s, d=d, l=l, seed=200 + t)
        res = tyuc17_spi(sk, SpiParams(q=3), r)
        err = np.linalg.norm(a - res.q_factor @ res.b, 2)
        cs.append(err / svals[r])
    assert np.mean(cs) <= 5.0


def test_variant_matches_spi_on_synthesized_rangefinder():
    a = _rank_r_matrix(50, 45, 6, seed=5) + 0.05 * np.random.default_rng(6).standard_normal((50, 45))
    s, d, l, q, r = 5, 12, 14, 2, 3
    sk = _sketch(PipelineKind.TYUC17_SPI_VARIANT, a, s=s, d=d, l=l, seed=7)
    omt = generate(GAUSSIAN, l, s, SeedSpec(8, Stream.OMEGA_TILDE, 0))
    res_var = tyuc17_spi_variant(sk, omt, q, r)
    # Oracle: run the plain powered pipeline on Y := Z @ Omega-tilde.
    y = sk.z.as_f64() @ omt.as_f64()
    fake = dataclasses.replace(sk, kind=PipelineKind.TYUC17_SPI,
                               y=type(sk.z).from_array(y), s=s)
    res_spi = tyuc17_spi(fake, SpiParams(q=q, stabilize=False), r)
    ref = np.linalg.norm(a - res_spi.reconstruct())
    got = np.linalg.norm(a - res_var.reconstruct())
    assert abs(got - ref) <= 1e-9 * max(ref, 1.0)


def test_variant_q0_stays_inside_power_sketch_range():
    a = _rank_r_matrix(40, 40, 4, seed=9)
    sk = _sketch(PipelineKind.TYUC17_SPI_VARIANT, a, s=4, d=10, l=8, seed=10)
    omt = generate(GAUSSIAN, 8, 4, SeedSpec(11, Stream.OMEGA_TILDE, 0))
    res = tyuc17_spi_variant(sk, omt, 0, 4)
    z = sk.z.as_f64()
    proj = z @ np.linalg.lstsq(z, res.q_factor, rcond=None)[0]
    assert np.linalg.norm(proj - res.q_factor) <= 1e-9


def test_rsvd_onepass_identities():
    rng = np.random.default_rng(12)
    for t in range(20):
        a = rng.standard_normal((50, 40))
        sk = _sketch(PipelineKind.RSVD_ONEPASS, a, s=15, seed=300 + t)
        res = rsvd_onepass(sk, 10)
        assert np.linalg.norm(res.b - res.q_factor.T @ a) <= 1e-11 * np.linalg.norm(a)


def test_rsvd_onepass_exact_recovery():
    a = _rank_r_matrix(80, 60, 6, seed=13)
    sk = _sketch(PipelineKind.RSVD_ONEPASS, a, s=10, seed=14)
    res = rsvd_onepass(sk, 6)
    assert np.linalg.norm(a - res.reconstruct()) <= 1e-10 * np.linalg.norm(a)


def test_tyuc19_exact_recovery_and_core_sketch():
    a = _rank_r_matrix(70, 55, 5, seed=15)
    sk = _sketch(PipelineKind.TYUC19, a, s=8, d=17, seed=16)
    res = tyuc19(sk, 5)
    assert np.linalg.norm(a - res.reconstruct()) <= 1e-9 * np.linalg.norm(a)
    want_k = sk.phi.data @ a @ sk.psi.data.T
    assert np.linalg.norm(sk.k.data - want_k) <= 1e-12 * np.linalg.norm(want_k)
    # core factorization consistency: (Phi Q) C (Psi P)^T ~ K
    fit = (sk.phi.data @ res.q_factor) @ res.core @ (sk.psi.data @ res.p_factor).T
    assert np.linalg.norm(fit - sk.k.data) <= 1e-8 * np.linalg.norm(sk.k.data)


def test_tyuc19_zero_matrix():
    sk = _sketch(PipelineKind.TYUC19, np.zeros((25, 20)), s=4, d=9, seed=17)
    res = tyuc19(sk, 2)
    assert np.allclose(res.core, 0.0, atol=1e-14)


def test_tyuc19_spi_q0_reduces_to_tyuc19():
    a = _rank_r_matrix(60, 48, 4, seed=18) + 0.02 * np.random.default_rng(19).standard_normal((60, 48))
    s, d, l = 6, 13, 12
    sk = _sketch(PipelineKind.TYUC19_SPI, a, s=s, d=d, l=l, seed=20)
    omt = generate(GAUSSIAN, l, s, SeedSpec(21, Stream.OMEGA_TILDE, 0))
    gmt = generate(GAUSSIAN, s, l, SeedSpec(21, Stream.GAMMA_TILDE, 0))
    res = tyuc19_spi(sk, omt, gmt, 0, 4)

    y = sk.z.as_f64() @ omt.as_f64()
    x = gmt.as_f64() @ sk.w.as_f64()
    fake = dataclasses.replace(
        sk, kind=PipelineKind.TYUC19,
        y=type(sk.z).from_array(y), x=type(sk.z).from_array(x), w=None,
    )
    ref = tyuc19(fake, 4)
    got = np.linalg.norm(a - res.reconstruct())
    want = np.linalg.norm(a - ref.reconstruct())
    assert abs(got - want) <= 1e-9 * max(want, 1.0)


def test_tyuc19_spi_rank_recovery_mixed_precision():
    a = _rank_r_matrix(90, 75, 4, seed=22)
    sk = _sketch(PipelineKind.TYUC19_SPI, a, s=8, d=18, l=16, seed=23,
                 plan=PrecisionPlan.MIXED_SINGLE_DOUBLE)
    omt = generate(GAUSSIAN, 16, 8, SeedSpec(24, Stream.OMEGA_TILDE, 0))
    gmt = generate(GAUSSIAN, 8, 16, SeedSpec(24, Stream.GAMMA_TILDE, 0))
    res = tyuc19_spi(sk, omt, gmt, 1, 4)
    assert np.linalg.norm(a - res.reconstruct()) <= 1e-6 * np.linalg.norm(a)


def test_scale_equivariance():
    a = _rank_r_matrix(45, 36, 5, seed=25) + 0.03 * np.random.default_rng(26).standard_normal((45, 36))
    base = tyuc17(_sketch(PipelineKind.TYUC17, a, s=8, d=18, seed=27), 4)
    for c in (-2.0, 0.5, 10.0):
        scaled = tyuc17(_sketch(PipelineKind.TYUC17, c * a, s=8, d=18, seed=27), 4)
        assert np.allclose(scaled.sv, abs(c) * base.sv, rtol=1e-10)
        assert _sines(scaled.u, base.u) <= 1e-10
        assert _sines(scaled.v, base.v) <= 1e-10


def test_one_pass_certificate_enforced():
    a = _rank_r_matrix(30, 25, 3, seed=28)
    sk = _sketch(PipelineKind.TYUC17, a, s=5, d=11, seed=29)
    tampered = dataclasses.replace(sk, pass_count=2)
    with pytest.raises(ValueError, match="pass"):
        tyuc17(tampered, 3)


def test_pipeline_kind_mismatch_rejected():
    a = _rank_r_matrix(30, 25, 3, seed=30)
    sk = _sketch(PipelineKind.RSVD_ONEPASS, a, s=6, seed=31)
    with pytest.raises(ValueError):
        tyuc17(sk, 3)


def test_sketch_config_validation():
    cfg = SketchConfig(r=5, s=10, d=20, l=25, q=1)
    cfg.validate(PipelineKind.TYUC17_SPI)
    with pytest.raises(ValueError):
        SketchConfig(r=5, s=4, d=20).validate(PipelineKind.TYUC17)
    with pytest.raises(ValueError):
        SketchConfig(r=5, s=10, d=8).validate(PipelineKind.TYUC17)
    with pytest.raises(ValueError):
        SketchConfig(r=5, s=10, d=20, l=10).validate(PipelineKind.TYUC17_SPI)
    with pytest.raises(ValueError):
        SketchConfig(r=5, s=10, d=10).validate(PipelineKind.TYUC19)


def test_tyuc19_spi_contract_checks():
    a = _rank_r_matrix(40, 30, 3, seed=32)
    sk = _sketch(PipelineKind.TYUC19_SPI, a, s=6, d=13, l=10, seed=33)  # l < 2s
    omt = generate(GAUSSIAN, 10, 6, SeedSpec(34, Stream.OMEGA_TILDE, 0))
    gmt = generate(GAUSSIAN, 6, 10, SeedSpec(34, Stream.GAMMA_TILDE, 0))
    with pytest.raises(ValueError, match="2s"):
        tyuc19_spi(sk, omt, gmt, 1, 3)
