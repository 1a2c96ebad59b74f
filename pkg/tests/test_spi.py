import numpy as np
import pytest

from sketchpower.spi import OpCounter, SpiParams, spi_plain, spi_stabilized, spi_variant


def _sines_between(u, w):
    """Sines of principal angles between the column spaces of u and w."""
    qu = np.linalg.qr(u)[0]
    qw = np.linalg.qr(w)[0]
    return np.linalg.norm(qu - qw @ (qw.T @ qu), 2)


def test_projector_fixed_point():
    rng = np.random.default_rng(0)
    z = np.linalg.qr(rng.standard_normal((40, 12)))[0]
    y = z[:, :5] @ rng.standard_normal((5, 5))  # range(Y) inside range(Z)
    out = spi_plain(z, y, 3)
    assert np.linalg.norm(out - y) <= 1e-12 * np.linalg.norm(y)


def test_zero_sketch_gives_zero():
    y = np.random.default_rng(1).standard_normal((30, 4))
    out = spi_plain(np.zeros((30, 9)), y, 2)
    assert not out.any()


def test_plain_matches_dense_oracle():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((60, 12))
    y = rng.standard_normal((60, 6))
    out = spi_plain(z, y, 2)
    oracle = np.linalg.matrix_power(z @ z.T, 2) @ y
    assert np.linalg.norm(out - oracle) <= 1e-10 * np.linalg.norm(oracle)


def test_width_and_power_preconditions():
    z = np.zeros((10, 4))
    y = np.zeros((10, 4))
    with pytest.raises(ValueError, match="wider"):
        spi_plain(z, y, 1)
    with pytest.raises(ValueError, match="q >= 1"):
        spi_plain(np.zeros((10, 6)), y, 0)
    with pytest.raises(ValueError, match="q >= 1"):
        spi_stabilized(np.zeros((10, 6)), y, 0)


def test_stabilized_spans_same_space_as_plain():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((50, 10))
    y = rng.standard_normal((50, 5))
    out = spi_stabilized(z, y, 1)
    assert not out.rank_collapse
    assert _sines_between(out.y_hat, spi_plain(z, y, 1)) <= 1e-8


def test_stabilized_survives_extreme_conditioning():
    # kappa(Z) = 1e6 and q = 4: the plain iterate collapses numerically while
    # the re-orthonormalized one keeps full numerical rank.
    rng = np.random.default_rng(4)
    u = np.linalg.qr(rng.standard_normal((80, 10)))[0]
    v = np.linalg.qr(rng.standard_normal((10, 10)))[0]
    z = (u * np.logspace(0, -6, 10)) @ v.T
    y = rng.standard_normal((80, 5))
    plain = spi_plain(z, y, 4)
    stab = spi_stabilized(z, y, 4).y_hat
    sv_plain = np.linalg.svd(plain, compute_uv=False)
    sv_stab = np.linalg.svd(stab, compute_uv=False)
    assert sv_plain[-1] / sv_plain[0] < 1e-12
    assert sv_stab[-1] / sv_stab[0] > 1e-10
    q_final = np.linalg.qr(stab)[0]
    assert np.linalg.norm(q_final.T @ q_final - np.eye(5)) <= 1e-10


def test_stabilized_invariant_subspace():
    rng = np.random.default_rng(5)
    z = np.linalg.qr(rng.standard_normal((40, 8)))[0]
    y = z[:, :4].copy()
    out = spi_stabilized(z, y, 2)
    assert _sines_between(out.y_hat, y) <= 1e-10


def test_stabilized_flags_rank_collapse():
    rng = np.random.default_rng(6)
    z = rng.standard_normal((30, 8))
    y = np.zeros((30, 3))
    y[:, :] = np.outer(rng.standard_normal(30), np.ones(3))  # rank-1 rangefinder
    out = spi_stabilized(z, y, 2)
    assert out.rank_collapse
    assert np.isfinite(out.y_hat).all()


def test_variant_zero_power_and_column_extraction():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((25, 10))
    o = rng.standard_normal((10, 4))
    assert np.allclose(spi_variant(z, o, 0), z @ o, atol=1e-13)
    e1 = np.zeros((10, 1))
    e1[0, 0] = 1.0
    col = spi_variant(z, e1, 2, force=True)
    want = (z @ np.linalg.matrix_power(z.T @ z, 2))[:, :1]
    assert np.linalg.norm(col - want) <= 1e-10 * np.linalg.norm(want)


def test_variant_matches_plain_cross_implementation():
    rng = np.random.default_rng(8)
    z = rng.standard_normal((35, 12))
    o = rng.standard_normal((12, 5))
    out = spi_variant(z, o, 2)
    oracle = spi_plain(z, z @ o, 2)
    assert np.linalg.norm(out - oracle) <= 1e-10 * np.linalg.norm(oracle)


def test_variant_storage_contract():
    z = np.zeros((10, 6))
    with pytest.raises(ValueError, match="force"):
        spi_variant(z, np.zeros((6, 4)), 1)
    spi_variant(z, np.zeros((6, 4)), 1, force=True)  # override allowed


def test_spi_params_defaults():
    assert not SpiParams(q=1).use_stabilized
    assert SpiParams(q=2).use_stabilized
    assert SpiParams(q=1, stabilize=True).use_stabilized
    assert not SpiParams(q=3, stabilize=False).use_stabilized
    with pytest.raises(ValueError):
        SpiParams(q=-1)


def test_cost_shape_and_no_large_intermediates():
    m, l, s, q = 200, 20, 8, 3
    rng = np.random.default_rng(9)
    z = rng.standard_normal((m, l))
    y = rng.standard_normal((m, s))

    c = OpCounter()
    spi_plain(z, y, q, counter=c)
    assert c.flops == 4 * q * m * l * s
    assert c.max_elems == m * l < m * m

    c = OpCounter()
    spi_stabilized(z, y, q, counter=c)
    assert c.flops == q * (4 * m * l * s + 2 * l * s * s)
    assert c.max_elems == m * l < m * m

    c = OpCounter()
    spi_variant(z, y[:l, :s], q, counter=c)
    assert c.flops == 2 * l * m * l + q * 2 * l * l * s + 2 * m * l * s
    assert c.max_elems == m * l < m * m
