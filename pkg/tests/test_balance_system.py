import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from plasma_spike.balance_system import (
    BalanceConfig,
    CertificateError,
    boundary_residual,
    certify_boundary,
    certify_interior,
    fuzz_certificates,
    interior_residual,
    minimize_residual,
    reflect,
)

E1 = np.array([1.0, 0.0, 0.0])
TRIANGLE = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.5, math.sqrt(3) / 2, 0]])


def test_two_point_interior():
    F = interior_residual([np.zeros(3), E1])
    np.testing.assert_array_equal(F, [E1, -E1])


def test_triangle_magnitudes():
    F = interior_residual(TRIANGLE)
    np.testing.assert_allclose(np.linalg.norm(F, axis=1), math.sqrt(3), rtol=1e-14)


def test_collinear_middle_vanishes():
    F = interior_residual([-0.7 * E1, np.zeros(3), 0.7 * E1])
    assert np.all(F[1] == 0)
    assert np.linalg.norm(F[0]) > 0 and np.linalg.norm(F[2]) > 0


def test_interior_rejects_bad_input():
    with pytest.raises(ValueError):
        interior_residual([E1, E1])
    with pytest.raises(ValueError):
        interior_residual([E1])
    with pytest.raises(ValueError):
        BalanceConfig([E1, E1])


def test_single_image_term():
    np.testing.assert_allclose(boundary_residual([[0, 0, -1.0]]), [[0, 0, 0.25]], rtol=1e-15)
    for t in [1.0, 2.5, 7.0]:
        F = boundary_residual([[0.3, -0.2, -t]])
        assert np.linalg.norm(F) == pytest.approx((2 * t) ** (-2), rel=1e-14)


def test_boundary_mirror_symmetry():
    F = boundary_residual([[0.4, 0, -1.0], [-0.4, 0, -1.0]])
    np.testing.assert_allclose(F[1], F[0] * np.array([-1, 1, 1]), rtol=1e-14)


def test_reflection_involution(rng):
    z = rng.standard_normal((5, 3))
    np.testing.assert_array_equal(reflect(reflect(z)), z)


def test_boundary_rejects_hyperplane():
    with pytest.raises(ValueError):
        boundary_residual([[0, 0, 0.0]])
    with pytest.raises(ValueError):
        BalanceConfig([[0, 0, -0.5]], "boundary")
    with pytest.raises(ValueError):
        BalanceConfig([[0, 0, -1.0]], "sideways")


def test_gauge_validation():
    BalanceConfig([np.zeros(3), E1], gauge=True)
    with pytest.raises(ValueError):
        BalanceConfig([np.zeros(3), 2 * E1], gauge=True)
    with pytest.raises(ValueError):
        BalanceConfig([[0, 0, -1.0], [0, 0, -2.0]], "boundary", gauge=True)


def test_pair_antisymmetry(rng):
    z = rng.standard_normal((5, 3))
    F = interior_residual(z)
    for i in range(5):
        for j in range(i + 1, 5):
            pair = interior_residual(z[[i, j]])
            assert np.array_equal(pair[0], -pair[1])
    np.testing.assert_allclose(F.sum(axis=0), 0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    k=st.integers(2, 6),
    scale=st.floats(0.1, 10.0),
)
def test_translation_scaling_rotation(seed, k, scale):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((k, 3))
    d = np.linalg.norm(z[:, None] - z[None], axis=-1) + np.eye(k)
    if d.min() < 1e-2:
        return
    F = interior_residual(z)
    c = rng.standard_normal(3) * 5
    np.testing.assert_allclose(interior_residual(z + c), F, atol=1e-12 * max(1, np.abs(F).max()) * 100)
    np.testing.assert_allclose(interior_residual(scale * z), scale ** -2 * F, rtol=1e-12, atol=1e-12 * scale ** -2 * np.abs(F).max())
    Q = special_ortho_group.rvs(3, random_state=rng)
    np.testing.assert_allclose(interior_residual(z @ Q.T), F @ Q.T, atol=1e-12 * np.abs(F).max() * 10)


def test_certificate_two_points():
    cert = certify_interior(BalanceConfig([np.zeros(3), E1], gauge=True))
    assert cert.lower_bound == pytest.approx(1.0, rel=1e-15)
    assert cert.max_residual == pytest.approx(1.0)


def test_certificate_triangle():
    cert = certify_interior(BalanceConfig(TRIANGLE))
    assert 0 < cert.lower_bound <= math.sqrt(3)


def test_certificate_boundary_examples():
    cert = certify_boundary(BalanceConfig([[0, 0, -1.0]], "boundary"))
    assert cert.lower_bound == pytest.approx(0.25, rel=1e-15)
    assert cert.max_residual == pytest.approx(0.25, rel=1e-15)
    cfg = BalanceConfig([[0, 0, -1.0], [0, 0, -2.0]], "boundary")
    cert = certify_boundary(cfg)
    assert cert.extremal_index == 0 and cert.lower_bound == pytest.approx(0.25)
    assert boundary_residual(cfg.points)[0, 2] >= 0.25


def test_certificate_mode_mismatch():
    with pytest.raises(ValueError):
        certify_interior(BalanceConfig([[0, 0, -1.0], [0, 0, -2.0]], "boundary"))
    with pytest.raises(ValueError):
        certify_boundary(BalanceConfig([np.zeros(3), E1]))


def test_tied_extremes_shrink_bound():
    # square: two vertices tie along the diameter direction only in rotated frames
    sq = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    cert = certify_interior(BalanceConfig(sq))
    assert 0 < cert.lower_bound <= cert.max_residual


@pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
def test_interior_fuzz(k):
    rep = fuzz_certificates("interior", k, 2000, rng=k)
    assert rep["violations"] == 0 and rep["nonpositive_bounds"] == 0
    assert rep["min_certified_bound"] > 0


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_boundary_fuzz(k):
    rep = fuzz_certificates("boundary", k, 2000, rng=k)
    assert rep["violations"] == 0 and rep["nonpositive_bounds"] == 0


def test_certificate_error_is_raised_on_unsound_input(monkeypatch):
    import plasma_spike.balance_system as bs

    monkeypatch.setattr(bs, "interior_residual", lambda z: np.zeros_like(np.asarray(z)))
    with pytest.raises(CertificateError):
        bs.certify_interior(BalanceConfig([np.zeros(3), E1]))


def test_minimize_two_points_gauge_rigid():
    out = minimize_residual("interior", 2, restarts=3, rng=0)
    assert out["best_value"] == pytest.approx(1.0, rel=1e-12)
    assert out["no_near_solution"]


def test_minimize_three_points():
    out = minimize_residual("interior", 3, restarts=4, rng=0)
    assert out["best_value"] >= 1e-3 and out["no_near_solution"]
    z = np.array(out["best_config"])
    assert out["best_value"] == pytest.approx(np.linalg.norm(interior_residual(z), axis=1).max(), rel=1e-12)


def test_minimize_boundary_single_point():
    out = minimize_residual("boundary", 1, restarts=3, rng=0)
    assert out["positive"]
    assert all(v > 0 for v in out["restart_values"])
    # the optimizer pushes the point deep, where the residual decays like depth^(1-N)
    assert out["max_depth"] > 10


def test_minimize_argument_errors():
    with pytest.raises(ValueError):
        minimize_residual("interior", 1)
    with pytest.raises(ValueError):
        minimize_residual("sideways", 2)
