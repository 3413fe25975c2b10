import math

import numpy as np
import pytest

from plasma_spike import radial_profile as rp
from plasma_spike.model_core import make_config
from plasma_spike.radial_profile import (
    ShootingError,
    compute_mass,
    glue_slope_gap,
    glue_value_gap,
    glue_w0,
    integrate_radial,
    mass_closed_form,
    ode_residual,
    radial_pohozaev_residual,
    shoot,
)

from conftest import MATRIX


@pytest.mark.parametrize("nc", MATRIX)
def test_glue_and_mass(profiles, nc):
    prof = profiles[nc]
    assert glue_value_gap(prof) == 0.0
    assert glue_slope_gap(prof) <= 1e-8
    assert radial_pohozaev_residual(prof) <= 1e-6
    assert compute_mass(prof) == pytest.approx(mass_closed_form(prof), rel=1e-6)


@pytest.mark.parametrize("nc", MATRIX)
def test_shooting_postconditions(profiles, nc):
    prof = profiles[nc]
    tol = 1e-9
    assert abs(prof.u1_raw) <= tol
    assert np.max(ode_residual(prof)) <= 10 * tol
    assert np.all(np.diff(prof.u) < 0)
    assert np.all(prof.u[:-1] > 0)
    assert prof.uprime1 < 0 and prof.M_p0 > 0
    N, p = prof.config.N, prof.config.p
    assert prof.R0 == (-prof.uprime1 / (N - 2)) ** ((p - 1) / 2)
    assert prof.richardson_error <= 1e-8


def test_origin_series(prof3):
    a, p, N = prof3.a_star, prof3.config.p, prof3.config.N
    assert prof3.du_of(0.0) == 0.0
    h = 1e-4
    d2 = (prof3.u_of(h) - 2 * prof3.u_of(0.0) + prof3.u_of(h)) / h ** 2
    assert d2 == pytest.approx(-a ** p / N, rel=1e-6)


def test_u_of_matches_stored_samples(prof3):
    np.testing.assert_allclose(prof3.u_of(prof3.r[::97]), prof3.u[::97], atol=1e-12)


def test_w0_values(profiles):
    for prof in profiles.values():
        N = prof.config.N
        w0 = glue_w0(prof)
        assert w0(prof.R0) == pytest.approx(1.0, abs=1e-15)
        assert w0(2 * prof.R0) == pytest.approx(0.5 ** (N - 2), rel=1e-14)
        assert w0(0.0) == pytest.approx(prof.w0_center, rel=1e-14)
        assert prof.w0_center > 1
        s = np.linspace(0, 5 * prof.R0, 400)
        assert np.all(np.diff(w0(s)) <= 1e-14)


def test_w0_one_sided_slopes(prof3):
    w0 = prof3.w0
    R0, h = prof3.R0, 1e-6
    inner = (w0(R0) - w0(R0 - h)) / h
    outer = (w0(R0 + h) - w0(R0)) / h
    assert inner == pytest.approx(outer, abs=1e-5)


def test_mass_three_dimensions(prof3):
    assert prof3.M_p0 == pytest.approx(4 * math.pi * prof3.R0, rel=1e-6)


def test_deterministic(cfg3, prof3):
    again = shoot(cfg3)
    assert again.a_star == prof3.a_star
    assert np.array_equal(again.u, prof3.u)


def test_scaling_symmetry(prof3):
    # lambda^(2/(p-1)) u(lambda r) has zero at r = 1/lambda
    lam, p = 2.0, prof3.config.p
    a = lam ** (2 / (p - 1)) * prof3.a_star
    _, u, du = integrate_radial(a, prof3.config, step=rp.STEP / lam, r_end=1 / lam)
    assert abs(u[-1]) <= 1e-6 * a
    assert du[-1] == pytest.approx(lam ** (2 / (p - 1) + 1) * prof3.uprime1, rel=1e-6)


def test_pohozaev_residual_sensitivity(prof3):
    assert radial_pohozaev_residual(prof3, u_scale=1.01) > 1e-3
    assert radial_pohozaev_residual(prof3) < radial_pohozaev_residual(prof3, every=10)


def test_bracket_failure(monkeypatch, cfg3):
    monkeypatch.setattr(rp, "BRACKET", (200.0, 400.0))
    with pytest.raises(ShootingError, match="no sign change"):
        rp._bisect_height(cfg3, 1e-9, 1e-3, max_expand=0)


def test_rejects_bad_tol(cfg3):
    with pytest.raises(ValueError):
        shoot(cfg3, tol=0.0)


def test_summary_keys(prof3):
    assert set(prof3.summary()) == {
        "a_star", "uprime1", "R0", "M_p0", "glue_value_gap", "glue_slope_gap", "pohozaev_residual",
    }


def test_subcritical_edge():
    prof = shoot(make_config(3, 2.9))
    assert compute_mass(prof) == pytest.approx(mass_closed_form(prof), rel=1e-6)
