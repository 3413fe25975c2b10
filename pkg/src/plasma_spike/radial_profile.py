"""Radial ground state on the unit ball and the glued spike profile w0.

The ground state ``u`` solves ``u'' + (N-1) u'/r + u^p = 0`` on ``(0, 1)`` with
``u'(0) = 0`` and ``u(1) = 0``.  It is found by bisection on the central height
``a = u(0)`` over a fixed-step RK4 integration.  From ``u'(1)`` one gets the
glue radius ``R0 = (-u'(1)/(N-2))^((p-1)/2)`` and the universal profile

    w0(s) = 1 + R0^(2/(1-p)) u(s/R0)   for s <= R0
    w0(s) = (R0/s)^(N-2)                for s >= R0

whose plasma mass ``int [w0 - 1]_+^p`` equals ``N(N-2) omega_N R0^(N-2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline

from .model_core import ProblemConfig

__all__ = [
    "ShootingError",
    "RadialProfile",
    "shoot",
    "integrate_radial",
    "glue_w0",
    "compute_mass",
    "mass_closed_form",
    "radial_pohozaev_residual",
    "ode_residual",
]

R_START = 1e-6
STEP = 1e-5
GRID_POINTS = 10_001
BRACKET = (1.0, 1e3)


class ShootingError(RuntimeError):
    pass


@numba.njit(cache=True)
def _rhs(r, u, du, N, p):
    up = u ** p if u > 0.0 else 0.0
    return du, -(N - 1) * du / r - up


@numba.njit(cache=True)
def _rk4(a, N, p, r0, r1, nsteps, stride):
    """Integrate from the two-term origin series; return samples every ``stride`` steps."""
    h = (r1 - r0) / nsteps
    nout = nsteps // stride + 1
    rs = np.empty(nout)
    us = np.empty(nout)
    dus = np.empty(nout)
    c = a ** p / (2.0 * N)
    u = a - c * r0 * r0
    du = -2.0 * c * r0
    r = r0
    rs[0] = r
    us[0] = u
    dus[0] = du
    k = 1
    for i in range(nsteps):
        k1u, k1v = _rhs(r, u, du, N, p)
        k2u, k2v = _rhs(r + 0.5 * h, u + 0.5 * h * k1u, du + 0.5 * h * k1v, N, p)
        k3u, k3v = _rhs(r + 0.5 * h, u + 0.5 * h * k2u, du + 0.5 * h * k2v, N, p)
        k4u, k4v = _rhs(r + h, u + h * k3u, du + h * k3v, N, p)
        u += h * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0
        du += h * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        r = r0 + (i + 1) * h
        if (i + 1) % stride == 0:
            rs[k] = r
            us[k] = u
            dus[k] = du
            k += 1
    return rs, us, dus


def _nsteps(step: float, r_end: float = 1.0) -> int:
    return int(round((r_end - R_START) / step))


def integrate_radial(
    a: float,
    config: ProblemConfig,
    step: float = STEP,
    stride: int | None = None,
    r_end: float = 1.0,
):
    """RK4 samples ``(r, u, u')`` for central height ``a`` on ``[R_START, r_end]``."""
    n = _nsteps(step, r_end)
    if stride is None:
        stride = n
    return _rk4(float(a), float(config.N), float(config.p), R_START, float(r_end), n, stride)


def _u_at_one(a: float, config: ProblemConfig, step: float) -> float:
    _, us, _ = integrate_radial(a, config, step)
    return us[-1]


def _bisect_height(config: ProblemConfig, tol: float, step: float, max_expand: int = 8) -> float:
    lo, hi = BRACKET
    f_lo = _u_at_one(lo, config, step)
    f_hi = _u_at_one(hi, config, step)
    expand = 0
    while not (f_lo > 0.0 and f_hi < 0.0):
        if expand >= max_expand:
            raise ShootingError(
                f"no sign change of u(1; a) on a in [{lo:g}, {hi:g}] for N={config.N}, p={config.p}"
            )
        if f_lo <= 0.0:
            lo /= 10.0
            f_lo = _u_at_one(lo, config, step)
        if f_hi >= 0.0:
            hi *= 10.0
            f_hi = _u_at_one(hi, config, step)
        expand += 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = _u_at_one(mid, config, step)
        if abs(f_mid) <= tol:
            return mid
        if hi - lo <= 4.0 * np.finfo(float).eps * mid:
            break
        if f_mid > 0.0:
            lo = mid
        else:
            hi = mid
    raise ShootingError(f"bisection stalled before |u(1)| <= {tol:g} (step too coarse?)")


@dataclass(frozen=True)
class RadialProfile:
    config: ProblemConfig
    a_star: float
    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    uprime1: float
    R0: float
    M_p0: float
    u1_raw: float
    richardson_error: float

    def u_of(self, t):
        """Ground state at radii ``t`` in [0, 1] (series below the first sample)."""
        t = np.asarray(t, dtype=float)
        inner = self.a_star - self.a_star ** self.config.p * t * t / (2 * self.config.N)
        return np.where(t < self.r[0], inner, self._spline(np.clip(t, self.r[0], 1.0)))

    def du_of(self, t):
        t = np.asarray(t, dtype=float)
        inner = -self.a_star ** self.config.p * t / self.config.N
        return np.where(t < self.r[0], inner, self._spline(np.clip(t, self.r[0], 1.0), 1))

    @property
    def _spline(self):
        sp = self.__dict__.get("_sp")
        if sp is None:
            sp = CubicHermiteSpline(self.r, self.u, self.du)
            object.__setattr__(self, "_sp", sp)
        return sp

    @property
    def w0_center(self) -> float:
        return 1.0 + self.R0 ** (2.0 / (1.0 - self.config.p)) * self.a_star

    def w0(self, s):
        return glue_w0(self)(s)

    def summary(self) -> dict:
        return {
            "a_star": self.a_star,
            "uprime1": self.uprime1,
            "R0": self.R0,
            "M_p0": self.M_p0,
            "glue_value_gap": glue_value_gap(self),
            "glue_slope_gap": glue_slope_gap(self),
            "pohozaev_residual": radial_pohozaev_residual(self),
        }


def shoot(config: ProblemConfig, tol: float = 1e-9, step: float = STEP) -> RadialProfile:
    """Ground state by bisection on the central height.

    ``tol`` bounds ``|u(1; a_star)|``.  The stored grid holds ``GRID_POINTS``
    equispaced radii; its last sample is snapped to exactly 0 so the glued
    profile takes the value 1 at ``R0`` from both sides.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    a = _bisect_height(config, tol, step)
    n = _nsteps(step)
    stride = n // (GRID_POINTS - 1)
    if stride * (GRID_POINTS - 1) != n:
        raise ValueError(f"step {step} does not subdivide the stored grid")
    r, u, du = integrate_radial(a, config, step, stride)
    _, u_half, _ = integrate_radial(a, config, step / 2)
    richardson = abs(u[-1] - u_half[-1]) / 15.0
    u1_raw = float(u[-1])
    u = u.copy()
    u[-1] = 0.0
    uprime1 = float(du[-1])
    if not uprime1 < 0:
        raise ShootingError(f"u'(1) = {uprime1} is not negative")
    N, p = config.N, config.p
    R0 = (-uprime1 / (N - 2)) ** ((p - 1) / 2)
    prof = RadialProfile(config, a, r, u, du, uprime1, R0, float("nan"), u1_raw, richardson)
    object.__setattr__(prof, "M_p0", compute_mass(prof))
    return prof


def glue_w0(profile: RadialProfile):
    """Radial function ``w0(s)``, vectorized over ``s >= 0``."""
    N, p, R0 = profile.config.N, profile.config.p, profile.R0
    amp = R0 ** (2.0 / (1.0 - p))

    def w0(s):
        s = np.asarray(s, dtype=float)
        inside = s <= R0
        t = np.where(inside, s / R0, 1.0)
        tail = (R0 / np.where(inside, R0, s)) ** (N - 2)
        return np.where(inside, 1.0 + amp * profile.u_of(t), tail)

    return w0


def glue_value_gap(profile: RadialProfile) -> float:
    amp = profile.R0 ** (2.0 / (1.0 - profile.config.p))
    return abs(1.0 + amp * profile.u[-1] - 1.0)


def glue_slope_gap(profile: RadialProfile) -> float:
    N, p, R0 = profile.config.N, profile.config.p, profile.R0
    inner = R0 ** (2.0 / (1.0 - p)) * profile.uprime1 / R0
    tail = -(N - 2) / R0
    return abs(inner - tail)


def mass_closed_form(profile: RadialProfile) -> float:
    """Divergence-theorem value ``N(N-2) omega_N R0^(N-2)``."""
    cfg = profile.config
    return cfg.N * (cfg.N - 2) * cfg.omega_N * profile.R0 ** (cfg.N - 2)


def compute_mass(profile: RadialProfile) -> float:
    """Radial quadrature of ``[w0 - 1]_+^p`` over ``B_R0`` (composite Simpson)."""
    cfg = profile.config
    N, p, R0 = cfg.N, cfg.p, profile.R0
    # [w0-1]^p = R0^(2p/(1-p)) u(s/R0)^p, s = R0 t
    t = np.concatenate(([0.0], profile.r))
    u = np.concatenate(([profile.a_star], profile.u))
    integrand = np.clip(u, 0.0, None) ** p * t ** (N - 1)
    # the r=0 -> r[0] sliver is O(1e-6^N) and is absorbed by prepending the origin
    val = simpson(integrand[1:], x=t[1:]) + 0.5 * (integrand[0] + integrand[1]) * t[1]
    return cfg.sphere_area * R0 ** N * R0 ** (2.0 * p / (1.0 - p)) * val


def ode_residual(profile: RadialProfile) -> np.ndarray:
    """Relative ODE defect ``|u'' + (N-1)u'/r + u^p| / a_star^p`` at interior nodes.

    ``u''`` comes from fourth-order central differences of the stored ``u'``.
    """
    N, p = profile.config.N, profile.config.p
    r, u, du = profile.r, profile.u, profile.du
    h = r[1] - r[0]
    d2 = (-du[4:] + 8 * du[3:-1] - 8 * du[1:-3] + du[:-4]) / (12 * h)
    rr = r[2:-2]
    res = d2 + (N - 1) * du[2:-2] / rr + np.clip(u[2:-2], 0, None) ** p
    return np.abs(res) / profile.a_star ** p


def radial_pohozaev_residual(profile: RadialProfile, u_scale: float = 1.0, every: int = 1) -> float:
    """Normalized defect in ``(N/(p+1) - (N-2)/2) int u^(p+1) = |S^(N-1)| u'(1)^2 / 2``.

    ``u_scale`` multiplies the stored profile before evaluation (used to probe
    sensitivity to corrupted data); ``every`` subsamples the stored grid.
    """
    cfg = profile.config
    N, p = cfg.N, cfg.p
    t = profile.r[::every]
    u = u_scale * profile.u[::every]
    du1 = u_scale * profile.uprime1
    vol = cfg.sphere_area * simpson(np.clip(u, 0, None) ** (p + 1) * t ** (N - 1), x=t)
    lhs = (N / (p + 1) - (N - 2) / 2) * vol
    rhs = 0.5 * cfg.sphere_area * du1 ** 2
    return abs(lhs - rhs) / abs(lhs)
