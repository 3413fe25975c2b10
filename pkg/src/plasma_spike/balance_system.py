"""Pohozaev force-balance systems and per-configuration nonexistence certificates.

Interior system, for distinct ``z_1..z_k`` in R^N::

    F_j = sum_{i != j} (z_i - z_j) / |z_i - z_j|^N = 0

Boundary system, for points below the hyperplane ``x_N = 0`` with images
``z~ = (z', -z_N)``::

    F_j = (z~_j - z_j)/|z~_j - z_j|^N
          + sum_{i != j} [(z~_i - z_j)/|z~_i - z_j|^N - (z_i - z_j)/|z_i - z_j|^N] = 0

Neither has a solution.  A certificate records the extremal point and
direction that witness it, together with a positive lower bound on the
residual that is rechecked numerically when the certificate is issued.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import minimize

__all__ = [
    "BalanceConfig",
    "NonexistenceCertificate",
    "CertificateError",
    "interior_residual",
    "boundary_residual",
    "certify_interior",
    "certify_boundary",
    "fuzz_certificates",
    "minimize_residual",
    "reflect",
    "random_gauge_configs",
    "random_boundary_configs",
]

TIE_CUSHION = 1e-12
SOUNDNESS_SLACK = 1e-12
ESCAPE_NORM = 1e6


class CertificateError(AssertionError):
    pass


def reflect(z):
    z = np.array(z, dtype=float, copy=True)
    z[..., -1] = -z[..., -1]
    return z


@dataclass(frozen=True)
class BalanceConfig:
    points: np.ndarray
    mode: str = "interior"
    gauge: bool = False

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.points, float))
        if self.mode not in ("interior", "boundary"):
            raise ValueError(f"unknown mode {self.mode!r}")
        k = len(z)
        if k > 1:
            d = _pairwise_dist(z)
            d[np.diag_indices(k)] = np.inf
            if d.min() == 0:
                raise ValueError("points must be pairwise distinct")
        if self.mode == "boundary" and np.any(z[:, -1] > -1.0):
            raise ValueError("boundary mode needs every (z_i)_N <= -1")
        if self.gauge:
            if self.mode != "interior" or k < 2:
                raise ValueError("gauge applies to interior configurations with k >= 2")
            if np.max(np.abs(z[0])) > 1e-12 or abs(np.linalg.norm(z[1]) - 1.0) > 1e-12:
                raise ValueError("gauge requires z_1 = 0 and |z_2| = 1")
        object.__setattr__(self, "points", z)

    @property
    def k(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class NonexistenceCertificate:
    direction: np.ndarray
    extremal_index: int
    lower_bound: float
    max_residual: float

    def to_json(self) -> dict:
        return {
            "direction": np.asarray(self.direction).tolist(),
            "extremal_index": int(self.extremal_index),
            "lower_bound": float(self.lower_bound),
            "max_residual": float(self.max_residual),
        }


def _pairwise_dist(z):
    return np.linalg.norm(z[..., :, None, :] - z[..., None, :, :], axis=-1)


def _differences(src, dst):
    """``src_i - dst_j`` indexed ``[..., i, j, :]`` and their norms."""
    diff = src[..., :, None, :] - dst[..., None, :, :]
    return diff, np.linalg.norm(diff, axis=-1)


def interior_residual(z) -> np.ndarray:
    """``F_j`` for each point; accepts ``(k, N)`` or a batch ``(B, k, N)``."""
    z = np.asarray(z, float)
    if z.shape[-2] < 2:
        raise ValueError("interior system needs k >= 2")
    N = z.shape[-1]
    diff, r = _differences(z, z)
    k = z.shape[-2]
    off = ~np.eye(k, dtype=bool)
    if np.any(r[..., off] == 0):
        raise ValueError("coincident points")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(off, 1.0 / r ** N, 0.0)
    return np.einsum("...ij,...ijn->...jn", w, diff)


def boundary_residual(z) -> np.ndarray:
    z = np.asarray(z, float)
    if np.any(z[..., -1] >= 0):
        raise ValueError("points must lie strictly below the hyperplane")
    N = z.shape[-1]
    k = z.shape[-2]
    zt = reflect(z)
    img_diff, img_r = _differences(zt, z)  # includes i == j self-image term
    out = np.einsum("...ij,...ijn->...jn", 1.0 / img_r ** N, img_diff)
    if k > 1:
        out = out - interior_residual(z)
    return out


def residual(config: BalanceConfig) -> np.ndarray:
    if config.mode == "interior":
        return interior_residual(config.points)
    return boundary_residual(config.points)


def certify_interior(config: BalanceConfig) -> NonexistenceCertificate:
    """Witness from the point extremal along the diameter direction."""
    if config.mode != "interior" or config.k < 2:
        raise ValueError("interior certificate needs an interior configuration with k >= 2")
    z = config.points
    N = z.shape[1]
    d = _pairwise_dist(z)
    a, b = np.unravel_index(np.argmax(d), d.shape)
    e = (z[a] - z[b]) / d[a, b]
    proj = z @ e
    j = int(np.argmax(proj))
    below = proj < proj[j] - TIE_CUSHION
    diff = z[j] - z[below]
    bound = float(np.sum((diff @ e) / np.linalg.norm(diff, axis=1) ** N))
    F = interior_residual(z)
    fmax = float(np.max(np.linalg.norm(F, axis=1)))
    along = abs(float(F[j] @ e))
    if not bound > 0:
        raise CertificateError(f"non-positive bound {bound}")
    if bound > along + SOUNDNESS_SLACK or bound > fmax + SOUNDNESS_SLACK:
        raise CertificateError(f"unsound bound {bound} > residual {along}")
    return NonexistenceCertificate(e, j, bound, fmax)


def certify_boundary(config: BalanceConfig) -> NonexistenceCertificate:
    """Witness from the shallowest point: the N-th residual component is at least its image term."""
    if config.mode != "boundary":
        raise ValueError("boundary certificate needs a boundary configuration")
    z = config.points
    N = z.shape[1]
    zt = reflect(z)
    j = int(np.argmin(zt[:, -1]))
    depth = zt[j, -1]
    bound = float(2.0 * depth / (2.0 * depth) ** N)
    F = boundary_residual(z)
    fmax = float(np.max(np.linalg.norm(F, axis=1)))
    e = np.zeros(N)
    e[-1] = 1.0
    if not bound > 0:
        raise CertificateError(f"non-positive bound {bound}")
    if F[j, -1] < bound - SOUNDNESS_SLACK or bound > fmax + SOUNDNESS_SLACK:
        raise CertificateError(f"unsound bound {bound}; N-component {F[j, -1]}")
    return NonexistenceCertificate(e, j, bound, fmax)


def random_gauge_configs(rng, n: int, k: int, N: int = 3, spread: float = 1.5):
    """``n`` gauge-fixed interior configurations: ``z_1 = 0``, ``|z_2| = 1``, rest Gaussian."""
    z = spread * rng.standard_normal((n, k, N))
    z[:, 0] = 0.0
    v = rng.standard_normal((n, N))
    z[:, 1] = v / np.linalg.norm(v, axis=1, keepdims=True)
    return z


def random_boundary_configs(rng, n: int, k: int, N: int = 3, width: float = 3.0):
    z = rng.uniform(-width, width, (n, k, N))
    z[..., -1] = -1.0 - rng.exponential(1.0, (n, k))
    return z


def fuzz_certificates(mode: str, k: int, n: int, N: int = 3, rng=None) -> dict:
    """Issue certificates on ``n`` random configurations and count failures."""
    rng = np.random.default_rng(rng)
    if mode == "interior":
        batch = random_gauge_configs(rng, n, k, N)
    elif mode == "boundary":
        batch = random_boundary_configs(rng, n, k, N)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    certify = certify_interior if mode == "interior" else certify_boundary
    violations = 0
    nonpositive = 0
    bounds = []
    residuals = []
    for z in batch:
        cfg = BalanceConfig(z, mode, gauge=(mode == "interior"))
        try:
            cert = certify(cfg)
        except CertificateError as exc:
            if "non-positive" in str(exc):
                nonpositive += 1
            else:
                violations += 1
            continue
        bounds.append(cert.lower_bound)
        residuals.append(cert.max_residual)
    return {
        "mode": mode,
        "k": k,
        "N": N,
        "samples": n,
        "violations": violations,
        "nonpositive_bounds": nonpositive,
        "min_certified_bound": float(min(bounds)) if bounds else None,
        "min_residual_sampled": float(min(residuals)) if residuals else None,
    }


@numba.njit(cache=True)
def _force_norms(z, boundary):
    """``|F_j|`` for one configuration (compiled path used by the optimizer)."""
    k, N = z.shape
    out = np.empty(k)
    f = np.empty(N)
    for j in range(k):
        f[:] = 0.0
        for i in range(k):
            if boundary:
                r2 = 0.0
                for n in range(N):
                    dn = z[i, n] - z[j, n] if n < N - 1 else -z[i, n] - z[j, n]
                    r2 += dn * dn
                w = r2 ** (-0.5 * N)
                for n in range(N):
                    dn = z[i, n] - z[j, n] if n < N - 1 else -z[i, n] - z[j, n]
                    f[n] += w * dn
            if i == j:
                continue
            r2 = 0.0
            for n in range(N):
                dn = z[i, n] - z[j, n]
                r2 += dn * dn
            w = r2 ** (-0.5 * N)
            sgn = -1.0 if boundary else 1.0
            for n in range(N):
                f[n] += sgn * w * (z[i, n] - z[j, n])
        m = 0.0
        for n in range(N):
            m += f[n] * f[n]
        out[j] = np.sqrt(m)
    return out


@numba.njit(cache=True)
def _max_force(z, boundary):
    return np.max(_force_norms(z, boundary))


class _Escape(Exception):
    def __init__(self, z):
        self.z = z


def _unpack_interior(theta, k, N):
    z = np.zeros((k, N))
    ang = theta[: N - 1]
    # hyperspherical coordinates for z_2
    s = 1.0
    for i in range(N - 1):
        z[1, i] = s * math.cos(ang[i])
        s *= math.sin(ang[i])
    z[1, N - 1] = s
    z[2:] = theta[N - 1 :].reshape(k - 2, N)
    return z


def _unpack_boundary(theta, k, N):
    z = theta.reshape(k, N).copy()
    z[:, -1] = -1.0 - z[:, -1] ** 2
    return z


def minimize_residual(mode: str, k: int, restarts: int = 16, N: int = 3, rng=None) -> dict:
    """Smallest ``max_j |F_j|`` found over gauge-fixed (interior) or constrained (boundary) configurations.

    Nelder-Mead on the nonsmooth objective, then L-BFGS polishing on a
    log-sum-exp smoothing of it; a polished point is kept only if it improves
    the true objective.  The interior gauge is imposed by parametrization.
    """
    rng = np.random.default_rng(rng)
    if mode == "interior":
        if k < 2:
            raise ValueError("interior mode needs k >= 2")
        unpack = _unpack_interior
        resid = interior_residual
        dim = (N - 1) + (k - 2) * N
    elif mode == "boundary":
        if k < 1:
            raise ValueError("boundary mode needs k >= 1")
        unpack = _unpack_boundary
        resid = boundary_residual
        dim = k * N
    else:
        raise ValueError(f"unknown mode {mode!r}")

    boundary = mode == "boundary"

    def objective(theta):
        z = unpack(theta, k, N)
        if np.max(np.abs(z)) > ESCAPE_NORM:
            raise _Escape(z)
        val = _max_force(z, boundary)
        return val if np.isfinite(val) else 1e6

    def smooth(theta, beta=50.0):
        f = _force_norms(unpack(theta, k, N), boundary)
        m = f.max()
        if not np.isfinite(m):
            return 1e6
        return float(m + np.log(np.sum(np.exp(beta * (f - m)))) / beta)

    best_val, best_z, escaped = math.inf, None, False
    history = []
    for _ in range(restarts):
        if mode == "interior":
            theta0 = np.concatenate([rng.uniform(0, math.pi, N - 1), 1.5 * rng.standard_normal((k - 2) * N)])
        else:
            theta0 = rng.uniform(-2, 2, k * N)
        try:
            res = minimize(objective, theta0, method="Nelder-Mead",
                           options={"maxiter": 400 * dim, "xatol": 1e-10, "fatol": 1e-12, "adaptive": True})
            theta, val = res.x, res.fun
            pol = minimize(smooth, theta, method="L-BFGS-B", options={"maxiter": 200})
            pval = objective(pol.x)
            if pval < val:
                theta, val = pol.x, pval
        except _Escape as esc:
            escaped = True
            z = esc.z
            val = float(np.max(np.linalg.norm(resid(z), axis=1)))
            history.append(val)
            if val < best_val:
                best_val, best_z = val, z
            continue
        history.append(float(val))
        if val < best_val:
            best_val, best_z = float(val), unpack(theta, k, N)
    out = {
        "mode": mode,
        "k": k,
        "N": N,
        "restarts": restarts,
        "best_value": best_val,
        "best_config": best_z.tolist() if best_z is not None else None,
        "escaped_to_infinity": escaped,
        "restart_values": history,
    }
    if mode == "interior":
        out["no_near_solution"] = bool(best_val >= 1e-3)
    else:
        out["positive"] = bool(best_val > 0)
        if best_z is not None:
            out["max_depth"] = float(-np.min(best_z[:, -1]))
    return out
