"""Quantitative checks of spike asymptotics on solved fields and synthetic Green sums.

Far field:  ``eps^(2-N) v  ~  sum_i M G(x, z_i)`` away from the centers.
Near field: ``v(z + eps y)  ~  w0(|y|)`` on a fixed ball in ``y``.
Mass:       ``mu^(N/2) int [v - 1]_+^p  ~  Z M``.

The Pohozaev part integrates the vector density

    P(u) = -(d_nu u) grad u + 1/2 |grad u|^2 nu

over small spheres.  For ``u = a |x - z|^(2-N) + f`` with ``f`` harmonic near
``z`` the integral equals ``a (N-2) |S^(N-1)| grad f(z)`` for every radius:
the singular-singular part is odd, the cross part is a mean value of the
harmonic ``grad f``, and the ``f``-``f`` part is the flux of a divergence-free
field.  With ``a = M C_N`` and ``f = M C_N F`` this is
``M^2 C_N^2 (N-2) |S^(N-1)| grad F(z)``.

Thresholds are not asserted here; callers compare the returned numbers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .green_kernels import Ball
from .model_core import ProblemConfig
from .pde_solver import GridField, SpikeReport

__all__ = [
    "RemainderReport",
    "farfield_remainder",
    "local_profile_error",
    "mass_quantization_check",
    "spike_masses",
    "GreenSum",
    "GridSampler",
    "sphere_quadrature",
    "sphere_mean",
    "pohozaev_surface",
    "pohozaev_factor",
    "grad_F_oracle",
    "pohozaev_remainder_study",
    "QUADRATURE_ORDERS",
]

QUADRATURE_ORDERS = range(16, 65)


@dataclass
class RemainderReport:
    r: float
    R: float
    sup_remainder: float
    sup_grad_remainder: float
    leading_scale: float
    grad_leading_scale: float
    nodes: int

    @property
    def ratio(self) -> float:
        return self.sup_remainder / self.leading_scale if self.leading_scale > 0 else float("inf")

    @property
    def grad_ratio(self) -> float:
        if self.grad_leading_scale <= 0:
            return float("inf")
        return self.sup_grad_remainder / self.grad_leading_scale

    def to_json(self) -> dict:
        d = asdict(self)
        d.update(ratio=self.ratio, grad_ratio=self.grad_ratio)
        return d


def _one_sided_gradient(u, valid, h):
    """Central differences where both neighbours are valid, one-sided otherwise.

    Returns the gradient (``(..., 3)``) and a mask of nodes where every
    component could be formed.
    """
    grad = np.full(u.shape + (3,), np.nan)
    for a in range(3):
        fwd = np.full(u.shape, np.nan)
        bwd = np.full(u.shape, np.nan)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a], hi[a] = slice(None, -1), slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        ok = valid[lo] & valid[hi]
        d = (u[hi] - u[lo]) / h
        fwd[lo] = np.where(ok, d, np.nan)
        bwd[hi] = np.where(ok, d, np.nan)
        both = np.isfinite(fwd) & np.isfinite(bwd)
        g = np.where(both, 0.5 * (fwd + bwd), np.where(np.isfinite(fwd), fwd, bwd))
        grad[..., a] = g
    ok = valid & np.all(np.isfinite(grad), axis=-1)
    return grad, ok


def farfield_remainder(field: GridField, report: SpikeReport, profile, kernel: Ball,
                       r: float) -> RemainderReport:
    """Sup of ``|eps^(2-N) v - sum_i M G(x, z_i)|`` over interior nodes outside ``U B_r(z_i)``.

    The gradient sup uses central differences, switching to one-sided ones at
    nodes next to the excluded balls or the boundary.
    """
    eps, h = field.epsilon, field.h
    N = field.config.N
    if not report.centers:
        raise ValueError("no spike centers in the report")
    if r <= 2 * eps * profile.R0 or r < 3 * h:
        raise ValueError(
            f"r = {r} too small: need r > 2 eps R0 = {2 * eps * profile.R0:.4g} and r >= 3h = {3 * h:.4g}"
        )
    grid = field.grid
    X, Y, Z = grid.coords
    pts = np.stack([X, Y, Z], axis=-1)
    centers = np.asarray(report.centers, float)
    far = np.ones(X.shape, bool)
    for c in centers:
        far &= np.linalg.norm(pts - c, axis=-1) >= r
    valid = far & grid.interior
    scaled = eps ** (2 - N) * field.values
    x = pts[valid]
    lead = np.zeros(len(x))
    glead = np.zeros((len(x), N))
    for c in centers:
        lead += profile.M_p0 * kernel.G(x, c)
        glead += profile.M_p0 * kernel.grad_G(x, c)
    rem = np.abs(scaled[valid] - lead)
    grad, gok = _one_sided_gradient(scaled, valid, h)
    sel = gok[valid]
    grem = np.linalg.norm(grad[valid][sel] - glead[sel], axis=-1)
    return RemainderReport(
        r=float(r),
        R=float(kernel.radius),
        sup_remainder=float(rem.max()),
        sup_grad_remainder=float(grem.max()) if grem.size else float("nan"),
        leading_scale=float(np.abs(lead).max()),
        grad_leading_scale=float(np.linalg.norm(glead[sel], axis=-1).max()) if grem.size else 0.0,
        nodes=int(valid.sum()),
    )


def local_profile_error(field: GridField, center, profile, R: float, spacing: float | None = None) -> float:
    """Sup over ``|y| <= R`` of ``|v(center + eps y) - w0(|y|)|``.

    The field is evaluated by trilinear interpolation on the lattice
    ``center + spacing * Z^3`` (default ``spacing = h``), so for a center on a
    grid node the samples are nodal values and carry no interpolation error.
    """
    eps, h = field.epsilon, field.h
    if eps * R < 3 * h:
        raise ValueError(f"eps*R = {eps * R:.4g} < 3h = {3 * h:.4g}: profile not resolvable")
    s = h if spacing is None else float(spacing)
    m = int(np.floor(eps * R / s))
    k = np.arange(-m, m + 1) * s
    off = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3)
    off = off[np.linalg.norm(off, axis=1) <= eps * R + 1e-12]
    c = np.asarray(center, float)
    vals = field.grid.interpolator(field.values)(c + off)
    ref = profile.w0(np.linalg.norm(off, axis=1) / eps)
    return float(np.max(np.abs(vals - ref)))


def mass_quantization_check(field: GridField, report: SpikeReport, profile):
    """``(measured, expected, Z)`` with ``expected = Z M_p0``."""
    Z = len(report.centers)
    return field.mass(), Z * profile.M_p0, Z


def spike_masses(field: GridField, report: SpikeReport, profile) -> list:
    """Mass restricted to the ball of radius ``2 eps R0 + h`` around each center."""
    grid = field.grid
    X, Y, Z = grid.coords
    pts = np.stack([X, Y, Z], axis=-1)
    dens = field.mu ** 1.5 * np.clip(field.values - 1.0, 0.0, None) ** field.config.p * grid.cell_volume
    rad = 2 * field.epsilon * profile.R0 + field.h
    return [float(dens[np.linalg.norm(pts - c, axis=-1) <= rad].sum()) for c in report.centers]


class GreenSum:
    """``u(x) = scale C_N sum_i q_i |x - z_i|^(2-N)`` with analytic gradient."""

    def __init__(self, config: ProblemConfig, points, charges=None, scale: float = 1.0):
        self.config = config
        self.points = np.atleast_2d(np.asarray(points, float))
        if self.points.shape[1] != config.N:
            raise ValueError("points have the wrong dimension")
        q = np.ones(len(self.points)) if charges is None else np.asarray(charges, float)
        if q.shape != (len(self.points),):
            raise ValueError("one charge per point is required")
        self.charges = q
        self.scale = float(scale)

    @classmethod
    def with_reflections(cls, config, points, level: float = 0.0, scale: float = 1.0):
        """Green sum of points in ``{x_N < level}`` plus their negatively charged mirror images."""
        pts = np.atleast_2d(np.asarray(points, float))
        img = pts.copy()
        img[:, -1] = 2 * level - img[:, -1]
        q = np.concatenate([np.ones(len(pts)), -np.ones(len(pts))])
        return cls(config, np.vstack([pts, img]), q, scale)

    def __call__(self, x):
        x = np.asarray(x, float)
        N = self.config.N
        d = np.linalg.norm(x[..., None, :] - self.points, axis=-1)
        return self.scale * self.config.C_N * np.sum(self.charges * d ** (2 - N), axis=-1)

    def grad(self, x):
        x = np.asarray(x, float)
        N = self.config.N
        diff = x[..., None, :] - self.points
        d = np.linalg.norm(diff, axis=-1)[..., None]
        terms = self.charges[:, None] * (2 - N) * diff / d ** N
        return self.scale * self.config.C_N * terms.sum(axis=-2)


class GridSampler:
    """Trilinear interpolant of a grid field with central-difference gradients of step ``h``."""

    def __init__(self, field: GridField, scale: float = 1.0):
        self.field = field
        self.scale = scale
        self._interp = field.grid.interpolator(field.values)

    def __call__(self, x):
        return self.scale * self._interp(np.asarray(x, float))

    def grad(self, x):
        x = np.asarray(x, float)
        h = self.field.h
        out = np.empty(x.shape)
        for a in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[a] = h
            out[..., a] = (self(x + e) - self(x - e)) / (2 * h)
        return out


def sphere_quadrature(order: int):
    """Unit vectors and weights of the product rule on ``S^2``.

    ``order`` Gauss-Legendre nodes in ``cos(theta)`` times ``2*order`` equispaced
    azimuths; weights sum to ``4 pi``.
    """
    if int(order) != order or order not in QUADRATURE_ORDERS:
        raise ValueError(f"quadrature order must be an integer in [16, 64], got {order}")
    order = int(order)
    t, wt = np.polynomial.legendre.leggauss(order)
    phi = np.arange(2 * order) * (np.pi / order)
    st = np.sqrt(1 - t * t)
    nu = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(t, np.ones_like(phi))],
        axis=-1,
    ).reshape(-1, 3)
    w = np.outer(wt, np.full(2 * order, np.pi / order)).ravel()
    return nu, w


def _gradient_function(u):
    if isinstance(u, GridField):
        return GridSampler(u).grad
    if hasattr(u, "grad"):
        return u.grad
    if callable(u):
        return u
    raise TypeError("expected a GridField or an object that supplies gradients")


def sphere_mean(func, center, r: float, order: int = 32):
    """Average of ``func`` (scalar or vector valued) over the sphere ``|x - center| = r``."""
    nu, w = sphere_quadrature(order)
    vals = np.asarray(func(np.asarray(center, float) + r * nu))
    return np.tensordot(w, vals, axes=(0, 0)) / (4 * np.pi)


def pohozaev_surface(u, center, r: float, quadrature_order: int = 32) -> np.ndarray:
    """Vector ``int_{|x - center| = r} -(d_nu u) grad u + 1/2 |grad u|^2 nu dsigma`` in R^3.

    ``u`` is a :class:`GreenSum` (analytic gradient), a :class:`GridField`
    (finite differences of the trilinear interpolant) or any object with a
    ``grad`` method, or a callable returning gradients.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    c = np.asarray(center, float)
    if c.shape != (3,):
        raise ValueError("surface quadrature is implemented for N = 3")
    grad = _gradient_function(u)
    nu, w = sphere_quadrature(quadrature_order)
    g = grad(c + r * nu)
    dn = np.sum(g * nu, axis=-1)
    dens = -dn[:, None] * g + 0.5 * np.sum(g * g, axis=-1)[:, None] * nu
    return r ** 2 * (w @ dens)


def pohozaev_factor(mass: float, config: ProblemConfig) -> float:
    """``M^2 C_N^2 (N-2) |S^(N-1)|``, the factor between the small-sphere limit and ``grad F``."""
    return mass ** 2 * config.C_N ** 2 * (config.N - 2) * config.sphere_area


def grad_F_oracle(z, others=(), images=(), N: int | None = None) -> np.ndarray:
    """``(2-N) [ sum_i (z - z_i)/|z - z_i|^N + sum_k (zt_k - z)/|zt_k - z|^N ]``.

    ``others`` are positively charged points, ``images`` negatively charged
    reflections (the boundary system).
    """
    z = np.asarray(z, float)
    N = len(z) if N is None else N
    g = np.zeros_like(z)
    for zi in np.atleast_2d(np.asarray(others, float)) if len(others) else []:
        d = z - zi
        g += d / np.linalg.norm(d) ** N
    for zk in np.atleast_2d(np.asarray(images, float)) if len(images) else []:
        d = zk - z
        g += d / np.linalg.norm(d) ** N
    return (2 - N) * g


def pohozaev_remainder_study(u: GreenSum, index: int, radii, quadrature_order: int = 32) -> dict:
    """Surface integrals around ``u.points[index]`` minus the leading ``grad F`` term.

    For each radius the recovered ``grad F`` is compared with the oracle.  The
    report also fits the slope of ``log remainder`` against ``log r``.  When the remainders sit at rounding level the slope is
    still reported but only describes noise; ``remainder_at_rounding_level``
    flags that case.
    """
    radii = [float(r) for r in radii]
    cfg = u.config
    z = u.points[index]
    q = u.charges
    if q[index] <= 0:
        raise ValueError("the selected point must carry a positive charge")
    others = [u.points[i] for i in range(len(q)) if i != index and q[i] > 0]
    images = [u.points[i] for i in range(len(q)) if q[i] < 0]
    if any(not np.isclose(abs(qi), q[index]) for qi in q):
        raise ValueError("the oracle assumes charges of equal magnitude")
    mass = u.scale * q[index]
    oracle = grad_F_oracle(z, others, images, cfg.N)
    factor = pohozaev_factor(mass, cfg)
    recovered, rel_err, remainders = [], [], []
    for r in radii:
        P = pohozaev_surface(u, z, r, quadrature_order)
        rec = P / factor
        recovered.append(rec.tolist())
        rel_err.append(float(np.linalg.norm(rec - oracle) / np.linalg.norm(oracle)))
        remainders.append(float(np.linalg.norm(P - factor * oracle)))
    rem = np.array(remainders)
    scale = factor * np.linalg.norm(oracle)
    resolved = np.all(rem > 1e3 * np.finfo(float).eps * scale)
    if len(radii) > 1 and np.all(rem > 0):
        slope = float(np.polyfit(np.log(radii), np.log(rem), 1)[0])
    else:
        slope = float("nan")
    return {
        "radii": radii,
        "oracle": oracle.tolist(),
        "recovered": recovered,
        "relative_error": rel_err,
        "remainder": remainders,
        "remainder_relative": (rem / scale).tolist(),
        "loglog_slope": slope,
        "remainder_at_rounding_level": not bool(resolved),
    }
