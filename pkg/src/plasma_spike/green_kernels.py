"""Dirichlet Green functions of balls and half-spaces by the method of images.

``G(x, y) = C_N |x - y|^(2-N) + H(x, y)`` with ``-Lap_x G = delta_y`` and
``G = 0`` on the boundary.  For a ball ``B_rho(m)`` the regular part is

    H(x, y) = -C_N Q^((2-N)/2),  Q = |x'|^2 |y'|^2 / rho^2 - 2 x'.y' + rho^2,

with ``x' = x - m``, ``y' = y - m``; ``Q`` is ``rho^2 |y'|^2/rho^2 |x' - y'*|^2``
written without the Kelvin image so that ``y' = 0`` needs no special case.
For the half-space ``{x_N < b}`` the image is the reflection across ``x_N = b``.

All evaluators accept arrays of shape ``(..., N)`` and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import ProblemConfig

__all__ = [
    "Ball",
    "HalfSpace",
    "unit_ball",
    "half_space",
    "rescaled_kernel",
    "green_eval",
    "robin_eval",
    "robin_grad_x",
    "robin_boundary_bound_check",
    "halfspace_convergence_check",
    "kernel_self_check",
]

COINCIDENT_TOL = 1e-10
BOUNDARY_SLACK = 1e-12


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


class _Kernel:
    config: ProblemConfig

    def singular(self, x, y):
        r = _norm(np.asarray(x, float) - np.asarray(y, float))
        return self.config.C_N * r ** (2 - self.config.N)

    def grad_singular(self, x, y):
        d = np.asarray(x, float) - np.asarray(y, float)
        r = _norm(d)[..., None]
        return self.config.C_N * (2 - self.config.N) * d / r ** self.config.N

    def G(self, x, y):
        return self.singular(x, y) + self.H(x, y)

    def grad_G(self, x, y):
        return self.grad_singular(x, y) + self.grad_H(x, y)

    def robin(self, x):
        """``H(x, x)``."""
        return self.H(x, x)

    def grad_robin(self, x):
        """Gradient of ``x -> H(x, x)``; equals ``2 grad_x H(x, y)|_{y=x}`` by symmetry."""
        return 2.0 * self.grad_H(x, x)

    def contains(self, x, closed: bool = False):
        d = self.dist(x)
        return d >= -BOUNDARY_SLACK if closed else d > 0

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(_Kernel):
    config: ProblemConfig
    center: tuple = None
    radius: float = 1.0
    origin: tuple | None = None

    def __post_init__(self):
        c = np.zeros(self.config.N) if self.center is None else np.asarray(self.center, float)
        if c.shape != (self.config.N,):
            raise ValueError("center has the wrong dimension")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(c.tolist()))

    @property
    def kind(self) -> str:
        if self.origin is not None:
            return "rescaled"
        return "unit_ball" if self.radius == 1.0 and not any(self.center) else "ball"

    def _q(self, x, y):
        m = np.asarray(self.center)
        xp = np.asarray(x, float) - m
        yp = np.asarray(y, float) - m
        rho2 = self.radius ** 2
        xx = np.sum(xp * xp, axis=-1)
        yy = np.sum(yp * yp, axis=-1)
        xy = np.sum(xp * yp, axis=-1)
        return xx * yy / rho2 - 2.0 * xy + rho2, xp, yp, yy

    def H(self, x, y):
        q, *_ = self._q(x, y)
        return -self.config.C_N * q ** ((2 - self.config.N) / 2)

    def grad_H(self, x, y):
        N = self.config.N
        q, xp, yp, yy = self._q(x, y)
        dq = 2.0 * yy[..., None] * xp / self.radius ** 2 - 2.0 * yp
        return 0.5 * self.config.C_N * (N - 2) * q[..., None] ** (-N / 2) * dq

    def robin(self, x):
        xp = np.asarray(x, float) - np.asarray(self.center)
        s = (self.radius ** 2 - np.sum(xp * xp, axis=-1)) / self.radius
        return -self.config.C_N * s ** (2 - self.config.N)

    def dist(self, x):
        xp = np.asarray(x, float) - np.asarray(self.center)
        return self.radius - _norm(xp)

    def sample_interior(self, rng, n, shrink: float = 1.0):
        """Uniform samples in the concentric ball of radius ``shrink * radius``."""
        N = self.config.N
        d = rng.standard_normal((n, N))
        d /= _norm(d)[:, None]
        r = shrink * self.radius * rng.random(n) ** (1.0 / N)
        return np.asarray(self.center) + r[:, None] * d

    def to_json(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class HalfSpace(_Kernel):
    """The half-space ``{x : x_N < level}``."""

    config: ProblemConfig
    level: float = 0.0
    origin: tuple | None = None

    @property
    def kind(self) -> str:
        return "rescaled" if self.origin is not None else "half_space"

    def reflect(self, y):
        y = np.array(y, dtype=float, copy=True)
        y[..., -1] = 2.0 * self.level - y[..., -1]
        return y

    def H(self, x, y):
        return -self.singular(x, self.reflect(y))

    def grad_H(self, x, y):
        return -self.grad_singular(x, self.reflect(y))

    def robin(self, x):
        depth = self.dist(x)
        return -self.config.C_N * (2.0 * depth) ** (2 - self.config.N)

    def dist(self, x):
        return self.level - np.asarray(x, float)[..., -1]

    def to_json(self) -> dict:
        return {"kind": self.kind, "level": self.level}


def unit_ball(config: ProblemConfig) -> Ball:
    return Ball(config)


def half_space(config: ProblemConfig) -> HalfSpace:
    return HalfSpace(config)


def rescaled_kernel(base, center, scale: float):
    """Kernel of ``{x : center + scale*x in base}``.

    Its Green function is ``scale^(N-2) G_base(center + scale x, center + scale y)``;
    the returned kernel is again a ball or half-space written in closed form.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    c = np.asarray(center, float)
    if c.shape != (base.config.N,):
        raise ValueError("center has the wrong dimension")
    if not base.contains(c, closed=True):
        raise ValueError("center must lie in the closed base domain")
    origin = (base.kind, tuple(c.tolist()), float(scale))
    if isinstance(base, Ball):
        m = (np.asarray(base.center) - c) / scale
        return Ball(base.config, tuple(m.tolist()), base.radius / scale, origin)
    if isinstance(base, HalfSpace):
        return HalfSpace(base.config, (base.level - c[-1]) / scale, origin)
    raise TypeError(f"unsupported base kernel {type(base).__name__}")


def _check_points(kernel, x, y, allow_equal: bool):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if not np.all(kernel.contains(x, closed=True)):
        raise ValueError("x lies outside the closed domain")
    if not np.all(kernel.contains(y, closed=True)):
        raise ValueError("y lies outside the closed domain")
    sep = _norm(x - y)
    if allow_equal:
        bad = (sep > 0) & (sep < COINCIDENT_TOL)
    else:
        bad = sep < COINCIDENT_TOL
    if np.any(bad):
        raise ValueError("coincident or near-coincident arguments")
    return x, y


def green_eval(kernel, x, y):
    """``G(x, y)`` with argument validation."""
    x, y = _check_points(kernel, x, y, allow_equal=False)
    return kernel.G(x, y)


def robin_eval(kernel, x, y):
    """``H(x, y)``; ``x = y`` allowed in the open domain."""
    x, y = _check_points(kernel, x, y, allow_equal=True)
    if np.any((_norm(x - y) == 0) & ~kernel.contains(x)):
        raise ValueError("Robin function diverges at boundary diagonal points")
    return kernel.H(x, y)


def robin_grad_x(kernel, x, y):
    x, y = _check_points(kernel, x, y, allow_equal=True)
    if np.any((_norm(x - y) == 0) & ~kernel.contains(x)):
        raise ValueError("Robin function diverges at boundary diagonal points")
    return kernel.grad_H(x, y)


def robin_boundary_bound_check(kernel: Ball, samples: int, rng=None) -> dict:
    """Empirical constants ``C0 = max |H| d(x)^(N-2)`` and ``C1 = max |grad_x H| d(x)^(N-1)``."""
    if not isinstance(kernel, Ball):
        raise TypeError("bound check needs an analytic boundary distance (ball kernel)")
    rng = np.random.default_rng(rng)
    N = kernel.config.N
    x = kernel.sample_interior(rng, samples)
    y = kernel.sample_interior(rng, samples)
    d = kernel.dist(x)
    h = np.abs(kernel.H(x, y))
    g = _norm(kernel.grad_H(x, y))
    c0 = float(np.max(h * d ** (N - 2)))
    c1 = float(np.max(g * d ** (N - 1)))
    return {
        "samples": int(samples),
        "C0": c0,
        "C1": c1,
        "C_N": kernel.config.C_N,
        "finite": bool(np.isfinite(c0) and np.isfinite(c1)),
    }


def u_r_grid(config: ProblemConfig, R: float = 2.0, points: int = 21):
    """Lattice points of ``[-2R, 2R]^N`` with ``|x| <= 2R`` and ``x_N < -1/2``."""
    ax = np.linspace(-2 * R, 2 * R, points)
    mesh = np.stack(np.meshgrid(*([ax] * config.N), indexing="ij"), axis=-1).reshape(-1, config.N)
    keep = (_norm(mesh) <= 2 * R) & (mesh[:, -1] < -0.5)
    return mesh[keep]


def halfspace_convergence_check(
    d_sequence,
    config: ProblemConfig,
    R: float = 2.0,
    points: int = 21,
    compare=None,
) -> dict:
    """Sup of ``|H_n - H_-|`` over pairs of a fixed grid in ``U_R``.

    ``H_n`` is the Robin function of the unit ball blown up by ``1/d`` around the
    boundary point ``e_N``, so the rescaled domains increase to ``{x_N < 0}``.
    ``compare`` replaces the rescaled ball (used for self-comparison).
    """
    d_seq = [float(d) for d in d_sequence]
    if not d_seq or any(d <= 0 or d >= 1 for d in d_seq):
        raise ValueError("d values must lie in (0, 1)")
    if any(b >= a for a, b in zip(d_seq, d_seq[1:])):
        raise ValueError("d_sequence must be strictly decreasing")
    base = unit_ball(config)
    limit = half_space(config)
    anchor = np.zeros(config.N)
    anchor[-1] = 1.0
    grid = u_r_grid(config, R, points)
    # nested domains: filtering by the largest d keeps the grid valid for all
    grid = grid[rescaled_kernel(base, anchor, d_seq[0]).contains(grid)]
    X = grid[:, None, :]
    Y = grid[None, :, :]
    h_lim = limit.H(X, Y)
    errors = []
    for d in d_seq:
        k = compare if compare is not None else rescaled_kernel(base, anchor, d)
        errors.append(float(np.max(np.abs(k.H(X, Y) - h_lim))))
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    ratio = errors[-1] / errors[0] if errors[0] > 0 else 0.0
    return {
        "d": d_seq,
        "errors": errors,
        "grid_points": int(len(grid)),
        "strictly_decreasing": decreasing,
        "final_over_initial": ratio,
        "passed": bool(decreasing and ratio <= 0.25),
    }


def _boundary_samples(kernel, rng, n):
    N = kernel.config.N
    if isinstance(kernel, Ball):
        d = rng.standard_normal((n, N))
        d /= _norm(d)[:, None]
        return np.asarray(kernel.center) + kernel.radius * d
    x = rng.uniform(-3, 3, (n, N))
    x[:, -1] = kernel.level
    return x


def _interior_samples(kernel, rng, n, margin=0.0):
    N = kernel.config.N
    if isinstance(kernel, Ball):
        pts = kernel.sample_interior(rng, 4 * n, shrink=1.0)
    else:
        pts = rng.uniform(-3, 3, (4 * n, N))
        pts[:, -1] = kernel.level - rng.uniform(0.0, 3.0, 4 * n)
    pts = pts[kernel.dist(pts) > margin]
    return pts[:n]


def kernel_self_check(kernel, samples: int = 1000, rng=None, fd_step: float = 1e-6) -> dict:
    """Boundary values, symmetry, finite-difference gradients and the rescaling identity.

    Returns the worst error of each check:

    * ``boundary_zero``: ``max |G(x, y)|`` with ``x`` on the boundary;
    * ``symmetry``: ``max |G(x, y) - G(y, x)| / max(1, |G(x, y)|)``;
    * ``gradient_fd``: relative error of ``grad_x G`` against central differences,
      on pairs at least 0.1 apart and 0.05 from the boundary;
    * ``rescaling``: error of the closed-form rescaled kernel against
      ``s^(N-2) G(c + s x, c + s y)`` for a random center and scale, in units of
      the singular part ``C_N |x - y|^(2-N)``.  ``rescaling_relative`` divides by
      ``|G|`` instead, which loses digits near the boundary where ``G`` cancels.
    """
    rng = np.random.default_rng(rng)
    N = kernel.config.N
    xb = _boundary_samples(kernel, rng, samples)
    y = _interior_samples(kernel, rng, samples)
    m = min(len(xb), len(y))
    boundary_zero = float(np.max(np.abs(kernel.G(xb[:m], y[:m]))))

    x = _interior_samples(kernel, rng, samples)
    y = _interior_samples(kernel, rng, samples)
    m = min(len(x), len(y))
    x, y = x[:m], y[:m]
    keep = _norm(x - y) > COINCIDENT_TOL
    gxy = kernel.G(x[keep], y[keep])
    gyx = kernel.G(y[keep], x[keep])
    symmetry = float(np.max(np.abs(gxy - gyx) / np.maximum(1.0, np.abs(gxy))))

    x = _interior_samples(kernel, rng, 4 * samples, margin=0.05)
    y = _interior_samples(kernel, rng, 4 * samples, margin=0.05)
    m = min(len(x), len(y))
    x, y = x[:m], y[:m]
    keep = _norm(x - y) > 0.1
    x, y = x[keep][:samples], y[keep][:samples]
    an = kernel.grad_G(x, y)
    fd = np.empty_like(an)
    for a in range(N):
        e = np.zeros(N)
        e[a] = fd_step
        fd[:, a] = (kernel.G(x + e, y) - kernel.G(x - e, y)) / (2 * fd_step)
    gradient_fd = float(np.max(_norm(fd - an) / np.maximum(_norm(an), 1e-300)))

    if isinstance(kernel, Ball):
        c = kernel.sample_interior(rng, 1, shrink=0.5)[0]
    else:
        c = rng.uniform(-1, 1, N)
        c[-1] = kernel.level - rng.uniform(0.1, 1.0)
    s = float(rng.uniform(0.05, 0.5))
    resc = rescaled_kernel(kernel, c, s)
    X = _interior_samples(resc, rng, samples)
    Y = _interior_samples(resc, rng, samples)
    m = min(len(X), len(Y))
    X, Y = X[:m], Y[:m]
    keep = _norm(X - Y) > 1e-6
    lhs = resc.G(X[keep], Y[keep])
    rhs = s ** (N - 2) * kernel.G(c + s * X[keep], c + s * Y[keep])
    diff = np.abs(lhs - rhs)
    rescaling = float(np.max(diff / resc.singular(X[keep], Y[keep])))
    rescaling_relative = float(np.max(diff / np.abs(rhs)))
    return {
        "kind": kernel.kind,
        "samples": int(samples),
        "boundary_zero": boundary_zero,
        "symmetry": symmetry,
        "gradient_fd": gradient_fd,
        "rescaling": rescaling,
        "rescaling_relative": rescaling_relative,
        "rescaling_pairs": int(keep.sum()),
    }
