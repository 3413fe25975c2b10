"""Kirchhoff-Routh Hamiltonian of weighted point configurations and its critical points.

    KR(x_1..x_k) = sum_i k_i^2 H(x_i, x_i) + sum_{i != j} k_i k_j G(x_i, x_j)

Critical points are generally saddles, so ``find_critical`` drives the gradient
to zero with damped Newton iterations rather than minimizing the Hamiltonian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .green_kernels import Ball, COINCIDENT_TOL

__all__ = [
    "SpikeConfiguration",
    "hamiltonian",
    "hamiltonian_grad",
    "find_critical",
    "symmetric_pair_equation",
    "solve_symmetric_pair",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpikeConfiguration:
    points: np.ndarray
    weights: np.ndarray
    kernel: object

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, float))
        w = np.asarray(self.weights, float).ravel()
        if pts.shape[1] != self.kernel.config.N:
            raise ValueError("points have the wrong dimension")
        if len(w) != len(pts):
            raise ValueError("one weight per point is required")
        if np.any(w == 0):
            raise ValueError("weights must be nonzero")
        if not np.all(self.kernel.contains(pts)):
            raise ValueError("all points must be strictly interior")
        if len(pts) > 1:
            d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
            d[np.diag_indices(len(pts))] = np.inf
            if d.min() < COINCIDENT_TOL:
                raise ValueError("coincident points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return len(self.points)

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}


def hamiltonian(config: SpikeConfiguration) -> float:
    x, w, K = config.points, config.weights, config.kernel
    diag = np.sum(w ** 2 * K.robin(x))
    if config.k == 1:
        return float(diag)
    i, j = np.triu_indices(config.k, 1)
    cross = 2.0 * np.sum(w[i] * w[j] * K.G(x[i], x[j]))
    return float(diag + cross)


def hamiltonian_grad(config: SpikeConfiguration) -> np.ndarray:
    """Gradient with respect to each point, shape ``(k, N)``."""
    x, w, K = config.points, config.weights, config.kernel
    g = (w ** 2)[:, None] * K.grad_robin(x)
    if config.k > 1:
        X = np.repeat(x[:, None, :], config.k, axis=1)
        Y = np.repeat(x[None, :, :], config.k, axis=0)
        off = ~np.eye(config.k, dtype=bool)
        pair = np.zeros_like(X)
        pair[off] = K.grad_G(X[off], Y[off])
        g += 2.0 * w[:, None] * np.einsum("j,ijn->in", w, pair)
    return g


def _grad_flat(kernel, weights, z):
    N = kernel.config.N
    return hamiltonian_grad(SpikeConfiguration(z.reshape(-1, N), weights, kernel)).ravel()


def _fd_hessian(kernel, weights, z, step=1e-6):
    n = z.size
    Hs = np.empty((n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = step
        Hs[:, a] = (_grad_flat(kernel, weights, z + e) - _grad_flat(kernel, weights, z - e)) / (2 * step)
    return 0.5 * (Hs + Hs.T)


def _admissible(kernel, z, N):
    pts = z.reshape(-1, N)
    if not np.all(kernel.contains(pts)):
        return False
    if len(pts) > 1:
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d[np.diag_indices(len(pts))] = np.inf
        if d.min() < 1e-6:
            return False
    return True


def _newton(kernel, weights, z0, tol, max_iter=60, patience=15):
    """Damped Newton on ``grad KR = 0``; gradient steps where the Hessian is unusable."""
    N = kernel.config.N
    z = z0.copy()
    g = _grad_flat(kernel, weights, z)
    best = np.inf
    since_best = 0
    for _ in range(max_iter):
        gn = np.max(np.abs(g))
        if gn <= tol:
            return z, gn
        if gn < 0.5 * best:
            best, since_best = gn, 0
        else:
            since_best += 1
            if since_best > patience:
                return z, gn
        Hs = _fd_hessian(kernel, weights, z)
        try:
            step = -np.linalg.solve(Hs, g)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = -g
        # merit: |grad|^2, which Newton decreases even at saddles
        t = 1.0
        f0 = g @ g
        while t > 1e-10:
            zt = z + t * step
            if _admissible(kernel, zt, N):
                gt = _grad_flat(kernel, weights, zt)
                if gt @ gt < (1 - 1e-4 * t) * f0:
                    break
            t *= 0.5
        else:
            # Newton direction stalled: fall back to descent on |grad|^2
            step = -2.0 * Hs @ g
            t = 1.0 / max(np.max(np.abs(step)), 1.0)
            while t > 1e-14:
                zt = z + t * step
                if _admissible(kernel, zt, N):
                    gt = _grad_flat(kernel, weights, zt)
                    if gt @ gt < f0:
                        break
                t *= 0.5
            else:
                return z, gn
        z, g = zt, gt
    return z, float(np.max(np.abs(g)))


def _canonical(kernel, pts, weights):
    """Quotient by permutations and, for a ball, rotations about its center.

    Points are ordered by (weight, -norm); the leading point is rotated onto the
    positive x_1 axis by a Householder reflection, then points sharing a weight
    are sorted lexicographically.
    """
    pts = np.array(pts, float)
    w = np.asarray(weights, float)
    if isinstance(kernel, Ball):
        m = np.asarray(kernel.center)
        pts = pts - m
        order = np.lexsort((-np.linalg.norm(pts, axis=1), w))
        pts, w = pts[order], w[order]
        r = np.linalg.norm(pts[0])
        if r > 1e-12:
            e1 = np.zeros_like(pts[0])
            e1[0] = 1.0
            u = pts[0] / r - e1
            if np.linalg.norm(u) > 1e-14:
                u /= np.linalg.norm(u)
                pts = pts - 2.0 * np.outer(pts @ u, u)
        pts = pts + m
    keys = [pts[:, n] for n in range(pts.shape[1] - 1, -1, -1)] + [w]
    idx = np.lexsort(keys)
    return pts[idx], w[idx]


def find_critical(
    kernel,
    k: int,
    weights,
    restarts: int = 16,
    tol: float = 1e-9,
    rng=None,
    dedup_tol: float = 1e-6,
):
    """Critical configurations found from ``restarts`` random starts.

    Returns ``(configs, diagnostics)``; ``configs`` is empty when no restart converged.
    Starts are drawn uniformly from the domain shrunk by 0.8 (balls) or from a
    box ``[-1, 1]^(N-1) x [-1.8, -0.2]`` below the boundary (half-spaces).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    w = np.asarray(weights, float)
    if len(w) != k:
        raise ValueError("weights must have length k")
    rng = np.random.default_rng(rng)
    N = kernel.config.N
    found = []
    diag = {"restarts": restarts, "converged": 0, "final_grad_norms": []}
    for _ in range(restarts):
        if isinstance(kernel, Ball):
            z0 = kernel.sample_interior(rng, k, shrink=0.8)
        else:
            z0 = rng.uniform(-1, 1, (k, N))
            z0[:, -1] = kernel.level - rng.uniform(0.2, 1.8, k)
        z, gn = _newton(kernel, w, z0.ravel(), tol)
        diag["final_grad_norms"].append(float(gn))
        if gn > tol:
            continue
        cfg = SpikeConfiguration(z.reshape(k, N), w, kernel)
        # recheck on a fresh evaluation
        if np.max(np.abs(hamiltonian_grad(cfg))) > tol:
            continue
        diag["converged"] += 1
        can = _canonical(kernel, cfg.points, w)
        dup = any(
            np.array_equal(can[1], oc[1]) and np.max(np.abs(can[0] - oc[0])) < dedup_tol
            for _, oc in found
        )
        if not dup:
            found.append((SpikeConfiguration(can[0], can[1], kernel), can))
    if not found:
        log.info("find_critical: no restart converged (%s)", diag)
    return [c for c, _ in found], diag


def symmetric_pair_equation(t, kernel: Ball, weights=(1.0, 1.0)):
    """Derivative in ``t`` of ``KR(t e_1, -t e_1)`` for a ball centered at the origin.

    Uses only the closed forms of the unit ball's Robin and Green functions
    restricted to the axis.
    """
    N, C = kernel.config.N, kernel.config.C_N
    k1, k2 = weights
    rho = kernel.radius
    s = t / rho
    # KR = (k1^2 + k2^2) H(t,t) + 2 k1 k2 G(t,-t), unit ball rescaled by rho
    dH = -C * (N - 2) * 2 * s * (1 - s * s) ** (1 - N) / rho ** (N - 1)
    dGamma = C * (2 - N) * 2 * (2 * t) ** (1 - N)
    dHimg = C * (N - 2) * 2 * s * (1 + s * s) ** (1 - N) / rho ** (N - 1)
    return (k1 ** 2 + k2 ** 2) * dH + 2 * k1 * k2 * (dGamma + dHimg)


def solve_symmetric_pair(kernel: Ball, weights=(1.0, 1.0), samples: int = 2000):
    """Roots of :func:`symmetric_pair_equation` on ``(0, radius)`` by bracketing + Brent.

    Returns a (possibly empty) list of half-separations ``t*``.
    """
    t = np.linspace(1e-4, 1 - 1e-4, samples) * kernel.radius
    f = np.array([symmetric_pair_equation(ti, kernel, weights) for ti in t])
    roots = []
    for a, b, fa, fb in zip(t[:-1], t[1:], f[:-1], f[1:]):
        if fa == 0:
            roots.append(float(a))
        elif fa * fb < 0:
            roots.append(brentq(symmetric_pair_equation, a, b, args=(kernel, weights), xtol=1e-15))
    return roots
