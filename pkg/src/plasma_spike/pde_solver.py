"""Finite-difference solver for ``-Lap v = mu [v - 1]_+^p`` on the unit ball in R^3.

The ball is embedded in the Cartesian grid over ``[-1, 1]^3``.  Rows of the
discrete Laplacian at nodes next to the sphere use the distance ``theta*h`` to
the boundary along each axis (Shortley-Weller geometry), written in symmetric
form: the arm that crosses the sphere contributes ``1/(theta h^2)`` to the
diagonal and nothing else, so the matrix stays SPD.  Dirichlet data is
zero throughout.

Newton's method is used for the nonlinear problem.  Its Jacobian
``A - mu p [v-1]_+^(p-1)`` is symmetric but indefinite at spike solutions, so
each linear solve tries preconditioned CG first and falls back to MINRES when
CG does not reach the requested accuracy.  Both use a smoothed-aggregation AMG
cycle for ``A`` as preconditioner.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import pyamg
import scipy.sparse as sp
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg, minres

from .model_core import ProblemConfig, make_config

__all__ = [
    "SUPPORTED_RESOLUTIONS",
    "BallGrid",
    "GridField",
    "SolveResult",
    "SolverDivergence",
    "SpikeReport",
    "build_grid",
    "seed_spike",
    "max_resolvable_mu",
    "solve_semilinear",
    "continue_in_mu",
    "extract_spikes",
    "write_field",
    "read_field",
]

log = logging.getLogger(__name__)

SUPPORTED_RESOLUTIONS = (65, 97, 129, 193)
THETA_MIN = 1e-6
MIN_RESOLVED_CELLS = 3.0
# Newton gives up once |F| exceeds this multiple of the initial residual
BLOWUP_FACTOR = 1e4


class SolverDivergence(RuntimeError):
    pass


class BallGrid:
    """Cartesian grid over ``[-1, 1]^3`` with the unit ball's interior nodes.

    Attributes
    ----------
    n : nodes per axis (odd, so the origin is a node)
    h : grid spacing
    interior : boolean mask of unknowns (``|x| < 1``)
    theta : per-node, per-direction boundary fraction, shape ``(n, n, n, 6)``;
        1 where the neighbour is interior, ``theta*h`` distance to the sphere otherwise
    """

    def __init__(self, resolution: int, check: bool = True):
        if check and resolution not in SUPPORTED_RESOLUTIONS:
            raise ValueError(
                f"resolution {resolution} not supported; choose one of {SUPPORTED_RESOLUTIONS}"
            )
        if resolution % 2 == 0 or resolution < 5:
            raise ValueError("resolution must be odd and >= 5")
        self.n = n = int(resolution)
        self.h = 2.0 / (n - 1)
        self.axis = np.linspace(-1.0, 1.0, n)
        X, Y, Z = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        self.coords = (X, Y, Z)
        r2 = X * X + Y * Y + Z * Z
        self.radius = np.sqrt(r2)
        self.interior = 1.0 - self.radius > 1e-12
        self.index = -np.ones((n, n, n), dtype=np.int64)
        self.nodes = np.flatnonzero(self.interior.ravel())
        self.index.ravel()[self.nodes] = np.arange(len(self.nodes))
        self.theta = np.ones((n, n, n, 6))
        self._assemble()

    @property
    def size(self) -> int:
        return len(self.nodes)

    def _boundary_fraction(self, axis: int, sign: int, mask):
        """Fraction ``theta`` of a grid step from interior nodes to the sphere."""
        c = [a[mask] for a in self.coords]
        perp = sum(c[d] ** 2 for d in range(3) if d != axis)
        root = np.sqrt(np.clip(1.0 - perp, 0.0, None))
        s = sign * root - c[axis]
        return np.clip(sign * s / self.h, THETA_MIN, 1.0)

    def _assemble(self):
        n, h = self.n, self.h
        inside = self.interior
        diag = np.zeros((n, n, n))
        rows, cols = [], []
        for axis in range(3):
            for k, sign in enumerate((-1, 1)):
                shifted = np.zeros_like(inside)
                src = [slice(None)] * 3
                dst = [slice(None)] * 3
                if sign > 0:
                    src[axis], dst[axis] = slice(1, None), slice(None, -1)
                else:
                    src[axis], dst[axis] = slice(None, -1), slice(1, None)
                shifted[tuple(dst)] = inside[tuple(src)]
                nb_inside = inside & shifted
                crossing = inside & ~shifted
                diag += nb_inside
                th = self._boundary_fraction(axis, sign, crossing)
                self.theta[..., 2 * axis + k][crossing] = th
                diag[crossing] += 1.0 / th
                idx = np.flatnonzero(nb_inside.ravel())
                step = sign * (n * n if axis == 0 else n if axis == 1 else 1)
                rows.append(self.index.ravel()[idx])
                cols.append(self.index.ravel()[idx + step])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        d = diag.ravel()[self.nodes]
        m = self.size
        A = sp.coo_matrix(
            (np.concatenate([d, -np.ones(len(rows))]),
             (np.concatenate([np.arange(m), rows]), np.concatenate([np.arange(m), cols]))),
            shape=(m, m),
        )
        self.A = (A.tocsr() / h ** 2).astype(float)

    @cached_property
    def amg(self):
        return pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric", max_coarse=500)

    @cached_property
    def cell_volume(self):
        """Midpoint-rule weights: ``h^3`` inside, fractional volume for cells cut by the sphere."""
        h = self.h
        vol = np.where(self.radius + np.sqrt(3) * h / 2 < 1.0, h ** 3, 0.0)
        cut = (np.abs(self.radius - 1.0) <= np.sqrt(3) * h / 2)
        idx = np.argwhere(cut)
        sub = (np.arange(4) + 0.5) / 4 - 0.5
        S = np.stack(np.meshgrid(sub, sub, sub, indexing="ij"), -1).reshape(-1, 3) * h
        centers = self.axis[idx]
        for chunk in range(0, len(idx), 4096):
            c = centers[chunk: chunk + 4096]
            pts = c[:, None, :] + S[None]
            frac = np.mean(np.sum(pts ** 2, axis=-1) < 1.0, axis=1)
            ii = idx[chunk: chunk + 4096]
            vol[ii[:, 0], ii[:, 1], ii[:, 2]] = frac * h ** 3
        return vol

    def to_vector(self, values):
        return np.asarray(values).ravel()[self.nodes]

    def to_field(self, vec):
        out = np.zeros(self.n ** 3)
        out[self.nodes] = vec
        return out.reshape(self.n, self.n, self.n)

    def laplacian(self, values):
        """``-Lap_h`` applied to a full-grid field; zero outside the interior."""
        return self.to_field(self.A @ self.to_vector(values))

    def poisson(self, rhs, tol: float = 1e-12):
        """Solve ``-Lap_h u = rhs`` with zero Dirichlet data."""
        b = self.to_vector(rhs) if np.ndim(rhs) == 3 else np.full(self.size, float(rhs))
        if not np.any(b):
            return np.zeros((self.n,) * 3)
        x = self.amg.solve(b, tol=tol, accel="cg", maxiter=200)
        return self.to_field(x)

    def interpolator(self, values):
        return RegularGridInterpolator((self.axis,) * 3, values, method="linear",
                                       bounds_error=False, fill_value=0.0)


_GRID_CACHE: dict[int, BallGrid] = {}


def build_grid(resolution: int) -> BallGrid:
    """Grid scaffold for ``resolution`` in ``SUPPORTED_RESOLUTIONS`` (cached per process)."""
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ValueError(
            f"resolution {resolution} not supported; choose one of {SUPPORTED_RESOLUTIONS}"
        )
    if resolution not in _GRID_CACHE:
        _GRID_CACHE[resolution] = BallGrid(resolution)
    return _GRID_CACHE[resolution]


@dataclass
class GridField:
    grid: BallGrid
    values: np.ndarray
    mu: float
    config: ProblemConfig = field(default_factory=lambda: make_config(3, 2.0))
    status: str = "initial"
    residual: float = float("nan")
    iterations: int = 0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.config.N != 3:
            raise ValueError("the grid solver is three-dimensional")
        self.values = np.where(self.grid.interior, self.values, 0.0)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def epsilon(self) -> float:
        return self.mu ** -0.5

    @property
    def interior_mask(self):
        return self.grid.interior

    @property
    def boundary_weights(self):
        return self.grid.theta

    def nonlinear_residual(self) -> np.ndarray:
        v = self.grid.to_vector(self.values)
        return self.grid.A @ v - self.mu * np.clip(v - 1.0, 0.0, None) ** self.config.p

    def mass(self) -> float:
        """``mu^(N/2) int [v - 1]_+^p`` by the midpoint rule."""
        p = self.config.p
        dens = np.clip(self.values - 1.0, 0.0, None) ** p
        return float(self.mu ** 1.5 * np.sum(dens * self.grid.cell_volume))


@dataclass
class SolveResult:
    field: GridField
    status: str
    residual: float
    iterations: int
    history: list


def seed_spike(grid: BallGrid, center, profile, mu: float) -> GridField:
    """Initial field ``w0(|x - center| / eps)`` sampled on the grid, zero outside the ball.

    ``center`` may also be a ``(k, 3)`` array; the seed is then the pointwise
    maximum of the ``k`` single-spike profiles.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    cs = np.atleast_2d(np.asarray(center, float))
    if cs.shape[1] != 3:
        raise ValueError("seed centers must be points of R^3")
    if np.any(np.linalg.norm(cs, axis=1) >= 1.0):
        raise ValueError("seed center must be interior")
    eps = mu ** -0.5
    if eps * profile.R0 < MIN_RESOLVED_CELLS * grid.h:
        mu_max = (profile.R0 / (MIN_RESOLVED_CELLS * grid.h)) ** 2
        raise ValueError(
            f"spike unresolvable: eps*R0 = {eps * profile.R0:.4g} < {MIN_RESOLVED_CELLS:g}h = "
            f"{MIN_RESOLVED_CELLS * grid.h:.4g}; use mu <= {mu_max:.4g} on this grid"
        )
    X, Y, Z = grid.coords
    vals = np.zeros_like(X)
    for c in cs:
        s = np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / eps
        vals = np.maximum(vals, profile.w0(s))
    return GridField(grid, vals, float(mu), profile.config, status="seeded")


def max_resolvable_mu(grid: BallGrid, profile) -> float:
    """Largest ``mu`` with ``eps R0 >= 3h`` on ``grid``."""
    return (profile.R0 / (MIN_RESOLVED_CELLS * grid.h)) ** 2


def _linear_solve(J, rhs, M, rtol):
    """CG with AMG preconditioning; MINRES when CG falls short (indefinite Jacobian)."""
    bnorm = np.linalg.norm(rhs)
    x, info = cg(J, rhs, rtol=rtol, maxiter=300, M=M)
    if info == 0 and np.all(np.isfinite(x)) and np.linalg.norm(J @ x - rhs) <= 10 * rtol * bnorm:
        return x, "cg"
    x, info = minres(J, rhs, rtol=rtol, maxiter=2000, M=M)
    return x, "minres"


def solve_semilinear(field: GridField, tol: float = 1e-10, max_iter: int = 50,
                     watchdog: int = 8) -> SolveResult:
    """Damped Newton with a watchdog Armijo line search; converged when ``|F|_inf <= tol``.

    Full Newton steps are accepted without decrease of ``|F|_2`` for at most
    ``watchdog`` consecutive iterations.  If no new best iterate appears in that
    window, the iteration returns to the best point and backtracks (Armijo).
    Spike continuation needs this: the Newton path from a rescaled spike leaves
    the initial residual level before it converges quadratically.

    Status is ``"converged"`` (nontrivial), ``"vanishing"`` (converged with
    ``max v < 1``, the trivial branch) or ``"diverged"``.  Divergence covers an
    exhausted line search or iteration limit, a residual above
    ``BLOWUP_FACTOR`` times the initial one, and ``3 * watchdog`` steps
    without a new best iterate.
    """
    grid = field.grid
    mu, p = field.mu, field.config.p
    A = grid.A
    v = grid.to_vector(field.values).copy()
    M = grid.amg.aspreconditioner(cycle="V")

    def F(v):
        return A @ v - mu * np.clip(v - 1.0, 0.0, None) ** p

    def jac(v):
        return A - sp.diags(mu * p * np.clip(v - 1.0, 0.0, None) ** (p - 1))

    r = F(v)
    history = [float(np.max(np.abs(r)))]
    best_v, best_r = v, r
    since_best = 0
    status = "diverged"
    it = 0
    while it < max_iter:
        rinf = np.max(np.abs(r))
        if rinf <= tol:
            status = "converged"
            break
        if not np.isfinite(rinf) or rinf > BLOWUP_FACTOR * history[0] or since_best > 3 * watchdog:
            log.debug("newton stopped: |F|_inf = %.3e, %d steps since the best iterate", rinf, since_best)
            break
        it += 1
        rtol = float(np.clip(1e-8 * rinf, 1e-13, 1e-4))
        step, method = _linear_solve(jac(v), -r, M, rtol)
        log.debug("newton %d: |F|_inf = %.3e, linear solve by %s", it, rinf, method)
        f0 = r @ r
        vt = v + step
        rt = F(vt)
        if rt @ rt <= (1.0 - 1e-4) * f0 or (since_best < watchdog and np.all(np.isfinite(rt))):
            v, r = vt, rt
        else:
            # watchdog expired: backtrack from the best iterate
            v, r = best_v, best_r
            f0 = r @ r
            step, _ = _linear_solve(jac(v), -r, M, rtol)
            t = 0.5
            while t >= 1e-8:
                vt = v + t * step
                rt = F(vt)
                if rt @ rt <= (1.0 - 1e-4 * t) * f0:
                    break
                t *= 0.5
            else:
                if np.max(np.abs(r)) <= 10 * tol:
                    status = "converged"
                break
            v, r = vt, rt
        history.append(float(np.max(np.abs(r))))
        if r @ r < (1.0 - 1e-4) * (best_r @ best_r):
            best_v, best_r, since_best = v, r, 0
        else:
            since_best += 1
    if status != "converged" and np.max(np.abs(best_r)) <= tol:
        v, r, status = best_v, best_r, "converged"
    if status == "converged" and np.max(v, initial=0.0) < 1.0:
        status = "vanishing"
    out = GridField(grid, grid.to_field(v), mu, field.config, status=status,
                    residual=float(np.max(np.abs(r))), iterations=it)
    return SolveResult(out, status, out.residual, it, history)


def _resample(field: GridField, mu_new: float, centers) -> GridField:
    """Warm start for a larger ``mu``: stretch each spike core by ``eps_old/eps_new``
    about its center and rescale the harmonic far field by ``(eps_new/eps_old)^(N-2)``."""
    grid = field.grid
    cs = np.atleast_2d(np.asarray(centers, float))
    eps_old, eps_new = field.epsilon, mu_new ** -0.5
    ratio = eps_old / eps_new
    X, Y, Z = grid.coords
    interp = grid.interpolator(field.values)
    core_radius = 2.0 * eps_new * _glue_radius_estimate(field)
    vals = (eps_new / eps_old) ** (field.config.N - 2) * field.values
    for c in cs:
        D = np.stack([X - c[0], Y - c[1], Z - c[2]], axis=-1)
        core = np.linalg.norm(D, axis=-1) <= core_radius
        vals[core] = interp(c + ratio * D[core])
    return GridField(grid, vals, float(mu_new), field.config, status="seeded")


def _glue_radius_estimate(field: GridField) -> float:
    """Largest plasma radius of ``field`` in units of its ``eps``."""
    rep = extract_spikes(field, 0.1)
    if rep.plasma_radii:
        return max(rep.plasma_radii) / field.epsilon
    return 3.0


def continue_in_mu(field: GridField, mu_sequence, tol: float = 1e-10, max_iter: int = 50,
                   center=None):
    """Warm-started solves along an increasing ``mu_sequence``.

    ``field`` is an initial guess for ``mu_sequence[0]``.  Between steps every
    detected spike (or the given ``center``, which may be a ``(k, 3)`` array) is
    rescaled.  Returns the list of solve results; stops at the first step that
    does not converge.
    """
    mus = [float(m) for m in mu_sequence]
    if not mus:
        raise ValueError("empty mu sequence")
    if any(b <= a for a, b in zip(mus, mus[1:])):
        raise ValueError("mu_sequence must be strictly increasing")
    if abs(field.mu - mus[0]) > 1e-12 * mus[0]:
        field = replace(field, mu=mus[0])
    results = []
    current = field
    for i, mu in enumerate(mus):
        if i > 0:
            c = center
            if c is None:
                rep = extract_spikes(current, 0.1)
                c = rep.centers if rep.centers else np.zeros((1, 3))
            current = _resample(current, mu, c)
        res = solve_semilinear(current, tol, max_iter)
        results.append(res)
        if res.status != "converged":
            log.warning("continuation stopped at mu=%g (%s)", mu, res.status)
            break
        current = res.field
    return results


@dataclass
class SpikeReport:
    centers: list
    heights: list
    plasma_components: list
    plasma_radii: list
    mass: float
    sigma: float
    containment_ok: bool | None = None

    def to_json(self) -> dict:
        return {
            "centers": [list(map(float, c)) for c in self.centers],
            "heights": [float(h) for h in self.heights],
            "plasma_components": self.plasma_components,
            "plasma_radii": [float(r) for r in self.plasma_radii],
            "mass": float(self.mass),
            "sigma": float(self.sigma),
            "containment_ok": self.containment_ok,
        }


def _axis_crossing_radius(v, idx, h, level=1.0):
    """Mean distance along the six axis rays from node ``idx`` to where ``v`` drops to ``level``."""
    out = []
    n = v.shape[0]
    for axis in range(3):
        for sign in (-1, 1):
            pos = list(idx)
            prev = v[tuple(pos)]
            steps = 0
            while True:
                pos[axis] += sign
                if not 0 <= pos[axis] < n:
                    break
                cur = v[tuple(pos)]
                steps += 1
                if cur <= level:
                    frac = (prev - level) / (prev - cur)
                    out.append((steps - 1 + frac) * h)
                    break
                prev = cur
    return float(np.mean(out)) if out else 0.0


def extract_spikes(field: GridField, sigma: float = 0.1, R0: float | None = None) -> SpikeReport:
    """Local maxima above ``1 + sigma``, plasma components ``{v > 1}`` and the plasma mass.

    Maxima are strict over the 27-point neighbourhood (plateaus count once) and
    refined by a one-dimensional parabola per axis.  With ``R0`` given, each
    component is checked to lie within ``2 eps R0 + h`` of some center.
    """
    grid = field.grid
    v = field.values
    h = grid.h
    peak = (v >= ndimage.maximum_filter(v, size=3, mode="constant", cval=0.0)) & (v >= 1.0 + sigma)
    lab, nlab = ndimage.label(peak, structure=np.ones((3, 3, 3)))
    centers, heights, nodes = [], [], []
    for k in range(1, nlab + 1):
        pts = np.argwhere(lab == k)
        i = tuple(pts[np.argmax(v[tuple(pts.T)])])
        x = np.array([grid.axis[j] for j in i])
        for a in range(3):
            lo, hi = list(i), list(i)
            lo[a] -= 1
            hi[a] += 1
            if min(lo) < 0 or max(hi) >= grid.n:
                continue
            vm, v0, vp = v[tuple(lo)], v[i], v[tuple(hi)]
            den = vm - 2 * v0 + vp
            if den < 0:
                x[a] += 0.5 * h * (vm - vp) / den
        centers.append(x)
        heights.append(float(v[i]))
        nodes.append(i)
    plasma, ncomp = ndimage.label(v > 1.0)
    comps = []
    X, Y, Z = grid.coords
    containment = True
    for k in range(1, ncomp + 1):
        m = plasma == k
        pts = np.stack([X[m], Y[m], Z[m]], axis=-1)
        info = {"nodes": int(m.sum())}
        if centers:
            dists = [float(np.max(np.linalg.norm(pts - c, axis=1))) for c in centers]
            j = int(np.argmin(dists))
            info.update(center_index=j, bounding_radius=dists[j])
            if R0 is not None and dists[j] > 2 * field.epsilon * R0 + h:
                containment = False
        comps.append(info)
    radii = [_axis_crossing_radius(v, i, h) for i in nodes]
    return SpikeReport(
        centers=centers,
        heights=heights,
        plasma_components=comps,
        plasma_radii=radii,
        mass=field.mass(),
        sigma=sigma,
        containment_ok=containment if R0 is not None else None,
    )


HEADER_RE = re.compile(r"^plasma-field v1 res=(\d+) mu=(\S+)\n$")


def write_field(path, field: GridField) -> None:
    """Header line ``plasma-field v1 res=<R> mu=<mu>`` then little-endian float64, C order."""
    with open(path, "wb") as fh:
        fh.write(f"plasma-field v1 res={field.grid.n} mu={field.mu!r}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))


def read_field(path, config: ProblemConfig | None = None) -> GridField:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii")
        m = HEADER_RE.match(header)
        if not m:
            raise ValueError(f"not a plasma-field v1 file: {header!r}")
        res, mu = int(m.group(1)), float(m.group(2))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != res ** 3:
        raise ValueError(f"payload has {data.size} values, expected {res ** 3}")
    grid = build_grid(res) if res in SUPPORTED_RESOLUTIONS else BallGrid(res, check=False)
    values = data.reshape(res, res, res).astype(float)
    return GridField(grid, values, mu, config or make_config(3, 2.0), status="loaded")
