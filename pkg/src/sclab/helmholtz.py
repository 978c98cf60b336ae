"""Concentrating sources, outgoing solves, and radiation-condition checks.

The outgoing solution is defined operationally: solve (H - (E + i eps))u = f
on a decreasing eps ladder with the absorbing layer active, require the
weighted Cauchy differences to shrink, and extrapolate to eps = 0.  Radiation
diagnostics use D_r = d/dr + (n-1)/(2|x|) and the wavenumber sqrt(z)/h.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import PreconditionError
from .operator import DiscretizedOperator, GridDomain, build_hamiltonian
from .weights import bracket_power, l2s_norm, radii


@dataclass(frozen=True)
class GaussianProfile:
    """S(y) = exp(-|y|^2 / (2 width^2)) with closed-form Fourier transform."""
    dim: int
    width: float = 1.0

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.exp(-np.sum(y * y, axis=-1) / (2.0 * self.width ** 2))

    def hat(self, xi, convention: str = "plain"):
        """Fourier transform; 'plain' means S_hat(xi) = int e^{-ix.xi} S dx."""
        xi = np.asarray(xi, dtype=float)
        base = (2.0 * np.pi * self.width ** 2) ** (self.dim / 2.0) * \
            np.exp(-self.width ** 2 * np.sum(xi * xi, axis=-1) / 2.0)
        if convention == "plain":
            return base
        if convention == "unitary":
            return base / (2.0 * np.pi) ** (self.dim / 2.0)
        raise PreconditionError(f"unknown Fourier convention {convention!r}")

    def l2_norm(self):
        # ||S||_{L^2} = (pi w^2)^{n/4}
        return (np.pi * self.width ** 2) ** (self.dim / 4.0)


@dataclass(frozen=True)
class SourceSpec:
    """Quadrature description of a source concentrating on a submanifold.

    points: (k, n) nodes on the manifold; amplitudes, weights: (k,) with
    weights approximating the Lebesgue measure of the manifold; tangents is
    None for point sets and (k, n) unit tangents for curves in the plane.
    """
    points: np.ndarray
    amplitudes: np.ndarray
    weights: np.ndarray
    profile: GaussianProfile
    tangents: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "points",
                           np.atleast_2d(np.asarray(self.points, dtype=float)))
        object.__setattr__(self, "amplitudes",
                           np.atleast_1d(np.asarray(self.amplitudes,
                                                    dtype=complex)))
        object.__setattr__(self, "weights",
                           np.atleast_1d(np.asarray(self.weights, dtype=float)))
        k = self.points.shape[0]
        if self.amplitudes.shape != (k,) or self.weights.shape != (k,):
            raise PreconditionError("source node arrays must share length")
        if self.tangents is not None:
            t = np.atleast_2d(np.asarray(self.tangents, dtype=float))
            t = t / np.linalg.norm(t, axis=1, keepdims=True)
            object.__setattr__(self, "tangents", t)

    @property
    def manifold_dim(self) -> int:
        return 0 if self.tangents is None else 1


def point_source(z0, amplitude=1.0, profile: GaussianProfile | None = None,
                 dim: int | None = None) -> SourceSpec:
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    if profile is None:
        profile = GaussianProfile(dim=dim if dim is not None else z0.size)
    return SourceSpec(points=z0[None, :], amplitudes=[amplitude],
                      weights=[1.0], profile=profile)


def circle_source(radius=1.0, n_nodes=128, amplitude=1.0,
                  profile: GaussianProfile | None = None) -> SourceSpec:
    """Uniform amplitude on a circle in the plane, arc-length quadrature."""
    if profile is None:
        profile = GaussianProfile(dim=2)
    th = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    pts = radius * np.stack([np.cos(th), np.sin(th)], axis=1)
    tang = np.stack([-np.sin(th), np.cos(th)], axis=1)
    w = np.full(n_nodes, 2.0 * np.pi * radius / n_nodes)
    return SourceSpec(points=pts, amplitudes=np.full(n_nodes, amplitude),
                      weights=w, profile=profile, tangents=tang)


def build_source(spec: SourceSpec, grid: GridDomain, h: float) -> np.ndarray:
    """f(x) = sum_k A_k S((x - z_k)/h) w_k on the grid."""
    margin = grid.L - grid.cap_width - grid.buffer
    if np.any(np.max(np.abs(spec.points), axis=1) > margin):
        raise PreconditionError("source node outside the trusted interior")
    x = grid.points
    f = np.zeros(grid.size, dtype=complex)
    for zk, ak, wk in zip(spec.points, spec.amplitudes, spec.weights):
        f += ak * wk * spec.profile((x - zk) / h)
    return f


@dataclass
class OutgoingSolution:
    u: np.ndarray                  # smallest-eps solve
    u_extrapolated: np.ndarray     # linear Richardson estimate at eps = 0
    epsilons: np.ndarray
    zeta: complex                  # principal sqrt of the target z
    h: float
    delta: float
    cauchy_gaps: np.ndarray        # ||u_{k+1} - u_k|| in L^{2,-delta}, interior
    gap_ratios: np.ndarray
    solver_residuals: np.ndarray   # ||(H - z_k)u_k - f|| / ||f||
    cauchy_ok: bool
    ladder: list = field(default_factory=list, repr=False)


def solve_outgoing(op: DiscretizedOperator, f: np.ndarray, E: float,
                   eps_ladder=None, delta: float = 1.0) -> OutgoingSolution:
    """Limiting-absorption ladder solve of (H - (E + i eps))u = f.

    The eps ladder must be decreasing with at least 3 entries (default
    {1e-1, 1e-2, 1e-3} h).  A growing Cauchy gap is flagged, not raised:
    it signals a near-eigenvalue at E.
    """
    if eps_ladder is None:
        eps_ladder = op.h * np.array([1e-1, 1e-2, 1e-3])
    eps_ladder = np.asarray(eps_ladder, dtype=float)
    if eps_ladder.size < 3 or np.any(np.diff(eps_ladder) >= 0):
        raise PreconditionError("eps ladder must be decreasing, >= 3 points")
    f = np.asarray(f, dtype=complex)
    nf = np.linalg.norm(f)
    sols, resids = [], []
    for eps in eps_ladder:
        z = E + 1j * eps
        M = op.shifted(z)
        u = spla.splu(M).solve(f)
        sols.append(u)
        resids.append(np.linalg.norm(M @ u - f) / max(nf, 1e-300))
    mask = op.grid.interior_mask
    pts, dv = op.grid.points, op.grid.cell_volume
    gaps = np.array([l2s_norm(sols[k + 1] - sols[k], pts, -delta, dv, mask)
                     for k in range(len(sols) - 1)])
    ratios = gaps[:-1] / np.maximum(gaps[1:], 1e-300)
    cauchy_ok = bool(np.all(np.diff(gaps) < 0)) if gaps.size > 1 else True
    e1, e2 = eps_ladder[-2], eps_ladder[-1]
    u_star = sols[-1] - e2 * (sols[-2] - sols[-1]) / (e1 - e2)
    return OutgoingSolution(u=sols[-1], u_extrapolated=u_star,
                            epsilons=eps_ladder,
                            zeta=complex(np.sqrt(complex(E))), h=op.h,
                            delta=delta, cauchy_gaps=gaps, gap_ratios=ratios,
                            solver_residuals=np.array(resids),
                            cauchy_ok=cauchy_ok, ladder=sols)


def grid_gradient(u: np.ndarray, grid: GridDomain) -> np.ndarray:
    """Per-axis centered differences (4th order inside, one-sided rim)."""
    n, dim, dx = grid.n, grid.dim, grid.dx
    U = np.asarray(u).reshape((n,) * dim)
    out = []
    for ax in range(dim):
        dU = np.zeros_like(U)

        def ix(s, ax=ax):
            t = [slice(None)] * dim
            t[ax] = s
            return tuple(t)

        dU[ix(slice(2, -2))] = (
            8.0 * (U[ix(slice(3, -1))] - U[ix(slice(1, -3))])
            - (U[ix(slice(4, None))] - U[ix(slice(0, -4))])) / (12.0 * dx)
        dU[ix(slice(1, 2))] = (U[ix(slice(2, 3))] - U[ix(slice(0, 1))]) / (2 * dx)
        dU[ix(slice(-2, -1))] = (U[ix(slice(-1, None))] - U[ix(slice(-3, -2))]) / (2 * dx)
        # Dirichlet ghost values vanish just outside the box
        dU[ix(slice(0, 1))] = U[ix(slice(1, 2))] / (2 * dx)
        dU[ix(slice(-1, None))] = -U[ix(slice(-2, -1))] / (2 * dx)
        out.append(dU.reshape(-1))
    return np.stack(out)


def radial_derivative(u: np.ndarray, grid: GridDomain) -> np.ndarray:
    """D_r u = du/dr + (n-1)/(2|x|) u away from the origin."""
    r = radii(grid.points)
    rhat = np.zeros_like(grid.points)
    ok = r > 1e-9
    rhat[ok] = grid.points[ok] / r[ok, None]
    grad = grid_gradient(u, grid)
    du = np.einsum("ia,ai->i", rhat, grad)
    corr = np.zeros(grid.size, dtype=complex)
    corr[ok] = (grid.dim - 1) / (2.0 * r[ok]) * np.asarray(u)[ok]
    return du + corr


@dataclass
class RadiationReport:
    norm: float          # ||(D_r - i zeta_h)u||_{L^{2,delta-1}} on the annulus
    relative: float      # plain-L2 residual / (|zeta_h| ||u||) on the annulus
    zeta_h: complex
    r_min: float
    r_max: float
    n_cells: int


def radiation_residual(u: np.ndarray, op: DiscretizedOperator, z: complex,
                       delta: float = 1.0, r_min: float = 1.0) -> RadiationReport:
    """Outgoing-condition residual on the trusted exterior annulus.

    The radiation factor is zeta_h = sqrt(z)/h; the report carries both the
    weighted norm and a scale-free relative residual.
    """
    grid = op.grid
    zeta_h = complex(np.sqrt(complex(z))) / op.h
    r = radii(grid.points)
    ann = (r >= r_min) & grid.interior_mask
    if not np.any(ann):
        raise PreconditionError("empty exterior annulus for radiation check")
    res = radial_derivative(u, grid) - 1j * zeta_h * np.asarray(u)
    norm = l2s_norm(res, grid.points, delta - 1.0, grid.cell_volume, ann)
    plain = np.sqrt(np.sum(np.abs(res[ann]) ** 2) * grid.cell_volume)
    u_plain = np.sqrt(np.sum(np.abs(np.asarray(u)[ann]) ** 2) * grid.cell_volume)
    rel = plain / max(abs(zeta_h) * u_plain, 1e-300)
    return RadiationReport(norm=float(norm), relative=float(rel),
                           zeta_h=zeta_h, r_min=r_min,
                           r_max=float(grid.interior_radius),
                           n_cells=int(np.sum(ann)))


def _shell_average(g: np.ndarray, r: np.ndarray, r0: float, width: float,
                   dv: float) -> float:
    """(1/width) * integral of g over the shell r0 <= |x| < r0 + width."""
    sel = (r >= r0) & (r < r0 + width)
    return float(np.sum(g[sel]) * dv / width)


def _ball_average(g: np.ndarray, r: np.ndarray, r0: float, width: float,
                  dv: float) -> float:
    """Average over rho in [r0, r0+width] of the integral over B_rho."""
    w = np.clip((r0 + width - r) / width, 0.0, 1.0)
    return float(np.sum(g * w) * dv)


@dataclass
class SphereIdentityReport:
    radii: np.ndarray
    defects: np.ndarray          # relative defect per usable radius
    terms: list                  # per-radius dict of the six terms
    skipped: list                # radii outside the trusted interior
    max_defect: float


def sphere_identity_check(u: np.ndarray, f: np.ndarray,
                          op: DiscretizedOperator, z: complex, radii_list,
                          shell_width: float | None = None) -> SphereIdentityReport:
    """Flux identity on spheres for the solution of (H - z)u = f.

    At unit scale the identity reads, with zeta = zeta1 + i zeta2,
      |(D_r - i zeta)u|^2_{S_r} = |D_r u + zeta2 u|^2_{S_r}
        + zeta1^2 |u|^2_{S_r} + 2 zeta1 <V2 u, u>_{B_r}
        + 4 zeta1^2 zeta2 ||u||^2_{B_r} + 2 zeta1 Im <f, u>_{B_r};
    here everything is rescaled: zeta = sqrt(z)/h, V2 -> V2/h, f -> f/h^2.
    Sphere integrals are shell averages of width ~ a few cells.
    """
    grid, h = op.grid, op.h
    zeta = complex(np.sqrt(complex(z))) / h
    z1, z2 = zeta.real, zeta.imag
    v2 = op.model.v2(grid.points) / h
    f_eff = np.asarray(f, dtype=complex) / h ** 2
    u = np.asarray(u, dtype=complex)
    r = radii(grid.points)
    dv = grid.cell_volume
    if shell_width is None:
        shell_width = 3.0 * grid.dx * np.sqrt(grid.dim)
    dru = radial_derivative(u, grid)
    lhs_density = np.abs(dru - 1j * zeta * u) ** 2
    t1_density = np.abs(dru + z2 * u) ** 2
    u2 = np.abs(u) ** 2
    fu = np.imag(f_eff * np.conj(u))
    out_r, out_d, out_t, skipped = [], [], [], []
    for r0 in np.atleast_1d(radii_list):
        if r0 + shell_width > grid.interior_radius:
            skipped.append(float(r0))
            continue
        lhs = _shell_average(lhs_density, r, r0, shell_width, dv)
        t1 = _shell_average(t1_density, r, r0, shell_width, dv)
        t2 = z1 ** 2 * _shell_average(u2, r, r0, shell_width, dv)
        t3 = 2.0 * z1 * _ball_average(v2 * u2, r, r0, shell_width, dv)
        t4 = 4.0 * z1 ** 2 * z2 * _ball_average(u2, r, r0, shell_width, dv)
        t5 = 2.0 * z1 * _ball_average(fu, r, r0, shell_width, dv)
        rhs = t1 + t2 + t3 + t4 + t5
        scale = max(abs(lhs), abs(t1) + abs(t2), 1e-300)
        out_r.append(float(r0))
        out_d.append(abs(lhs - rhs) / scale)
        out_t.append({"lhs": lhs, "surface_damped": t1, "surface_main": t2,
                      "ball_absorption": t3, "ball_mass": t4,
                      "ball_source": t5})
    out_d = np.array(out_d)
    return SphereIdentityReport(radii=np.array(out_r), defects=out_d,
                                terms=out_t, skipped=skipped,
                                max_defect=float(np.max(out_d))
                                if out_d.size else 0.0)


@dataclass
class EstimateSuite:
    c_observed: float
    interior_norm: float         # ||u||_{L^{2,-delta}}
    radiation_norm: float        # ||(D_r - i zeta)u||_{L^{2,delta-1}(B_1^c)}
    exterior_term: float         # max_R R^{delta-1/2} ||u||_{L^{2,-delta}(B_R^c)}
    source_norm: float


def outgoing_estimate_constant(sol: OutgoingSolution, f: np.ndarray,
                               op: DiscretizedOperator, z: complex,
                               delta: float = 1.0,
                               exterior_radii=(2.0, 3.0, 4.0)) -> EstimateSuite:
    """Observed constant in the weighted a-priori estimate for outgoing solves."""
    grid = op.grid
    mask = grid.interior_mask
    pts, dv = grid.points, grid.cell_volume
    u = sol.u
    n_int = l2s_norm(u, pts, -delta, dv, mask)
    rad = radiation_residual(u, op, z, delta=delta, r_min=1.0).norm
    r = radii(pts)
    ext = 0.0
    for R in exterior_radii:
        sel = mask & (r >= R)
        if np.any(sel):
            ext = max(ext, R ** (delta - 0.5) * l2s_norm(u, pts, -delta, dv, sel))
    nf = l2s_norm(f, pts, delta, dv)
    c_obs = (n_int + rad + ext) / max(nf, 1e-300)
    return EstimateSuite(c_observed=float(c_obs), interior_norm=float(n_int),
                         radiation_norm=float(rad), exterior_term=float(ext),
                         source_norm=float(nf))


@dataclass
class ThetaContinuation:
    thetas: np.ndarray
    diffs: np.ndarray        # ||u_k+1 - u_k||_{L^{2,-delta}}
    bounds: np.ndarray       # h |dtheta| ||<x>^{-1-rho} u_k||
    max_ratio: float


def theta_continuation_check(model, grid: GridDomain, h: float, z: complex,
                             f: np.ndarray, thetas, delta: float = 1.0,
                             xi_max: float = np.sqrt(2.0)) -> ThetaContinuation:
    """Continuity in theta of solves with the shifted family H - h theta <x>^{-1-rho}."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.size < 2:
        raise PreconditionError("need at least two theta values")
    sols = []
    for th in thetas:
        op = build_hamiltonian(model, grid, h, variant="theta", theta=th,
                               xi_max=xi_max)
        sols.append(spla.splu(op.shifted(z)).solve(np.asarray(f, dtype=complex)))
    pts, dv = grid.points, grid.cell_volume
    mask = grid.interior_mask
    wneg = bracket_power(pts, -2.0 * (1.0 + model.rho))
    diffs, bounds = [], []
    for k in range(thetas.size - 1):
        diffs.append(l2s_norm(sols[k + 1] - sols[k], pts, -delta, dv, mask))
        wu = np.sqrt(np.sum(wneg * np.abs(sols[k]) ** 2) * dv)
        bounds.append(h * abs(thetas[k + 1] - thetas[k]) * wu)
    diffs = np.array(diffs)
    bounds = np.array(bounds)
    return ThetaContinuation(thetas=thetas, diffs=diffs, bounds=bounds,
                             max_ratio=float(np.max(diffs / np.maximum(bounds,
                                                                       1e-300))))


def green_function_1d(x, y, z: complex, h: float) -> np.ndarray:
    """Outgoing kernel of (-h^2 d^2/dx^2 - z) on the line."""
    zeta = np.sqrt(complex(z))
    x = np.asarray(x, dtype=float)
    return (1j / (2.0 * h * zeta)) * np.exp(1j * zeta * np.abs(x - y) / h)
