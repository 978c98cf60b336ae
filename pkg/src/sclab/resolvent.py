"""Weighted resolvent norms and spectral scans for the discretized operator.

The weighted norm ||<x>^(-delta) (H - z)^(-1) <x>^(-delta)|| is computed as
1/sigma_min of the conjugated matrix M = <x>^delta (H - z) <x>^delta, with
sigma_min from a Lanczos/power iteration on (M^H M)^(-1) driven by a sparse
LU factorization, or from a dense SVD on small grids.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PreconditionError
from .flow import RegionSpec, region_membership
from .operator import (DiscretizedOperator, TestSymbol, standard_quantize,
                       weyl_quantize)

_DENSE_CUTOFF = 400


@dataclass
class ResolventNorm:
    value: float
    sigma_min: float
    method: str
    residual: float
    singular: bool = False


def _sigma_min_sparse(M: sp.csc_matrix, seed: int = 0, tol: float = 1e-10,
                      maxiter: int = 20000):
    try:
        lu = spla.splu(M)
    except RuntimeError:
        return 0.0, np.inf, True

    N = M.shape[0]

    def mv(v):
        return lu.solve(lu.solve(v, trans="H"))

    op = spla.LinearOperator((N, N), matvec=mv, dtype=complex)
    rng = np.random.default_rng(seed)
    v0 = rng.normal(size=N) + 1j * rng.normal(size=N)
    try:
        lam, vec = spla.eigsh(op, k=1, which="LM", v0=v0, maxiter=maxiter,
                              tol=1e-12)
        lam = float(lam[0])
        v = vec[:, 0]
    except Exception:
        # power iteration fallback
        v = v0 / np.linalg.norm(v0)
        lam = 0.0
        for _ in range(maxiter):
            w = mv(v)
            lam_new = float(np.real(np.vdot(v, w)))
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0, np.inf, True
            v = w / nw
            if abs(lam_new - lam) <= tol * abs(lam_new):
                lam = lam_new
                break
            lam = lam_new
    if lam <= 0 or not np.isfinite(lam):
        return 0.0, np.inf, True
    sigma = 1.0 / np.sqrt(lam)
    resid = abs(np.linalg.norm(M @ (v / np.linalg.norm(v))) - sigma) / sigma
    return sigma, resid, False


def weighted_resolvent_norm(op: DiscretizedOperator, z: complex,
                            delta: float = 1.0, method: str = "auto",
                            seed: int = 0) -> ResolventNorm:
    """||<x>^(-delta) (H - z)^(-1) <x>^(-delta)|| on the grid.

    delta = 0 gives the plain operator norm of the resolvent.  A singular
    shift (z in the numerical spectrum) is flagged and reported as inf.
    """
    w_plus = op.weight_vector(+delta)
    M = (sp.diags(w_plus) @ op.shifted(z) @ sp.diags(w_plus)).tocsc()
    if method == "dense" or (method == "auto" and op.size <= _DENSE_CUTOFF):
        try:
            w_minus = op.weight_vector(-delta)
            R = sla.solve(op.shifted(z).toarray(), np.diag(w_minus.astype(complex)))
            A = w_minus[:, None] * R
            value = float(np.linalg.svd(A, compute_uv=False)[0])
        except sla.LinAlgError:
            return ResolventNorm(np.inf, 0.0, "dense", np.inf, singular=True)
        return ResolventNorm(value, 1.0 / value, "dense", 0.0)
    sigma, resid, singular = _sigma_min_sparse(M, seed=seed)
    if singular:
        return ResolventNorm(np.inf, 0.0, "sparse", np.inf, singular=True)
    return ResolventNorm(1.0 / sigma, sigma, "sparse", resid)


@dataclass
class ScanResult:
    passed: bool
    interval: tuple
    threshold: float            # h * beta
    eigenvalues: np.ndarray     # interior-localized, Re in interval
    offenders: np.ndarray       # subset with Im >= threshold
    all_found: np.ndarray
    interior_mass: np.ndarray


def eigenvalue_free_scan(op: DiscretizedOperator, interval, beta: float,
                         n_eigs: int = 24, interior_fraction: float = 0.9,
                         dense_cutoff: int = 1300, n_targets: int = 4,
                         seed: int = 0) -> ScanResult:
    """Find interior-localized eigenvalues over the interval; compare Im to h beta.

    Small problems use a dense eigensolve; larger ones use shift-invert
    Arnoldi around targets spread over interval x {0.5, 2} h beta.  An
    eigenvector counts as interior-localized when at least
    ``interior_fraction`` of its mass sits in the trusted interior.
    """
    lo, hi = float(interval[0]), float(interval[1])
    thresh = op.h * beta
    H = op.matrix
    mask = op.grid.interior_mask
    eigs_list, vecs_list = [], []
    if op.size <= dense_cutoff:
        vals, vecs = sla.eig(H.toarray())
        eigs_list.append(vals)
        vecs_list.append(vecs)
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.normal(size=op.size) + 1j * rng.normal(size=op.size)
        res = np.linspace(lo, hi, n_targets)
        for re_t in res:
            for im_t in (0.5 * thresh, 2.0 * thresh):
                try:
                    vals, vecs = spla.eigs(H, k=n_eigs, sigma=re_t + 1j * im_t,
                                           which="LM", v0=v0, maxiter=4000)
                except spla.ArpackNoConvergence as err:
                    vals, vecs = err.eigenvalues, err.eigenvectors
                if vals.size:
                    eigs_list.append(vals)
                    vecs_list.append(vecs)
    if not eigs_list:
        empty = np.array([], dtype=complex)
        return ScanResult(True, (lo, hi), thresh, empty, empty, empty,
                          np.array([]))
    vals = np.concatenate(eigs_list)
    vecs = np.concatenate([v.T for v in vecs_list]).T
    # dedupe clustered repeats from overlapping targets
    order = np.lexsort((vals.imag, vals.real))
    vals, vecs = vals[order], vecs[:, order]
    keep = np.ones(vals.size, dtype=bool)
    for i in range(1, vals.size):
        if keep[i] and np.any(np.abs(vals[:i][keep[:i]] - vals[i]) < 1e-9):
            keep[i] = False
    vals, vecs = vals[keep], vecs[:, keep]
    mass = np.sum(np.abs(vecs[mask, :]) ** 2, axis=0) / \
        np.maximum(np.sum(np.abs(vecs) ** 2, axis=0), 1e-300)
    sel = (vals.real >= lo) & (vals.real <= hi) & (mass >= interior_fraction)
    inside = vals[sel]
    offenders = inside[inside.imag >= thresh]
    return ScanResult(passed=offenders.size == 0, interval=(lo, hi),
                      threshold=thresh, eigenvalues=inside,
                      offenders=offenders, all_found=vals,
                      interior_mass=mass[sel])


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    max_residual: float


def h_scaling_fit(hs, values) -> ScalingFit:
    """Least-squares fit of log(value) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0) or np.any(hs <= 0):
        raise PreconditionError("scaling fit needs positive h and values")
    coef = np.polyfit(np.log(hs), np.log(values), 1)
    fit = np.polyval(coef, np.log(hs))
    return ScalingFit(slope=float(coef[0]), intercept=float(coef[1]),
                      max_residual=float(np.max(np.abs(fit - np.log(values)))))


@dataclass
class IncomingNorm:
    value: float
    geometry_ok: bool
    h: float
    z: complex
    details: dict


def _support_points(symbol: TestSymbol, x_extent, xi_extent, n_side=24):
    ax_x = np.linspace(-x_extent, x_extent, n_side)
    ax_xi = np.linspace(-xi_extent, xi_extent, n_side)
    if symbol.dim == 1:
        X, XI = np.meshgrid(ax_x, ax_xi, indexing="ij")
        pts_x = X.reshape(-1, 1)
        pts_xi = XI.reshape(-1, 1)
    else:
        mesh = np.meshgrid(ax_x, ax_x, ax_xi, ax_xi, indexing="ij")
        pts_x = np.stack([mesh[0], mesh[1]], axis=-1).reshape(-1, 2)
        pts_xi = np.stack([mesh[2], mesh[3]], axis=-1).reshape(-1, 2)
    vals = np.abs(symbol.eval(pts_x, pts_xi))
    live = vals > 1e-8 * max(np.max(vals), 1e-300)
    return pts_x[live], pts_xi[live]


def incoming_region_norm(op: DiscretizedOperator, z: complex,
                         omega_minus: TestSymbol, omega: TestSymbol,
                         beta_power: float, inner_zone: RegionSpec,
                         outer_zone: RegionSpec, x_cap: float,
                         check_geometry: bool = True) -> IncomingNorm:
    """|| <x>^beta Op(omega_minus) (H-z)^(-1) Op(omega) <x>^beta ||.

    omega_minus is standard-quantized and must be supported in the incoming
    zone ``inner_zone`` intersected with |x| <= x_cap; omega (Weyl) must not
    meet the larger incoming zone ``outer_zone``.  Geometry is checked by
    sampling the symbol supports before any linear algebra runs.
    """
    geometry_ok = True
    if check_geometry:
        px, pxi = _support_points(omega_minus, 1.2 * op.grid.L,
                                  1.2 * op.grid.xi_nyquist(op.h))
        ok_in = region_membership(px, pxi, inner_zone) & \
            (np.linalg.norm(px, axis=-1) <= x_cap)
        if not np.all(ok_in):
            raise PreconditionError(
                "omega_minus support leaves the incoming zone")
        px, pxi = _support_points(omega, 1.2 * op.grid.L,
                                  1.2 * op.grid.xi_nyquist(op.h))
        bad = region_membership(px, pxi, outer_zone)
        if np.any(bad):
            raise PreconditionError(
                "omega support meets the excluded incoming zone")
    Om = standard_quantize(omega_minus, op.grid, op.h).to_matrix()
    Ow = weyl_quantize(omega, op.grid, op.h).to_matrix()
    wb = op.weight_vector(beta_power)
    lu = spla.splu(op.shifted(z))
    N = op.size

    def mv(v):
        v = np.asarray(v).reshape(-1)
        return wb * (Om @ lu.solve(Ow @ (wb * v)))

    def rmv(v):
        v = np.asarray(v).reshape(-1)
        return wb * (Ow.conj().T @ lu.solve(Om.conj().T @ (wb * v),
                                            trans="H"))

    L = spla.LinearOperator((N, N), matvec=mv, rmatvec=rmv, dtype=complex)
    s = spla.svds(L, k=1, return_singular_vectors=False, maxiter=6000,
                  tol=1e-10)
    return IncomingNorm(value=float(s[0]), geometry_ok=geometry_ok, h=op.h,
                        z=z, details={"beta_power": beta_power,
                                      "x_cap": x_cap})
