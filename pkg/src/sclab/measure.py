"""Phase-space measures for concentrating-source solutions.

The predicted measure is a particle cloud pushed along the Hamiltonian flow
from the energy-shell normal bundle of the source manifold, with weights
  dt * w_k * pi (2pi)^(d-n) |A|^2 |xi|^(-1) |S_hat(xi)|^2 * exp(-2 int V2),
and the empirical side is the Weyl quadratic form <Op_h(q) u, u> of the PDE
solution.  The transport identities (Liouville weak form, finite-time
propagation, leading-order Egorov) are checked at the particle level.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cutoffs import step_on
from .errors import PreconditionError
from .flow import RegionSpec, region_membership, symplectic_step, transport
from .helmholtz import GaussianProfile, SourceSpec
from .operator import (GridDomain, PhaseSpaceOperator, TestSymbol,
                       quadratic_observable)
from .potentials import PotentialModel
from .weights import radii

_CONSTRAINT_TOL = 1e-10


@dataclass
class NEGammaSample:
    """Quadrature particles on the energy-shell normal bundle of the source.

    Each particle (z, xi) satisfies |xi|^2 = E - V1(z) and xi normal to the
    manifold; weights approximate the canonical measure of the bundle metric
    (base arc length times momentum-sphere arc length).
    """
    x: np.ndarray            # (m, n)
    xi: np.ndarray           # (m, n)
    weights: np.ndarray      # (m,)
    amplitudes: np.ndarray   # (m,) source amplitude at the base point
    E: float
    manifold_dim: int

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    def constraint_errors(self, model: PotentialModel,
                          tangents: np.ndarray | None = None):
        shell = np.abs(np.sum(self.xi ** 2, axis=1)
                       - (self.E - model.v1(self.x)))
        if tangents is None:
            return float(np.max(shell)), 0.0
        normal = np.abs(np.sum(self.xi * tangents, axis=1))
        return float(np.max(shell)), float(np.max(normal))


def sample_negamma(model: PotentialModel, source: SourceSpec, E: float,
                   n_directions: int = 256) -> NEGammaSample:
    """Particles and weights on N_E Gamma for a point set or a plane curve."""
    v1 = model.v1(source.points)
    if np.any(v1 >= E):
        raise PreconditionError("source node with V1(z) >= E")
    speeds = np.sqrt(E - v1)
    xs, xis, ws, amps, tans = [], [], [], [], []
    if source.manifold_dim == 0:
        for zk, ak, wk, rk in zip(source.points, source.amplitudes,
                                  source.weights, speeds):
            if model.dim == 1:
                dirs = np.array([[1.0], [-1.0]])
                dw = np.ones(2)          # counting measure on two points
            elif model.dim == 2:
                th = 2.0 * np.pi * np.arange(n_directions) / n_directions
                dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
                dw = np.full(n_directions, 2.0 * np.pi * rk / n_directions)
            else:
                raise PreconditionError("point sources handled in 1D/2D")
            m = len(dirs)
            xs.append(np.repeat(zk[None, :], m, axis=0))
            xis.append(rk * dirs)
            ws.append(wk * dw)
            amps.append(np.full(m, ak))
            tans.append(np.zeros((m, model.dim)))
    else:
        if model.dim != 2:
            raise PreconditionError("curve sources live in the plane")
        for zk, ak, wk, rk, tk in zip(source.points, source.amplitudes,
                                      source.weights, speeds, source.tangents):
            nk = np.array([-tk[1], tk[0]])
            for sgn in (+1.0, -1.0):
                xs.append(zk[None, :])
                xis.append(sgn * rk * nk[None, :])
                # the momentum-fiber factor is 0-dimensional here: the
                # bundle measure reduces to the arc length of the base
                ws.append(np.array([wk]))
                amps.append(np.array([ak]))
                tans.append(tk[None, :])
    sample = NEGammaSample(x=np.concatenate(xs), xi=np.concatenate(xis),
                           weights=np.concatenate(ws),
                           amplitudes=np.concatenate(amps), E=E,
                           manifold_dim=source.manifold_dim)
    tangents = np.concatenate(tans)
    shell_err, normal_err = sample.constraint_errors(
        model, tangents if source.manifold_dim else None)
    if max(shell_err, normal_err) > _CONSTRAINT_TOL:
        raise PreconditionError("normal-bundle constraints violated")
    return sample


def _eval_q(q, x, xi):
    if isinstance(q, TestSymbol):
        return q.eval(x, xi)
    return q(x, xi)


@dataclass
class PhaseSpaceMeasure:
    """Particle-cloud measure with full time indexing kept for identities."""
    x: np.ndarray            # (M, m, n) positions at midpoint times
    xi: np.ndarray           # (M, m, n)
    weights: np.ndarray      # (M, m)
    damping: np.ndarray      # (M, m) cumulative int_0^t V2
    times: np.ndarray        # (M,) midpoints (j + 1/2) dt
    prefactor: np.ndarray    # (m,) source density times quadrature weight
    source: NEGammaSample
    E: float
    dt: float
    horizon: float
    convention: str
    im_e1: float
    tail_mass: float
    converged: bool
    provenance: str = "flow-formula"

    @property
    def n_steps(self) -> int:
        return self.x.shape[0]

    @property
    def n_particles(self) -> int:
        return self.x.shape[1]

    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def pairing(self, q, chunk: int = 512) -> float:
        """Integral of the symbol against the measure."""
        acc = 0.0
        for j0 in range(0, self.n_steps, chunk):
            sl = slice(j0, j0 + chunk)
            acc += float(np.sum(self.weights[sl]
                                * _eval_q(q, self.x[sl], self.xi[sl])))
        return acc

    def energy_sup_error(self, model: PotentialModel, chunk: int = 512) -> float:
        worst = 0.0
        for j0 in range(0, self.n_steps, chunk):
            sl = slice(j0, j0 + chunk)
            p = np.sum(self.xi[sl] ** 2, axis=-1) + model.v1(self.x[sl])
            worst = max(worst, float(np.max(np.abs(p - self.E))))
        return worst

    def region_mass(self, spec: RegionSpec, chunk: int = 512) -> float:
        acc = 0.0
        for j0 in range(0, self.n_steps, chunk):
            sl = slice(j0, j0 + chunk)
            inside = region_membership(self.x[sl], self.xi[sl], spec)
            acc += float(np.sum(self.weights[sl] * inside))
        return acc


def flow_measure(model: PotentialModel, sample: NEGammaSample,
                 profile: GaussianProfile, horizon: float, dt: float,
                 convention: str = "plain", im_e1: float = 0.0,
                 damping_constants: tuple | None = None,
                 dt_sim: float | None = None) -> PhaseSpaceMeasure:
    """Build the transport-formula measure by midpoint quadrature in time.

    damping_constants = (c0, C) from the affine average-damping fit controls
    the reported truncation tail exp(2C - 2 c0 T) / (2 c0); without a
    positive c0 the total mass is flagged non-convergent (pairings against
    position-compact symbols remain usable when particles escape).
    """
    n_steps = int(round(horizon / dt))
    if n_steps < 1:
        raise PreconditionError("horizon shorter than dt")
    times = (np.arange(n_steps) + 0.5) * dt
    X, Xi, D = transport(model, sample.x, sample.xi, times, dt_sim=dt_sim)
    d, n = sample.manifold_dim, model.dim
    speeds = radii(sample.xi)
    s_hat2 = np.abs(profile.hat(sample.xi, convention)) ** 2
    pref = (np.pi * (2.0 * np.pi) ** (d - n) * np.abs(sample.amplitudes) ** 2
            / speeds * s_hat2 * sample.weights)
    weights = dt * pref[None, :] * np.exp(-2.0 * (D + im_e1 * times[:, None]))
    if damping_constants is not None and damping_constants[0] > 0:
        c0, big_c = damping_constants
        tail = float(np.sum(pref) * np.exp(2.0 * big_c - 2.0 * c0 * horizon)
                     / (2.0 * c0))
        converged = True
    else:
        tail = np.inf
        converged = False
    return PhaseSpaceMeasure(x=X, xi=np.ascontiguousarray(Xi),
                             weights=weights, damping=D, times=times,
                             prefactor=pref, source=sample, E=sample.E,
                             dt=dt, horizon=horizon, convention=convention,
                             im_e1=im_e1, tail_mass=tail, converged=converged)


def source_pairing(mu: PhaseSpaceMeasure, q) -> float:
    """Integral of q against the source density on N_E Gamma."""
    return float(np.sum(mu.prefactor * _eval_q(q, mu.source.x, mu.source.xi)))


@dataclass
class IdentityReport:
    defects: dict            # symbol name -> absolute defect
    relative: dict
    max_defect: float
    max_relative: float
    details: dict = field(default_factory=dict)


def liouville_residual(model: PotentialModel, mu: PhaseSpaceMeasure, symbols,
                       fd_step: float = 1e-3, chunk: int = 256) -> IdentityReport:
    """Weak-form defect of {p, mu} + 2 V2 mu = source density.

    For each test symbol: | int ({p,q} - 2 V2 q) d mu + int q d sigma_src |,
    with the Poisson bracket evaluated by a centered difference along the
    flow at every particle.
    """
    defects, rels = {}, {}
    names = [getattr(q, "name", f"q{i}") for i, q in enumerate(symbols)]
    v2_eff_const = mu.im_e1
    for name, q in zip(names, symbols):
        vol = 0.0
        for j0 in range(0, mu.n_steps, chunk):
            sl = slice(j0, j0 + chunk)
            shp = mu.x[sl].shape
            Xf = mu.x[sl].reshape(-1, model.dim)
            Xif = mu.xi[sl].reshape(-1, model.dim)
            Xp, Xip = symplectic_step(model, Xf, Xif, fd_step)
            Xm, Xim = symplectic_step(model, Xf, Xif, -fd_step)
            pb = (_eval_q(q, Xp, Xip) - _eval_q(q, Xm, Xim)) / (2.0 * fd_step)
            v2 = model.v2(Xf) + v2_eff_const
            qv = _eval_q(q, Xf, Xif)
            integrand = (pb - 2.0 * v2 * qv).reshape(shp[:2])
            vol += float(np.sum(mu.weights[sl] * integrand))
        src = source_pairing(mu, q)
        defects[name] = abs(vol + src)
        rels[name] = defects[name] / max(abs(vol), abs(src), 1e-300)
    mx = max(defects.values()) if defects else 0.0
    mr = max(rels.values()) if rels else 0.0
    return IdentityReport(defects=defects, relative=rels, max_defect=mx,
                          max_relative=mr)


def propagation_check(model: PotentialModel, mu: PhaseSpaceMeasure, t: float,
                      symbols, beta: float = 0.0) -> IdentityReport:
    """Finite-time pushforward identity at the particle level.

    Compares the pairing restricted to emission age >= t against the
    t-propagated pairing with damping factor exp(-2 int (V2 + beta)); the
    right side re-integrates the absorption along stored snapshots with an
    independent (coarser midpoint) quadrature, so the defect measures the
    dt-consistency of the transport rather than a tautology.  Requires t to
    be an even multiple of the measure's dt (midpoint alignment).
    """
    ratio = t / mu.dt
    ell = int(round(ratio))
    if abs(ratio - ell) > 1e-9 or ell % 2:
        raise PreconditionError("t must be an even multiple of the measure dt")
    M = mu.n_steps
    if ell >= M:
        raise PreconditionError("t exceeds the measure horizon")
    defects, rels = {}, {}
    names = [getattr(q, "name", f"q{i}") for i, q in enumerate(symbols)]
    if ell > 0:
        v2v = (model.v2(mu.x.reshape(-1, model.dim)).reshape(M, -1)
               if model.v2_terms else np.zeros_like(mu.weights))
        # midpoint rule on pair midpoints t_{j+1}, t_{j+3}, ...
        odd_cum = np.zeros((M + 1, mu.n_particles))
        odd_cum[1:] = np.cumsum(v2v, axis=0)

        def strided_sum(j):
            idx = np.arange(j + 1, j + ell, 2)
            return np.sum(v2v[idx], axis=0)

    for name, q in zip(names, symbols):
        qv = _eval_q(q, mu.x, mu.xi)
        lhs = float(np.sum(mu.weights[ell:] * qv[ell:]))
        if ell == 0:
            rhs = lhs
        else:
            rhs = 0.0
            for j in range(0, M - ell):
                integ = 2.0 * mu.dt * strided_sum(j)
                fac = np.exp(-2.0 * (integ + (beta + mu.im_e1) * t))
                rhs += float(np.sum(mu.weights[j] * fac * qv[j + ell]))
        defects[name] = abs(lhs - rhs)
        rels[name] = defects[name] / max(abs(lhs), abs(rhs), 1e-300)
    mx = max(defects.values()) if defects else 0.0
    mr = max(rels.values()) if rels else 0.0
    return IdentityReport(defects=defects, relative=rels, max_defect=mx,
                          max_relative=mr, details={"t": t, "beta": beta})


def empirical_pairing(u: np.ndarray, q: TestSymbol, grid: GridDomain,
                      h: float, scheme: str = "weyl",
                      check_support: bool = True) -> complex:
    """<Op_h(q) u, u> on the grid (Weyl by default)."""
    op = PhaseSpaceOperator(q, grid, h, scheme=scheme)
    if check_support:
        if q.x_radius > grid.interior_radius + 1e-9:
            raise PreconditionError(
                f"symbol '{q.name}' exceeds the trusted interior")
        if not op.band_check():
            raise PreconditionError(
                f"symbol '{q.name}' exceeds the resolved momentum band")
    return quadratic_observable(op, u, grid)


def normalized_empirical_pairing(u: np.ndarray, q: TestSymbol,
                                 grid: GridDomain, h: float,
                                 manifold_dim: int, dim: int,
                                 scheme: str = "weyl") -> complex:
    """Pairing rescaled to the critically normalized source family.

    The literal source S((x-z)/h) carries L^2 mass ~ h^{n/2}; the measure
    normalization corresponds to amplitude h^{(1-n-d)/2}, so the raw
    quadratic form is divided by h^{n+d-1}.
    """
    raw = empirical_pairing(u, q, grid, h, scheme=scheme)
    return raw / h ** (dim + manifold_dim - 1)


def _radial_window(a: float, b: float, ramp: float):
    def w(r):
        return step_on(r, a, a + ramp) * (1.0 - step_on(r, b - ramp, b))
    return w


def symbol_battery_2d(r_lo: float = 0.5, r_hi: float = 1.9,
                      xi_shell: float = 1.0) -> list:
    """Twelve smooth compactly supported observables in the plane.

    Four radial annuli, four directional wedges, four separable
    energy-shell windows; all vanish beyond |x| = r_hi and |xi| <= 2.
    """
    ramp = 0.15
    out = []
    edges = [(r_lo, 0.9), (0.8, 1.3), (1.2, 1.7), (1.5, r_hi)]
    for k, (a, b) in enumerate(edges):
        w = _radial_window(a, b, ramp)
        out.append(TestSymbol(
            name=f"annulus-{k + 1}", kind="position", dim=2,
            fx=(lambda x, w=w: w(radii(x))), x_radius=b, xi_radius=0.0))
    dirs = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0),
            (np.sqrt(0.5), np.sqrt(0.5))]
    wann = _radial_window(0.6, 1.8, ramp)
    for k, e in enumerate(dirs):
        e = np.asarray(e)

        def fx(x, e=e):
            r = radii(x)
            ang = np.divide(x @ e, r, out=np.zeros_like(r), where=r > 1e-12)
            return wann(r) * step_on(ang, 0.25, 0.55)

        out.append(TestSymbol(name=f"wedge-{k + 1}", kind="position", dim=2,
                              fx=fx, x_radius=1.8, xi_radius=0.0))
    # the third window carries an extra |xi|^2 weight: on-shell it matches
    # the plain windows, off-shell it probes the second momentum moment
    shells = [(0.8, 1.2, 0.1, 0), (0.6, 1.4, 0.15, 0), (0.6, 1.4, 0.15, 2),
              (0.75, 1.25, 0.12, 0)]
    wx = _radial_window(r_lo, r_hi, ramp)
    for k, (a, b, rmp, pw) in enumerate(shells):
        a, b = a * xi_shell, b * xi_shell

        def fxi(xi, a=a, b=b, rmp=rmp, pw=pw):
            s = radii(xi)
            win = step_on(s, a, a + rmp) * (1.0 - step_on(s, b - rmp, b))
            return win * (s / xi_shell) ** pw if pw else win

        out.append(TestSymbol(name=f"shell-{k + 1}", kind="separable", dim=2,
                              fx=(lambda x, wx=wx: wx(radii(x))), fxi=fxi,
                              x_radius=r_hi, xi_radius=b))
    return out


def reintersection_fraction(model: PotentialModel, sample: NEGammaSample,
                            horizon: float, dt: float = 1e-2,
                            tol: float = 5e-2) -> float:
    """Monte-Carlo estimate of the weight fraction whose forward orbit
    re-enters a tol-neighborhood of the source manifold after leaving it."""
    times = np.arange(dt, horizon + dt / 2, dt)
    X, _, _ = transport(model, sample.x, sample.xi, times)
    base = sample.x
    hit = np.zeros(sample.x.shape[0], dtype=bool)
    left = np.zeros_like(hit)
    for j in range(len(times)):
        d = np.min(np.linalg.norm(X[j][:, None, :] - base[None, :, :],
                                  axis=-1), axis=1)
        hit |= left & (d < tol)
        left |= d > 4.0 * tol
    return float(np.sum(sample.weights * hit) / sample.total_weight)


# ---------------------------------------------------------------------------
# Leading-order Egorov check


def _split_factors(grid: GridDomain, h: float, v1, w_vals, dt: float,
                   adjoint: bool):
    sgn = +1.0 if adjoint else -1.0
    half = np.exp(sgn * 0.5j * dt * v1 / h - 0.5 * dt * w_vals)
    xi = h * grid.xi_axis
    mesh = np.meshgrid(*([xi] * grid.dim), indexing="ij")
    k2 = sum(m ** 2 for m in mesh)
    kin = np.exp(sgn * 1j * dt * k2 / h)
    return half, kin


def _split_propagate(u: np.ndarray, grid: GridDomain, h: float, v1,
                     w_vals, t: float, dt: float,
                     adjoint: bool = False) -> np.ndarray:
    """Strang-split e^{-(it/h)(H1 - i h W)} (or its adjoint) on the grid.

    The kinetic factor is applied spectrally on the periodic extension;
    states must stay away from the box edge over [0, t].
    """
    if t == 0.0:
        return np.array(u, dtype=complex, copy=True)
    n_steps = max(1, int(np.ceil(t / dt)))
    dt = t / n_steps
    half, kin = _split_factors(grid, h, v1, w_vals, dt, adjoint)
    shape = (grid.n,) * grid.dim
    v = np.asarray(u, dtype=complex).reshape(shape)
    halfm = half.reshape(shape)
    for _ in range(n_steps):
        v = halfm * v
        v = np.fft.ifftn(kin * np.fft.fftn(v))
        v = halfm * v
    return v.reshape(-1)


def _alpha0_weyl_matrix(model: PotentialModel, w_total_fn, a: TestSymbol,
                        t: float, grid: GridDomain, h: float,
                        dt_flow: float) -> np.ndarray:
    """Dense Weyl matrix of (a o phi^t) exp(-int_0^t W o phi^s ds) in 1D."""
    n = grid.n
    axis = grid.axis
    dx = grid.dx
    mids = axis[0] + 0.5 * dx * np.arange(2 * n - 1)
    xi = h * grid.xi_axis
    Xg, Xig = np.meshgrid(mids, xi, indexing="ij")
    X = Xg.reshape(-1, 1)
    Xi = Xig.reshape(-1, 1)
    n_steps = max(1, int(np.ceil(t / dt_flow)))
    step = t / n_steps
    integ = np.zeros(X.shape[0])
    w_prev = w_total_fn(X)
    for _ in range(n_steps):
        X, Xi = symplectic_step(model, X, Xi, step)
        w_now = w_total_fn(X)
        integ += 0.5 * step * (w_prev + w_now)
        w_prev = w_now
    table = (a.eval(X, Xi) * np.exp(-integ)).reshape(Xg.shape)
    G = np.fft.ifft(table, axis=1)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return G[ii + jj, (ii - jj) % n]


@dataclass
class EgorovRecord:
    h: float
    t: float
    deviation: float          # max over battery of the L2 residual
    per_state: np.ndarray
    dt: float
    dt_flow: float


def egorov_deviation(model: PotentialModel, w2_fn, w2_tilde_fn,
                     a: TestSymbol, t: float, grid: GridDomain, h: float,
                     battery_states, dt: float | None = None,
                     dt_flow: float = 0.01) -> EgorovRecord:
    """Residual of U2(t)* Op(a) U2~(t) against Op(alpha0(t)) on given states.

    U2, U2~ share the self-adjoint part -h^2 Lap + V1 and damp with W2 and
    W2~ respectively; alpha0 = (a o phi^t) exp(-int (W2 + W2~) o phi^s ds).
    """
    if a.dim != 1 or grid.dim != 1:
        raise PreconditionError("the Egorov check is wired for 1D grids")
    if dt is None:
        dt = max(h ** 2 / 2.0, 1e-4)
    pts = grid.points
    v1 = model.v1(pts)
    w2v = w2_fn(pts)
    w2tv = w2_tilde_fn(pts)
    a_op = PhaseSpaceOperator(a, grid, h, scheme="weyl")

    def w_total(x):
        return w2_fn(x) + w2_tilde_fn(x)

    m0 = _alpha0_weyl_matrix(model, w_total, a, t, grid, h, dt_flow)
    res = []
    for c in battery_states:
        v = _split_propagate(c, grid, h, v1, w2tv, t, dt)
        v = a_op.apply(v)
        lhs = _split_propagate(v, grid, h, v1, w2v, t, dt, adjoint=True)
        rhs = m0 @ np.asarray(c, dtype=complex)
        res.append(np.sqrt(np.sum(np.abs(lhs - rhs) ** 2) * grid.cell_volume))
    per_state = np.array(res)
    return EgorovRecord(h=h, t=t, deviation=float(np.max(per_state)),
                        per_state=per_state, dt=dt, dt_flow=dt_flow)
