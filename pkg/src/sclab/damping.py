"""Damping integrals along the flow and escape-function construction.

The central objects are D_w(t) = int_0^t V2(x(s, w)) ds, the weak-damping
verdict (every trapped point sees positive damping, possibly after a beta
offset, within some past time window), fitted affine lower bounds
D_w(t) >= c0 t - C on trapped sets, and the escape function f = f_+ + f_-
whose derivative along the flow equals a prescribed nonnegative bump
(1 - chi(x)) etatilde(p) <x>^(-2 delta) outside the interaction ball.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .cutoffs import direction_partition, plateau, radial_cutoff
from .errors import PreconditionError
from .flow import (PhasePoint, cosine, escape_radius, integrate_flow,
                   symplectic_evolve)
from .potentials import PotentialModel
from .weights import bracket_power, radii


def damping_integral(model: PotentialModel, w: PhasePoint, t: float,
                     rtol: float = 1e-10, atol: float = 1e-12) -> float:
    """int_0^t V2 along the orbit of w; t may be negative (past window)."""
    if t == 0.0:
        return 0.0
    traj = integrate_flow(model, w, (0.0, t), t_eval=np.array([0.0, t]),
                          rtol=rtol, atol=atol, energy_tol=1e-5)
    return float(traj.damping[-1])


def _damping_profiles(model, points, horizon, dt, record_every,
                      past: bool = False):
    """Backward (past=True) or forward damping profiles for sample rows.

    Returns (times, D) with D of shape (n_times, n_samples), plus the
    recorded positions for radius checks.
    """
    X0 = points[:, : model.dim]
    Xi0 = points[:, model.dim:]
    if past:
        Xi0 = -Xi0
    out = symplectic_evolve(model, X0, Xi0, horizon, dt=dt,
                            record_every=record_every, with_damping=True)
    return out["times"], out["snap_damping"], out["snap_x"]


@dataclass
class DampingReport:
    verdict: bool
    beta: float
    t_max: float
    window_times: np.ndarray      # per-sample smallest ladder T, nan if none
    failures: np.ndarray          # indices with no admissible window
    ladder: np.ndarray


def check_damping_assumption(model: PotentialModel, samples: np.ndarray,
                             t_max: float = 200.0, beta: float = 0.0,
                             ladder_base: float = 0.1, dt: float = 5e-3,
                             record_every: int = 4) -> DampingReport:
    """Past-time weak-damping check on trapped samples.

    For each sample w the smallest T on the geometric ladder
    {ladder_base * 2^k} <= t_max with int_0^T (V2(x(-s, w)) + beta) ds > 0
    is recorded; the verdict holds when every sample admits one.
    """
    if samples.ndim != 2 or samples.shape[1] != 2 * model.dim:
        raise PreconditionError("samples must have shape (m, 2 dim)")
    ladder = []
    T = ladder_base
    while T <= t_max * (1.0 + 1e-12):
        ladder.append(T)
        T *= 2.0
    ladder = np.array(ladder)
    times, D, _ = _damping_profiles(model, samples, float(ladder[-1]), dt,
                                    record_every, past=True)
    window = np.full(samples.shape[0], np.nan)
    for Tlad in ladder:
        k = int(np.argmin(np.abs(times - Tlad)))
        val = D[k] + beta * times[k]
        hit = (val > 0.0) & np.isnan(window)
        window[hit] = Tlad
    failures = np.flatnonzero(np.isnan(window))
    return DampingReport(verdict=failures.size == 0, beta=beta,
                         t_max=float(ladder[-1]), window_times=window,
                         failures=failures, ladder=ladder)


def reproject_shell(model: PotentialModel, samples: np.ndarray,
                    scale: float) -> np.ndarray:
    """Rescale momenta so each sample lands on the shell at energy*scale.

    Samples whose rescaled kinetic energy would be negative are dropped.
    """
    X = samples[:, : model.dim]
    Xi = samples[:, model.dim:]
    ke = np.sum(Xi * Xi, axis=-1)
    e = ke + model.v1(X)
    ke_new = scale * e - model.v1(X)
    ok = (ke_new > 0) & (ke > 0)
    fac = np.sqrt(ke_new[ok] / ke[ok])
    return np.concatenate([X[ok], Xi[ok] * fac[:, None]], axis=-1)


@dataclass
class AffineBound:
    c0: float
    C: float
    horizon: float
    n_violations: int
    rates: np.ndarray             # per-sample D(horizon)/horizon
    grid: np.ndarray


def average_damping_constants(model: PotentialModel, samples: np.ndarray,
                              horizon: float = 1e3, n_grid: int = 64,
                              dt: float = 5e-3, record_every: int = 20,
                              direction: int = +1) -> AffineBound:
    """Fit D_w(t) >= c0 t - C over trapped samples on [0, horizon].

    c0 is the largest value on a 64-point grid below the worst per-sample
    average rate whose deficit c0 t - D_w(t) peaks strictly before the last
    tenth of the horizon (so the bound is not still degrading at the end);
    C is then the smallest admissible offset.
    """
    times, D, _ = _damping_profiles(model, samples, horizon, dt, record_every,
                                    past=direction < 0)
    rates = D[-1] / times[-1]
    base = float(np.min(rates))
    grid = np.linspace(base / n_grid, base, n_grid) if base > 0 else np.array([0.0])
    c0 = 0.0
    cutoff = 0.9 * horizon
    for cand in grid[::-1]:
        if cand <= 0:
            continue
        deficit = cand * times[:, None] - D
        peak_at = times[np.argmax(deficit, axis=0)]
        if np.all(peak_at <= cutoff):
            c0 = float(cand)
            break
    deficit = c0 * times[:, None] - D
    C = float(max(0.0, np.max(deficit)))
    viol = int(np.sum(D < c0 * times[:, None] - C - 1e-9))
    return AffineBound(c0=c0, C=C, horizon=horizon, n_violations=viol,
                       rates=rates, grid=grid)


@dataclass
class DichotomyReport:
    c0: float
    C: float
    rc: float
    n_violations: int
    violation_index: np.ndarray
    horizon: float


def dichotomy_check(model: PotentialModel, samples: np.ndarray,
                    horizon: float = 200.0, rc: float | None = None,
                    constants: tuple[float, float] | None = None,
                    dt: float = 5e-3, record_every: int = 20,
                    direction: int = +1, tol: float = 1e-9) -> DichotomyReport:
    """Either the affine damping bound holds at time t or the orbit is far out.

    Checks, for every sample and recorded time, D_w(t) >= c0 t - C or
    |x(t)| >= rc.  When constants are not supplied they are fitted on the
    (sample, time) pairs that stay inside the ball, by the same grid rule as
    :func:`average_damping_constants`.
    """
    if rc is None:
        rc = escape_radius(model, 2.0 * float(np.min(model.energy(
            samples[:, :model.dim], samples[:, model.dim:]))) / 3.0)
    times, D, Xs = _damping_profiles(model, samples, horizon, dt, record_every,
                                     past=direction < 0)
    inside = np.linalg.norm(Xs, axis=-1) < rc      # (n_times, m)
    if constants is None:
        with np.errstate(invalid="ignore"):
            Din = np.where(inside, D, np.inf)
        rates = []
        for j in range(D.shape[1]):
            k_in = np.flatnonzero(inside[:, j])
            if k_in.size:
                k_last = k_in[-1]
                rates.append(D[k_last, j] / times[k_last])
        base = float(np.min(rates)) if rates else 0.0
        grid = np.linspace(base / 64, base, 64) if base > 0 else np.array([0.0])
        c0 = 0.0
        for cand in grid[::-1]:
            if cand <= 0:
                continue
            deficit = cand * times[:, None] - Din
            deficit = np.where(np.isfinite(deficit), deficit, -np.inf)
            peak_at = times[np.argmax(deficit, axis=0)]
            if np.all(peak_at <= 0.9 * horizon):
                c0 = float(cand)
                break
        deficit = np.where(inside, c0 * times[:, None] - D, -np.inf)
        C = float(max(0.0, np.max(deficit)))
    else:
        c0, C = constants
    ok = (D >= c0 * times[:, None] - C - tol) | (~inside)
    bad = np.flatnonzero(~np.all(ok, axis=0))
    return DichotomyReport(c0=c0, C=C, rc=rc, n_violations=int(bad.size),
                           violation_index=bad, horizon=horizon)


@dataclass
class EscapeFunction:
    """Escape function f = f_+ + f_- with {p, f} = (1-chi) etatilde(p) <x>^(-2 delta).

    f_+(w) integrates the outgoing bump g_+ along the past orbit, f_- the
    incoming bump g_- along the future orbit; both integrals have compact
    time support for each w because backward orbits eventually turn incoming
    (and vice versa) or hide inside the cutoff ball.
    """

    model: PotentialModel
    E: float
    delta: float
    sigma: float
    rc: float
    quad_horizon: float
    quad_dt: float
    tail_reference: float

    def __post_init__(self):
        self._eta_plus, self._eta_minus = direction_partition(self.sigma)

    def _common(self, x, xi):
        p = self.model.energy(x, xi)
        r = radii(np.asarray(x, dtype=float))
        shell = plateau(p, (0.5 * self.E, 2.0 * self.E),
                        (0.8 * self.E, 1.25 * self.E))
        hole = 1.0 - radial_cutoff(r, self.rc + 1.0, self.rc + 2.0)
        return shell * hole * bracket_power(x, -2.0 * self.delta)

    def target(self, x, xi):
        """The prescribed flow derivative (1-chi) etatilde(p) <x>^(-2 delta)."""
        return self._common(x, xi)

    def g_plus(self, x, xi):
        return self._eta_plus(cosine(x, xi)) * self._common(x, xi)

    def g_minus(self, x, xi):
        return self._eta_minus(cosine(x, xi)) * self._common(x, xi)

    def _orbit(self, w: PhasePoint, span: float):
        fwd = integrate_flow(self.model, w, (0.0, span), dense=True,
                             rtol=1e-11, atol=1e-13, energy_tol=1e-6)
        bwd = integrate_flow(self.model, w, (0.0, -span), dense=True,
                             rtol=1e-11, atol=1e-13, energy_tol=1e-6)

        n = self.model.dim

        def states(ts):
            ts = np.asarray(ts, dtype=float)
            out = np.empty((ts.size, 2 * n))
            pos = ts >= 0.0
            if np.any(pos):
                out[pos] = fwd.sol(ts[pos]).T[:, : 2 * n]
            if np.any(~pos):
                out[~pos] = bwd.sol(ts[~pos]).T[:, : 2 * n]
            return out

        return states

    def values_along(self, w: PhasePoint, offsets=(0.0,)):
        """f(phi^s w) for each offset s, from a single orbit solve.

        Also returns the largest |g| seen at the far ends of the quadrature
        window, which must be ~0 for the truncation to be exact.
        """
        offsets = np.asarray(offsets, dtype=float)
        span = self.quad_horizon + float(np.max(np.abs(offsets))) + 2 * self.quad_dt
        states = self._orbit(w, span)
        n = self.model.dim
        m = int(np.ceil(self.quad_horizon / self.quad_dt))
        if m % 2:
            m += 1
        vals = np.empty(offsets.size)
        edge = 0.0
        for k, s in enumerate(offsets):
            tau_plus = np.linspace(s - self.quad_horizon, s, m + 1)
            st = states(tau_plus)
            gp = self.g_plus(st[:, :n], st[:, n:])
            f_plus = simpson(gp, x=tau_plus)
            tau_minus = np.linspace(s, s + self.quad_horizon, m + 1)
            st = states(tau_minus)
            gm = self.g_minus(st[:, :n], st[:, n:])
            f_minus = -simpson(gm, x=tau_minus)
            vals[k] = f_plus + f_minus
            edge = max(edge, float(gp[0]), float(gm[-1]))
        return vals, edge

    def value(self, w: PhasePoint) -> float:
        return float(self.values_along(w, (0.0,))[0][0])


def build_escape_function(model: PotentialModel, E: float, delta: float,
                          sigma: float = 0.45, rc: float | None = None,
                          quad_horizon: float | None = None,
                          quad_dt: float = 0.02) -> EscapeFunction:
    """Construct the escape function for the energy window J = (E/2, 2E).

    Requires sigma in (0, 1/2) (so sigma^2 sup J < inf J) and delta > 1/2.
    The quadrature horizon defaults to a multiple of the escape radius large
    enough that sampled orbits leave the bump support; the reference tail
    integral int_0^inf (rc + t)^(1 - 2 delta) dt is recorded for bound checks.
    """
    if not 0.0 < sigma < 0.5:
        raise PreconditionError("sigma must lie in (0, 1/2)")
    if not delta > 0.5:
        raise PreconditionError("delta must exceed 1/2")
    if E <= 0:
        raise PreconditionError("E must be positive")
    if rc is None:
        rc = escape_radius(model, E / 3.0)
    if quad_horizon is None:
        quad_horizon = max(60.0, 10.0 * rc)
    tail = rc ** (1.0 - 2.0 * delta) / (2.0 * delta - 1.0)
    return EscapeFunction(model=model, E=E, delta=delta, sigma=sigma, rc=rc,
                          quad_horizon=quad_horizon, quad_dt=quad_dt,
                          tail_reference=tail)


def sample_escape_points(esc: EscapeFunction, n_points: int, seed: int = 0,
                         r_pad: tuple[float, float] = (1.2, 5.0)):
    """Deterministic sample of phase points across the bump's support annulus."""
    rng = np.random.default_rng(seed)
    n = esc.model.dim
    pts = np.empty((n_points, 2 * n))
    made = 0
    while made < n_points:
        r = rng.uniform(esc.rc + r_pad[0], esc.rc + r_pad[1])
        if n == 1:
            x = np.array([r * rng.choice([-1.0, 1.0])])
            u = np.array([rng.choice([-1.0, 1.0])])
        else:
            a = rng.uniform(0, 2 * np.pi)
            x = r * np.array([np.cos(a), np.sin(a)])
            b = rng.uniform(0, 2 * np.pi)
            u = np.array([np.cos(b), np.sin(b)])
        e = rng.uniform(0.55 * esc.E, 1.9 * esc.E)
        ke = e - esc.model.v1(x[None, :])[0]
        if ke <= 1e-9:
            continue
        pts[made, :n] = x
        pts[made, n:] = np.sqrt(ke) * u
        made += 1
    return pts


@dataclass
class EscapeRelationReport:
    residuals: np.ndarray
    max_residual: float
    fd_step: float
    edge_leak: float
    sup_f: float
    tail_reference: float


def verify_escape_relation(esc: EscapeFunction, samples: np.ndarray,
                           fd_step: float = 1e-3) -> EscapeRelationReport:
    """Residuals |d/dt f(phi^t w)|_0 - target(w)| by centered differences.

    Each sample costs one orbit solve; the reported edge_leak is the largest
    bump value seen at the quadrature horizon (nonzero values mean the
    horizon was too short for that sample).
    """
    n = esc.model.dim
    res = np.empty(samples.shape[0])
    edge = 0.0
    sup_f = 0.0
    for i, row in enumerate(samples):
        w = PhasePoint(row[:n], row[n:])
        vals, e = esc.values_along(w, (-fd_step, 0.0, +fd_step))
        deriv = (vals[2] - vals[0]) / (2.0 * fd_step)
        res[i] = abs(deriv - float(esc.target(row[None, :n], row[None, n:])[0]))
        edge = max(edge, e)
        sup_f = max(sup_f, abs(vals[1]))
    return EscapeRelationReport(residuals=res, max_residual=float(np.max(res)),
                                fd_step=fd_step, edge_leak=edge, sup_f=sup_f,
                                tail_reference=esc.tail_reference)
