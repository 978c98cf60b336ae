"""The classical flow of p(x, xi) = |xi|^2 + V1(x).

The flow solves x' = 2 xi, xi' = -grad V1(x); the damping integral
D(t) = int_0^t V2(x(s)) ds is accumulated as an extra state so it inherits
the integrator's accuracy.  Two integrators are provided: an adaptive
high-order Runge-Kutta (solve_ivp, DOP853) for precision work and a
vectorized 4th-order symplectic composition for long batched runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError, ModelError, PreconditionError
from .potentials import PotentialModel

# Yoshida's 4th-order composition of leapfrog steps.
_Y_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_Y_W0 = 1.0 - 2.0 * _Y_W1
_YOSHIDA = (_Y_W1, _Y_W0, _Y_W1)


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, float)))
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, float)))
        if self.x.shape != self.xi.shape:
            raise ValueError("x and xi must have matching shapes")

    @property
    def vector(self):
        return np.concatenate([self.x, self.xi])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        n = v.size // 2
        return cls(v[:n], v[n:])


def cosine(x, xi):
    """cos(x, xi) = x.xi / (|x| |xi|), 0 where either factor vanishes."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    dot = np.sum(x * xi, axis=-1)
    nx = np.linalg.norm(x, axis=-1)
    nxi = np.linalg.norm(xi, axis=-1)
    denom = nx * nxi
    return np.where(denom > 0, dot / np.where(denom > 0, denom, 1.0), 0.0)


@dataclass(frozen=True)
class RegionSpec:
    """Conical region Z_sign(R, d, sigma) of phase space.

    Membership (non-strict): |x| >= R, |xi| >= d, and cos(x, xi) >= sigma for
    sign '+' (outgoing side) or cos(x, xi) <= sigma for sign '-' (incoming).
    sigma is signed, in [-1, 1].
    """

    R: float
    d: float
    sigma: float
    sign: str

    def __post_init__(self):
        if self.sign not in ("+", "-"):
            raise ValueError("sign must be '+' or '-'")
        if not -1.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [-1, 1]")


def region_membership(x, xi, spec: RegionSpec):
    """Vectorized membership of (x, xi) in the region; non-strict inequalities."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    nx = np.linalg.norm(x, axis=-1)
    nxi = np.linalg.norm(xi, axis=-1)
    c = cosine(x, xi)
    ok = (nx >= spec.R) & (nxi >= spec.d)
    if spec.sign == "+":
        return ok & (c >= spec.sigma)
    return ok & (c <= spec.sigma)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # (m, 2n) rows [x, xi]
    damping: np.ndarray         # D(t) = int_0^t V2 along the orbit
    energy_drift: float
    classification: str | None
    escape_radius: float | None
    sol: object | None = field(default=None, repr=False)

    @property
    def dim(self):
        return self.states.shape[1] // 2

    @property
    def x(self):
        return self.states[:, : self.dim]

    @property
    def xi(self):
        return self.states[:, self.dim:]


def _rhs(model: PotentialModel):
    n = model.dim

    def rhs(t, y):
        x = y[:n]
        return np.concatenate([2.0 * y[n: 2 * n], -model.grad_v1(x),
                               [model.v2(x[None, :])[0]] if model.v2_terms else [0.0]])

    return rhs


def integrate_flow(model: PotentialModel, w0: PhasePoint, t_span,
                   t_eval=None, rtol: float = 1e-10, atol: float = 1e-12,
                   energy_tol: float = 1e-6, events=None,
                   dense: bool = False) -> Trajectory:
    """Integrate the flow from w0 over t_span (either endpoint may be negative).

    Raises IntegrationError (with the partial trajectory attached) when the
    solver fails or the energy drift exceeds ``energy_tol``.
    """
    n = model.dim
    y0 = np.concatenate([w0.vector, [0.0]])
    if t_eval is None and not dense:
        t_eval = np.linspace(t_span[0], t_span[1], 513)
    res = solve_ivp(_rhs(model), t_span, y0, method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=atol, events=events, dense_output=dense)
    if res.status == -1:
        raise IntegrationError(f"flow integration failed: {res.message}")
    states = res.y[: 2 * n].T
    traj = Trajectory(times=res.t, states=states, damping=res.y[2 * n],
                      energy_drift=0.0, classification=None,
                      escape_radius=None, sol=res.sol if dense else None)
    p = model.energy(traj.x, traj.xi)
    drift = float(np.max(np.abs(p - p[0]))) if p.size else 0.0
    traj.energy_drift = drift
    if drift > energy_tol:
        raise IntegrationError(
            f"energy drift {drift:.3e} exceeds tolerance {energy_tol:.3e}",
            partial=traj)
    return traj


def _leapfrog(model, X, Xi, dt):
    if model.is_free:
        return X + 2.0 * dt * Xi, Xi
    Xi = Xi - (0.5 * dt) * model.grad_v1(X)
    X = X + 2.0 * dt * Xi
    Xi = Xi - (0.5 * dt) * model.grad_v1(X)
    return X, Xi


def symplectic_step(model, X, Xi, dt):
    """One 4th-order composition step for a batch of states (m, n)."""
    for w in _YOSHIDA:
        X, Xi = _leapfrog(model, X, Xi, w * dt)
    return X, Xi


def symplectic_evolve(model: PotentialModel, X0, Xi0, t_final: float,
                      dt: float = 5e-3, record_every: int = 0,
                      escape_radius: float | None = None,
                      with_damping: bool = False):
    """Evolve a batch with the symplectic integrator.

    Returns a dict with final states, optional recorded snapshots, the
    cumulative damping integral (trapezoid on macro steps) and, when
    ``escape_radius`` is given, a boolean mask of rows that ever left the
    ball of that radius.
    """
    X = np.array(X0, dtype=float, copy=True)
    Xi = np.array(Xi0, dtype=float, copy=True)
    if X.ndim == 1:
        X = X[None, :]
        Xi = Xi[None, :]
    n_steps = int(np.ceil(t_final / dt))
    dt = t_final / n_steps if n_steps else dt
    damping = np.zeros(X.shape[0])
    v2_prev = model.v2(X) if (with_damping and model.v2_terms) else None
    escaped = np.zeros(X.shape[0], dtype=bool)
    r2cap = escape_radius ** 2 if escape_radius is not None else None
    snaps_t, snaps_x, snaps_xi, snaps_d = [], [], [], []
    for k in range(1, n_steps + 1):
        X, Xi = symplectic_step(model, X, Xi, dt)
        if v2_prev is not None:
            v2_now = model.v2(X)
            damping += 0.5 * dt * (v2_prev + v2_now)
            v2_prev = v2_now
        if r2cap is not None:
            escaped |= np.sum(X * X, axis=-1) > r2cap
        if record_every and (k % record_every == 0 or k == n_steps):
            snaps_t.append(k * dt)
            snaps_x.append(X.copy())
            snaps_xi.append(Xi.copy())
            snaps_d.append(damping.copy())
    out = {"X": X, "Xi": Xi, "damping": damping, "escaped": escaped,
           "dt": dt, "t_final": t_final}
    if record_every:
        out["times"] = np.array(snaps_t)
        out["snap_x"] = np.array(snaps_x)
        out["snap_xi"] = np.array(snaps_xi)
        out["snap_damping"] = np.array(snaps_d)
    return out


def escape_radius(model: PotentialModel, nu: float, base: float = 1.0,
                  max_doublings: int = 14, n_radii: int = 160,
                  n_dirs: int = 64) -> float:
    """Smallest dyadic radius R with |V1| + |x||grad V1| < nu for |x| >= R.

    The condition is checked on a dense radial/angular sample out to well
    past the model's scan radius; it guarantees outward convexity of |x(t)|^2
    beyond R for shell energies above 3 nu / 2.
    """
    if nu <= 0:
        raise PreconditionError("nu must be positive")
    if model.is_free:
        return base
    if model.dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    outer = max(2.0 * model.scan_radius(), base * 2.0 ** max_doublings)
    for k in range(max_doublings + 1):
        R = base * 2.0 ** k
        rr = np.geomspace(R, max(outer, 4.0 * R), n_radii)
        pts = rr[:, None, None] * dirs[None, :, :]
        flat = pts.reshape(-1, model.dim)
        score = np.abs(model.v1(flat)) + \
            np.linalg.norm(flat, axis=-1) * np.linalg.norm(model.grad_v1(flat), axis=-1)
        if np.max(score) < nu:
            return R
    raise ModelError(f"no escape radius below {base * 2.0 ** max_doublings}")


@dataclass
class ClassifyResult:
    label: str                  # trapped | escaping | mixed
    forward: str                # bounded | escaping
    backward: str
    escape_radius: float
    horizon: float
    certificates: dict


def _one_direction(model, w0, rc, horizon, rtol, atol):
    n = model.dim
    x0, xi0 = w0.x, w0.xi
    if np.linalg.norm(x0) > rc and float(np.dot(x0, xi0)) >= 0.0:
        return "escaping", {"exit_time": 0.0, "exit_state": w0.vector.tolist()}

    def exit_ball(t, y):
        return float(np.dot(y[:n], y[:n]) - rc * rc)

    exit_ball.terminal = True
    exit_ball.direction = 1.0
    res = solve_ivp(_rhs(model), (0.0, horizon), np.concatenate([w0.vector, [0.0]]),
                    method="DOP853", rtol=rtol, atol=atol, events=[exit_ball])
    if res.status == -1:
        raise IntegrationError(f"classification integration failed: {res.message}")
    if res.t_events[0].size:
        t_exit = float(res.t_events[0][0])
        y = res.y_events[0][0]
        return "escaping", {"exit_time": t_exit,
                            "exit_state": y[: 2 * n].tolist(),
                            "radial_dot": float(np.dot(y[:n], y[n: 2 * n]))}
    yT = res.y[: 2 * n, -1]
    if np.linalg.norm(yT[:n]) > rc:
        return "escaping", {"exit_time": float(res.t[-1]),
                            "exit_state": yT.tolist()}
    return "bounded", {"final_state": yT.tolist()}


def classify_trajectory(model: PotentialModel, w0: PhasePoint, J,
                        horizon: float = 1e3, rc: float | None = None,
                        rtol: float = 1e-10, atol: float = 1e-12) -> ClassifyResult:
    """Classify an orbit as trapped/escaping/mixed with exit certificates.

    J = (E_lo, E_hi) is the energy window; the escape threshold nu = 2 E_lo/3
    makes |x(t)|^2 strictly convex outside the escape radius, so a single
    outward crossing certifies non-return.
    """
    e_lo, e_hi = float(J[0]), float(J[1])
    p0 = float(model.energy(w0.x, w0.xi))
    if not (e_lo <= p0 <= e_hi):
        raise PreconditionError(f"energy {p0:.6g} outside J = [{e_lo}, {e_hi}]")
    nu = 2.0 * e_lo / 3.0
    if rc is None:
        rc = escape_radius(model, nu)
    fwd, cert_f = _one_direction(model, w0, rc, horizon, rtol, atol)
    bwd, cert_b = _one_direction(model, PhasePoint(w0.x, -w0.xi), rc, horizon,
                                 rtol, atol)
    if fwd == bwd == "bounded":
        label = "trapped"
    elif fwd == bwd == "escaping":
        label = "escaping"
    else:
        label = "mixed"
    certs = {"forward": cert_f, "backward": cert_b,
             "convexity_margin": 8.0 * e_lo - 12.0 * nu}
    return ClassifyResult(label=label, forward=fwd, backward=bwd,
                          escape_radius=rc, horizon=horizon,
                          certificates=certs)


def _shell_points(model, rng, energies, box_radius, n_points, r_min=0.0):
    """Draw points of p^{-1}([e_lo, e_hi]) with |x| in [r_min, box_radius]."""
    n = model.dim
    got_x, got_xi = [], []
    e_lo, e_hi = energies
    while sum(len(a) for a in got_x) < n_points:
        m = 4 * n_points
        x = rng.uniform(-box_radius, box_radius, size=(m, n))
        keep = np.linalg.norm(x, axis=-1) >= r_min
        x = x[keep]
        e = rng.uniform(e_lo, e_hi, size=len(x))
        ke = e - model.v1(x)
        ok = ke > 1e-12
        x, ke = x[ok], ke[ok]
        if n == 1:
            u = rng.choice([-1.0, 1.0], size=(len(x), 1))
        else:
            u = rng.normal(size=(len(x), n))
            u /= np.linalg.norm(u, axis=-1, keepdims=True)
        got_x.append(x)
        got_xi.append(np.sqrt(ke)[:, None] * u)
    X = np.concatenate(got_x)[:n_points]
    Xi = np.concatenate(got_xi)[:n_points]
    return X, Xi


@dataclass
class TrappedSample:
    points: np.ndarray          # (m, 2n)
    horizon: float
    escape_radius: float
    n_candidates: int
    note: str = ("finite-horizon certificate: the set over-approximates the "
                 "true trapped set and shrinks as the horizon grows")


def sample_trapped_set(model: PotentialModel, energies, box_radius: float,
                       n_candidates: int = 2000, horizon: float = 1e3,
                       rc: float | None = None, dt: float = 5e-3,
                       seed: int = 0, chunk_steps: int = 2000) -> TrappedSample:
    """Sample shell points whose orbits stay in B(rc) for |t| <= horizon.

    Candidates are drawn on p^{-1}(energies) inside the box, then evolved in
    a vectorized batch both forward and backward; any candidate that leaves
    the escape ball is dropped as soon as its whole chunk finishes.
    """
    e_lo = float(energies[0])
    if rc is None:
        rc = escape_radius(model, 2.0 * e_lo / 3.0)
    rng = np.random.default_rng(seed)
    X0, Xi0 = _shell_points(model, rng, energies, box_radius, n_candidates)
    alive = np.arange(len(X0))
    state = {+1: (X0.copy(), Xi0.copy()), -1: (X0.copy(), -Xi0.copy())}
    n_steps = int(np.ceil(horizon / dt))
    done = 0
    while done < n_steps and alive.size:
        steps = min(chunk_steps, n_steps - done)
        keep = np.ones(alive.size, dtype=bool)
        for s in (+1, -1):
            X, Xi = state[s]
            out = symplectic_evolve(model, X, Xi, steps * dt, dt=dt,
                                    escape_radius=rc)
            state[s] = (out["X"], out["Xi"])
            keep &= ~out["escaped"]
        alive = alive[keep]
        state = {s: (state[s][0][keep], state[s][1][keep]) for s in state}
        done += steps
    pts = np.concatenate([X0[alive], Xi0[alive]], axis=-1)
    return TrappedSample(points=pts, horizon=horizon, escape_radius=rc,
                         n_candidates=n_candidates)


@dataclass
class EscapeBoundResult:
    c0: float
    per_sample_min: np.ndarray
    sigma: float
    rc: float
    horizon: float


def check_escape_bound(model: PotentialModel, J, sigma: float,
                       n_samples: int = 64, horizon: float = 50.0,
                       rc: float | None = None, seed: int = 0,
                       direction: int = +1) -> EscapeBoundResult:
    """Estimate c0 in |x(t)| >= c0 (t + |x0|) over the escape cone.

    Applies to points of Z_+(rc, 0, -sigma) on shells in J (forward time;
    direction=-1 mirrors to Z_-).  Requires the strict aperture condition
    sigma^2 sup J < inf J.
    """
    e_lo, e_hi = float(J[0]), float(J[1])
    if not sigma ** 2 * e_hi < e_lo:
        raise PreconditionError("need sigma^2 * sup J < inf J")
    if rc is None:
        rc = escape_radius(model, 2.0 * e_lo / 3.0)
    rng = np.random.default_rng(seed)
    n = model.dim
    mins = []
    made = 0
    while made < n_samples:
        x, xi = _shell_points(model, rng, (e_lo, e_hi), 3.0 * rc, 1, r_min=rc)
        c = cosine(x[0], xi[0]) * direction
        if c < -sigma:
            continue
        w0 = PhasePoint(x[0], direction * xi[0])
        traj = integrate_flow(model, w0, (0.0, horizon),
                              t_eval=np.linspace(0.0, horizon, 801),
                              rtol=1e-9, atol=1e-11, energy_tol=1e-5)
        r = np.linalg.norm(traj.x, axis=-1)
        ratio = r / (traj.times + np.linalg.norm(w0.x))
        mins.append(float(np.min(ratio)))
        made += 1
    mins = np.array(mins)
    return EscapeBoundResult(c0=float(np.min(mins)), per_sample_min=mins,
                             sigma=sigma, rc=rc, horizon=horizon)


@dataclass
class JacobianResult:
    times: np.ndarray
    mats: np.ndarray            # (m, 2n, 2n)
    growth_ratio: float         # sup ||A(t)|| / sqrt(1 + t^2)
    xi_row_bound: float         # sup over t of the xi-block row norms
    zone: RegionSpec


def flow_jacobian(model: PotentialModel, w0: PhasePoint, t_final: float,
                  J, sigma: float, rc: float | None = None,
                  direction: int = +1, n_samples: int = 64,
                  rtol: float = 1e-10, atol: float = 1e-12) -> JacobianResult:
    """Differential of the time-t flow map along the orbit of w0.

    Solves A' = B(t) A with B = [[0, 2I], [-Hess V1, 0]], A(0) = I.  The
    caller's point must lie in the escape cone Z_dir(rc, 0, -sigma) on a
    shell in J; there the position block grows at most linearly in t
    (ratio against sqrt(1 + t^2) reported) and the xi rows stay bounded.
    """
    e_lo, e_hi = float(J[0]), float(J[1])
    p0 = float(model.energy(w0.x, w0.xi))
    if not (e_lo <= p0 <= e_hi):
        raise PreconditionError(f"energy {p0:.6g} outside J")
    if rc is None:
        rc = escape_radius(model, 2.0 * e_lo / 3.0)
    sign = "+" if direction > 0 else "-"
    zone = RegionSpec(R=rc, d=0.0, sigma=-sigma if direction > 0 else sigma,
                      sign=sign)
    if not bool(region_membership(w0.x, w0.xi, zone)):
        raise PreconditionError("w0 lies outside the stated escape cone")
    n = model.dim
    m = 2 * n

    def rhs(t, y):
        x = y[:n]
        A = y[m:].reshape(m, m)
        dA = np.empty_like(A)
        dA[:n] = 2.0 * A[n:]
        dA[n:] = -model.hess_v1(x) @ A[:n]
        return np.concatenate([2.0 * y[n:m], -model.grad_v1(x), dA.ravel()])

    y0 = np.concatenate([w0.vector, np.eye(m).ravel()])
    t_eval = np.linspace(0.0, direction * t_final, 257)
    res = solve_ivp(rhs, (0.0, direction * t_final), y0, method="DOP853",
                    t_eval=t_eval, rtol=rtol, atol=atol)
    if res.status != 0:
        raise IntegrationError(f"jacobian integration failed: {res.message}")
    mats = res.y[m:].T.reshape(-1, m, m)
    norms = np.linalg.norm(mats, ord=2, axis=(1, 2))
    growth = float(np.max(norms / np.sqrt(1.0 + res.t ** 2)))
    xi_rows = float(np.max(np.linalg.norm(mats[:, n:, :], axis=-1)))
    return JacobianResult(times=res.t, mats=mats, growth_ratio=growth,
                          xi_row_bound=xi_rows, zone=zone)


def transport(model: PotentialModel, X0, Xi0, times, dt_sim: float | None = None):
    """States and damping integrals at the given times for a batch.

    Free models use the exact drift; otherwise a fixed-step symplectic run
    at dt_sim (default: the spacing of ``times``) is sampled.  Returns
    (X[t], Xi[t], D[t]) with leading time axis.
    """
    times = np.asarray(times, dtype=float)
    X0 = np.asarray(X0, dtype=float)
    Xi0 = np.asarray(Xi0, dtype=float)
    if model.is_free:
        X = X0[None] + 2.0 * times[:, None, None] * Xi0[None]
        Xi = np.broadcast_to(Xi0[None], X.shape)
        if model.v2_terms:
            # trapezoid in t on a refined grid including 0
            grid = np.concatenate([[0.0], times])
            vals = np.array([model.v2(X0 + 2.0 * t * Xi0) for t in grid])
            inc = 0.5 * np.diff(grid)[:, None] * (vals[1:] + vals[:-1])
            D = np.cumsum(inc, axis=0)
        else:
            D = np.zeros((len(times), len(X0)))
        return X, Xi, D
    if dt_sim is None:
        dt_sim = float(times[0]) if len(times) == 1 else float(np.min(np.diff(times)))
    X, Xi = X0.copy(), Xi0.copy()
    D = np.zeros(len(X0))
    v2_prev = model.v2(X) if model.v2_terms else None
    outX, outXi, outD = [], [], []
    t_now = 0.0
    for t_target in times:
        n_steps = max(1, int(round((t_target - t_now) / dt_sim)))
        h = (t_target - t_now) / n_steps
        for _ in range(n_steps):
            X, Xi = symplectic_step(model, X, Xi, h)
            if v2_prev is not None:
                v2_now = model.v2(X)
                D += 0.5 * h * (v2_prev + v2_now)
                v2_prev = v2_now
        t_now = t_target
        outX.append(X.copy())
        outXi.append(Xi.copy())
        outD.append(D.copy())
    return np.array(outX), np.array(outXi), np.array(outD)
