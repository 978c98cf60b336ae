"""Potential models for the semiclassical Hamiltonian -h^2 Lap + V1 - i h V2.

V1 is the real (refraction) part, V2 the absorption index, which may change
sign.  Models are finite sums of closed-form terms (anisotropic Gaussians,
a radial ring bump, and radial powers of the bracket for negative tests), so
values, gradients and Hessians are exact.

Decay bookkeeping uses the long-range/short-range convention

    |d^a V1| <= c_a <x>^(-rho - |a|),   |d^a V2| <= c_a <x>^(-1 - rho - |a|),

with <x> = (1 + |x|)^(1/2).  The c_a tables are recorded per derivative
order from an analytic-derivative scan; ``verify_symbol_class`` re-checks
them with independent finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .cutoffs import radial_cutoff
from .errors import ModelError, PreconditionError
from .weights import bracket_power, radii

_EPS_R = 1e-12


@dataclass(frozen=True)
class GaussTerm:
    """amp * exp(-sum_i widths_i (x_i - center_i)^2)."""

    amp: float
    center: tuple[float, ...]
    widths: tuple[float, ...]

    def __post_init__(self):
        # accept scalars for the 1d case
        for name in ("center", "widths"):
            v = getattr(self, name)
            if np.isscalar(v):
                object.__setattr__(self, name, (float(v),))

    def value(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return self.amp * np.exp(-np.sum(np.asarray(self.widths) * d * d, axis=-1))

    def grad(self, x):
        d = np.asarray(x, dtype=float) - self.center
        w = np.asarray(self.widths)
        return self.value(x)[..., None] * (-2.0 * w * d)

    def hess(self, x):
        d = np.asarray(x, dtype=float) - self.center
        w = np.asarray(self.widths)
        wd = w * d
        outer = 4.0 * wd[..., :, None] * wd[..., None, :]
        outer -= 2.0 * np.diag(w)
        return self.value(x)[..., None, None] * outer

    def scan_radius(self):
        return float(np.max(np.abs(self.center)) + 5.0 / np.sqrt(min(self.widths)))


def _radial_derivatives(fp, fpp, x):
    """Gradient and Hessian of f(|x|) from f', f'' sampled at |x|."""
    x = np.asarray(x, dtype=float)
    r = np.maximum(radii(x), _EPS_R)[..., None]
    unit = x / r
    grad = fp[..., None] * unit
    rr = unit[..., :, None] * unit[..., None, :]
    eye = np.eye(x.shape[-1])
    hess = fpp[..., None, None] * rr
    hess += (fp / r[..., 0])[..., None, None] * (eye - rr)
    return grad, hess


@dataclass(frozen=True)
class RingTerm:
    """amp * exp(-(|x| - r0)^2): a circular barrier that traps rays inside.

    The radial profile has a kink at the origin of size exp(-r0^2); gradients
    there are returned as 0, which is below every tolerance used here for the
    moderate r0 of interest.
    """

    amp: float
    r0: float

    def _radial(self, r):
        u = r - self.r0
        e = self.amp * np.exp(-u * u)
        return e, -2.0 * u * e, (4.0 * u * u - 2.0) * e

    def value(self, x):
        return self._radial(radii(np.asarray(x, dtype=float)))[0]

    def grad(self, x):
        r = radii(np.asarray(x, dtype=float))
        _, fp, _ = self._radial(r)
        fp = np.where(r < _EPS_R, 0.0, fp)
        return _radial_derivatives(fp, np.zeros_like(fp), x)[0]

    def hess(self, x):
        r = radii(np.asarray(x, dtype=float))
        _, fp, fpp = self._radial(r)
        fp = np.where(r < _EPS_R, 0.0, fp)
        return _radial_derivatives(fp, fpp, x)[1]

    def scan_radius(self):
        return float(self.r0 + 6.0)


@dataclass(frozen=True)
class BracketPowerTerm:
    """amp * <x>^power.  Slowly decaying; used to exercise failure paths."""

    amp: float
    power: float

    def _radial(self, r):
        q = 0.5 * self.power
        b = 1.0 + r
        return self.amp * b ** q, self.amp * q * b ** (q - 1.0), \
            self.amp * q * (q - 1.0) * b ** (q - 2.0)

    def value(self, x):
        return self._radial(radii(np.asarray(x, dtype=float)))[0]

    def grad(self, x):
        r = radii(np.asarray(x, dtype=float))
        _, fp, _ = self._radial(r)
        fp = np.where(r < _EPS_R, 0.0, fp)
        return _radial_derivatives(fp, np.zeros_like(fp), x)[0]

    def hess(self, x):
        r = radii(np.asarray(x, dtype=float))
        _, fp, fpp = self._radial(r)
        fp = np.where(r < _EPS_R, 0.0, fp)
        return _radial_derivatives(fp, fpp, x)[1]

    def scan_radius(self):
        return 40.0


def _sum_terms(terms, x, what):
    x = np.asarray(x, dtype=float)
    if what == "value":
        out = np.zeros(x.shape[:-1])
    elif what == "grad":
        out = np.zeros(x.shape)
    else:
        out = np.zeros(x.shape + (x.shape[-1],))
    for t in terms:
        out = out + getattr(t, what)(x)
    return out


@dataclass(frozen=True)
class PotentialModel:
    """A pair (V1, V2) of closed-form potentials on R^dim.

    rho is the declared decay rate; validity is checked against the recorded
    decay-constant tables by :func:`verify_symbol_class`.
    """

    dim: int
    v1_terms: tuple = ()
    v2_terms: tuple = ()
    rho: float = 2.0
    name: str = "model"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ValueError(f"points must have trailing dim {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite evaluation point")
        return x

    def v1(self, x):
        return _sum_terms(self.v1_terms, self._check(x), "value")

    def grad_v1(self, x):
        return _sum_terms(self.v1_terms, self._check(x), "grad")

    def hess_v1(self, x):
        return _sum_terms(self.v1_terms, self._check(x), "hess")

    def v2(self, x):
        return _sum_terms(self.v2_terms, self._check(x), "value")

    def grad_v2(self, x):
        return _sum_terms(self.v2_terms, self._check(x), "grad")

    def energy(self, x, xi):
        """Classical symbol p(x, xi) = |xi|^2 + V1(x)."""
        xi = np.asarray(xi, dtype=float)
        return np.sum(xi * xi, axis=-1) + self.v1(x)

    @property
    def is_free(self):
        return not self.v1_terms

    def scan_radius(self):
        rs = [t.scan_radius() for t in self.v1_terms + self.v2_terms]
        return max(rs, default=10.0)

    def _scan_points(self):
        R = self.scan_radius()
        if self.dim == 1:
            return np.linspace(-R, R, 4001)[:, None]
        per_axis = max(41, int(round(160 / (self.dim - 1))))
        ax = np.linspace(-R, R, per_axis)
        grids = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1).reshape(-1, self.dim)

    @cached_property
    def m_minus(self):
        """-inf V2, clipped at 0; the size of the anti-damped part."""
        if not self.v2_terms:
            return 0.0
        return float(max(0.0, -np.min(self.v2(self._scan_points()))))

    @cached_property
    def c_alpha(self):
        """Decay constants {(field, order): c} from an analytic scan."""
        pts = self._scan_points()
        table = {}
        for fld, terms, extra in (("v1", self.v1_terms, 0.0),
                                  ("v2", self.v2_terms, 1.0)):
            for order in (0, 1, 2):
                if not terms:
                    table[(fld, order)] = 0.0
                    continue
                if order == 0:
                    mag = np.abs(_sum_terms(terms, pts, "value"))
                elif order == 1:
                    mag = np.max(np.abs(_sum_terms(terms, pts, "grad")), axis=-1)
                else:
                    mag = np.max(np.abs(_sum_terms(terms, pts, "hess")), axis=(-2, -1))
                w = bracket_power(pts, extra + self.rho + order)
                table[(fld, order)] = float(1.02 * np.max(mag * w))
        return table


def free(dim: int = 1) -> PotentialModel:
    return PotentialModel(dim=dim, name="free")


def double_bump(amp: float = 2.0, sep: float = 2.0, width: float = 1.0,
                v2_terms: tuple = (), rho: float = 2.0,
                name: str = "double-bump") -> PotentialModel:
    """Two 1D Gaussian barriers at +-sep; energies below amp trap between them."""
    t1 = GaussTerm(amp, (-sep,), (width,))
    t2 = GaussTerm(amp, (+sep,), (width,))
    return PotentialModel(dim=1, v1_terms=(t1, t2), v2_terms=v2_terms,
                          rho=rho, name=name)


def gauss_well_damping(amp: float, center: float = 0.0,
                       width: float = 1.0) -> tuple:
    """Convenience V2 terms: a single 1D Gaussian of the given sign."""
    return (GaussTerm(amp, (center,), (width,)),)


def ring_model(amp: float = 2.0, r0: float = 3.0, v2_terms: tuple = (),
               rho: float = 2.0) -> PotentialModel:
    """2D ring barrier; rays at energies below amp bounce inside the ring."""
    return PotentialModel(dim=2, v1_terms=(RingTerm(amp, r0),),
                          v2_terms=v2_terms, rho=rho, name="ring")


def eval_potential(model: PotentialModel, points):
    """(V1, grad V1, V2) at points of shape (..., dim); rejects non-finite."""
    pts = np.asarray(points, dtype=float)
    v1 = model.v1(pts)
    g1 = model.grad_v1(pts)
    v2 = model.v2(pts)
    for arr in (v1, g1, v2):
        if not np.all(np.isfinite(arr)):
            raise ValueError("potential evaluation produced non-finite values")
    return v1, g1, v2


def _fd_derivative_max(fn, pts, order, steps):
    """Max |d^a f| over multi-indices of the given order, by central FD."""
    n = pts.shape[-1]
    if order == 0:
        return np.abs(fn(pts))
    h = steps[..., None]
    eye = np.eye(n)
    if order == 1:
        mags = []
        for i in range(n):
            e = eye[i]
            d = (fn(pts + h * e) - fn(pts - h * e)) / (2.0 * steps)
            mags.append(np.abs(d))
        return np.max(mags, axis=0)
    mags = []
    for i in range(n):
        for j in range(i, n):
            ei, ej = eye[i], eye[j]
            if i == j:
                d = (fn(pts + h * ei) - 2.0 * fn(pts) + fn(pts - h * ei)) \
                    / steps ** 2
            else:
                d = (fn(pts + h * (ei + ej)) - fn(pts + h * (ei - ej))
                     - fn(pts - h * (ei - ej)) + fn(pts - h * (ei + ej))) \
                    / (4.0 * steps ** 2)
            mags.append(np.abs(d))
    return np.max(mags, axis=0)


@dataclass(frozen=True)
class SymbolClassReport:
    rho: float
    step_scale: float
    ratios: dict
    max_ratio: float
    passed: bool
    tolerance: float


def verify_symbol_class(model: PotentialModel, box: float | None = None,
                        orders: tuple = (0, 1, 2), step_scale: float = 1e-4,
                        n_samples: int = 2000, tolerance: float = 1e-3,
                        c_alpha: dict | None = None) -> SymbolClassReport:
    """Check the declared decay class with finite differences.

    Derivatives up to the requested orders are measured at deterministic
    sample points with step 1e-4 * (1 + |x|) and compared against the decay
    envelope c_a <x>^(-rho-|a|) for V1 and c_a <x>^(-1-rho-|a|) for V2.
    A ratio above 1 + tolerance fails.  Passing ``c_alpha`` overrides the
    model's recorded table (used to probe a mis-declared rho).
    """
    if max(orders) > 2:
        raise PreconditionError("symbol-class check supports orders <= 2")
    table = model.c_alpha if c_alpha is None else c_alpha
    for fld in ("v1", "v2"):
        for order in orders:
            if (fld, order) not in table:
                raise PreconditionError(f"missing decay constant ({fld}, {order})")
    R = box if box is not None else model.scan_radius()
    rng = np.random.default_rng(20240817)
    pts = rng.uniform(-R, R, size=(n_samples, model.dim))
    steps = step_scale * (1.0 + radii(pts))
    ratios = {}
    for fld, fn, extra in (("v1", model.v1, 0.0), ("v2", model.v2, 1.0)):
        for order in orders:
            c = table[(fld, order)]
            if c == 0.0:
                ratios[(fld, order)] = 0.0
                continue
            mag = _fd_derivative_max(fn, pts, order, steps)
            w = bracket_power(pts, extra + model.rho + order)
            ratios[(fld, order)] = float(np.max(mag * w) / c)
    max_ratio = max(ratios.values(), default=0.0)
    return SymbolClassReport(rho=model.rho, step_scale=step_scale, ratios=ratios,
                             max_ratio=max_ratio,
                             passed=bool(max_ratio <= 1.0 + tolerance),
                             tolerance=tolerance)


@dataclass(frozen=True)
class DissipativeSplit:
    """V2 = W2 - W3 - W4 with W2 >= C <x>^(-1-rho) and small weighted W3.

    W2 absorbs the sign-changing part, W4 is the compactly supported piece of
    the correction 2C <x>^(-1-rho), and W3 its small tail with
    sup <x>^(2 delta) |W3| = bound_w3.
    """

    model: PotentialModel
    delta: float
    C: float
    support_radius: float
    bound_w3: float

    def _corr(self, x):
        return 2.0 * self.C * bracket_power(x, -1.0 - self.model.rho)

    def w2(self, x):
        return self.model.v2(x) + self._corr(x)

    def w4(self, x):
        return self._corr(x) * radial_cutoff(radii(np.asarray(x, dtype=float)),
                                             self.support_radius,
                                             self.support_radius + 1.0)

    def w3(self, x):
        return self._corr(x) - self.w4(x)


def split_dissipative(model: PotentialModel, delta: float,
                      support_radius: float = 8.0,
                      growth_cap: float = 1e6) -> DissipativeSplit:
    """Build the dissipative splitting of V2.

    The offset constant is C = sup_x (-V2(x)) <x>^(1+rho) (0 when V2 >= 0);
    a scan whose maximum still grows at the boundary means V2 decays too
    slowly for the declared rho and raises ModelError.
    """
    if not 0.5 < delta < 0.5 * (1.0 + model.rho):
        raise PreconditionError(
            f"delta must lie in (1/2, (1+rho)/2) = (0.5, {0.5 * (1 + model.rho)})")
    pts = model._scan_points()
    neg = np.maximum(0.0, -model.v2(pts)) * bracket_power(pts, 1.0 + model.rho)
    C = float(np.max(neg)) if len(model.v2_terms) else 0.0
    if C > 0.0:
        r = radii(pts)
        R = model.scan_radius()
        outer = neg[r > 0.9 * R]
        inner = neg[r <= 0.9 * R]
        if C > growth_cap or (outer.size and inner.size
                              and np.max(outer) >= np.max(inner)):
            raise ModelError(
                "no finite dissipative offset: -V2 <x>^(1+rho) keeps growing; "
                "declared rho exceeds the actual decay of V2")
    bound = 2.0 * C * (1.0 + support_radius) ** (delta - 0.5 * (1.0 + model.rho))
    split = DissipativeSplit(model=model, delta=delta, C=C,
                             support_radius=support_radius, bound_w3=bound)
    w2 = split.w2(pts)
    floor = C * bracket_power(pts, -1.0 - model.rho)
    if np.min(w2 - floor) < -1e-12:
        raise ModelError("dissipative splitting failed its floor check")
    return split
