"""Grids, discretized Hamiltonians, and phase-space quantization.

The Hamiltonian -h^2 Lap + V1 - i h V2 is discretized on a uniform box
[-L, L]^n with a Dirichlet finite-difference Laplacian (order 2 or 4) and a
cubic-ramp complex absorbing layer strictly inside the box.  Weyl and
standard quantization act on the grid's periodic Fourier band
xi_k = 2 pi h k / (2L); symbols must live well inside the band (80% of the
Nyquist momentum) for the matrices to be trustworthy.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import PreconditionError
from .potentials import PotentialModel, DissipativeSplit
from .weights import bracket_power

_STENCILS = {
    2: ([1.0, -2.0, 1.0], 1),
    4: ([-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0], 2),
}


@dataclass(frozen=True)
class GridDomain:
    """Uniform tensor grid on [-L, L]^dim with an absorbing layer.

    The layer occupies max_i |x_i| in [L - cap_width, L]; the trusted
    interior keeps a further ``buffer`` margin from it.
    """

    dim: int
    L: float
    n: int
    order: int = 4
    cap_width: float = 2.0
    cap_strength: float = 1.0
    buffer: float = 0.25

    def __post_init__(self):
        if self.order not in _STENCILS:
            raise PreconditionError("stencil order must be 2 or 4")
        if not 0.0 < self.cap_width < self.L:
            raise PreconditionError("absorbing layer must sit strictly inside the box")

    @cached_property
    def axis(self):
        # Dirichlet interior nodes: exclude the box walls themselves.
        return np.linspace(-self.L, self.L, self.n + 2)[1:-1]

    @property
    def dx(self):
        return 2.0 * self.L / (self.n + 1)

    @property
    def cell_volume(self):
        return self.dx ** self.dim

    @cached_property
    def points(self):
        if self.dim == 1:
            return self.axis[:, None]
        grids = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1).reshape(-1, self.dim)

    @property
    def size(self):
        return self.n ** self.dim

    @cached_property
    def xi_axis(self):
        """Semiclassical-frequency axis is set per h; this is the unit-h one."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    def xi_nyquist(self, h: float) -> float:
        return float(np.pi * h / self.dx)

    @cached_property
    def depth(self):
        """Absorbing-layer penetration in [0, 1] at each node."""
        a = np.max(np.abs(self.points), axis=-1)
        return np.clip((a - (self.L - self.cap_width)) / self.cap_width, 0.0, 1.0)

    @cached_property
    def cap_profile(self):
        """Cubic-ramp absorber values at the nodes."""
        return self.cap_strength * self.depth ** 3

    @cached_property
    def interior_mask(self):
        a = np.max(np.abs(self.points), axis=-1)
        return a <= self.L - self.cap_width - self.buffer

    @property
    def interior_radius(self):
        return self.L - self.cap_width - self.buffer


def grid_for(h: float, dim: int, L: float, xi_max: float = np.sqrt(2.0),
             order: int = 4, cap_width: float = 2.0, cap_strength: float = 1.0,
             buffer: float = 0.25, n_max: int | None = None) -> GridDomain:
    """Grid resolving semiclassical oscillations: dx <= h / (4 xi_max)."""
    dx_req = h / (4.0 * xi_max)
    n = int(np.ceil(2.0 * L / dx_req)) - 1
    n += n % 2
    if n_max is not None and n > n_max:
        raise PreconditionError(
            f"resolving h={h} at xi_max={xi_max} needs n={n} > cap {n_max}")
    return GridDomain(dim=dim, L=L, n=n, order=order, cap_width=cap_width,
                      cap_strength=cap_strength, buffer=buffer)


def laplacian(grid: GridDomain) -> sp.csr_matrix:
    """Dirichlet Laplacian (not scaled by -h^2) at the grid's stencil order."""
    coef, reach = _STENCILS[grid.order]
    offsets = range(-reach, reach + 1)
    one = sp.diags(coef, offsets, shape=(grid.n, grid.n), format="csr")
    one = one / grid.dx ** 2
    if grid.dim == 1:
        return one
    eye = sp.identity(grid.n, format="csr")
    return (sp.kron(one, eye) + sp.kron(eye, one)).tocsr()


@dataclass
class DiscretizedOperator:
    """A variant of the Helmholtz operator as a sparse matrix on the grid."""

    matrix: sp.csc_matrix
    grid: GridDomain
    h: float
    model: PotentialModel
    variant: str
    theta: float = 0.0
    has_cap: bool = True

    @property
    def size(self):
        return self.matrix.shape[0]

    def weight_vector(self, power: float):
        """<x>^power at the nodes (nodewise multiplier)."""
        return bracket_power(self.grid.points, power)

    def shifted(self, z: complex) -> sp.csc_matrix:
        return (self.matrix - z * sp.identity(self.size, format="csc",
                                              dtype=complex)).tocsc()


_VARIANTS = ("full", "dissipative", "compact-perturbed", "theta", "undamped")


def build_hamiltonian(model: PotentialModel, grid: GridDomain, h: float,
                      variant: str = "full",
                      split: DissipativeSplit | None = None,
                      theta: float = 0.0, use_cap: bool = True,
                      xi_max: float = np.sqrt(2.0)) -> DiscretizedOperator:
    """Assemble -h^2 Lap + V1 - i h V2 (variant-dependent) - i CAP.

    Variants: 'full' uses V2; 'dissipative' uses the splitting's W2 >= 0-ish
    part; 'compact-perturbed' uses W2 - W3 (the compactly supported W4 away
    from the dissipative part); 'theta' subtracts h theta <x>^(-1-rho) from
    the real part; 'undamped' drops V2.  Refuses under-resolved grids.
    """
    if variant not in _VARIANTS:
        raise PreconditionError(f"unknown variant '{variant}'")
    if grid.dim != model.dim:
        raise PreconditionError("grid and model dimensions differ")
    dx_req = h / (4.0 * xi_max)
    if grid.dx > dx_req * (1.0 + 1e-12):
        need = int(np.ceil(2.0 * grid.L / dx_req)) - 1
        raise PreconditionError(
            f"grid under-resolved: dx={grid.dx:.4g} > h/(4 xi_max)={dx_req:.4g}; "
            f"need n >= {need}")
    pts = grid.points
    v1 = model.v1(pts).astype(complex)
    if variant == "undamped":
        v2 = np.zeros(grid.size)
    elif variant == "full":
        v2 = model.v2(pts)
    elif variant in ("dissipative", "compact-perturbed"):
        if split is None:
            raise PreconditionError(f"variant '{variant}' needs a dissipative split")
        v2 = split.w2(pts) if variant == "dissipative" \
            else split.w2(pts) - split.w3(pts)
    elif variant == "theta":
        v2 = model.v2(pts)
        v1 = v1 - h * theta * bracket_power(pts, -1.0 - model.rho)
    diag = v1 - 1j * h * v2
    if use_cap:
        diag = diag - 1j * grid.cap_profile
    mat = (-h * h * laplacian(grid)).astype(complex) + sp.diags(diag)
    return DiscretizedOperator(matrix=mat.tocsc(), grid=grid, h=h, model=model,
                               variant=variant, theta=theta, has_cap=use_cap)


# ---------------------------------------------------------------------------
# Quantization


@dataclass(frozen=True)
class TestSymbol:
    """A phase-space observable with enough structure to quantize cheaply.

    kinds: 'position' q = fx(x); 'momentum' q = fxi(xi); 'separable'
    q = fx(x) fxi(xi); 'generic' q = fn(x, xi) (1D dense only); 'tensor'
    q = prod_axes fn_axis(x_a, xi_a) (2D, per-axis 1D Weyl factors).
    Support radii are metadata used for band/interior checks.
    """

    name: str
    kind: str
    dim: int
    fn: object = None
    fx: object = None
    fxi: object = None
    axis_fns: tuple = ()
    x_radius: float = np.inf
    xi_radius: float = np.inf

    def eval(self, x, xi):
        """Pointwise symbol value at (..., n) position/momentum arrays."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self.kind == "position":
            return self.fx(x)
        if self.kind == "momentum":
            return self.fxi(xi)
        if self.kind == "separable":
            return self.fx(x) * self.fxi(xi)
        if self.kind == "generic":
            return self.fn(x, xi)
        if self.kind == "tensor":
            out = 1.0
            for a, f in enumerate(self.axis_fns):
                out = out * f(x[..., a], xi[..., a])
            return out
        raise PreconditionError(f"unknown symbol kind '{self.kind}'")


def _xi_grid(grid: GridDomain, h: float):
    return h * grid.xi_axis


def _weyl_matrix_1d(qfn, axis, xi, n):
    """Dense Weyl matrix M[i,j] = (1/N) sum_k q((x_i+x_j)/2, xi_k) e^{2pi i k(i-j)/N}."""
    dx = axis[1] - axis[0]
    mids = axis[0] + 0.5 * dx * np.arange(2 * n - 1)
    Q = qfn(mids[:, None], xi[None, :])
    G = np.fft.ifft(Q, axis=1)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return G[ii + jj, (ii - jj) % n]


def _standard_matrix_1d(qfn, axis, xi, n):
    Q = qfn(axis[:, None], xi[None, :])
    B = np.fft.ifft(Q, axis=1)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return B[ii, (ii - jj) % n]


class PhaseSpaceOperator:
    """Quantization of a TestSymbol on a grid; applies matrix-free when it can."""

    def __init__(self, symbol: TestSymbol, grid: GridDomain, h: float,
                 scheme: str = "weyl"):
        if symbol.dim != grid.dim:
            raise PreconditionError("symbol and grid dimensions differ")
        self.symbol = symbol
        self.grid = grid
        self.h = h
        self.scheme = scheme
        self._mat = None
        xi = _xi_grid(grid, h)
        kind = symbol.kind
        if kind == "position":
            self._pos = symbol.fx(grid.points)
        elif kind == "momentum":
            self._mult = self._momentum_mult(symbol.fxi, xi)
        elif kind == "separable":
            self._pos = symbol.fx(grid.points)
            self._mult = self._momentum_mult(symbol.fxi, xi)
        elif kind == "generic":
            if grid.dim != 1:
                raise PreconditionError("generic symbols quantize densely in 1D only")
            build = _weyl_matrix_1d if scheme == "weyl" else _standard_matrix_1d

            def q1(xm, xim):
                return symbol.fn(xm[..., None], xim[..., None])

            self._mat = build(q1, grid.axis, xi, grid.n)
        elif kind == "tensor":
            if grid.dim != 2:
                raise PreconditionError("tensor symbols are for 2D grids")
            build = _weyl_matrix_1d if scheme == "weyl" else _standard_matrix_1d
            self._axis_mats = [build(f, grid.axis, xi, grid.n)
                               for f in symbol.axis_fns]
        else:
            raise PreconditionError(f"unknown symbol kind '{kind}'")

    def _momentum_mult(self, fxi, xi):
        if self.grid.dim == 1:
            return fxi(xi[:, None])
        g = np.meshgrid(*([xi] * self.grid.dim), indexing="ij")
        return fxi(np.stack(g, axis=-1))

    def _apply_momentum(self, u):
        shape = (self.grid.n,) * self.grid.dim
        U = np.fft.fftn(u.reshape(shape))
        return np.fft.ifftn(self._mult * U).reshape(-1)

    def apply(self, u):
        u = np.asarray(u, dtype=complex).reshape(-1)
        kind = self.symbol.kind
        if kind == "position":
            return self._pos * u
        if kind == "momentum":
            return self._apply_momentum(u)
        if kind == "separable":
            if self.scheme == "standard":
                return self._pos * self._apply_momentum(u)
            # Weyl of a product symbol: symmetrized composition, O(h^2) off.
            return 0.5 * (self._pos * self._apply_momentum(u)
                          + self._apply_momentum(self._pos * u))
        if kind == "generic":
            return self._mat @ u
        n = self.grid.n
        U = u.reshape(n, n)
        U = np.tensordot(self._axis_mats[0], U, axes=(1, 0))
        U = np.tensordot(U, self._axis_mats[1].T, axes=(1, 0))
        return U.reshape(-1)

    def to_matrix(self):
        if self._mat is not None:
            return self._mat
        N = self.grid.size
        if N > 4096:
            raise PreconditionError("dense assembly refused for this grid size")
        eye = np.eye(N, dtype=complex)
        cols = [self.apply(eye[:, k]) for k in range(N)]
        self._mat = np.stack(cols, axis=1)
        return self._mat

    def band_check(self, coverage: float = 0.8, tol: float = 1e-6) -> bool:
        """True when the symbol is negligible beyond 80% of the Nyquist band."""
        return self.symbol.xi_radius <= coverage * self.grid.xi_nyquist(self.h) + tol


def weyl_quantize(symbol: TestSymbol, grid: GridDomain, h: float) -> PhaseSpaceOperator:
    return PhaseSpaceOperator(symbol, grid, h, scheme="weyl")


def standard_quantize(symbol: TestSymbol, grid: GridDomain, h: float) -> PhaseSpaceOperator:
    return PhaseSpaceOperator(symbol, grid, h, scheme="standard")


def quadratic_observable(op, u, grid: GridDomain) -> complex:
    """<Op u, u> with the grid volume element; op may be an array, sparse
    matrix, or PhaseSpaceOperator."""
    u = np.asarray(u, dtype=complex).reshape(-1)
    if isinstance(op, PhaseSpaceOperator):
        v = op.apply(u)
    elif sp.issparse(op):
        v = op @ u
    else:
        v = np.asarray(op) @ u
    return complex(np.vdot(u, v) * grid.cell_volume)


def coherent_state(grid: GridDomain, h: float, x0, xi0) -> np.ndarray:
    """Normalized Gaussian wave packet centered at (x0, xi0)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    pts = grid.points
    d2 = np.sum((pts - x0) ** 2, axis=-1)
    phase = pts @ xi0
    u = (np.pi * h) ** (-grid.dim / 4.0) * np.exp(-d2 / (2.0 * h) + 1j * phase / h)
    u /= np.sqrt(np.sum(np.abs(u) ** 2) * grid.cell_volume)
    return u


def gaussian_symbol(name: str, dim: int, x0, xi0, x_width: float = 1.0,
                    xi_width: float = 1.0) -> TestSymbol:
    """Phase-space Gaussian bump, separable in (x, xi)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))

    def fx(x):
        return np.exp(-np.sum((x - x0) ** 2, axis=-1) / x_width ** 2)

    def fxi(xi):
        return np.exp(-np.sum((xi - xi0) ** 2, axis=-1) / xi_width ** 2)

    return TestSymbol(name=name, kind="separable", dim=dim, fx=fx, fxi=fxi,
                      x_radius=float(np.linalg.norm(x0) + 6 * x_width),
                      xi_radius=float(np.linalg.norm(xi0) + 6 * xi_width))
