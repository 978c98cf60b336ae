"""Weighted resolvent norms, spectral scans, scaling fits, zone norms."""
import numpy as np
import pytest
import scipy.linalg as sla

from sclab.errors import PreconditionError
from sclab.flow import RegionSpec
from sclab.operator import build_hamiltonian, gaussian_symbol, grid_for
from sclab.potentials import double_bump, free, gauss_well_damping
from sclab.resolvent import (eigenvalue_free_scan, h_scaling_fit,
                             incoming_region_norm, weighted_resolvent_norm)

H_REF = 0.2


def _free_op(use_cap=True, L=3.0, cap_width=1.0):
    g = grid_for(H_REF, dim=1, L=L, cap_width=cap_width)
    return build_hamiltonian(free(1), g, H_REF, use_cap=use_cap)


def test_dense_and_sparse_paths_agree():
    op = _free_op()
    z = 1.0 + 0.1j
    dense = weighted_resolvent_norm(op, z, delta=1.0, method="dense")
    sparse = weighted_resolvent_norm(op, z, delta=1.0, method="sparse")
    assert dense.method == "dense" and sparse.method == "sparse"
    assert np.isclose(dense.value, sparse.value, rtol=1e-6)
    assert not dense.singular and not sparse.singular


def test_first_resolvent_identity():
    op = _free_op()
    z1, z2 = 1.0 + 0.05j, 0.8 + 0.02j
    A1 = op.shifted(z1).toarray()
    A2 = op.shifted(z2).toarray()
    R1 = sla.inv(A1)
    R2 = sla.inv(A2)
    lhs = R1 - R2
    rhs = (z1 - z2) * (R1 @ R2)
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)) < 1e-8


def test_resolvent_norm_is_spectral_distance_for_hermitian():
    op = _free_op(use_cap=False)
    lam = sla.eigvalsh(op.matrix.toarray().real)
    z = -1.0 + 0.0j
    res = weighted_resolvent_norm(op, z, delta=0.0, method="dense")
    assert np.isclose(res.value, 1.0 / np.min(np.abs(lam - z.real)), rtol=1e-8)
    # just off an eigenvalue the norm blows up like 1/eps
    near = weighted_resolvent_norm(op, complex(lam[3], 1e-10), delta=0.0,
                                   method="dense")
    assert near.value > 1e8


def test_weighting_contracts_norm():
    op = _free_op()
    z = 1.0 + 0.05j
    plain = weighted_resolvent_norm(op, z, delta=0.0, method="dense")
    weighted = weighted_resolvent_norm(op, z, delta=1.0, method="dense")
    assert weighted.value <= plain.value * (1.0 + 1e-12)


def test_h_scaling_fit_recovers_power_law():
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    fit = h_scaling_fit(hs, 3.7 * hs ** 2.5)
    assert np.isclose(fit.slope, 2.5, atol=1e-12)
    assert np.isclose(np.exp(fit.intercept), 3.7, rtol=1e-12)
    assert fit.max_residual < 1e-12
    with pytest.raises(PreconditionError):
        h_scaling_fit(hs, np.array([1.0, -1.0, 1.0, 1.0]))


def test_eigenvalue_free_scan_damped_dense():
    h = 0.2
    g = grid_for(h, dim=1, L=8.0, cap_width=2.5)
    model = double_bump(v2_terms=gauss_well_damping(0.8))
    op = build_hamiltonian(model, g, h)
    res = eigenvalue_free_scan(op, (0.9, 1.1), beta=1.0)
    assert res.threshold == h * 1.0
    assert res.passed
    assert res.offenders.size == 0
    if res.eigenvalues.size:
        assert np.all(res.eigenvalues.real >= 0.9 - 1e-12)
        assert np.all(res.eigenvalues.real <= 1.1 + 1e-12)
        assert np.all((res.interior_mass >= 0.0) & (res.interior_mass <= 1.0))


INNER = RegionSpec(R=2.8, d=0.2, sigma=-0.5, sign="-")
OUTER = RegionSpec(R=1.4, d=0.1, sigma=-0.25, sign="-")


def test_incoming_geometry_guards():
    g = grid_for(0.2, dim=1, L=8.0, cap_width=2.5)
    op = build_hamiltonian(free(1), g, 0.2)
    om_minus = gaussian_symbol("om_minus", 1, 4.4, -1.0, x_width=0.25,
                               xi_width=0.12)
    om_src = gaussian_symbol("om_src", 1, 0.8, 1.0, x_width=0.25,
                             xi_width=0.12)
    z = 1.0 + 0.002j
    wrong_inner = RegionSpec(R=10.0, d=0.2, sigma=-0.5, sign="-")
    with pytest.raises(PreconditionError):
        incoming_region_norm(op, z, om_minus, om_src, 1.0, wrong_inner,
                             OUTER, x_cap=5.5)
    with pytest.raises(PreconditionError):
        # a source aimed into the incoming zone must be rejected
        incoming_region_norm(op, z, om_minus,
                             gaussian_symbol("bad", 1, 4.4, -1.0,
                                             x_width=0.25, xi_width=0.12),
                             1.0, INNER, OUTER, x_cap=5.5)


def test_incoming_norm_positive_and_finite():
    h = 0.2
    g = grid_for(h, dim=1, L=8.0, cap_width=2.5)
    op = build_hamiltonian(free(1), g, h)
    om_minus = gaussian_symbol("om_minus", 1, 4.4, -1.0, x_width=0.25,
                               xi_width=0.12)
    om_src = gaussian_symbol("om_src", 1, 0.8, 1.0, x_width=0.25,
                             xi_width=0.12)
    inc = incoming_region_norm(op, complex(1.0, 0.01 * h), om_minus, om_src,
                               1.0, INNER, OUTER, x_cap=5.5)
    assert inc.geometry_ok
    assert 0.0 < inc.value < 1e3
