"""Transport-formula measures, pairing identities, and the Egorov check."""
import numpy as np
import pytest

from sclab.errors import PreconditionError
from sclab.flow import RegionSpec
from sclab.helmholtz import GaussianProfile, circle_source, point_source
from sclab.measure import (egorov_deviation, empirical_pairing, flow_measure,
                           liouville_residual, normalized_empirical_pairing,
                           propagation_check, reintersection_fraction,
                           sample_negamma, source_pairing, symbol_battery_2d)
from sclab.operator import (GridDomain, coherent_state, gaussian_symbol,
                            grid_for)
from sclab.potentials import GaussTerm, PotentialModel, free
from sclab.weights import radii

E = 1.0
PROFILE_2D = GaussianProfile(dim=2)


def test_negamma_point_totals():
    # 1D: two directions with counting measure
    s1 = sample_negamma(free(1), point_source(0.0, dim=1), E)
    assert np.isclose(s1.total_weight, 2.0, atol=1e-14)
    # 2D free: speed 1 circle of directions carries total 2 pi
    s2 = sample_negamma(free(2), point_source((0.0, 0.0)), E)
    assert np.isclose(s2.total_weight, 2.0 * np.pi, atol=1e-12)
    # a potential floor at the source slows the shell: total 2 pi sqrt(E-V1)
    slow = PotentialModel(dim=2, v1_terms=(GaussTerm(0.36, (0.0, 0.0),
                                                     (1.0, 1.0)),),
                          name="floor")
    s3 = sample_negamma(slow, point_source((0.0, 0.0)), E)
    assert np.isclose(s3.total_weight, 2.0 * np.pi * 0.8, atol=1e-12)


def test_negamma_circle_total():
    spec = circle_source(radius=1.0, n_nodes=96)
    s = sample_negamma(free(2), spec, E)
    # two normal directions, arc length 2 pi each
    assert np.isclose(s.total_weight, 4.0 * np.pi, atol=1e-12)
    # particles interleave the two normal signs per node
    shell_err, normal_err = s.constraint_errors(
        free(2), np.repeat(spec.tangents, 2, axis=0))
    assert shell_err < 1e-12 and normal_err < 1e-12


def test_negamma_rejects_subsonic_source():
    tall = PotentialModel(dim=2, v1_terms=(GaussTerm(2.0, (0.0, 0.0),
                                                     (1.0, 1.0)),),
                          name="tall")
    with pytest.raises(PreconditionError):
        sample_negamma(tall, point_source((0.0, 0.0)), E)


@pytest.fixture(scope="module")
def mu_free():
    sample = sample_negamma(free(2), point_source((0.0, 0.0)), E,
                            n_directions=256)
    return flow_measure(free(2), sample, PROFILE_2D, horizon=2.0, dt=1e-2)


def test_flow_measure_mass(mu_free):
    # no damping: d mu = dt x prefactor, so mass = T * sum(pref)
    pref_total = float(np.sum(mu_free.prefactor))
    assert np.isclose(mu_free.total_mass(), 2.0 * pref_total, rtol=1e-12)
    assert not mu_free.converged and mu_free.tail_mass == np.inf
    assert mu_free.energy_sup_error(free(2)) < 1e-12


def test_flow_measure_annulus_pairing(mu_free):
    # unit-speed particles cross the annulus a <= 2t <= b in time (b-a)/2
    a, b = 0.8, 1.4

    def q(x, xi):
        r = radii(x)
        return ((r >= a) & (r <= b)).astype(float)

    got = mu_free.pairing(q)
    want = float(np.sum(mu_free.prefactor)) * (b - a) / 2.0
    assert np.isclose(got, want, rtol=2e-2)
    spec = RegionSpec(R=a, d=0.0, sigma=0.0, sign="+")
    assert mu_free.region_mass(spec) > 0.0


def test_source_pairing_trivials(mu_free):
    assert source_pairing(mu_free, lambda x, xi: np.ones(x.shape[:-1])) == \
        pytest.approx(float(np.sum(mu_free.prefactor)))
    assert source_pairing(mu_free, lambda x, xi: np.zeros(x.shape[:-1])) == 0.0


def test_flow_measure_tail_bound():
    sample = sample_negamma(free(2), point_source((0.0, 0.0)), E,
                            n_directions=64)
    mu = flow_measure(free(2), sample, PROFILE_2D, horizon=2.0, dt=1e-2,
                      damping_constants=(0.4, 0.1))
    assert mu.converged
    assert np.isclose(mu.tail_mass,
                      float(np.sum(mu.prefactor))
                      * np.exp(0.2 - 2.0 * 0.4 * 2.0) / 0.8)
    with pytest.raises(PreconditionError):
        flow_measure(free(2), sample, PROFILE_2D, horizon=1e-4, dt=1e-2)


def test_liouville_residual_free(mu_free):
    battery = symbol_battery_2d(0.5, 1.9, 1.0)
    rep = liouville_residual(free(2), mu_free, battery[:2])
    assert rep.max_defect < 1e-8


def test_propagation_identity_free(mu_free):
    battery = symbol_battery_2d(0.5, 1.9, 1.0)
    rep = propagation_check(free(2), mu_free, 0.2, battery[:1])
    assert rep.max_defect < 1e-12
    # a uniform offset beta acts as a pure exponential factor
    q = battery[0]
    lhs_rep = propagation_check(free(2), mu_free, 0.2, [q], beta=0.3)
    ell = int(round(0.2 / mu_free.dt))
    lhs = float(np.sum(mu_free.weights[ell:] * q.eval(mu_free.x[ell:],
                                                      mu_free.xi[ell:])))
    assert np.isclose(lhs_rep.defects[q.name],
                      lhs * (1.0 - np.exp(-2.0 * 0.3 * 0.2)), rtol=1e-9)
    with pytest.raises(PreconditionError):
        propagation_check(free(2), mu_free, 0.03, [q])
    with pytest.raises(PreconditionError):
        propagation_check(free(2), mu_free, 10.0, [q])


def test_empirical_pairing_guards_and_normalization():
    h = 0.1
    g = grid_for(h, dim=1, L=6.0, cap_width=1.5)
    u = coherent_state(g, h, 0.0, 1.0)
    # keep the declared support radius inside the trusted interior
    q = gaussian_symbol("obs", 1, 0.0, 1.0, x_width=0.5, xi_width=0.8)
    raw = empirical_pairing(u, q, g, h)
    norm = normalized_empirical_pairing(u, q, g, h, manifold_dim=0, dim=1)
    assert np.isclose(norm, raw)          # h^{n+d-1} = 1 in 1D points
    norm2 = normalized_empirical_pairing(u, q, g, h, manifold_dim=1, dim=1)
    assert np.isclose(norm2, raw / h)
    wide = gaussian_symbol("wide", 1, 20.0, 1.0)
    with pytest.raises(PreconditionError):
        empirical_pairing(u, wide, g, h)
    fast = gaussian_symbol("fast", 1, 0.0, 50.0)
    with pytest.raises(PreconditionError):
        empirical_pairing(u, fast, g, h)


def test_symbol_battery_structure():
    battery = symbol_battery_2d(0.5, 1.9, 1.0)
    assert len(battery) == 12
    names = [q.name for q in battery]
    assert sum(n.startswith("annulus") for n in names) == 4
    assert sum(n.startswith("wedge") for n in names) == 4
    assert sum(n.startswith("shell") for n in names) == 4
    far_x = np.array([[2.5, 0.0]])
    on_shell = np.array([[1.0, 0.0]])
    for q in battery:
        assert q.x_radius <= 1.9 + 1e-12
        assert float(q.eval(far_x, on_shell)[0]) == 0.0
    wedge = battery[4]      # aligned with +x
    inside = float(wedge.eval(np.array([[1.0, 0.0]]), on_shell)[0])
    outside = float(wedge.eval(np.array([[-1.0, 0.0]]), on_shell)[0])
    assert inside == 1.0 and outside == 0.0


def test_reintersection_free():
    sample = sample_negamma(free(2), point_source((0.0, 0.0)), E,
                            n_directions=32)
    assert reintersection_fraction(free(2), sample, horizon=3.0) == 0.0


def test_egorov_small_grid():
    h = 0.2
    g = grid_for(h, dim=1, L=6.0, cap_width=1.5)
    model = free(1)

    def w2(x):
        return 0.8 * np.exp(-np.sum(x * x, axis=-1))

    def w2t(x):
        return 0.3 * np.exp(-np.sum((x - 0.5) ** 2, axis=-1))

    a = gaussian_symbol("obs", 1, 0.0, 1.0, x_width=1.0, xi_width=0.8)
    states = [coherent_state(g, h, 0.0, 1.0), coherent_state(g, h, -0.8, 0.9)]
    rec = egorov_deviation(model, w2, w2t, a, 0.4, g, h, states)
    assert rec.per_state.shape == (2,)
    assert rec.deviation < 0.05
    with pytest.raises(PreconditionError):
        g2 = GridDomain(dim=2, L=3.0, n=64, cap_width=1.0)
        egorov_deviation(model, w2, w2t, a, 0.4, g2, h, states)
