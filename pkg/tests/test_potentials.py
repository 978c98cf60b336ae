"""Potential models: values, derivatives, decay class, dissipative split."""
import numpy as np
import pytest

from conftest import fd_gradient
from sclab.errors import ModelError, PreconditionError
from sclab.potentials import (BracketPowerTerm, GaussTerm, PotentialModel,
                              double_bump, free, gauss_well_damping,
                              ring_model, split_dissipative,
                              verify_symbol_class)

# frozen oracle: V1(0) = 2 e^{-4} + 2 e^{-4} for bumps of height 2 at +-2
BUMP_AT_ORIGIN = 4.0 * np.exp(-4.0)


def test_double_bump_oracle_values(bump):
    x = np.array([[0.0], [2.0], [-2.0]])
    v = bump.v1(x)
    assert np.isclose(v[0], BUMP_AT_ORIGIN, rtol=1e-14)
    # at a bump center: own peak plus the far bump's tail
    assert np.isclose(v[1], 2.0 + 2.0 * np.exp(-16.0), rtol=1e-14)
    assert np.isclose(v[1], v[2], rtol=1e-14)
    assert bump.m_minus == 0.0
    assert not bump.is_free


def test_free_model(free_1d, free_2d):
    assert free_1d.is_free and free_2d.is_free
    pts = np.zeros((3, 2))
    assert np.all(free_2d.v1(pts) == 0.0)
    assert np.all(free_2d.v2(pts) == 0.0)
    assert np.allclose(free_2d.energy(pts, np.ones((3, 2))), 2.0)


def test_gradients_match_finite_differences(bump):
    rng = np.random.default_rng(7)
    x = rng.uniform(-3, 3, size=(40, 1))
    g = bump.grad_v1(x)
    g_fd = fd_gradient(bump.v1, x)
    assert np.max(np.abs(g - g_fd)) < 1e-8


def test_hessian_matches_finite_differences(bump):
    x = np.array([[0.3], [1.7], [-2.4]])
    hess = bump.hess_v1(x)
    eps = 1e-5
    for k, row in enumerate(x):
        xp, xm = row.copy() + eps, row.copy() - eps
        fd = (bump.grad_v1(xp[None, :]) - bump.grad_v1(xm[None, :])) / (2 * eps)
        assert np.allclose(hess[k], fd[0], atol=1e-7)


def test_ring_model_2d_gradients():
    model = ring_model(amp=1.5, r0=2.0)
    rng = np.random.default_rng(3)
    x = rng.uniform(-3, 3, size=(30, 2))
    g_fd = fd_gradient(model.v1, x)
    assert np.max(np.abs(model.grad_v1(x) - g_fd)) < 1e-7


def test_damping_terms_and_m_minus():
    m = double_bump(v2_terms=gauss_well_damping(0.8))
    assert m.m_minus == 0.0
    assert np.isclose(m.v2(np.zeros((1, 1)))[0], 0.8)
    sign_changing = double_bump(v2_terms=(GaussTerm(0.5, 0.0, 1.0),
                                          GaussTerm(-0.2, 3.0, 0.5)))
    assert np.isclose(sign_changing.m_minus, 0.2, rtol=1e-2)
    # at the well center only the other term's tail contributes a slope
    g = sign_changing.grad_v2(np.array([[3.0]]))
    assert np.isclose(g[0, 0], -3.0 * np.exp(-9.0), rtol=1e-12)
    well = GaussTerm(-0.2, 3.0, 0.5)
    assert well.grad(np.array([[3.0]]))[0, 0] == 0.0


def test_bracket_power_term_decay():
    t = BracketPowerTerm(2.0, -3.0)
    x = np.array([[0.0], [3.0]])
    assert np.allclose(t.value(x), [2.0, 2.0 * 2.0 ** -3.0])
    fd = fd_gradient(t.value, np.array([[1.5]]))
    assert np.isclose(t.grad(np.array([[1.5]]))[0, 0], fd[0, 0], atol=1e-8)


def test_symbol_class_report(bump):
    rep = verify_symbol_class(bump)
    assert rep.passed and rep.max_ratio < 1.0
    # shrinking a declared constant below the scanned sup must be caught
    table = dict(bump.c_alpha)
    table[("v1", 0)] *= 0.5
    rep_bad = verify_symbol_class(bump, c_alpha=table)
    assert not rep_bad.passed
    assert rep_bad.ratios[("v1", 0)] > 1.5
    # a slowly decaying V2 hides behind its own scan box; a wider box
    # exposes that the weighted derivative sup keeps growing
    slow = PotentialModel(dim=1, v2_terms=(BracketPowerTerm(1.0, -1.0),),
                          rho=2.0, name="slow")
    wide = verify_symbol_class(slow, box=4.0 * slow.scan_radius())
    assert not wide.passed


def test_dissipative_split_floor():
    from sclab.weights import bracket_power
    m = double_bump(v2_terms=(GaussTerm(0.5, 0.0, 1.0),
                              GaussTerm(-0.2, 3.0, 0.5)))
    split = split_dissipative(m, 1.0)
    assert split.C > 0.0
    pts = np.linspace(-12, 12, 600)[:, None]
    w2 = split.w2(pts)
    floor = split.C * bracket_power(pts, -1.0 - m.rho)
    # C is a sup over a finite scan grid, so allow off-grid slack
    assert np.min(w2 - floor) >= -1e-6
    # reassembly: V2 = W2 - W3 - W4
    v2_back = w2 - split.w3(pts) - split.w4(pts)
    assert np.allclose(v2_back, m.v2(pts), atol=1e-12)
    # the far tail W3 is small in the weighted sup sense
    tail = bracket_power(pts, 2.0 * split.delta) * np.abs(split.w3(pts))
    assert np.max(tail) <= split.bound_w3 + 1e-12


def test_dissipative_split_rejects_wrong_rho():
    slow = PotentialModel(dim=1, v2_terms=(BracketPowerTerm(-1.0, -1.0),),
                          rho=2.0, name="too-slow")
    with pytest.raises(ModelError):
        split_dissipative(slow, 1.0)
    with pytest.raises(PreconditionError):
        split_dissipative(free(1), 0.4)


def test_energy_shell():
    m = double_bump()
    x = np.array([[0.5]])
    xi = np.array([[1.2]])
    assert np.isclose(m.energy(x, xi)[0], 1.44 + m.v1(x)[0])
