"""Smooth cutoff profiles built from the exp(-1/s) mollifier.

All bump/step/plateau functions here are C^infinity with the recorded support
endpoints, vanish to infinite order at those endpoints, and are vectorized.
"""
from __future__ import annotations

import numpy as np


def _phi(s: np.ndarray) -> np.ndarray:
    """exp(-1/s) for s > 0, 0 otherwise."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C^inf step: 0 for s <= 0, 1 for s >= 1, strictly increasing between."""
    a = _phi(s)
    b = _phi(1.0 - np.asarray(s, dtype=float))
    return a / (a + b)


def step_on(s: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Smooth step rising from 0 at ``lo`` to 1 at ``hi``."""
    if not hi > lo:
        raise ValueError("step_on needs hi > lo")
    return smooth_step((np.asarray(s, dtype=float) - lo) / (hi - lo))


def plateau(s: np.ndarray, support: tuple[float, float],
            flat: tuple[float, float]) -> np.ndarray:
    """Smooth plateau: 1 on [flat0, flat1], 0 outside (support0, support1)."""
    s0, s1 = support
    f0, f1 = flat
    if not (s0 < f0 <= f1 < s1):
        raise ValueError("plateau needs support0 < flat0 <= flat1 < support1")
    return step_on(s, s0, f0) * (1.0 - step_on(s, f1, s1))


def radial_cutoff(r: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """chi(|x|): 1 for r <= inner, 0 for r >= outer, evaluated on radii."""
    if not outer > inner:
        raise ValueError("radial_cutoff needs outer > inner")
    return 1.0 - step_on(r, inner, outer)


def direction_partition(sigma: float):
    """Smooth partition (eta_plus, eta_minus) of the cosine axis.

    eta_plus is supported in (-sigma, +inf), eta_minus in (-inf, sigma), and
    eta_plus + eta_minus = 1 identically.  Used to split phase space into
    outgoing/incoming pieces by the angle cos(x, xi).
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError("direction_partition needs sigma in (0, 1)")

    def eta_plus(c):
        return step_on(c, -sigma, sigma)

    def eta_minus(c):
        return 1.0 - eta_plus(c)

    return eta_plus, eta_minus
