"""Spatial weights and weighted norms.

The bracket convention is <x> = (1 + |x|)^(1/2) everywhere in this package,
so <x>^p = (1 + |x|)^(p/2).  Weighted L^2 spaces follow the matching usage:
the L^{2,s} norm multiplies |u| by <x>^(2s) = (1 + |x|)^s before integrating.
"""
from __future__ import annotations

import numpy as np


def radii(x: np.ndarray) -> np.ndarray:
    """Euclidean norm along the last axis; scalars pass through as |x|."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.abs(x)
    return np.sqrt(np.sum(x * x, axis=-1))


def bracket(x: np.ndarray) -> np.ndarray:
    """Japanese bracket <x> = (1 + |x|)^(1/2) of points with shape (..., n)."""
    return np.sqrt(1.0 + radii(x))


def bracket_power(x: np.ndarray, power: float) -> np.ndarray:
    """<x>^power = (1 + |x|)^(power/2)."""
    return (1.0 + radii(x)) ** (0.5 * power)


def bracket_of_radius(r: np.ndarray, power: float = 1.0) -> np.ndarray:
    """<x>^power evaluated directly from the radius r = |x| >= 0."""
    return (1.0 + np.asarray(r, dtype=float)) ** (0.5 * power)


def l2s_norm(u: np.ndarray, points: np.ndarray, s: float, cell_volume: float,
             mask: np.ndarray | None = None) -> float:
    """Grid L^{2,s} norm: || (1+|x|)^s u ||_{L^2}, restricted to ``mask``.

    ``points`` holds the grid nodes with shape (m, n) (or (m,) in 1D) matching
    the flattened field ``u``; ``cell_volume`` is dx^n.
    """
    u = np.asarray(u).reshape(-1)
    w = bracket_power(points, 2.0 * s).reshape(-1)
    dens = (np.abs(u) * w) ** 2
    if mask is not None:
        dens = dens[np.asarray(mask).reshape(-1)]
    return float(np.sqrt(dens.sum() * cell_volume))
