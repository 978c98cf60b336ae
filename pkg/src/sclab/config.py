"""Scenario configuration: schema, defaults table, and validation.

Configs are JSON with a ``schema_version`` field.  Validation is eager and
reports the dotted path of the offending entry through ConfigError, which
the command line maps to exit status 2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .potentials import (GaussTerm, PotentialModel, double_bump, free,
                         ring_model)

SCHEMA_VERSION = 1

COMMANDS = ("flow", "damping", "escape", "resolvent-scan", "eig-free",
            "incoming", "helmholtz", "measure-compare", "report")

# every physical default in one place
DEFAULTS = {
    "seed": 0,
    "energy.interval": (0.9, 1.1),
    "energy.shell": (0.5, 2.0),
    "energy.im_e1": 0.0,
    "grid.order": 4,
    "grid.cap_strength": 1.0,
    "grid.buffer": 0.25,
    "grid.xi_max": float(np.sqrt(2.0)),
    "grid.n_max": 4096,
    "regions.sigma": 0.5,
    "regions.delta": 1.0,
    "regions.beta": 1.0,
    "regions.R": 8.0,
    "regions.d": 0.2,
    "source.amplitude": 1.0,
    "source.profile_width": 1.0,
    "source.n_nodes": 128,
    "measure.horizon": 4.0,
    "measure.dt": 1e-3,
    "measure.n_directions": 256,
    "measure.fourier_convention": "plain",
    "solver.eps0": 1e-2,
    "solver.eps_factors": (1e-1, 1e-2, 1e-3),
}

_MISSING = object()


def _get(doc: dict, path: str, types, default=_MISSING, check=None,
         what: str = ""):
    node = doc
    parts = path.split(".")
    for p in parts[:-1]:
        node = node.get(p, {}) if isinstance(node, dict) else {}
    if not isinstance(node, dict) or parts[-1] not in node:
        if default is _MISSING:
            raise ConfigError(path, "missing required field")
        return DEFAULTS.get(path, default) if default is None else default
    val = node[parts[-1]]
    if types is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, types):
        tname = types.__name__ if isinstance(types, type) else \
            "/".join(t.__name__ for t in types)
        raise ConfigError(path, f"expected {tname}, got {type(val).__name__}")
    if check is not None and not check(val):
        raise ConfigError(path, what or "failed validation")
    return val


def _get_seq(doc, path, length=None, positive=False, default=_MISSING):
    val = _get(doc, path, (list, tuple), default=default)
    if not isinstance(val, (list, tuple)):
        return val
    out = []
    for i, v in enumerate(val):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}[{i}]", "expected a number")
        if positive and v <= 0:
            raise ConfigError(f"{path}[{i}]", "must be positive")
        out.append(float(v))
    if length is not None and len(out) != length:
        raise ConfigError(path, f"expected {length} entries, got {len(out)}")
    return tuple(out)


@dataclass(frozen=True)
class Scenario:
    """Validated scenario; raw carries the original document for hashing."""
    name: str
    seed: int
    family: str
    dim: int
    model_params: dict
    v2_terms: tuple
    rho: float
    E: float
    interval: tuple
    shell: tuple
    im_e1: float
    h_ladder: tuple
    grid_L: float
    grid_order: int
    cap_width: float
    cap_strength: float
    buffer: float
    xi_max: float
    n_max: int
    sigma: float
    delta: float
    beta: float
    region_R: float
    region_d: float
    source_kind: str
    source_center: tuple
    source_radius: float
    source_amplitude: float
    profile_width: float
    n_nodes: int
    horizon: float
    dt: float
    n_directions: int
    fourier_convention: str
    eps0: float
    eps_factors: tuple
    commands: tuple
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def build_model(self) -> PotentialModel:
        p = self.model_params
        v2 = self.v2_terms
        if self.family == "free":
            base = free(self.dim)
            return PotentialModel(dim=self.dim, v2_terms=v2, rho=self.rho,
                                  name=base.name)
        if self.family == "double_bump":
            return double_bump(amp=p.get("amp", 2.0), sep=p.get("sep", 2.0),
                               width=p.get("width", 1.0), v2_terms=v2,
                               rho=self.rho)
        if self.family == "ring":
            return ring_model(amp=p.get("amp", 2.0), r0=p.get("r0", 3.0),
                              v2_terms=v2, rho=self.rho)
        raise ConfigError("model.family", f"unknown family '{self.family}'")


def _parse_v2_terms(doc: dict, dim: int) -> tuple:
    raw = doc.get("model", {}).get("v2", [])
    if not isinstance(raw, list):
        raise ConfigError("model.v2", "expected a list of gaussian terms")
    terms = []
    for i, t in enumerate(raw):
        if not isinstance(t, dict):
            raise ConfigError(f"model.v2[{i}]", "expected an object")
        try:
            amp = float(t["amp"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"model.v2[{i}].amp", "missing or non-numeric")
        center = t.get("center", [0.0] * dim)
        if isinstance(center, (int, float)):
            center = [center]
        if len(center) != dim:
            raise ConfigError(f"model.v2[{i}].center",
                              f"expected {dim} coordinates")
        width = t.get("width", 1.0)
        widths = [width] * dim if isinstance(width, (int, float)) else width
        if len(widths) != dim:
            raise ConfigError(f"model.v2[{i}].width",
                              f"expected scalar or {dim} widths")
        terms.append(GaussTerm(amp, tuple(float(c) for c in center),
                               tuple(float(w) for w in widths)))
    return tuple(terms)


def validate(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config document must be an object")
    version = _get(doc, "schema_version", int)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version",
                          f"unsupported version {version} (want {SCHEMA_VERSION})")
    name = _get(doc, "name", str, default="scenario")
    seed = _get(doc, "seed", int, default=DEFAULTS["seed"],
                check=lambda s: s >= 0, what="must be >= 0")
    family = _get(doc, "model.family", str,
                  check=lambda f: f in ("free", "double_bump", "ring"),
                  what="unknown family (free | double_bump | ring)")
    dim = _get(doc, "model.dim", int, default=1 if family != "ring" else 2,
               check=lambda d: d in (1, 2), what="must be 1 or 2")
    if family == "double_bump" and dim != 1:
        raise ConfigError("model.dim", "double_bump is one-dimensional")
    if family == "ring" and dim != 2:
        raise ConfigError("model.dim", "ring lives in the plane")
    rho = _get(doc, "model.rho", float, default=2.0,
               check=lambda r: r > 0, what="must be positive")
    params = doc.get("model", {}).get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("model.params", "expected an object")
    v2_terms = _parse_v2_terms(doc, dim)

    E = _get(doc, "energy.E", float, check=lambda e: e > 0,
             what="must be positive")
    interval = _get_seq(doc, "energy.interval", length=2,
                        default=DEFAULTS["energy.interval"])
    if interval[0] >= interval[1]:
        raise ConfigError("energy.interval", "must be increasing")
    shell = _get_seq(doc, "energy.shell", length=2,
                     default=DEFAULTS["energy.shell"])
    if not (0 < shell[0] < shell[1]):
        raise ConfigError("energy.shell", "must be 0 < lo < hi")
    im_e1 = _get(doc, "energy.im_e1", float, default=DEFAULTS["energy.im_e1"],
                 check=lambda v: v >= 0, what="must be >= 0")

    ladder = _get_seq(doc, "h_ladder", positive=True)
    if len(ladder) < 1 or np.any(np.diff(ladder) >= 0):
        raise ConfigError("h_ladder", "must be a decreasing positive sequence")

    L = _get(doc, "grid.L", float, check=lambda v: v > 0,
             what="must be positive")
    cap_width = _get(doc, "grid.cap_width", float,
                     check=lambda v: v > 0, what="must be positive")
    if cap_width >= L:
        raise ConfigError("grid.cap_width", "must be smaller than grid.L")
    order = _get(doc, "grid.order", int, default=DEFAULTS["grid.order"],
                 check=lambda v: v in (2, 4), what="must be 2 or 4")
    cap_strength = _get(doc, "grid.cap_strength", float,
                        default=DEFAULTS["grid.cap_strength"],
                        check=lambda v: v > 0, what="must be positive")
    buffer = _get(doc, "grid.buffer", float, default=DEFAULTS["grid.buffer"],
                  check=lambda v: v >= 0, what="must be >= 0")
    xi_max = _get(doc, "grid.xi_max", float, default=DEFAULTS["grid.xi_max"],
                  check=lambda v: v > 0, what="must be positive")
    n_max = _get(doc, "grid.n_max", int, default=DEFAULTS["grid.n_max"],
                 check=lambda v: v >= 8, what="must be >= 8")

    sigma = _get(doc, "regions.sigma", float, default=DEFAULTS["regions.sigma"],
                 check=lambda v: 0 < v <= 1, what="must lie in (0, 1]")
    delta = _get(doc, "regions.delta", float, default=DEFAULTS["regions.delta"])
    if not (0.5 < delta < (1.0 + rho) / 2.0):
        raise ConfigError("regions.delta",
                          f"must lie in (1/2, (1+rho)/2) = (0.5, {(1 + rho) / 2})")
    beta = _get(doc, "regions.beta", float, default=DEFAULTS["regions.beta"],
                check=lambda v: v > 0, what="must be positive")
    region_R = _get(doc, "regions.R", float, default=DEFAULTS["regions.R"],
                    check=lambda v: v > 0, what="must be positive")
    region_d = _get(doc, "regions.d", float, default=DEFAULTS["regions.d"],
                    check=lambda v: v >= 0, what="must be >= 0")

    kind = _get(doc, "source.kind", str, default="point",
                check=lambda v: v in ("point", "circle"),
                what="must be 'point' or 'circle'")
    center = _get_seq(doc, "source.center", default=tuple([0.0] * dim))
    if len(center) != dim:
        raise ConfigError("source.center", f"expected {dim} coordinates")
    radius = _get(doc, "source.radius", float, default=1.0,
                  check=lambda v: v > 0, what="must be positive")
    amplitude = _get(doc, "source.amplitude", float,
                     default=DEFAULTS["source.amplitude"])
    pwidth = _get(doc, "source.profile_width", float,
                  default=DEFAULTS["source.profile_width"],
                  check=lambda v: v > 0, what="must be positive")
    n_nodes = _get(doc, "source.n_nodes", int,
                   default=DEFAULTS["source.n_nodes"],
                   check=lambda v: v >= 4, what="must be >= 4")

    horizon = _get(doc, "measure.horizon", float,
                   default=DEFAULTS["measure.horizon"],
                   check=lambda v: v > 0, what="must be positive")
    dt = _get(doc, "measure.dt", float, default=DEFAULTS["measure.dt"],
              check=lambda v: v > 0, what="must be positive")
    n_dirs = _get(doc, "measure.n_directions", int,
                  default=DEFAULTS["measure.n_directions"],
                  check=lambda v: v >= 8, what="must be >= 8")
    convention = _get(doc, "measure.fourier_convention", str,
                      default=DEFAULTS["measure.fourier_convention"],
                      check=lambda v: v in ("plain", "unitary"),
                      what="must be 'plain' or 'unitary'")

    eps0 = _get(doc, "solver.eps0", float, default=DEFAULTS["solver.eps0"],
                check=lambda v: v > 0, what="must be positive")
    eps_factors = _get_seq(doc, "solver.eps_factors", positive=True,
                           default=DEFAULTS["solver.eps_factors"])
    if len(eps_factors) < 3 or np.any(np.diff(eps_factors) >= 0):
        raise ConfigError("solver.eps_factors",
                          "must be a decreasing sequence of >= 3 factors")

    commands_raw = doc.get("commands", [])
    if not isinstance(commands_raw, list):
        raise ConfigError("commands", "expected a list")
    for i, c in enumerate(commands_raw):
        if c not in COMMANDS:
            raise ConfigError(f"commands[{i}]",
                              f"unknown command '{c}' (choices: {', '.join(COMMANDS)})")
    tolerances = doc.get("tolerances", {})
    if not isinstance(tolerances, dict):
        raise ConfigError("tolerances", "expected an object")

    return Scenario(name=name, seed=seed, family=family, dim=dim,
                    model_params=params, v2_terms=v2_terms, rho=rho, E=E,
                    interval=interval, shell=shell, im_e1=im_e1,
                    h_ladder=ladder, grid_L=L, grid_order=order,
                    cap_width=cap_width, cap_strength=cap_strength,
                    buffer=buffer, xi_max=xi_max, n_max=n_max, sigma=sigma,
                    delta=delta, beta=beta, region_R=region_R,
                    region_d=region_d, source_kind=kind,
                    source_center=center, source_radius=radius,
                    source_amplitude=amplitude, profile_width=pwidth,
                    n_nodes=n_nodes, horizon=horizon, dt=dt,
                    n_directions=n_dirs, fourier_convention=convention,
                    eps0=eps0, eps_factors=eps_factors,
                    commands=tuple(commands_raw), tolerances=tolerances,
                    raw=doc)


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"cannot read '{path}'")
    except json.JSONDecodeError as err:
        raise ConfigError("<file>", f"invalid JSON at line {err.lineno}: {err.msg}")
    return validate(doc)
