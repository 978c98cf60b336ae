"""Numerical laboratory for semiclassical Helmholtz operators.

The package studies (-h^2 Lap + V1 - i h V2 - z) u = f for small h, where the
absorption index V2 may change sign.  Modules:

- potentials: potential models, decay classes, dissipative splitting
- flow: the classical Hamiltonian flow, trapped sets, escape radii
- damping: damping integrals along the flow and escape functions
- operator: grids, discretized Hamiltonians, Weyl/standard quantization
- resolvent: weighted resolvent norms, spectral scans, region estimates
- helmholtz: sources, outgoing solutions, radiation diagnostics
- measure: phase-space measures of solutions and transport identities
- cli: scenario configs, orchestration, reports
"""

__version__ = "0.1.0"

from .errors import ConfigError, IntegrationError, ModelError, PreconditionError

__all__ = [
    "ConfigError",
    "IntegrationError",
    "ModelError",
    "PreconditionError",
    "__version__",
]
