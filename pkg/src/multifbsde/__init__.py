"""Deep multi-FBSDE solver with independent reference oracles.

Solves coupled forward-backward SDE systems by terminal-condition
matching, both in the classical joint (y0, networks) form and in the
robust two-phase form that trains on a family of drift-shifted systems
sharing the same PDE.  Reference solvers (Riccati ODE, exponential-
transform Monte Carlo, 2-D finite differences) make the numerical results
checkable end to end.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DivergenceError, GraphConstructionError,
                     MultiFbsdeError, NumericalDomainError, ParameterDomainError,
                     StabilityError)

__all__ = [
    "ConfigError",
    "DivergenceError",
    "GraphConstructionError",
    "MultiFbsdeError",
    "NumericalDomainError",
    "ParameterDomainError",
    "StabilityError",
    "__version__",
]
