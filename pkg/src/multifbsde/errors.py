"""Exception taxonomy shared by all solver modules.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numerical divergence with 3.
"""


class MultiFbsdeError(Exception):
    """Base class for all package-specific errors."""


class ParameterDomainError(MultiFbsdeError, ValueError):
    """An argument lies outside its mathematical domain (h <= 0, M < 1, ...)."""


class GraphConstructionError(MultiFbsdeError, ValueError):
    """A tape operation received incompatible shapes or unknown node ids."""


class DivergenceError(MultiFbsdeError, RuntimeError):
    """A simulated state or ODE iterate became NaN/Inf.

    Carries enough context (step index, first offending sample) to locate
    the blow-up in a long run.
    """

    def __init__(self, message, step=None, sample=None):
        super().__init__(message)
        self.step = step
        self.sample = sample


class NumericalDomainError(MultiFbsdeError, RuntimeError):
    """A computed quantity left its valid domain (e.g. nonpositive PDE state)."""


class StabilityError(MultiFbsdeError, ValueError):
    """An explicit scheme was requested with a step size violating its CFL bound."""


class ConfigError(MultiFbsdeError, ValueError):
    """An experiment configuration file is malformed or contains unknown keys."""
