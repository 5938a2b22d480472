"""Shared exception types.

The CLI maps these onto process exit codes: infeasible problem -> 1,
bad configuration -> 2, numerical failure -> 3.
"""


class ModruError(Exception):
    """Base class for all package errors."""


class ConfigError(ModruError):
    """Invalid or inconsistent configuration input."""


class InfeasibleError(ModruError):
    """Problem data admits no feasible solution."""


class NumericalError(ModruError):
    """Numerical computation failed or diverged."""


class EstimationError(NumericalError):
    """Parameter estimation failed (rank deficiency, divergence, ...)."""


class SimulationDivergence(NumericalError):
    """State left the plausible region during simulation."""


class PolicyIterationError(NumericalError):
    """Q-function policy iteration failed (excitation or stability loss)."""
