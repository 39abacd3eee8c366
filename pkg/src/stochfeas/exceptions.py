"""Exception hierarchy shared across the package.

The command line maps these onto exit codes: configuration rejections exit
with 2, numeric failures with 3, invariant breaches with 4.
"""


class UsageError(ValueError):
    """A caller violated a documented precondition (bad shapes, bad ranges)."""


class ConfigurationError(UsageError):
    """A run configuration violates a hypothesis of the target method.

    The message names the violated condition, e.g. "nu in ]2/3, 1] violated".
    """


class DegenerateConstraintError(UsageError):
    """A constraint reported f(x) > 0 together with a zero subgradient."""


class NumericError(RuntimeError):
    """A run produced non-finite values or exceeded the divergence guard."""


class InvariantViolationError(RuntimeError):
    """An internal consistency check failed (e.g. extrapolation below 1)."""


class ReferenceSolutionError(RuntimeError):
    """An extended run failed to reach the residual threshold for x_inf."""
