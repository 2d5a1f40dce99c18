"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto
its documented process exit statuses.
"""


class ForestShrinkError(Exception):
    exit_code = 1


class ConfigError(ForestShrinkError):
    exit_code = 2


class DataError(ForestShrinkError, ValueError):
    exit_code = 3


class NumericalError(ForestShrinkError, ArithmeticError):
    exit_code = 4


class ConvergenceError(NumericalError):
    pass


class MonotoneLikelihoodError(NumericalError):
    """Coefficients diverge because the likelihood has no finite maximum."""


class SamplerError(NumericalError):
    pass


class DegenerateSubgroupError(NumericalError):
    """A subgroup has no usable information (empty, or no events in an arm)."""
