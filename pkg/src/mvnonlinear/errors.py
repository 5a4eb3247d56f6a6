"""Exception hierarchy shared by every module.

Each class carries a stable ``code`` string that the command-line driver
prints on the diagnostic stream, and an exit status family.
"""

from __future__ import annotations


class MVError(Exception):
    """Base class for all library errors."""

    code = "error"
    exit_status = 2


class ValidationError(MVError, ValueError):
    """Bad input: configuration, domain, or invariant violation."""

    code = "validation"


class OutOfDomain(ValidationError):
    code = "out_of_domain"


class InvalidMarket(ValidationError):
    code = "invalid_market"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class InfeasibleTarget(ValidationError):
    """Target mean below the riskless growth of the initial wealth."""

    code = "infeasible_target"


class DegenerateSigma(ValidationError):
    code = "degenerate_sigma"


class NegativePremium(ValidationError):
    code = "negative_premium"


class DegenerateFrontier(ValidationError):
    """The long-side premium integrates to zero, so no finite frontier exists."""

    code = "degenerate_frontier"


class ShapeMismatch(ValidationError):
    code = "shape_mismatch"


class ConfigError(ValidationError):
    code = "config"


class NumericalError(MVError, ArithmeticError):
    """The computation itself broke down."""

    code = "numerical"
    exit_status = 3


class CflViolation(NumericalError):
    code = "cfl_violation"


class NonFiniteValue(NumericalError):
    code = "non_finite_value"


class NonFinitePath(NumericalError):
    code = "non_finite_path"

    def __init__(self, path_index, step):
        self.path_index = int(path_index)
        self.step = int(step)
        super().__init__(f"path {self.path_index} became non-finite at step {self.step}")
