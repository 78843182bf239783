"""Exception hierarchy for the frailsim package."""
from __future__ import annotations


class FrailsimError(Exception):
    """Base class for all frailsim-specific errors."""


class DomainError(FrailsimError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class NumericError(FrailsimError, ArithmeticError):
    """A numerical routine failed to reach its accuracy or iteration target."""


class QuadratureError(NumericError):
    """An integration routine did not converge within its level or node budget."""


class EstimandError(NumericError):
    """An estimand or its standard error could not be computed from a fit."""


class FitSetupError(FrailsimError, ValueError):
    """The data cannot support the requested model (for example, no events)."""


class ConfigError(FrailsimError, ValueError):
    """A configuration file or command-line option is invalid."""


class DataError(FrailsimError, ValueError):
    """An input data file is malformed."""
