"""Exception types shared across the package."""


class GroupMatchError(Exception):
    """Base class for all errors raised by this package."""


class DataParseError(GroupMatchError):
    """A data file could not be parsed (bad cell, missing column, ...)."""


class ValidationError(GroupMatchError):
    """Structurally valid input that violates a contract (duplicate ids,
    too few groups, bad thresholds, ...)."""


class InfeasibleSubsetError(GroupMatchError):
    """A keep-vector violates feasibility (empty or under-floor group,
    removal from a locked group)."""


class UndefinedTestError(GroupMatchError):
    """A statistical test is undefined for the given samples (too few
    observations, degenerate variance).  Callers treat the offending
    configuration as infeasible rather than inventing a p-value."""


class RegistrationError(GroupMatchError):
    """Attempt to register a test under a name already taken."""


class BudgetExceededError(GroupMatchError):
    """A search hit its criterion-evaluation ceiling."""

    def __init__(self, message: str, evaluations: int | None = None):
        super().__init__(message)
        self.evaluations = evaluations


class GenerationError(GroupMatchError):
    """Synthetic data generation failed (invalid spec, or acceptance
    windows unattainable within the retry budget)."""


class ConfigError(GroupMatchError):
    """A run-configuration file is invalid (unknown keys, bad values)."""
