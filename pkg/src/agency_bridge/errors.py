"""Exception types raised by the workbench."""

from __future__ import annotations


class AgencyError(ValueError):
    """Base class for all domain errors."""


class AbsoluteContinuityViolation(AgencyError):
    """A divergence is undefined because the reference puts zero mass where the
    argument does not (the divergence is +inf)."""


class DegenerateNormalizer(AgencyError):
    """A Gibbs normalizer collapsed to zero or became non-finite."""


class DomainError(AgencyError):
    """A utility was applied outside its domain."""


class DegenerateLottery(AgencyError):
    """A lottery with a single certain outcome cannot be classified."""


class ZeroEvidence(AgencyError):
    """An observation has zero probability under the predicted belief."""


class ConstantUtility(AgencyError):
    """Utilities are constant on the prior support, so no inverse temperature is
    identified by a KL budget."""


class ParseError(AgencyError):
    """A model file could not be parsed."""


class ValidationError(AgencyError):
    """A model violates one or more invariants.

    ``report`` holds the list of :class:`~agency_bridge.models.Violation`.
    """

    def __init__(self, message: str, report=()):
        super().__init__(message)
        self.report = list(report)


class InvalidDistribution(AgencyError):
    """A probability vector is negative, non-finite, empty, or does not sum to 1."""
