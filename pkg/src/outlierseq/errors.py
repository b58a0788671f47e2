"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class OutlierSeqError(Exception):
    """Base class for all package errors."""


class UnboundedRatio(OutlierSeqError):
    """The density ratio between two distributions has no finite positive bounds."""


class DivergenceInfinite(OutlierSeqError):
    """The KL divergence is infinite because the support condition fails."""


class SampleTooSmall(OutlierSeqError):
    """The sample cannot support the requested statistic."""


class ZeroMassCell(OutlierSeqError):
    """The reference distribution assigns zero mass to a partition cell."""


class InvalidLikelihood(OutlierSeqError):
    """A density evaluates to zero at an observed point."""


class InsufficientData(OutlierSeqError):
    """Too few usable rows to fit an exponent."""


class ConfigInvalid(OutlierSeqError):
    """A configuration value failed validation.

    ``field`` names the offending key so the CLI can print
    ``error: <field>: <reason>``.
    """

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


def with_index(exc: OutlierSeqError, index: int) -> OutlierSeqError:
    """Return a copy of ``exc`` whose message and ``index`` name the failing element."""
    if isinstance(exc, ConfigInvalid):
        new = ConfigInvalid(exc.field, f"[{index}] {exc.reason}")
    else:
        new = type(exc)(f"element {index}: {exc}")
    new.index = index
    return new
