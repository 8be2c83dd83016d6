"""Exception types raised across the package.

Everything inherits from :class:`ChainFitError` so callers (and the CLI)
can catch one base class.  Structural problems found by graph validation
are *data*, not exceptions -- see ``model.validate_graph`` -- except when
an operation requires a valid graph, in which case ``ValidationError``
wraps the report.
"""

from __future__ import annotations


class ChainFitError(Exception):
    """Base class for all errors raised by this package."""


class ZeroNormalizer(ChainFitError):
    """A component normalizer is zero for the requested parent configuration."""


class NonPositiveFactor(ChainFitError):
    """A rescaling factor was zero, negative, or not finite."""


class ImpossibleEvidence(ChainFitError):
    """Conditioning evidence has probability zero under the current model."""

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


class ZeroModelProbability(ChainFitError):
    """The model assigns zero probability where the divergence target is positive."""


class ZeroDenominator(ChainFitError):
    """An update denominator is zero where the target marginal is positive."""


class NonPositiveDenominator(ChainFitError):
    """A multiplier-shifted denominator is non-positive; the multiplier is out of range."""


class BracketFailure(ChainFitError):
    """Could not establish a sign-changing bracket for the multiplier search."""


class NonConvergence(ChainFitError):
    """An iterative solve exhausted its step budget without reaching tolerance."""


class UnsupportedRegime(ChainFitError):
    """The model/dataset pair fits neither conditional update regime."""


class NonSigmoidShape(ChainFitError):
    """The graph is not a two-layer pairwise network and cannot be read back as one."""


class LineSearchFailure(ChainFitError):
    """A line minimization failed; the optimizer falls back to backtracking."""


class SchemaError(ChainFitError):
    """A model or dataset file violates its documented schema."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        if loc:
            message = f"{', '.join(loc)}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class UnknownVariable(SchemaError):
    """A dataset column does not name a variable of the model space."""


class UnknownState(SchemaError):
    """A dataset cell does not name a state of its variable."""


class NonPositiveWeight(SchemaError):
    """A dataset record weight is zero or negative."""


class ValidationError(ChainFitError):
    """An operation that requires a valid graph received an invalid one."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
