"""Exception hierarchy shared across the toolkit.

Every module raises subclasses of :class:`MeritCurveError` so callers can
catch toolkit failures without blanket ``except Exception`` blocks.  Names
mirror the failure they signal, not the module that raises them.
"""


class MeritCurveError(Exception):
    """Base class for all toolkit errors."""


# --- data model / I/O ---------------------------------------------------

class MalformedRow(MeritCurveError):
    """A CSV row could not be parsed (bad column count or value)."""


class MonotonicityViolation(MeritCurveError):
    """Curve volumes break the side's monotonicity requirement."""


class EmptyHour(MeritCurveError):
    """An hourly curve has no points."""


class InvalidConfig(MeritCurveError):
    """A configuration object fails validation."""


class NonHourlySeries(MeritCurveError):
    """A timeseries is not hourly or has an impossible day length."""


class NegativeInput(MeritCurveError):
    """A quantity that must be nonnegative was negative."""


# --- parametric codec ---------------------------------------------------

class TooFewPoints(MeritCurveError):
    """Not enough curve points to interpolate."""


class EmptyPlateau(MeritCurveError):
    """The elastic window leaves no grid points for a plateau."""


class ZeroNormalizer(MeritCurveError):
    """nMAE normalizer (U+L)/2 is zero."""


class ZeroDenominator(MeritCurveError):
    """A ratio metric has a zero denominator."""


# --- feature pipeline / GBT ----------------------------------------------

class MisalignedSeries(MeritCurveError):
    """Feature inputs are not aligned on the same (day, hour) keys."""


class ConstantSeries(MeritCurveError):
    """A series is constant where ranks are required."""


class DegenerateTarget(MeritCurveError):
    """Training target is constant."""


class MissingFeature(MeritCurveError):
    """A prediction row does not cover the features a model splits on."""


# --- point process --------------------------------------------------------

class MissingHour(MeritCurveError):
    """A daily encoding is missing one of the 24 hourly curves."""


class DuplicateHour(MeritCurveError):
    """Two curves claim the same delivery hour."""


class OutOfRange(MeritCurveError):
    """A value lies outside its admissible range."""


class NoArrivals(MeritCurveError):
    """Intensity estimation received an empty arrival set."""


class ZeroIntensityOnArrival(MeritCurveError):
    """The intensity vanishs at an observed arrival."""


# --- diffusion -------------------------------------------------------------

class InvalidRange(MeritCurveError):
    """Noise-schedule parameters out of range."""


class DimMismatch(MeritCurveError):
    """Array dimensions do not agree."""


class NonFiniteLoss(MeritCurveError):
    """Training produced a non-finite loss."""


# --- storage ---------------------------------------------------------------

class NotDecreasing(MeritCurveError):
    """A net-demand function is not decreasing."""


class MissingObservation(MeritCurveError):
    """An observed price has no matching prediction."""


class FitFailure(MeritCurveError):
    """A single distribution family failed to fit."""


class AllFailed(MeritCurveError):
    """Every candidate distribution family failed to fit."""


class ZeroSlopeSum(MeritCurveError):
    """The price-form quantity has a zero slope-sum denominator."""


class BracketFailure(MeritCurveError):
    """Root bracketing failed for the interior first-order condition."""


# --- evaluation ---------------------------------------------------------

class BudgetExceeded(MeritCurveError):
    """An exact optimal-transport instance is too large; subsample first."""


class DegenerateVariance(MeritCurveError):
    """KDE input has zero variance in some dimension."""
