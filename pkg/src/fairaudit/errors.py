"""Exception hierarchy shared across the audit toolkit."""


class AuditError(Exception):
    """Base class for all toolkit errors."""


# -- tabular ------------------------------------------------------------

class UnknownColumn(AuditError):
    """A manifest or caller named a column that does not exist."""


class BadCell(AuditError):
    """A CSV cell could not be parsed under its declared role."""

    def __init__(self, message, column=None, row=None):
        super().__init__(message)
        self.column = column
        self.row = row


class RoleConflict(AuditError):
    """Column roles violate schema invariants (e.g. two label columns)."""


class BadColumn(AuditError):
    """A column exists but has the wrong role for the operation."""


class DegenerateSplit(AuditError):
    """A requested split would leave one side empty."""


class NoTimeColumn(AuditError):
    """Temporal operation on a dataset without a time column."""


# -- forest -------------------------------------------------------------

class BadConfig(AuditError):
    """Configuration violates its invariants."""


class EmptyTraining(AuditError):
    """No training rows (or no features) were supplied."""


class ArityMismatch(AuditError):
    """Prediction rows have a different feature count than the model."""


class EmptyScores(AuditError):
    """A threshold rule needs at least one score."""


class BadBand(AuditError):
    """Reject-option band is not 0 <= lo <= hi <= 1."""


# -- fairmetrics --------------------------------------------------------

class LengthMismatch(AuditError):
    """Paired arrays have different lengths."""


class Undefined(AuditError):
    """A metric is undefined for the given inputs (zero denominator)."""


class UnknownGroup(AuditError):
    """Named group is not a category of the group column."""


class TooFewCalibration(AuditError):
    """Not enough calibration rows for the requested alpha."""


class SplitOverlap(AuditError):
    """Calibration and evaluation rows overlap (leak guard)."""


# -- subgroups ----------------------------------------------------------

class BadAttribute(AuditError):
    """Attribute list for intersections is invalid."""


class TooFewRows(AuditError):
    """Not enough rows for the discovery/confirmation protocol."""


# -- drift --------------------------------------------------------------

class TooFewPeriods(AuditError):
    """The rolling protocol needs at least two time periods."""


class EmptyPeriod(AuditError):
    """A train window or evaluation period has no rows."""


# -- surrogate ----------------------------------------------------------

class EmptyAfterFilter(AuditError):
    """No rows remain once the surrogate row filter is applied."""


# -- synthlab -----------------------------------------------------------

class TooFewReplications(AuditError):
    """Monte-Carlo decomposition needs more replications."""


# -- plotting / cli -----------------------------------------------------

class EmptySpec(AuditError):
    """A plot specification contains no data."""
