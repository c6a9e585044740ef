"""Exception hierarchy shared by every module."""


class XplimitError(Exception):
    """Base class for all library errors."""


class DomainError(XplimitError):
    """A point or region lies outside the input domain."""


class RangeError(XplimitError):
    """A parameter falls outside its declared quantizer range."""


class ConfigurationError(XplimitError):
    """Unknown family id, malformed spec, or missing required setting."""


class DistributionError(XplimitError):
    """Distribution has empty support or invalid weights."""


class ArgumentError(XplimitError, ValueError):
    """Invalid argument to a fitting routine."""


class ResourceError(XplimitError):
    """A configured resource cap (cells, codes) would be exceeded."""


class SingularityError(XplimitError):
    """Least-squares design matrix is rank deficient."""


class FitError(XplimitError):
    """Scaling fit is degenerate (too few points or no spread)."""


class AlignmentError(XplimitError):
    """Feasibility regions are not defined over comparable grids."""


class PurposeError(XplimitError):
    """A purpose's input subspace is empty on the evaluation set."""


class PropertyViolation(XplimitError):
    """A checked invariant failed; the message names the invariant."""
