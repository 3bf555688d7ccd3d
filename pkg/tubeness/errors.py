"""
errors.py - exception types raised by tubeness.

Library code logs and raises one of these; only the CLI turns them into exit codes.
"""


class TubenessError(Exception):
    """Base class for every error raised on purpose by this package."""


class VolumeFormatError(TubenessError):
    """Malformed header, short data, or unsupported on-disk datatype."""


class GridMismatchError(TubenessError):
    """Two grids (dims or spacing) that must agree do not."""


class SpacingError(TubenessError):
    """Filtering was asked to run on a non-isotropic volume."""


class ParameterError(TubenessError):
    """A filter, grid, or generator parameter is outside its valid range."""


class CalibrationError(TubenessError):
    """The ordered logit fit failed."""


class NonIdentifiableError(CalibrationError):
    """The calibration data cannot identify the model (e.g. a single class)."""


class PlacementError(TubenessError):
    """Phantom tubes could not be placed under the spacing constraints."""


class CaseError(TubenessError):
    """A cohort case failed to load or segment. The message names the case id."""


class StatsError(TubenessError):
    """Invalid input to a correlation statistic."""


class ConfigError(TubenessError):
    """Unknown key, malformed line, or out-of-bounds configuration value."""


class ModelFormatError(TubenessError):
    """A model file does not follow the line-oriented model format."""
