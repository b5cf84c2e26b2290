"""
Domain Exceptions

Every error the mapping engine raises derives from MappingError so the CLI
can report it in one place.
"""


class MappingError(Exception):
    """Base class for all mapping engine errors."""


# ============================================
# CONFIGURATION & INPUT
# ============================================

class ConfigError(MappingError):
    """Hyperparameters or run configuration are invalid."""


class InvalidPoint(MappingError):
    """A point has a NaN or infinite coordinate."""


class InvalidDepth(MappingError):
    """A depth value is zero, negative or not finite."""


# ============================================
# MIXTURE MODEL
# ============================================

class ImmatureComponent(MappingError):
    """Component has fewer than two points, so its sample covariance is undefined."""


class SingularComponent(MappingError):
    """Component covariance is not positive definite even after regularization."""


class EmptyMap(MappingError):
    """The map holds no component with positive weight."""


# ============================================
# DATA & EVALUATION
# ============================================

class DatasetError(MappingError):
    """Dataset is missing, empty or unreadable as a whole."""


class ExportError(MappingError):
    """Writing an output artifact failed."""


class EvalError(MappingError):
    """Evaluation inputs are unusable (for example an empty reference)."""


class MapFormatError(MappingError):
    """A saved map file has a bad header or is truncated."""
