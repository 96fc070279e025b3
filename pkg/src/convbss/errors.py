"""Exception types shared across the package."""

import numpy as np


class SingularMatrixError(np.linalg.LinAlgError):
    """A demixing matrix (or a truncation of one) has no finite log-determinant."""


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


class ConfigError(ValueError):
    """Invalid processing or experiment configuration."""


class UnsupportedScenarioError(ValueError):
    """The requested operation is only defined for another scenario size."""
