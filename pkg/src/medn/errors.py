"""Exception types shared across the package."""


class MednError(Exception):
    """Base class for all package-specific errors."""


class UnknownLabel(MednError):
    """Raw emotion name not present in the requested task scheme."""


class DegenerateDataset(MednError):
    """Dataset cannot support the requested protocol (e.g. single subject)."""


class InfeasibleConfig(MednError):
    """Synthetic dataset request cannot be satisfied."""


class ShapeMismatch(MednError):
    """Tensor shape disagrees with the declared contract."""


class NonFiniteValues(MednError):
    """NaN or Inf encountered in data."""


class NonFiniteLoss(MednError):
    """A loss component became NaN/Inf during training."""


class IndivisibleGrid(MednError):
    """Sparsity rate does not divide the token grid."""


class EstimatorFailure(MednError):
    """Optical flow estimation failed for a frame."""


class EmptyFold(MednError):
    """A cross-validation fold has no train or test samples."""


class ConfigError(MednError):
    """Run configuration failed schema validation."""
