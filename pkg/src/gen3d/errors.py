"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated a documented precondition or invariant."""


class EvaluationError(RuntimeError):
    """A numeric evaluation produced a non-finite value."""


class DegenerateGradientError(RuntimeError):
    """Spatial gradient too small to define a surface normal."""


class DatasetError(ValueError):
    """A dataset manifest failed validation."""


class ConfigError(ValueError):
    """A run-config file failed to parse."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; diagnostics were dumped."""
