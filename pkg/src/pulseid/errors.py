"""Exception taxonomy shared across the toolkit."""


class PulseIdError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(PulseIdError):
    """Operands have incompatible shapes."""


class ConfigError(PulseIdError):
    """A configuration value is invalid (bad kernel size, band, counts...)."""


class ContractError(PulseIdError):
    """A caller violated an API precondition."""


class NumericError(PulseIdError):
    """A computation produced NaN or Inf."""


class FormatError(PulseIdError):
    """A binary or text artifact does not match its declared format."""


class IngestError(PulseIdError):
    """Dataset loading or validation failed."""


class DeidError(PulseIdError):
    """De-identification precondition violated."""


class DspError(PulseIdError):
    """Signal too short, degenerate, or otherwise unusable."""


class ModelError(PulseIdError):
    """Model input does not match the architecture contract."""


class EvalError(PulseIdError):
    """Evaluation protocol violated (empty score side, bad split...)."""
