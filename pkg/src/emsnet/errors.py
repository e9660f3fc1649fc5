"""Exception hierarchy shared by every emsnet module."""


class EmsNetError(Exception):
    """Base class for all emsnet errors."""

    kind = "error"


class ShapeError(EmsNetError, ValueError):
    kind = "shape"


class ConfigError(EmsNetError, ValueError):
    kind = "config"


class DomainError(EmsNetError, ValueError):
    kind = "domain"


class NonFiniteError(EmsNetError, FloatingPointError):
    kind = "non_finite"


class GradStateError(EmsNetError, RuntimeError):
    kind = "grad_state"


class ContractError(EmsNetError, ValueError):
    kind = "contract"


class ParseError(EmsNetError, ValueError):
    kind = "parse"


class IntegrityError(EmsNetError, ValueError):
    kind = "integrity"


class DataError(EmsNetError, ValueError):
    kind = "data"


class CompatibilityError(EmsNetError, ValueError):
    kind = "compatibility"


class ThresholdError(EmsNetError, ValueError):
    kind = "threshold"


class LossError(EmsNetError, ValueError):
    kind = "loss"
