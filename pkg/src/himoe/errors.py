"""Exception types shared across the package."""


class HiMoEError(Exception):
    pass


class DimensionError(HiMoEError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(HiMoEError):
    """A caller broke an operation's precondition."""


class ConfigError(HiMoEError, ValueError):
    pass


class FormatError(HiMoEError, ValueError):
    """On-disk dataset or checkpoint does not match its declared layout."""


class TrainingDiverged(HiMoEError, RuntimeError):
    pass
