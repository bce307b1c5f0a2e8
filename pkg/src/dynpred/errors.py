"""Exception hierarchy shared by every module."""


class DynpredError(Exception):
    pass


class ConfigurationError(DynpredError, ValueError):
    pass


class DimensionError(DynpredError, ValueError):
    pass


class SimulationDivergedError(DynpredError, RuntimeError):
    pass


class CheckFailedError(DynpredError, ArithmeticError):
    pass


class UndefinedPSNRError(DynpredError, ValueError):
    pass


class TrainingDivergedError(DynpredError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class LoadError(DynpredError, ValueError):
    pass


class BadMagicError(LoadError):
    pass


class UnsupportedVersionError(LoadError):
    pass


class TruncatedPayloadError(LoadError):
    pass


class NonFiniteDataError(LoadError):
    pass


class DigestMismatchError(LoadError):
    pass


class CSVParseError(DynpredError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
