"""Exception types shared across the package."""


class SelfContactError(Exception):
    """Base class for all package errors."""


class InsufficientData(SelfContactError):
    pass


class ThresholdUndefined(SelfContactError):
    pass


class ModelMismatch(SelfContactError):
    pass


class BehindCamera(SelfContactError):
    pass


class DegenerateAlignment(SelfContactError):
    pass


class ScriptInfeasible(SelfContactError):
    pass


class ConfigError(SelfContactError):
    pass


class InputError(SelfContactError):
    """Malformed or missing input file."""
