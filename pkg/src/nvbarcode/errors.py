"""Exception hierarchy shared by all modules."""


class NVBarcodeError(Exception):
    """Base class for every error raised by the package."""


class InvalidDiscretizationError(NVBarcodeError, ValueError):
    pass


class SingularEvaluationError(NVBarcodeError, ValueError):
    pass


class OVFFormatError(NVBarcodeError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IncompleteMaterialError(NVBarcodeError, ValueError):
    pass


class ExpansionDomainError(NVBarcodeError, ValueError):
    pass


class UnderdeterminedError(NVBarcodeError, ValueError):
    pass


class GeometryError(NVBarcodeError, ValueError):
    pass


class ConfigurationError(NVBarcodeError, ValueError):
    pass


class FitFailureError(NVBarcodeError, RuntimeError):
    pass


class DegenerateTemplateError(NVBarcodeError, ValueError):
    pass


class ConfigError(NVBarcodeError, ValueError):
    """Raised by the config loader; carries the offending key and line."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
