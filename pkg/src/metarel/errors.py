"""Exception types raised across the toolkit."""


class MetarelError(Exception):
    pass


class StructuralError(MetarelError, ValueError):
    """Shapes, layouts or sizes that do not line up."""


class NumericError(MetarelError, ArithmeticError):
    """A non-finite value where a finite one is required."""


class ConfigError(MetarelError, ValueError):
    """Invalid configuration or an unsatisfiable data requirement."""


class InputError(MetarelError, ValueError):
    """Malformed input data."""

    def __init__(self, message, line=None, instance_id=None):
        self.line = line
        self.instance_id = instance_id
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if instance_id is not None:
            prefix += f"instance {instance_id!r}: "
        super().__init__(prefix + message)
