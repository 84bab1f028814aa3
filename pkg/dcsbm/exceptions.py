from typing import Any, Mapping

__all__ = (
    "DcsbmException",
    "ConfigError",
    "ParseError",
    "InvariantError",
    "DegenerateGraphError",
    "RejectionBudgetExceeded",
    "TimeLimitReached",
)


class DcsbmException(Exception):
    """Root of every error raised by dcsbm.

    ``data`` is a message, a list of errors or a mapping of field name to error;
    nested mappings are flattened into ``field.sub`` keys.
    """

    def _flatten(self, mapping: Mapping, prefix=""):
        flat = {}

        for key, value in mapping.items():
            name = "{prefix}{key}".format(prefix=prefix, key=key)

            if isinstance(value, Mapping):
                flat.update(self._flatten(value, prefix=name + "."))
            else:
                flat[name] = value

        return flat

    def __init__(self, data: Any):
        self.data = data

        if isinstance(data, Mapping):
            self.errors = self._flatten(data)
            message = "; ".join(
                "{k}: {v}".format(k=key, v=value) for key, value in self.errors.items()
            )
        elif isinstance(data, (list, tuple)):
            self.errors = list(data)
            message = "; ".join(str(error) for error in self.errors)
        else:
            self.errors = [data]
            message = str(data)

        super().__init__(message)


class ConfigError(DcsbmException):
    """A configuration object or CLI argument failed validation"""


class ParseError(DcsbmException):
    def __init__(self, message, line=None):
        self.line = line

        if line is not None:
            message = "line {line}: {message}".format(line=line, message=message)

        super().__init__(message)


class InvariantError(DcsbmException):
    """A data-model invariant does not hold"""


class DegenerateGraphError(DcsbmException):
    """The operation needs at least one edge (or one non-isolated pair)"""


class RejectionBudgetExceeded(DcsbmException):
    pass


class TimeLimitReached(DcsbmException):
    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)
