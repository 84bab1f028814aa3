import math
from collections.abc import Callable, Iterable

from dcsbm.exceptions import ConfigError
from dcsbm.utils import get_callable_params

__all__ = (
    "Validator",
    "Type",
    "GreaterThan",
    "Between",
    "Function",
    "Ref",
)


class Validator:
    field_message = "{field_name}={value!r} failed {class_name}"
    generic_message = "{value!r} failed {class_name}"

    def validate(self, value, field_name=None, instance=None) -> bool:
        raise NotImplementedError

    def __call__(self, value, field_name=None, instance=None):
        if not self.validate(value, field_name, instance):
            raise self.error(value, field_name)

    def same_kind(self, other) -> bool:
        """Two validators of the same kind can't sit on one field."""
        return type(other) is type(self)

    def params(self, value):
        names = get_callable_params(self.__class__)
        params = {name: getattr(self, name, None) for name in names}
        params["class_name"] = self.__class__.__name__
        return params

    def template(self, field_name):
        return self.field_message if field_name else self.generic_message

    def error(self, value, field_name=None) -> ConfigError:
        params = self.params(value)
        params.update(value=value, field_name=field_name)
        return ConfigError(self.template(field_name).format(**params))


class Type(Validator):
    field_message = "{field_name}={value!r} is of type {actual}, expected {expected}"
    generic_message = "{value!r} is of type {actual}, expected {expected}"

    def __init__(self, types, exclude=()):
        # enum classes are iterable, so test for a single class first
        if isinstance(types, type) or not isinstance(types, Iterable):
            types = [types]

        self.types = tuple(type(None) if t is None else t for t in types)
        self.exclude = tuple(exclude)

        bad = [t for t in self.types if not isinstance(t, type)]
        if bad:
            raise ConfigError("Type expects classes, got {}".format(bad))

    def allowing_none(self):
        return Type(self.types + (type(None),), exclude=self.exclude)

    def validate(self, value, field_name=None, instance=None):
        return isinstance(value, self.types) and not isinstance(value, self.exclude)

    def params(self, value):
        params = super().params(value)
        params["actual"] = type(value).__name__
        params["expected"] = " or ".join(t.__name__ for t in self.types)
        return params


class GreaterThan(Validator):
    """``value > v``, or ``value >= v`` when inclusive; ``Field.min`` is the inclusive form."""

    def __init__(self, v, inclusive=False):
        if isinstance(v, float) and math.isnan(v):
            raise ConfigError("{} can't compare against nan".format(self.__class__.__name__))

        self.v = v
        self.inclusive = inclusive

    def same_kind(self, other):
        return super().same_kind(other) and other.inclusive == self.inclusive

    def template(self, field_name):
        relation = "at least" if self.inclusive else "greater than"
        prefix = "{field_name}={value}" if field_name else "{value}"
        return prefix + " must be " + relation + " {v}"

    def validate(self, value, field_name=None, instance=None):
        return value >= self.v if self.inclusive else value > self.v


class Between(Validator):
    field_message = "{field_name}={value} must lie in [{low}, {high}]"
    generic_message = "{value} is not in [{low}, {high}]"

    def __init__(self, low, high):
        if low > high:
            raise ConfigError("empty range [{}, {}]".format(low, high))

        self.low = low
        self.high = high

    def validate(self, value, field_name=None, instance=None):
        return self.low <= value <= self.high


class Function(Validator):
    """An arbitrary predicate with its own message; several may sit on one field."""

    def __init__(self, f, message):
        self.f = f
        self.message = message

    def same_kind(self, other):
        return super().same_kind(other) and other.f is self.f

    def template(self, field_name):
        return self.message

    def validate(self, value, field_name=None, instance=None):
        return bool(self.f(value))


class Ref(Validator):
    """
    Cross-field check ``expr(value, other)``, where ``other`` is the already
    validated value of ``field`` (a Field or its name) on the same instance.
    """

    def __init__(self, field, expr, message=None):
        if not isinstance(expr, Callable):
            raise ConfigError("Ref needs a callable, got {!r}".format(expr))

        self.field = field
        self.expr = expr
        self.message = message or "{} check failed".format(self.other_name)

    @property
    def other_name(self):
        return self.field if isinstance(self.field, str) else self.field.name

    def same_kind(self, other):
        return super().same_kind(other) and other.other_name == self.other_name and other.expr is self.expr

    def template(self, field_name):
        return self.message

    def validate(self, value, field_name=None, instance=None):
        if instance is None:
            raise ConfigError("Field.ref needs an instance to read {} from".format(self.other_name))

        if self.other_name not in instance.__dict__:
            raise ConfigError(
                "{}.{} has no valid value to compare against".format(instance.__class__.__name__, self.other_name)
            )

        other = instance.__dict__[self.other_name]
        return other is None or self.expr(value, other)
