import enum
import numbers
import typing
from typing import Generic, TypeVar

import numpy as np
from typing_extensions import Self

from dcsbm import validators
from dcsbm.exceptions import ConfigError

__all__ = ("Field", "Integer", "Float", "Flag", "Choice", "Of", "Vector")

T = TypeVar("T")

_MISSING = object()


class Field(Generic[T]):
    """
    A validated attribute of a configuration class.

        class ExactConfig(Base):
            time_limit = Float().min(0).default(60.0)
            trace = Of(str, Path).optional()

    Assignments run every check: ``None`` is accepted only after ``optional()``,
    the type check runs next, and the value checks added by the builder
    methods run last. A failed assignment leaves the old value in place.
    """

    of_type: typing.Any = None
    excluded_types: tuple = ()

    def __init__(self):
        if self.of_type is None:
            raise ConfigError("{} must declare of_type".format(self.__class__.__name__))

        self._name = None
        self._default = _MISSING
        self._nullable = False
        self._checks: typing.List[validators.Validator] = []

    def __set_name__(self, owner, name):
        self._name = name

    @property
    def name(self):
        return self._name

    def type_check(self) -> validators.Validator:
        return validators.Type(self.of_type, exclude=self.excluded_types)

    def _add_check(self, check: validators.Validator) -> Self:
        if any(existing.same_kind(check) for existing in self._checks):
            raise ConfigError("{} is already set on this field".format(check.__class__.__name__))

        self._checks.append(check)
        return self

    def _run_validators(self, value, field_name=None, instance=None):
        if value is None:
            if self._nullable:
                return
            raise ConfigError("{} is required".format(field_name) if field_name else "a value is required")

        # value checks assume a well-typed value
        self.type_check()(value, field_name, instance)

        errors = []
        for check in self._checks:
            try:
                check(value, field_name, instance)
            except ConfigError as e:
                errors.append(e)

        if errors:
            raise ConfigError(errors)

    def has_default(self):
        return self._default is not _MISSING

    def get_default(self):
        return self._default() if callable(self._default) else self._default

    def prepare_for_validation(self, v: typing.Any):
        return v

    def to_repr(self, v) -> T:
        return v

    def validate(self, value) -> T:
        """Check ``value`` outside any instance and return its stored form."""
        prepared = self.prepare_for_validation(value)
        self._run_validators(prepared)
        return self.to_repr(prepared)

    def optional(self) -> Self:
        if self._nullable:
            raise ConfigError("optional() is already set on this field")

        self._nullable = True
        return self

    def required(self) -> Self:
        self._nullable = False
        return self

    def default(self, value) -> Self:
        self._default = value
        return self

    def function(self, f, message) -> Self:
        return self._add_check(validators.Function(f, message))

    def ref(self, field, expr, message=None) -> Self:
        return self._add_check(validators.Ref(field, expr, message))

    def __set__(self, instance, value) -> None:
        prepared = self.prepare_for_validation(value)
        self._run_validators(prepared, self._name, instance)
        instance.__dict__[self._name] = self.to_repr(prepared)

    def __get__(self, instance, owner) -> T:
        if instance is None:
            return self
        return instance.__dict__[self._name]


class _Numeric(Field[T]):
    excluded_types = (bool, np.bool_)

    def min(self, value) -> Self:
        return self._add_check(validators.GreaterThan(value, inclusive=True))

    def positive(self) -> Self:
        return self._add_check(validators.GreaterThan(0))

    def between(self, low, high) -> Self:
        return self._add_check(validators.Between(low, high))


class Integer(_Numeric[int]):
    of_type = (int, np.integer)

    def to_repr(self, v) -> int:
        return None if v is None else int(v)


class Float(_Numeric[float]):
    of_type = numbers.Real

    def to_repr(self, v) -> float:
        return None if v is None else float(v)


class Flag(Field[bool]):
    of_type = (bool, np.bool_)

    def to_repr(self, v) -> bool:
        return None if v is None else bool(v)


class Choice(Field[enum.Enum]):
    """A member of ``enum_type``; the member's value (e.g. from a CLI flag or YAML) is accepted too."""

    of_type = enum.Enum

    def __init__(self, enum_type):
        self.enum_type = enum_type
        super().__init__()

    def type_check(self):
        return validators.Type(self.enum_type)

    def prepare_for_validation(self, v):
        if v is None or isinstance(v, self.enum_type):
            return v

        try:
            return self.enum_type(v)
        except ValueError:
            return v


class Of(Field[T]):
    of_type = object

    def __init__(self, *classes):
        self.classes = classes
        super().__init__()

    def type_check(self):
        return validators.Type(self.classes)


class Vector(Field[np.ndarray]):
    """A one-dimensional sequence of reals, stored as a read-only float array."""

    of_type = np.ndarray

    def prepare_for_validation(self, v):
        if isinstance(v, (list, tuple, np.ndarray)):
            try:
                array = np.asarray(v, dtype=float)
            except (TypeError, ValueError):
                return v
            if array.ndim == 1:
                return array
        return v

    def to_repr(self, v):
        if v is None:
            return None
        array = np.array(v, dtype=float)
        array.setflags(write=False)
        return array

    def positive(self) -> Self:
        return self._add_check(
            validators.Function(lambda values: bool(np.all(values > 0)), "every entry must be strictly positive")
        )
