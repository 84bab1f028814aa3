from collections.abc import Mapping

import numpy as np

from dcsbm.exceptions import ConfigError
from dcsbm.fields import Field

__all__ = ("Base",)


class Base:
    """
    Configuration object that validates every declared Field on construction.

    Missing fields take their declared default (or None), unknown keys are
    rejected and all problems are reported together in one ConfigError.
    """

    def __init__(self, **kwargs):
        self._validate_kwargs(kwargs)

    @classmethod
    def get_fields(cls):
        result = {}

        # walk the MRO backwards so subclasses can override a parent's field
        for klass in reversed(cls.__mro__):
            for key, value in vars(klass).items():
                if isinstance(value, Field):
                    result[key] = value

        return result

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a plain mapping, e.g. one section of a YAML config file"""
        if mapping is None:
            mapping = {}

        if not isinstance(mapping, Mapping):
            raise ConfigError(
                "{name} expects a mapping, got {t}".format(
                    name=cls.__name__, t=type(mapping).__name__
                )
            )

        return cls(**{str(key).replace("-", "_"): value for key, value in mapping.items()})

    def as_dict(self):
        return {key: getattr(self, key) for key in self.get_fields()}

    def replace(self, **changes):
        values = self.as_dict()
        values.update(changes)
        return self.__class__(**values)

    def _validate_kwargs(self, kwargs):
        errors = {}
        valid_fields = self.get_fields()

        for key in kwargs:
            if key not in valid_fields:
                errors[key] = ConfigError("unexpected attribute {attr}".format(attr=key))

        for key, field in valid_fields.items():
            if key in kwargs and kwargs[key] is not None:
                value = kwargs[key]
            elif field.has_default():
                value = field.get_default()
            else:
                value = kwargs.get(key)

            try:
                prepared = field.prepare_for_validation(value)
                self.validate_field(field, key, prepared)
            except ConfigError as e:
                errors[key] = e
                continue

            # bypass the descriptor: the value has just been validated
            self.__dict__[key] = field.to_repr(prepared)

        if not errors:
            try:
                self.validate(self.as_dict())
            except AssertionError as e:
                errors["__all__"] = ConfigError(*e.args or ("validation failed",))
            except ConfigError as e:
                errors["__all__"] = e

        if errors:
            raise ConfigError(errors)

    def validate_field(self, field, field_name, value):
        """
        This is the initial Field validation, runs before validate, during the validation process.
        :param field: A dcsbm.fields.Field instance
        :param field_name: A string with the field name
        :param value: The value to validate
        :return: None
        :raises: dcsbm.exceptions.ConfigError
        """
        field._run_validators(value, field_name, self)

    def validate(self, attrs):
        """
        Override to do cross-field validation, runs after every field passed
        :param attrs: Mapping of attributes to validate
        :return: None
        """

    def __eq__(self, other):
        if not isinstance(other, self.__class__):
            return NotImplemented

        mine, theirs = self.as_dict(), other.as_dict()
        return all(_same(mine[key], theirs[key]) for key in mine)

    __hash__ = None

    def __repr__(self):
        values = ", ".join("{k}={v!r}".format(k=k, v=v) for k, v in self.as_dict().items())
        return "{name}({values})".format(name=self.__class__.__name__, values=values)


def _same(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return a is not None and b is not None and np.array_equal(a, b)
    return a == b
