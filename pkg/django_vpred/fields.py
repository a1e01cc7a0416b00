import json

from django import forms
from django.core import validators
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _


class DelimitedListField(forms.Field):
    """
    A list of ``base_field`` values, given either as a list (from a JSON
    config file) or as a delimited string such as ``"0,1,3,10"`` (from
    ``--set``). Each item is cleaned by ``base_field``.
    """
    default_error_messages = {
        'item_invalid': _("Item %(nth)s in the list did not validate:"),
        'invalid_json': _("Enter a valid JSON list."),
    }

    def __init__(self, base_field, *, delimiter=',', min_length=None, max_length=None, **kwargs):
        self.base_field = base_field
        self.delimiter = delimiter
        super().__init__(**kwargs)
        if min_length is not None:
            self.validators.append(validators.MinLengthValidator(int(min_length)))
        if max_length is not None:
            self.validators.append(validators.MaxLengthValidator(int(max_length)))

    def prepare_value(self, value):
        if isinstance(value, (list, tuple)):
            return self.delimiter.join(str(self.base_field.prepare_value(item)) for item in value)
        return value

    def to_python(self, value):
        if value in self.empty_values:
            return []
        if isinstance(value, str):
            value = value.strip()
            if value.startswith('['):
                try:
                    value = json.loads(value)
                except ValueError:
                    raise ValidationError(self.error_messages['invalid_json'], code='invalid_json')
            else:
                value = [item.strip() for item in value.split(self.delimiter)] if value else []
        elif not isinstance(value, (list, tuple)):
            value = [value]

        items, errors = [], []
        for index, item in enumerate(value):
            try:
                items.append(self.base_field.clean(item))
            except ValidationError as error:
                errors.append(ValidationError(
                    '%s %s' % (self.error_messages['item_invalid'] % {'nth': index + 1}, ' '.join(error.messages)),
                    code='item_invalid',
                ))
        if errors:
            raise ValidationError(errors)
        return items

    def validate(self, value):
        if self.required and not value:
            raise ValidationError(self.error_messages['required'], code='required')

    def run_validators(self, value):
        super().run_validators(value)
        for item in value:
            self.base_field.run_validators(item)


class FloatListField(DelimitedListField):
    def __init__(self, *, item_validators=(), **kwargs):
        super().__init__(forms.FloatField(validators=list(item_validators)), **kwargs)


class IntegerListField(DelimitedListField):
    def __init__(self, *, item_validators=(), **kwargs):
        super().__init__(forms.IntegerField(validators=list(item_validators)), **kwargs)


class ChoiceListField(DelimitedListField):
    def __init__(self, choices, **kwargs):
        super().__init__(forms.ChoiceField(choices=[(choice, choice) for choice in choices]), **kwargs)
