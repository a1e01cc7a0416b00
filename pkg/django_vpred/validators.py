from django.core import validators
from django.core.exceptions import ValidationError
from django.utils.deconstruct import deconstructible
from django.utils.translation import gettext_lazy as _


@deconstructible
class OpenIntervalValidator:
    """Value must lie strictly inside (low, high)."""
    message = _("Ensure this value lies strictly between %(low)s and %(high)s.")
    code = 'open_interval'

    def __init__(self, low, high, message=None):
        self.low = low
        self.high = high
        if message is not None:
            self.message = message

    def __call__(self, value):
        if not self.low < value < self.high:
            raise ValidationError(
                self.message, code=self.code, params={'low': self.low, 'high': self.high, 'value': value}
            )

    def __eq__(self, other):
        return isinstance(other, OpenIntervalValidator) and (self.low, self.high) == (other.low, other.high)


open_unit_interval_validator = OpenIntervalValidator(0.0, 1.0)


def non_empty_validator(value):
    if not value:
        raise ValidationError(_("This list may not be empty."), code='empty')


positive_validator = validators.MinValueValidator(1)
non_negative_validator = validators.MinValueValidator(0.0)
