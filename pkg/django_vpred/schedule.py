"""
Discrete noise schedules in alpha-bar and angular form.

Step 0 is clean data and step T is (almost) pure noise. The angular form puts
every noised state on the unit circle of the x-eps plane:

    cos(phi_t) = sqrt(alpha_bar_t),  sin(phi_t) = sqrt(1 - alpha_bar_t)

Schedules are precomputed, read-only tables.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .conf import vpred_settings
from .exceptions import ScheduleError, ShapeMismatchError, StepRangeError

logger = logging.getLogger(__name__)

COSINE = 'cosine'
LINEAR = 'linear'
KINDS = (COSINE, LINEAR)

UNIFORM_T = 'uniform-t'
UNIFORM_PHI = 'uniform-phi'
SPACINGS = (UNIFORM_T, UNIFORM_PHI)


def _readonly(array):
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Schedule:
    kind: str
    T: int
    alpha_bar: np.ndarray
    cos_phi: np.ndarray = field(init=False, repr=False)
    sin_phi: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        alpha_bar = _readonly(self.alpha_bar)
        if alpha_bar.shape != (self.T + 1,):
            raise ScheduleError('alpha_bar must have T + 1 = %d entries, got %d' % (self.T + 1, alpha_bar.size))
        if alpha_bar[0] != 1.0:
            raise ScheduleError('alpha_bar[0] must be exactly 1')
        if np.any(alpha_bar < 0.0) or np.any(alpha_bar > 1.0):
            raise ScheduleError('alpha_bar must lie in [0, 1]')
        if np.any(np.diff(alpha_bar) >= 0.0):
            raise ScheduleError('alpha_bar must be strictly decreasing')
        object.__setattr__(self, 'alpha_bar', alpha_bar)
        object.__setattr__(self, 'cos_phi', _readonly(np.sqrt(alpha_bar)))
        object.__setattr__(self, 'sin_phi', _readonly(np.sqrt(1.0 - alpha_bar)))
        object.__setattr__(self, 'phi', _readonly(np.arccos(np.sqrt(alpha_bar))))

    def check_step(self, t):
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer) or np.any(t < 0) or np.any(t > self.T):
            raise StepRangeError(t.tolist(), self.T)
        return t

    def to_dict(self):
        return {
            'kind': self.kind,
            'T': self.T,
            'alpha_bar': [float(value) for value in self.alpha_bar],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(kind=data['kind'], T=int(data['T']), alpha_bar=data['alpha_bar'])


def make_schedule(kind=None, T=None, floor=None):
    kind = kind or vpred_settings.SCHEDULE_KIND
    T = vpred_settings.NUM_STEPS if T is None else T
    floor = vpred_settings.ALPHA_BAR_FLOOR if floor is None else floor

    if int(T) != T or T < 1:
        raise ScheduleError('A schedule needs at least one step, got T=%r' % (T,))
    T = int(T)

    # Extended precision for the table itself, stored at float64
    t = np.arange(T + 1, dtype=np.longdouble)
    if kind == COSINE:
        half_pi = np.arctan(np.longdouble(1)) * 2
        alpha_bar = np.cos(t / T * half_pi) ** 2
    elif kind == LINEAR:
        alpha_bar = 1 - t / T
    else:
        raise ScheduleError('Unknown schedule kind %r, expected one of %s' % (kind, ', '.join(KINDS)))

    alpha_bar = np.maximum(alpha_bar.astype(np.float64), floor)
    alpha_bar[0] = 1.0
    logger.debug('Built %s schedule with T=%d, alpha_bar[T]=%g', kind, T, alpha_bar[-1])
    return Schedule(kind=kind, T=T, alpha_bar=alpha_bar)


def column(coef, x):
    """Line per-step coefficients up with the leading (batch) axis of x."""
    if np.ndim(coef) == 0:
        return coef
    coef = np.asarray(coef)
    return coef.reshape(coef.shape + (1,) * (np.ndim(x) - coef.ndim))


def _along_batch(table, t, x):
    return column(table[t], x)


def phase_of(s, t):
    t = s.check_step(t)
    return s.phi[t]


def forward_diffuse(s, t, x, eps):
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise ShapeMismatchError('x has shape %s but eps has shape %s' % (x.shape, eps.shape))
    t = s.check_step(t)
    return _along_batch(s.cos_phi, t, x) * x + _along_batch(s.sin_phi, t, x) * eps


def make_step_list(s, num_steps, spacing=UNIFORM_T):
    """Strictly decreasing steps from T down to 0."""
    if num_steps < 1:
        raise ScheduleError('num_steps must be at least 1')
    num_steps = min(int(num_steps), s.T)
    if spacing == UNIFORM_T:
        steps = np.rint(np.linspace(s.T, 0, num_steps + 1)).astype(np.int64)
    elif spacing == UNIFORM_PHI:
        targets = np.linspace(s.phi[-1], 0.0, num_steps + 1)
        steps = np.searchsorted(s.phi, targets).clip(0, s.T)
        steps[0], steps[-1] = s.T, 0
    else:
        raise ScheduleError('Unknown step spacing %r' % (spacing,))
    # Rounding can collide neighbours at small T
    steps = np.unique(steps)[::-1]
    return [int(step) for step in steps]
