"""
Relative-error models for low-precision model outputs.

A model output u is stored as u * (1 + delta). ``fixed-delta`` draws
delta = +/- delta_max (the bound the closed-form theory uses), ``uniform-delta``
draws delta ~ U(-delta_max, delta_max) and ``bf16-round`` performs true
round-to-nearest-even bfloat16 rounding. The true rounding error is smaller
than the 1/128 spacing bound, so bf16-round follows the same 1/alpha_bar law
at a lower constant.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_streams
from .conf import vpred_settings
from .exceptions import ScheduleError
from .param import TargetVector, V, convert, target, unit_step_gain
from .schedule import forward_diffuse

logger = logging.getLogger(__name__)

EXACT = 'exact'
BF16 = 'bf16-round'
FIXED = 'fixed-delta'
UNIFORM = 'uniform-delta'
MODES = (EXACT, BF16, FIXED, UNIFORM)

_DROPPED = np.uint64((1 << 45) - 1)
_HALF = np.uint64((1 << 44) - 1)
_SHIFT = np.uint64(45)
_ONE = np.uint64(1)
# Smallest normal and subnormal spacing of bfloat16 (same exponent range as float32)
_MIN_NORMAL = 2.0 ** -126
_SUBNORMAL_SCALE = 2.0 ** 133
_OVERFLOW = 2.0 ** 128


def round_bf16(x):
    """
    Round to the nearest bfloat16 (8 exponent bits, 7 stored mantissa bits,
    ties to even), returned as float64. Non-finite values pass through.
    """
    scalar = np.ndim(x) == 0 and not isinstance(x, np.ndarray)
    x = np.ascontiguousarray(x, dtype=np.float64)
    bits = x.view(np.uint64)
    lsb = (bits >> _SHIFT) & _ONE
    with np.errstate(over='ignore', invalid='ignore'):
        rounded = ((bits + _HALF + lsb) & ~_DROPPED).view(np.float64)
        rounded = np.where(np.abs(rounded) >= _OVERFLOW, np.copysign(np.inf, x), rounded)
        tiny = np.abs(x) < _MIN_NORMAL
        if np.any(tiny):
            rounded = np.where(tiny, np.round(x * _SUBNORMAL_SCALE) / _SUBNORMAL_SCALE, rounded)
        out = np.where(np.isfinite(x), rounded, x)
    return float(out) if scalar else out


@dataclass
class PrecisionModel:
    mode: str = EXACT
    delta_max: float = field(default_factory=lambda: vpred_settings.DELTA_MAX)
    seed: int = 0
    stream_key: tuple = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError('Unknown precision mode %r, expected one of %s' % (self.mode, ', '.join(MODES)))
        if not 0.0 < self.delta_max < 1.0:
            raise ValueError('delta_max must lie in (0, 1), got %r' % (self.delta_max,))
        self.rng = rng_streams.stream(self.seed, 'precision', *self.stream_key)

    @property
    def exact(self):
        return self.mode == EXACT

    def spawn(self, *key):
        """Independent stream for one worker, trajectory or training run."""
        return PrecisionModel(self.mode, self.delta_max, self.seed, self.stream_key + key)

    def effective_delta_sq(self):
        """E[delta^2] for the stochastic modes; the spacing bound for bf16-round."""
        return {
            EXACT: 0.0,
            BF16: self.delta_max ** 2,
            FIXED: self.delta_max ** 2,
            UNIFORM: self.delta_max ** 2 / 3.0,
        }[self.mode]

    def to_dict(self):
        return {'mode': self.mode, 'delta_max': self.delta_max, 'seed': self.seed}

    @classmethod
    def from_dict(cls, data):
        return cls(
            mode=data['mode'],
            delta_max=float(data.get('delta_max', vpred_settings.DELTA_MAX)),
            seed=int(data.get('seed', 0)),
        )


EXACT_MODEL = PrecisionModel(EXACT)


def inject_with_factor(pm, u):
    """
    Injected values together with d(injected)/du. Rounding passes gradients
    straight through.
    """
    u = np.asarray(u, dtype=np.float64)
    if pm is None or pm.mode == EXACT:
        return u, np.ones_like(u)
    if pm.mode == BF16:
        return round_bf16(u), np.ones_like(u)
    if pm.mode == FIXED:
        factor = 1.0 + pm.delta_max * pm.rng.choice((-1.0, 1.0), size=u.shape)
    else:
        factor = 1.0 + pm.rng.uniform(-pm.delta_max, pm.delta_max, size=u.shape)
    return u * factor, factor


def inject(pm, u):
    if isinstance(u, TargetVector):
        return u.replace(inject(pm, u.values))
    injected, _ = inject_with_factor(pm, u)
    return injected


def _check_steps(s, *steps):
    for t in steps:
        s.check_step(t)


def eps_pred_step_error_std(s, t_from, t_to, delta):
    """Standard deviation of the error term of one eps-prediction DDIM step."""
    _check_steps(s, t_from, t_to)
    if t_to > t_from:
        raise ScheduleError('A sampling step must move towards t=0 (got %d -> %d)' % (t_from, t_to))
    a_from = np.longdouble(s.alpha_bar[t_from])
    a_to = np.longdouble(s.alpha_bar[t_to])
    gain = np.sqrt(1 - a_to) - np.sqrt(a_to) / np.sqrt(a_from) * np.sqrt(1 - a_from)
    return float(np.abs(gain) * np.longdouble(delta))


def theoretical_vloss_overhead(s, t, delta):
    """delta^2 / alpha_bar_t: extra v-space loss of an eps-prediction model."""
    s.check_step(t)
    return np.asarray(np.longdouble(delta) ** 2 / s.alpha_bar[t].astype(np.longdouble), dtype=np.float64)


def equiv_vpred_error(s, t, eps_theta, delta):
    """v-space error equivalent to a relative error delta on an eps prediction."""
    s.check_step(t)
    eps_theta = np.asarray(eps_theta, dtype=np.float64)
    return eps_theta * delta / s.cos_phi[t]


def unit_step_error_sq_theory(p, s, t, pm):
    """E[e^2] per unit DDIM step for a unit-variance output of kind p."""
    return pm.effective_delta_sq() * unit_step_gain(p, s, t) ** 2


def step_error_std_theory(p, s, t_from, t_to, pm):
    """
    Standard deviation of the state error one DDIM step t_from -> t_to picks
    up from a corrupted unit-variance output of kind p.
    """
    _check_steps(s, t_from, t_to)
    if t_to > t_from:
        raise ScheduleError('A sampling step must move towards t=0 (got %d -> %d)' % (t_from, t_to))
    sin_step = s.sin_phi[t_to] * s.cos_phi[t_from] - s.cos_phi[t_to] * s.sin_phi[t_from]
    return float(np.abs(sin_step) * np.sqrt(pm.effective_delta_sq()) * unit_step_gain(p, s, t_from))


@dataclass
class ErrorMeasurement:
    mean_sq: float
    cross: float
    cross_stderr: float
    samples: int


def measure_unit_step_error(p, s, t, pm, samples, gen, model_error_std=0.1):
    """
    Monte Carlo of the equivalent v-space error e of a precision-corrupted
    model of kind p at step t.

    The simulated model is an oracle blended with independent noise so that
    its output keeps unit variance; the residual v - v_theta then gives the
    cross term E[(v - v_theta) e], which should vanish.
    """
    x = gen.standard_normal(samples)
    eps = gen.standard_normal(samples)
    x_t = forward_diffuse(s, t, x, eps)
    u = target(p, s, t, x, eps).values
    u_theta = np.sqrt(1.0 - model_error_std ** 2) * u + model_error_std * gen.standard_normal(samples)
    v_true = target(V, s, t, x, eps).values
    v_theta = convert(p, V, s, t, x_t, u_theta).values
    v_tilde = convert(p, V, s, t, x_t, inject(pm, u_theta)).values
    e = v_tilde - v_theta
    product = (v_true - v_theta) * e
    return ErrorMeasurement(
        mean_sq=float(np.mean(e ** 2)),
        cross=float(np.mean(product)),
        cross_stderr=float(np.std(product) / np.sqrt(samples)),
        samples=samples,
    )
