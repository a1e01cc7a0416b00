"""
DDIM and DDPM sampling for any member of the linear parameterization family,
classifier-free guidance in v- or eps-space, and trajectory sampling.

The general DDIM step works in angular form:

    x_to = [sin(phi_to - phi_from) * u / r - sin(phi_to - psi) * x_from] / sin(psi - phi_from)

A relative output error delta therefore moves the state by
sin(phi_to - phi_from) * delta * (u / r) / sin(psi - phi_from): v-prediction
(sin(psi - phi) = 1) keeps that error at the bare step size for every t.
"""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .exceptions import DivergenceError, GuidanceError, ScheduleError, ShapeMismatchError
from .param import EPS, V, TargetVector, convert, recover_x_eps, target
from .precision import EXACT_MODEL, inject, round_bf16
from .schedule import column

logger = logging.getLogger(__name__)

V_SPACE = 'v-space'
EPS_SPACE = 'eps-space'
SPACES = (V_SPACE, EPS_SPACE)

DDIM = 'ddim'
DDPM = 'ddpm'
SAMPLERS = (DDIM, DDPM)


@dataclass(frozen=True)
class GuidanceConfig:
    omega: float = 1.0
    space: str = V_SPACE

    def __post_init__(self):
        if not np.isfinite(self.omega) or self.omega < 0.0:
            raise GuidanceError('Guidance scale must be finite and non-negative, got %r' % (self.omega,))
        if self.space not in SPACES:
            raise GuidanceError('Unknown guidance space %r' % (self.space,))


@dataclass
class Trajectory:
    states: List[np.ndarray] = field(default_factory=list)
    step_list: List[int] = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1]


def _angles(s, t_from, t_to):
    # sin(phi_to - phi_from) from the tables, without forming the angles
    return s.sin_phi[t_to] * s.cos_phi[t_from] - s.cos_phi[t_to] * s.sin_phi[t_from]


def ddim_step_general(p, s, t_from, t_to, x_t, u, pm=EXACT_MODEL):
    if t_to > t_from:
        raise ScheduleError('DDIM steps must not increase t (got %d -> %d)' % (t_from, t_to))
    s.check_step(t_to)
    x_t = np.asarray(x_t, dtype=np.float64)
    u = u.values if isinstance(u, TargetVector) else np.asarray(u, dtype=np.float64)
    if u.shape != x_t.shape:
        raise ShapeMismatchError('Model output %s does not match state %s' % (u.shape, x_t.shape))
    cos_psi, sin_psi, gap = p.trig(s, t_from)
    p.check_gap(gap, t_from)
    if t_to == t_from:
        return x_t.copy()
    u = inject(pm, u)
    sin_dphi = _angles(s, t_from, t_to)
    sin_to_minus_psi = s.sin_phi[t_to] * cos_psi - s.cos_phi[t_to] * sin_psi
    return (sin_dphi * u / p.r - sin_to_minus_psi * x_t) / gap


def posterior(s, t, t_to):
    """(coef on x_hat, coef on x_t, variance) of q(x_to | x_t, x_hat)."""
    a_t, a_s = s.alpha_bar[t], s.alpha_bar[t_to]
    alpha_ts = a_t / a_s
    beta_ts = 1.0 - alpha_ts
    return (
        np.sqrt(a_s) * beta_ts / (1.0 - a_t),
        np.sqrt(alpha_ts) * (1.0 - a_s) / (1.0 - a_t),
        beta_ts * (1.0 - a_s) / (1.0 - a_t),
    )


def ddpm_step(s, t, x_t, pred, noise, pm=EXACT_MODEL, high_precision_cast=True, t_to=None):
    """
    Ancestral step t -> t_to (default t - 1) driven by the (x_hat, eps_hat)
    implied by ``pred``. With ``high_precision_cast`` the rounded output is
    used as-is by float64 posterior arithmetic; without it every posterior
    operation is rounded to bfloat16 as well. Reaching t_to = 0 adds no noise.
    """
    t_to = t - 1 if t_to is None else t_to
    if t < 1:
        raise ScheduleError('A DDPM step needs t >= 1')
    if not 0 <= t_to < t:
        raise ScheduleError('DDPM step %d -> %d does not move towards 0' % (t, t_to))
    s.check_step(t)
    if not isinstance(pred, TargetVector):
        pred = TargetVector(values=np.asarray(pred, dtype=np.float64), step=t, param=V)
    pred = inject(pm, pred)
    x_hat, _ = recover_x_eps(pred.param, s, t, x_t, pred)

    low = (lambda value: value) if high_precision_cast else round_bf16
    c_hat, c_t, variance = (low(c) for c in posterior(s, t, t_to))
    mean = low(low(c_hat * low(x_hat)) + low(c_t * low(x_t)))
    if t_to == 0:
        return mean
    return low(mean + low(np.sqrt(variance) * np.asarray(noise, dtype=np.float64)))


def _to_space(out, space_param, s, x_t):
    if out.param == space_param:
        return out
    if s is None or x_t is None:
        raise GuidanceError('Guidance in %s needs the schedule and x_t to convert %s outputs' % (
            space_param, out.kind))
    return convert(out.param, space_param, s, out.step, x_t, out)


def cfg_combine(g, out_cond, out_uncond, s=None, x_t=None):
    """uncond + omega * (cond - uncond), formed in the configured space."""
    if out_cond.param != out_uncond.param:
        raise GuidanceError('Cannot combine %s with %s outputs' % (out_cond.kind, out_uncond.kind))
    if not np.array_equal(out_cond.step, out_uncond.step):
        raise GuidanceError('Conditional and unconditional outputs come from different steps')
    if g.omega == 1.0:
        return out_cond
    space_param = V if g.space == V_SPACE else EPS
    cond = _to_space(out_cond, space_param, s, x_t)
    uncond = _to_space(out_uncond, space_param, s, x_t)
    combined = cond.replace(uncond.values + g.omega * (cond.values - uncond.values))
    if space_param == out_cond.param:
        return combined
    return convert(space_param, out_cond.param, s, out_cond.step, x_t, combined)


def check_step_list(s, step_list):
    steps = list(step_list)
    if len(steps) < 2 or steps[0] != s.T or steps[-1] != 0:
        raise ScheduleError('Step lists must start at T=%d and end at 0' % s.T)
    if any(later >= earlier for earlier, later in zip(steps, steps[1:])):
        raise ScheduleError('Step lists must be strictly decreasing')
    return steps


def _as_target(out, p, t, x):
    if not isinstance(out, TargetVector):
        out = TargetVector(values=np.asarray(out, dtype=np.float64), step=t, param=p)
    if out.values.shape != x.shape:
        raise ShapeMismatchError('Model output %s does not match state %s' % (out.values.shape, x.shape))
    return out


def sample_trajectory(model, s, p, step_list, init_noise, guidance=None, pm=EXACT_MODEL, sampler=DDIM,
                      condition=None, null_condition=None, gen=None, high_precision_cast=True, record=True):
    """
    Run ``model(t, x_t, condition) -> TargetVector`` from ``init_noise`` along
    ``step_list``. With guidance, each of the two model outputs is corrupted
    by ``pm`` separately before they are combined.
    """
    steps = check_step_list(s, step_list)
    if sampler not in SAMPLERS:
        raise ScheduleError('Unknown sampler %r' % (sampler,))
    if sampler == DDPM and gen is None:
        raise ValueError('DDPM sampling needs a random generator')

    x = np.array(init_noise, dtype=np.float64)
    trajectory = Trajectory(states=[x] if record else [], step_list=steps)
    guided = guidance is not None and guidance.omega != 1.0
    for t_from, t_to in zip(steps, steps[1:]):
        out = _as_target(model(t_from, x, condition), p, t_from, x)
        step_pm = pm
        if guided:
            out_uncond = _as_target(model(t_from, x, null_condition), p, t_from, x)
            out = cfg_combine(guidance, inject(pm, out), inject(pm, out_uncond), s=s, x_t=x)
            step_pm = EXACT_MODEL
        if sampler == DDIM:
            x = ddim_step_general(out.param, s, t_from, t_to, x, out, step_pm)
        else:
            noise = gen.standard_normal(x.shape) if t_to > 0 else None
            x = ddpm_step(s, t_from, x, out, noise, step_pm, high_precision_cast, t_to)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(t_from, [], where='sampling')
        if record:
            trajectory.states.append(x)
        logger.debug('%s step %d -> %d, |x|max=%.4g', sampler, t_from, t_to, np.max(np.abs(x)))
    if not record:
        trajectory.states.append(x)
    return trajectory


def oracle_denoiser(p, s, x_clean):
    """A denoiser that knows the clean data and predicts kind p exactly."""
    x_clean = np.asarray(x_clean, dtype=np.float64)

    def model(t, x_t, condition=None):
        eps_hat = (x_t - column(s.cos_phi[t], x_t) * x_clean) / column(s.sin_phi[t], x_t)
        return target(p, s, t, x_clean, eps_hat)

    return model


def with_precision(model, pm):
    def corrupted(t, x_t, condition=None):
        return inject(pm, model(t, x_t, condition))

    return corrupted
