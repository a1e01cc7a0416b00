"""
The diffusion MLP head.

    c = time_embed[t] + cond_proj(z)
    h = in_proj(x_t)
    for each block:  scale, shift = ada(SiLU(c))
                     h = h + linear2(SiLU(linear1(LN(h) * (1 + scale) + shift)))
    out = out_proj(h)

The ada projections start at zero. Forward and backward are written by hand;
gradients always follow the float64 graph, even when the forward pass rounds
activations to bfloat16.
"""
import logging
from collections import OrderedDict, deque
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import rng as rng_streams
from .exceptions import DivergenceError, ShapeMismatchError
from .nn import (
    Params, affine, affine_backward, layer_norm, layer_norm_backward, silu, silu_backward, sinusoidal_table,
)
from .optim import AdamW
from .param import V, Parameterization, TargetVector, by_name, convert, target
from .precision import BF16, EXACT, EXACT_MODEL, PrecisionModel, inject_with_factor, round_bf16
from .sampler import DDPM, sample_trajectory
from .schedule import COSINE, forward_diffuse, make_schedule, make_step_list

logger = logging.getLogger(__name__)


class HeadParams(Params):
    @property
    def param(self):
        return Parameterization.from_dict(self.meta.get('param', {'kind': V.kind}))

    def schedule(self):
        """The schedule the head was trained with."""
        return make_schedule(self.meta.get('schedule_kind', COSINE), self.T)

    def block_names(self, i):
        prefix = 'blocks.%d.' % i
        return prefix + 'ada', prefix + 'linear1', prefix + 'linear2'


def init_head(token_dim, cond_dim, width, depth, T, gen, param=V, schedule_kind=COSINE):
    def normal(fan_in, fan_out):
        return gen.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    arrays = OrderedDict()
    arrays['time_embed'] = sinusoidal_table(T + 1, width)
    arrays['cond_proj.weight'] = normal(cond_dim, width)
    arrays['cond_proj.bias'] = np.zeros(width)
    arrays['in_proj.weight'] = normal(token_dim, width)
    arrays['in_proj.bias'] = np.zeros(width)
    for i in range(depth):
        arrays['blocks.%d.ada.weight' % i] = np.zeros((width, 2 * width))
        arrays['blocks.%d.ada.bias' % i] = np.zeros(2 * width)
        arrays['blocks.%d.linear1.weight' % i] = normal(width, width)
        arrays['blocks.%d.linear1.bias' % i] = np.zeros(width)
        arrays['blocks.%d.linear2.weight' % i] = normal(width, width)
        arrays['blocks.%d.linear2.bias' % i] = np.zeros(width)
    arrays['out_proj.weight'] = np.zeros((width, token_dim))
    arrays['out_proj.bias'] = np.zeros(token_dim)
    return HeadParams(
        arrays, token_dim=token_dim, cond_dim=cond_dim, width=width, depth=depth, T=T, param=param.to_dict(),
        schedule_kind=schedule_kind,
    )


def _keep(value):
    return value


def head_forward(hp, x_t, t, z, pm=None, return_cache=False):
    """
    Predict the head's target kind for noised tokens ``x_t`` (B, d) at steps
    ``t`` (scalar or (B,)) given conditions ``z`` (B, cond_dim).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_t.ndim != 2 or x_t.shape[1] != hp.token_dim:
        raise ShapeMismatchError('Expected tokens of shape (B, %d), got %s' % (hp.token_dim, x_t.shape))
    if z.shape != (x_t.shape[0], hp.cond_dim):
        raise ShapeMismatchError('Expected conditions of shape (%d, %d), got %s' % (
            x_t.shape[0], hp.cond_dim, z.shape))
    low = round_bf16 if pm is not None and pm.mode == BF16 else _keep
    t = np.broadcast_to(np.asarray(t), (x_t.shape[0],))

    c = low(hp['time_embed'][t] + low(affine(z, hp['cond_proj.weight'], hp['cond_proj.bias'])))
    c_act, c_sig = silu(c)
    c_act = low(c_act)
    h = low(affine(x_t, hp['in_proj.weight'], hp['in_proj.bias']))
    blocks = []
    for i in range(hp.depth):
        ada, linear1, linear2 = hp.block_names(i)
        mod = low(affine(c_act, hp[ada + '.weight'], hp[ada + '.bias']))
        scale, shift = mod[:, :hp.width], mod[:, hp.width:]
        normed, inv_std = layer_norm(h)
        normed = low(normed)
        a = low(normed * (1.0 + scale) + shift)
        pre = low(affine(a, hp[linear1 + '.weight'], hp[linear1 + '.bias']))
        act, sig = silu(pre)
        act = low(act)
        h_in = h
        h = low(h + low(affine(act, hp[linear2 + '.weight'], hp[linear2 + '.bias'])))
        blocks.append((h_in, normed, inv_std, scale, a, pre, sig, act))
    out = low(affine(h, hp['out_proj.weight'], hp['out_proj.bias']))

    result = TargetVector(values=out, step=t, param=hp.param)
    if not return_cache:
        return result
    return result, {'x_t': x_t, 't': t, 'z': z, 'c': c, 'c_sig': c_sig, 'c_act': c_act, 'h': h, 'blocks': blocks}


def head_backward(hp, cache, grad_out):
    """Parameter gradients and d(loss)/dz for upstream gradient ``grad_out``."""
    grads = OrderedDict((name, np.zeros_like(value)) for name, value in hp.items())
    dh, grads['out_proj.weight'], grads['out_proj.bias'] = affine_backward(
        grad_out, cache['h'], hp['out_proj.weight'])
    dc_act = np.zeros_like(cache['c_act'])
    for i in reversed(range(hp.depth)):
        ada, linear1, linear2 = hp.block_names(i)
        h_in, normed, inv_std, scale, a, pre, sig, act = cache['blocks'][i]
        dact, grads[linear2 + '.weight'], grads[linear2 + '.bias'] = affine_backward(
            dh, act, hp[linear2 + '.weight'])
        dpre = silu_backward(dact, pre, sig)
        da, grads[linear1 + '.weight'], grads[linear1 + '.bias'] = affine_backward(
            dpre, a, hp[linear1 + '.weight'])
        dmod = np.concatenate([da * normed, da], axis=1)
        dc, grads[ada + '.weight'], grads[ada + '.bias'] = affine_backward(dmod, cache['c_act'], hp[ada + '.weight'])
        dc_act += dc
        dh = dh + layer_norm_backward(da * (1.0 + scale), normed, inv_std)
    _, grads['in_proj.weight'], grads['in_proj.bias'] = affine_backward(dh, cache['x_t'], hp['in_proj.weight'])
    dc = silu_backward(dc_act, cache['c'], cache['c_sig'])
    np.add.at(grads['time_embed'], cache['t'], dc)
    dz, grads['cond_proj.weight'], grads['cond_proj.bias'] = affine_backward(dc, cache['z'], hp['cond_proj.weight'])
    return grads, dz


@dataclass
class LossResult:
    loss: float
    grads: dict
    dz: np.ndarray
    t: np.ndarray
    # per (token, timestep-sample) v-space squared error, averaged over components
    vspace_sq: np.ndarray


def diffusion_loss(hp, x, z, s, t_samples, eps_samples, pm=None):
    """
    Mean squared error between the head's (precision-corrupted) output and
    its parameterization's target, over K timestep samples per token.
    x: (B, d), z: (B, cond_dim), t_samples: (B, K), eps_samples: (B, K, d).
    """
    x = np.asarray(x, dtype=np.float64)
    t_samples = np.asarray(t_samples)
    eps_samples = np.asarray(eps_samples, dtype=np.float64)
    if t_samples.ndim != 2 or t_samples.shape[1] < 1:
        raise ValueError('Need at least one timestep sample per token')
    B, K = t_samples.shape
    if eps_samples.shape != (B, K, x.shape[1]):
        raise ShapeMismatchError('eps_samples must have shape %s, got %s' % ((B, K, x.shape[1]), eps_samples.shape))

    p = hp.param
    t = t_samples.reshape(-1)
    x_rep = np.repeat(x, K, axis=0)
    eps = eps_samples.reshape(B * K, -1)
    x_t = forward_diffuse(s, t, x_rep, eps)
    goal = target(p, s, t, x_rep, eps).values

    out, cache = head_forward(hp, x_t, t, np.repeat(z, K, axis=0), pm=pm, return_cache=True)
    corrupted, factor = inject_with_factor(pm, out.values)
    diff = corrupted - goal
    loss = float(np.mean(diff ** 2))
    grads, dz = head_backward(hp, cache, 2.0 * diff * factor / diff.size)

    if p == V:
        vspace_sq = np.mean(diff ** 2, axis=1)
    else:
        v_goal = target(V, s, t, x_rep, eps).values
        vspace_sq = np.mean((convert(p, V, s, t, x_t, corrupted).values - v_goal) ** 2, axis=1)
    return LossResult(loss=loss, grads=grads, dz=dz.reshape(B, K, -1).sum(axis=1), t=t, vspace_sq=vspace_sq)


def v_loss(hp, x, z, s, t_samples, eps_samples, pm=None):
    if hp.param != V:
        raise ValueError('v_loss needs a v-prediction head, got %s' % hp.param)
    return diffusion_loss(hp, x, z, s, t_samples, eps_samples, pm)


def sample_timesteps(gen, count, K, T):
    return gen.integers(1, T + 1, size=(count, K))


def vspace_loss_by_t(hp, s, x, z, t_values, gen, pm=None):
    """v-space MSE of the corrupted head output at each t in ``t_values``."""
    p = hp.param
    losses = []
    for t in t_values:
        eps = gen.standard_normal(x.shape)
        x_t = forward_diffuse(s, t, x, eps)
        out = head_forward(hp, x_t, t, z, pm=pm)
        corrupted, _ = inject_with_factor(pm, out.values)
        v_hat = convert(p, V, s, t, x_t, corrupted).values
        losses.append(float(np.mean((v_hat - target(V, s, t, x, eps).values) ** 2)))
    return np.array(losses)


@dataclass
class EmaState:
    shadow: Params
    momentum: float = 0.9999


def ema_update(e, live, momentum=None):
    """shadow <- m * shadow + (1 - m) * live"""
    e.shadow.check_compatible(live)
    m = e.momentum if momentum is None else momentum
    arrays = OrderedDict(
        (name, m * value + (1.0 - m) * live[name]) for name, value in e.shadow.items()
    )
    return EmaState(shadow=e.shadow.with_arrays(arrays), momentum=e.momentum)


def ema_momentum_at(momentum, step, warmup):
    if not warmup:
        return momentum
    return min(momentum, (1.0 + step) / (10.0 + step))


@dataclass
class HeadTrainConfig:
    width: int = 128
    depth: int = 4
    cond_dim: int = 16
    steps: int = 20000
    batch_size: int = 256
    lr: float = 1e-3
    betas: tuple = (0.9, 0.95)
    weight_decay: float = 0.0
    warmup_steps: int = 100
    grad_clip: Optional[float] = None
    timestep_samples: int = 1
    ema_momentum: float = 0.9999
    ema_warmup: bool = True
    param: str = V.kind
    schedule_kind: str = 'cosine'
    T: int = 1000
    seed: int = 0
    log_every: int = 500
    t_buckets: int = 10
    precision: dict = field(default_factory=lambda: {'mode': EXACT})

    def to_dict(self):
        return asdict(self)


@dataclass
class HeadTrainResult:
    params: HeadParams
    ema: EmaState
    curve: list
    losses: list


def bucket_of(t, T, buckets):
    return np.minimum((np.asarray(t) - 1) * buckets // T, buckets - 1)


def train_head(config, dataset, conditioner=None):
    """
    Minibatch AdamW training of a standalone head on tokens from ``dataset``.
    ``conditioner(labels) -> z`` supplies conditions; without one the head is
    unconditional (z = 0).

    Returns parameters, EMA, the per-t-bucket v-space loss curve as rows of
    (step, t_bucket, mse), and the per-step training losses.
    """
    s = make_schedule(config.schedule_kind, config.T)
    p = by_name(config.param) if isinstance(config.param, str) else config.param
    pm = PrecisionModel(**{**config.precision, 'seed': config.seed}).spawn('train-head')
    hp = init_head(dataset.d, config.cond_dim, config.width, config.depth, config.T,
                   rng_streams.stream(config.seed, 'head-init'), param=p, schedule_kind=config.schedule_kind)
    ema = EmaState(shadow=hp.copy(), momentum=config.ema_momentum)
    optimizer = AdamW(hp.arrays, lr=config.lr, betas=config.betas, weight_decay=config.weight_decay,
                      warmup_steps=config.warmup_steps, grad_clip=config.grad_clip)
    data_gen = rng_streams.stream(config.seed, 'head-data')
    time_gen = rng_streams.stream(config.seed, 'head-timesteps')
    noise_gen = rng_streams.stream(config.seed, 'head-noise')

    sums = np.zeros(config.t_buckets)
    counts = np.zeros(config.t_buckets)
    curve, losses = [], []
    recent = deque(maxlen=5)
    for step in range(1, config.steps + 1):
        x, labels = dataset.sample_tokens(config.batch_size, data_gen)
        z = conditioner(labels) if conditioner is not None else np.zeros((len(x), config.cond_dim))
        t_samples = sample_timesteps(time_gen, len(x), config.timestep_samples, config.T)
        eps = noise_gen.standard_normal((len(x), config.timestep_samples, dataset.d))
        result = diffusion_loss(hp, x, z, s, t_samples, eps, pm=pm)
        recent.append(result.loss)
        if not np.isfinite(result.loss):
            raise DivergenceError(step, recent, where='head training')
        optimizer.step(result.grads)
        ema = ema_update(ema, hp, ema_momentum_at(config.ema_momentum, step, config.ema_warmup))
        losses.append(result.loss)

        buckets = bucket_of(result.t, config.T, config.t_buckets)
        np.add.at(sums, buckets, result.vspace_sq)
        np.add.at(counts, buckets, 1)
        if step % config.log_every == 0 or step == config.steps:
            for bucket in range(config.t_buckets):
                if counts[bucket]:
                    curve.append((step, bucket, sums[bucket] / counts[bucket]))
            logger.info('head[%s] step %d loss %.5f', p, step, float(np.mean(losses[-config.log_every:])))
            sums[:] = 0
            counts[:] = 0
    return HeadTrainResult(params=hp, ema=ema, curve=curve, losses=losses)


def make_head_denoiser(hp, pm=None):
    """
    Adapt a head to the sampler's ``model(t, x_t, condition)`` protocol; the
    condition is the z array for the batch.
    """
    def model(t, x_t, z):
        return head_forward(hp, x_t, t, z, pm=pm)

    return model


def sample_head(hp, z, gen, sampling_steps=100, s=None, pm=None, sampler=DDPM, high_precision_cast=True):
    """
    Draw one token per row of ``z`` from pure noise with the head as the
    denoiser; ``pm`` corrupts every model output.
    """
    z = np.asarray(z, dtype=np.float64)
    s = s or hp.schedule()
    noise_gen, sampler_gen = rng_streams.split(gen, 2)
    trajectory = sample_trajectory(
        make_head_denoiser(hp), s, hp.param, make_step_list(s, sampling_steps),
        noise_gen.standard_normal((len(z), hp.token_dim)), pm=pm or EXACT_MODEL, sampler=sampler,
        condition=z, gen=sampler_gen, high_precision_cast=high_precision_cast, record=False,
    )
    return trajectory.final
