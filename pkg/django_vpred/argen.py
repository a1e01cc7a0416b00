"""
Masked, random-order autoregressive generation over continuous token grids.

Training hides a random subset of each grid, conditions the diffusion head on
what the conditioner makes of the rest, and updates both networks end to end.
Generation starts fully masked and fills ``tokens_per_step`` positions per
round, each one sampled by the diffusion head.
"""
import logging
import math
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import rng as rng_streams
from .conditioner import conditioner_backward, conditioner_forward, init_conditioner, make_conditioner_fn
from .exceptions import DivergenceError, ShapeMismatchError
from .head import (
    EmaState, diffusion_loss, ema_momentum_at, ema_update, init_head, make_head_denoiser, sample_timesteps,
)
from .optim import AdamW
from .param import V, by_name
from .precision import EXACT, EXACT_MODEL, PrecisionModel
from .sampler import DDPM, sample_trajectory
from .schedule import make_schedule, make_step_list

logger = logging.getLogger(__name__)

RANDOM = 'random'
RASTER = 'raster'
ORDERS = (RANDOM, RASTER)


@dataclass
class TokenGrid:
    values: np.ndarray
    mask: np.ndarray
    positions: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.positions = np.asarray(self.positions)
        if self.values.ndim != 2 or self.mask.shape != (self.n,) or self.positions.shape != (self.n,):
            raise ShapeMismatchError('A token grid needs (n, d) values with n mask flags and n positions')
        if not np.array_equal(np.sort(self.positions), np.arange(self.n)):
            raise ValueError('Position ids must be a permutation of 0..%d' % (self.n - 1))
        if not np.all(np.isfinite(self.values[~self.mask])):
            raise ValueError('Known tokens must be finite')

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @classmethod
    def masked(cls, n, d, label=None):
        return cls(values=np.zeros((n, d)), mask=np.ones(n, dtype=bool), positions=np.arange(n), label=label)


@dataclass(frozen=True)
class MaskSchedule:
    lo: float
    hi: float
    stage: str = ''

    def __post_init__(self):
        if not 0.0 < self.lo <= self.hi <= 1.0:
            raise ValueError('Mask ratio bounds must satisfy 0 < lo <= hi <= 1, got (%r, %r)' % (self.lo, self.hi))


STAGE1 = MaskSchedule(0.7, 1.0, 'stage1')
# Uniform on (0, 1]; the ceiling below keeps at least one token masked
STAGE2 = MaskSchedule(np.nextafter(0.0, 1.0), 1.0, 'stage2')
STAGES = {1: STAGE1, 2: STAGE2}


def draw_mask(ms, n, gen):
    if n < 1:
        raise ValueError('A grid needs at least one token')
    ratio = gen.uniform(ms.lo, ms.hi)
    count = min(max(math.ceil(ratio * n), 1), n)
    mask = np.zeros(n, dtype=bool)
    mask[gen.choice(n, size=count, replace=False)] = True
    return mask


def draw_masks(ms, count, n, gen):
    return np.stack([draw_mask(ms, n, gen) for _ in range(count)])


@dataclass
class ArgenTrainConfig:
    cond_dim: int = 16
    conditioner_width: int = 128
    conditioner_depth: int = 2
    head_width: int = 128
    head_depth: int = 4
    stage1_steps: int = 2000
    stage2_steps: int = 2000
    stage1_timestep_samples: int = 1
    stage2_timestep_samples: int = 4
    batch_size: int = 64
    lr: float = 1e-3
    betas: tuple = (0.9, 0.95)
    weight_decay: float = 0.0
    warmup_steps: int = 100
    grad_clip: Optional[float] = None
    # Share of conditional examples; the rest train the null condition
    cond_ratio: float = 0.9
    ema_momentum: float = 0.9999
    ema_warmup: bool = True
    param: str = V.kind
    schedule_kind: str = 'cosine'
    T: int = 1000
    seed: int = 0
    log_every: int = 100
    ratio_buckets: int = 10
    precision: dict = field(default_factory=lambda: {'mode': EXACT})

    def to_dict(self):
        return asdict(self)

    def stage_steps(self, stage):
        return self.stage1_steps if stage == 1 else self.stage2_steps

    def timestep_samples(self, stage):
        return self.stage1_timestep_samples if stage == 1 else self.stage2_timestep_samples


@dataclass
class ArgenState:
    conditioner: object
    head: object
    conditioner_ema: EmaState
    head_ema: EmaState
    stage: int = 0

    def groups(self):
        return OrderedDict([
            ('conditioner', self.conditioner),
            ('head', self.head),
            ('conditioner_ema', self.conditioner_ema.shadow),
            ('head_ema', self.head_ema.shadow),
        ])


@dataclass
class ArgenTrainResult:
    state: ArgenState
    # (stage, step, mean loss since the last row)
    curve: list
    # (stage, bucket, ratio_lo, ratio_hi, mse, count)
    ratio_rows: list
    losses: list


def init_state(config, dataset):
    p = by_name(config.param)
    gen = rng_streams.stream(config.seed, 'argen-init')
    cp = init_conditioner(dataset.d, config.cond_dim, dataset.n, dataset.num_labels, gen,
                          width=config.conditioner_width, depth=config.conditioner_depth)
    hp = init_head(dataset.d, config.cond_dim, config.head_width, config.head_depth, config.T, gen, param=p,
                   schedule_kind=config.schedule_kind)
    return ArgenState(
        conditioner=cp,
        head=hp,
        conditioner_ema=EmaState(shadow=cp.copy(), momentum=config.ema_momentum),
        head_ema=EmaState(shadow=hp.copy(), momentum=config.ema_momentum),
    )


def ratio_bucket(ratio, buckets):
    # ratios lie in (0, 1]; bucket b covers (b / buckets, (b + 1) / buckets]
    return np.clip(np.ceil(np.asarray(ratio) * buckets).astype(np.int64) - 1, 0, buckets - 1)


def _train_labels(dataset, labels, cond_ratio, null_label, gen, count):
    if labels is None or not dataset.labelled:
        return np.full(count, null_label)
    keep = gen.random(count) < cond_ratio
    return np.where(keep, labels, null_label)


def train_stage(config, dataset, state, stage):
    """One training stage; returns the updated state plus its curves."""
    s = make_schedule(config.schedule_kind, config.T)
    pm = PrecisionModel(**{**config.precision, 'seed': config.seed}).spawn('train-argen', stage)
    cp, hp = state.conditioner, state.head
    arrays = OrderedDict(
        [('conditioner.' + name, value) for name, value in cp.items()]
        + [('head.' + name, value) for name, value in hp.items()]
    )
    optimizer = AdamW(arrays, lr=config.lr, betas=config.betas, weight_decay=config.weight_decay,
                      warmup_steps=config.warmup_steps, grad_clip=config.grad_clip)
    schedule = STAGES[stage]
    K = config.timestep_samples(stage)
    data_gen = rng_streams.stream(config.seed, 'argen', stage, 'data')
    mask_gen = rng_streams.stream(config.seed, 'argen', stage, 'mask')
    label_gen = rng_streams.stream(config.seed, 'argen', stage, 'labels')
    time_gen = rng_streams.stream(config.seed, 'argen', stage, 'timesteps')
    noise_gen = rng_streams.stream(config.seed, 'argen', stage, 'noise')

    sums = np.zeros(config.ratio_buckets)
    counts = np.zeros(config.ratio_buckets, dtype=np.int64)
    curve, losses = [], []
    recent = deque(maxlen=5)
    positions = np.broadcast_to(np.arange(dataset.n), (config.batch_size, dataset.n))
    for step in range(1, config.stage_steps(stage) + 1):
        grids = dataset.sample(config.batch_size, data_gen)
        mask = draw_masks(schedule, config.batch_size, dataset.n, mask_gen)
        labels = _train_labels(dataset, grids.labels, config.cond_ratio, cp.null_label, label_gen,
                               config.batch_size)
        z, cache = conditioner_forward(cp, grids.values, mask, positions, labels, return_cache=True)
        rows, cols = np.nonzero(mask)
        t_samples = sample_timesteps(time_gen, len(rows), K, config.T)
        eps = noise_gen.standard_normal((len(rows), K, dataset.d))
        result = diffusion_loss(hp, grids.values[rows, cols], z[rows, cols], s, t_samples, eps, pm=pm)
        recent.append(result.loss)
        if not np.isfinite(result.loss):
            raise DivergenceError(step, recent, where='stage %d training' % stage)

        grad_z = np.zeros_like(z)
        grad_z[rows, cols] = result.dz
        grads = OrderedDict(
            [('conditioner.' + name, value) for name, value in conditioner_backward(cp, cache, grad_z).items()]
            + [('head.' + name, value) for name, value in result.grads.items()]
        )
        optimizer.step(grads)
        momentum = ema_momentum_at(config.ema_momentum, step, config.ema_warmup)
        state.conditioner_ema = ema_update(state.conditioner_ema, cp, momentum)
        state.head_ema = ema_update(state.head_ema, hp, momentum)
        losses.append(result.loss)

        ratios = mask.sum(axis=1) / dataset.n
        buckets = np.repeat(ratio_bucket(ratios[rows], config.ratio_buckets), K)
        np.add.at(sums, buckets, result.vspace_sq)
        np.add.at(counts, buckets, 1)
        if step % config.log_every == 0 or step == config.stage_steps(stage):
            mean = float(np.mean(losses[-config.log_every:]))
            curve.append((stage, step, mean))
            logger.info('argen stage %d step %d loss %.5f', stage, step, mean)

    ratio_rows = [
        (stage, bucket, bucket / config.ratio_buckets, (bucket + 1) / config.ratio_buckets,
         float(sums[bucket] / counts[bucket]), int(counts[bucket]))
        for bucket in range(config.ratio_buckets) if counts[bucket]
    ]
    state.stage = stage
    return state, curve, ratio_rows, losses


def train_argen(config, dataset, state=None, stages=(1, 2), on_stage_end=None):
    """
    Run the training stages in order, starting from ``state`` (for example a
    loaded stage-1 checkpoint) or from fresh parameters. ``on_stage_end`` is
    called with (stage, state) after each stage.
    """
    state = state or init_state(config, dataset)
    curve, ratio_rows, losses = [], [], []
    for stage in stages:
        if stage not in STAGES:
            raise ValueError('Unknown training stage %r' % (stage,))
        state, stage_curve, stage_rows, stage_losses = train_stage(config, dataset, state, stage)
        curve.extend(stage_curve)
        ratio_rows.extend(stage_rows)
        losses.extend(stage_losses)
        if on_stage_end is not None:
            on_stage_end(stage, state)
    return ArgenTrainResult(state=state, curve=curve, ratio_rows=ratio_rows, losses=losses)


def generation_order(order, n, gen):
    if order == RANDOM:
        return gen.permutation(n)
    if order == RASTER:
        return np.arange(n)
    raise ValueError('Unknown generation order %r, expected one of %s' % (order, ', '.join(ORDERS)))


def generate_with(condition_fn, denoise_fn, n, d, s, step_list, gen, count=1, label=None, guidance=None,
                  tokens_per_step=4, order=RANDOM, pm=EXACT_MODEL, sampler=DDPM, high_precision_cast=True,
                  param=V):
    """
    Fill ``count`` fully masked grids, ``tokens_per_step`` positions per round.

    ``condition_fn(values, mask, positions, labels) -> z`` gives one condition
    per position (indexed by position id); labels of None mean unconditional.
    ``denoise_fn(t, x_t, z)`` is the diffusion model driven by the sampler.
    """
    if tokens_per_step < 1:
        raise ValueError('tokens_per_step must be at least 1')
    order_gen, noise_gen, sampler_gen = rng_streams.split(gen, 3)
    values = np.zeros((count, n, d))
    mask = np.ones((count, n), dtype=bool)
    positions = np.broadcast_to(np.arange(n), (count, n))
    labels = None if label is None else np.full(count, label)
    orders = np.stack([generation_order(order, n, order_gen) for _ in range(count)])
    guided = guidance is not None and guidance.omega != 1.0
    rows = np.arange(count)[:, None]

    for start in range(0, n, tokens_per_step):
        chosen = orders[:, start:start + tokens_per_step]
        width = chosen.shape[1]
        z = condition_fn(values, mask, positions, labels)[rows, chosen].reshape(count * width, -1)
        z_null = None
        if guided:
            z_null = condition_fn(values, mask, positions, None)[rows, chosen].reshape(count * width, -1)
        noise = noise_gen.standard_normal((count * width, d))
        trajectory = sample_trajectory(
            denoise_fn, s, param, step_list, noise, guidance=guidance, pm=pm, sampler=sampler, condition=z,
            null_condition=z_null, gen=sampler_gen, high_precision_cast=high_precision_cast, record=False,
        )
        values[rows, chosen] = trajectory.final.reshape(count, width, d)
        mask[rows, chosen] = False
        logger.debug('generated positions %d..%d of %d', start, start + width - 1, n)

    return [
        TokenGrid(values=values[i], mask=mask[i], positions=np.arange(n), label=label)
        for i in range(count)
    ]


def generate(cp, hp_ema, gen, count=1, label=None, guidance=None, tokens_per_step=4, order=RANDOM, s=None,
             sampling_steps=100, pm=EXACT_MODEL, sampler=DDPM, high_precision_cast=True):
    """Generate grids from trained conditioner and (EMA) head parameters."""
    s = s or hp_ema.schedule()
    return generate_with(
        make_conditioner_fn(cp), make_head_denoiser(hp_ema), cp.n, cp.token_dim, s,
        make_step_list(s, sampling_steps), gen, count=count, label=label, guidance=guidance,
        tokens_per_step=tokens_per_step, order=order, pm=pm, sampler=sampler,
        high_precision_cast=high_precision_cast, param=hp_ema.param,
    )
