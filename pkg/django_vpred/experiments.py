"""
The experiments behind the management commands.

Each ``run_*`` function is a pure function of its ExperimentConfig: it writes
``config.json`` plus its primary outputs into ``config.out_dir`` and returns
the written paths by name.
"""
import logging
from collections import OrderedDict
from dataclasses import fields

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from . import rng as rng_streams
from .argen import ArgenState, ArgenTrainConfig, generate, train_argen
from .exceptions import CheckpointError
from .head import EmaState, HeadTrainConfig, sample_head, train_head, vspace_loss_by_t
from .param import CUSTOM, EPS, V, X, Parameterization, by_name, convert, target
from .precision import (
    EXACT, EXACT_MODEL, measure_unit_step_error, step_error_std_theory, unit_step_error_sq_theory,
)
from .sampler import GuidanceConfig, ddim_step_general, oracle_denoiser, sample_trajectory, EPS_SPACE, V_SPACE
from .schedule import forward_diffuse, make_schedule, make_step_list
from .serializers import (
    dump_trajectory_csv, load_checkpoint, save_checkpoint, suite_result, write_config_echo, write_csv,
    write_grids, write_report,
)
from .toyspace import HIST_KL_MIN_SAMPLES, hist_kl, make_dataset, median_bandwidth, mmd_rbf

logger = logging.getLogger(__name__)

MMD_MAX_SAMPLES = 2000
DEFAULT_EVAL_COUNT = 256


def _start(config):
    out = config.out_path
    out.mkdir(parents=True, exist_ok=True)
    return out, OrderedDict(config=write_config_echo(out / 'config.json', config))


def _schedule(config):
    return make_schedule(config['schedule_kind'], config['T'])


def _sweep_steps(s, stride, alpha_bar_min):
    steps = sorted({1, *range(stride, s.T + 1, stride)})
    return [t for t in steps if s.alpha_bar[t] >= alpha_bar_min]


def run_error_sweep(config):
    """Theoretical vs measured injected error for each parameterization and step."""
    out, paths = _start(config)
    s = _schedule(config)
    pm = config.precision_model()
    rows = []
    for kind in config['param_kinds']:
        p = by_name(kind)
        for t in _sweep_steps(s, config['t_stride'], config['alpha_bar_min']):
            gen = rng_streams.stream(config.seed, 'error-sweep', kind, t)
            measurement = measure_unit_step_error(
                p, s, t, pm.spawn('unit', kind, t), config['samples'], gen, config['model_error_std'])

            t_to = max(t - config['step_stride'], 0)
            x = gen.standard_normal(config['samples'])
            eps = gen.standard_normal(config['samples'])
            x_t = forward_diffuse(s, t, x, eps)
            u = target(p, s, t, x, eps)
            exact = ddim_step_general(p, s, t, t_to, x_t, u)
            corrupted = ddim_step_general(p, s, t, t_to, x_t, u, pm.spawn('step', kind, t))
            rows.append((
                t,
                float(s.alpha_bar[t]),
                float(unit_step_error_sq_theory(p, s, t, pm)),
                measurement.mean_sq,
                step_error_std_theory(p, s, t, t_to, pm),
                float(np.sqrt(np.mean((corrupted - exact) ** 2))),
                kind,
                config.precision_mode,
            ))
        logger.info('error sweep: %s done', kind)
    paths['sweep'] = write_csv(
        out / 'error_sweep.csv',
        ('t', 'alpha_bar', 'theory', 'measured', 'step_theory', 'step_measured', 'param_kind', 'mode'),
        rows, config.config_hash, config.command,
    )
    return paths


def _classic_ddim(p, s, t_from, t_to, x_t, u):
    """Textbook eps-, x- and v-prediction DDIM updates."""
    a_from, a_to = s.alpha_bar[t_from], s.alpha_bar[t_to]
    if p == EPS:
        x_hat = (x_t - np.sqrt(1 - a_from) * u) / np.sqrt(a_from)
        eps_hat = u
    elif p == X:
        x_hat = u
        eps_hat = (x_t - np.sqrt(a_from) * u) / np.sqrt(1 - a_from)
    else:
        x_hat = np.sqrt(a_from) * x_t - np.sqrt(1 - a_from) * u
        eps_hat = np.sqrt(1 - a_from) * x_t + np.sqrt(a_from) * u
    return np.sqrt(a_to) * x_hat + np.sqrt(1 - a_to) * eps_hat


def run_ddim_verify(config):
    """Reduction, round-trip, oracle-endpoint and identity suites."""
    out, paths = _start(config)
    s = _schedule(config)
    steps = make_step_list(s, config['num_steps'], config['spacing'])
    gen = rng_streams.stream(config.seed, 'ddim-verify')
    shape = (config['samples'], config['d'])
    x = gen.standard_normal(shape)
    eps = gen.standard_normal(shape)
    tolerance = config['tolerance']
    customs = [Parameterization(CUSTOM, psi_offset=offset) for offset in config['psi_offsets']]
    suites = []

    for p in (EPS, X, V):
        worst = 0.0
        for t_from, t_to in zip(steps, steps[1:]):
            x_t = forward_diffuse(s, t_from, x, eps)
            u = target(p, s, t_from, x, eps).values
            general = ddim_step_general(p, s, t_from, t_to, x_t, u)
            worst = max(worst, float(np.max(np.abs(general - _classic_ddim(p, s, t_from, t_to, x_t, u)))))
        suites.append(suite_result('reduction-%s' % p, worst, tolerance))

    # psi = phi + pi/2 is v-prediction written as a custom member
    quarter = Parameterization(CUSTOM, psi_offset=np.pi / 2)
    worst = 0.0
    for t_from, t_to in zip(steps, steps[1:]):
        x_t = forward_diffuse(s, t_from, x, eps)
        u = target(V, s, t_from, x, eps).values
        worst = max(worst, float(np.max(np.abs(
            ddim_step_general(quarter, s, t_from, t_to, x_t, u) - ddim_step_general(V, s, t_from, t_to, x_t, u)))))
    suites.append(suite_result('reduction-custom-quarter-turn', worst, tolerance))

    members = [EPS, X, V] + customs
    worst = 0.0
    for t in steps[:-1]:
        x_t = forward_diffuse(s, t, x, eps)
        for p in members:
            u = target(p, s, t, x, eps)
            for q in members:
                back = convert(q, p, s, t, x_t, convert(p, q, s, t, x_t, u))
                worst = max(worst, float(np.max(np.abs(back.values - u.values))))
    suites.append(suite_result('round-trip', worst, tolerance))

    trajectories = []
    for p in (EPS, X, V):
        x_T = forward_diffuse(s, s.T, x, eps)
        trajectory = sample_trajectory(oracle_denoiser(p, s, x), s, p, steps, x_T)
        trajectories.append(trajectory)
        suites.append(suite_result('oracle-endpoint-%s' % p, float(np.max(np.abs(trajectory.final - x))), tolerance))

    x_t = forward_diffuse(s, steps[1], x, eps)
    same = ddim_step_general(V, s, steps[1], steps[1], x_t, target(V, s, steps[1], x, eps))
    suites.append(suite_result('identity-step', float(np.max(np.abs(same - x_t))), 0.0))

    for suite in suites:
        logger.info('%s: max |err| %.3g (%s)', suite['suite'], suite['max_abs_err'],
                    'pass' if suite['pass'] else 'FAIL')
    paths['report'] = write_report(out / 'report.json', config.config_hash, config.command, suites)
    if config['dump_trajectories']:
        paths['trajectories'] = dump_trajectory_csv(
            out / 'trajectories.csv', trajectories, config.config_hash, config.command)
    return paths


def _two_anchor_model(s, x_cond, x_uncond):
    """A v-prediction oracle pulled towards x_cond, or x_uncond for the null condition."""
    models = {'cond': oracle_denoiser(V, s, x_cond), 'uncond': oracle_denoiser(V, s, x_uncond)}

    def model(t, x_t, condition):
        return models[condition](t, x_t)

    return model


def run_cfg_check(config):
    """Trajectory deviation between v-space and eps-space guidance."""
    out, paths = _start(config)
    s = _schedule(config)
    steps = make_step_list(s, config['num_steps'])
    pm = config.precision_model()
    asserted = config.precision_mode == EXACT
    suites = []
    for omega in config['omegas']:
        worst = 0.0
        for k in range(config['seeds']):
            gen = rng_streams.stream(config.seed, 'cfg-check', k)
            shape = (config['samples'], config['d'])
            x_cond = gen.standard_normal(shape) + 1.0
            x_uncond = gen.standard_normal(shape)
            noise = gen.standard_normal(shape)
            model = _two_anchor_model(s, x_cond, x_uncond)
            finals = []
            for space in (V_SPACE, EPS_SPACE):
                # Same injection draws and sampler noise for both spaces
                trajectory = sample_trajectory(
                    model, s, V, steps, noise, guidance=GuidanceConfig(omega, space),
                    pm=pm.spawn('cfg-check', k), sampler=config['sampler'], condition='cond',
                    null_condition='uncond', gen=rng_streams.stream(config.seed, 'cfg-check', k, 'sampler'),
                    record=False,
                )
                finals.append(trajectory.final)
            worst = max(worst, float(np.max(np.abs(finals[0] - finals[1]))))
        suites.append(suite_result('omega=%g' % omega, worst, config['tolerance'] if asserted else None,
                                   omega=omega, mode=config.precision_mode))
        logger.info('cfg check omega=%g: max deviation %.3g', omega, worst)
    paths['report'] = write_report(out / 'report.json', config.config_hash, config.command, suites)
    return paths


def _training_fields(config, cls, **extra):
    names = {f.name for f in fields(cls)}
    values = {name: config[name] for name in names if name in config.settings}
    values.update(
        betas=(config['beta1'], config['beta2']),
        seed=config.seed,
        precision={'mode': config.precision_mode, 'delta_max': config['delta_max']},
    )
    values.update(extra)
    return cls(**values)


def _label_conditioner(config, dataset):
    if not (config['conditional'] and dataset.labelled):
        return None
    table = rng_streams.stream(config.seed, 'label-embed').standard_normal((dataset.num_labels, config['cond_dim']))

    def conditioner(labels):
        return table[labels]

    return conditioner


def _seed_suffix(seed_index):
    return '' if seed_index == 0 else '_seed%d' % seed_index


def run_train_head(config):
    """
    Paired head trainings, one per parameterization, from identical seeds.
    Seed index k > 0 trains from root seed ``seed + k`` and suffixes its
    curve and checkpoint names with ``_seed<k>``.
    """
    out, paths = _start(config)
    dataset = make_dataset(config['dataset'])
    s = _schedule(config)
    pm = config.precision_model()
    conditioner = _label_conditioner(config, dataset)
    by_t, sample_rows = [], []
    for seed_index in range(config['seeds']):
        seed = config.seed + seed_index
        suffix = _seed_suffix(seed_index)
        for kind in config['param_kinds']:
            head_config = _training_fields(config, HeadTrainConfig, param=kind, seed=seed)
            result = train_head(head_config, dataset, conditioner)
            paths['curve_%s%s' % (kind, suffix)] = write_csv(
                out / ('loss_curve_%s%s.csv' % (kind, suffix)), ('step', 't_bucket', 'mse'), result.curve,
                config.config_hash, config.command,
            )
            paths['checkpoint_%s%s' % (kind, suffix)] = save_checkpoint(
                out / ('head_%s%s.ckpt' % (kind, suffix)),
                OrderedDict(head=result.params, head_ema=result.ema.shadow),
                config={'config_hash': config.config_hash, 'train_head': head_config.to_dict(),
                        'dataset': dataset.manifest()},
                step=head_config.steps,
            )
            eval_gen = rng_streams.stream(seed, 'head-eval')
            x, labels = dataset.sample_tokens(config['eval_samples'], eval_gen)
            z = conditioner(labels) if conditioner else np.zeros((len(x), config['cond_dim']))
            losses = vspace_loss_by_t(result.ema.shadow, s, x, z, config['eval_t'], eval_gen,
                                      pm=pm.spawn('head-eval', kind, seed_index))
            for t, loss in zip(config['eval_t'], losses):
                by_t.append((kind, t, float(s.alpha_bar[t]), loss,
                             float(unit_step_error_sq_theory(by_name(kind), s, t, pm)), seed_index))

            if config['sample_count']:
                # Same reference tokens and conditions for every kind
                sample_gen = rng_streams.stream(seed, 'head-sample')
                reference, labels = dataset.sample_tokens(config['sample_count'], sample_gen)
                z = conditioner(labels) if conditioner else np.zeros((len(reference), config['cond_dim']))
                generated = sample_head(
                    result.ema.shadow, z, sample_gen, sampling_steps=config['sampling_steps'], s=s,
                    pm=EXACT_MODEL if pm.exact else pm.spawn('head-sample', kind, seed_index),
                    sampler=config['sampler'],
                )
                kl = hist_kl(generated, reference, bins=config['bins'])
                sample_rows.append((kind, seed_index, seed, kl))
                logger.info('head[%s] seed %d sample hist_kl %.4f', kind, seed, kl)
    paths['vspace_by_t'] = write_csv(
        out / 'vspace_loss_by_t.csv', ('param_kind', 't', 'alpha_bar', 'vspace_mse', 'theory_overhead', 'seed'),
        by_t, config.config_hash, config.command,
    )
    if sample_rows:
        paths['sample_kl'] = write_csv(
            out / 'sample_kl.csv', ('param_kind', 'seed', 'root_seed', 'hist_kl'), sample_rows,
            config.config_hash, config.command,
        )
    return paths


def state_from_checkpoint(path, ema_momentum):
    groups, header = load_checkpoint(path)
    missing = {'conditioner', 'head', 'conditioner_ema', 'head_ema'} - set(groups)
    if missing:
        raise CheckpointError('%s is not an argen checkpoint (missing %s)' % (path, ', '.join(sorted(missing))))
    state = ArgenState(
        conditioner=groups['conditioner'],
        head=groups['head'],
        conditioner_ema=EmaState(shadow=groups['conditioner_ema'], momentum=ema_momentum),
        head_ema=EmaState(shadow=groups['head_ema'], momentum=ema_momentum),
        stage=header['step'],
    )
    return state, header


def run_train_argen(config):
    """Two-stage masked autoregressive training with a checkpoint per stage."""
    out, paths = _start(config)
    dataset = make_dataset(config['dataset'])
    argen_config = _training_fields(config, ArgenTrainConfig)
    state = None
    if config['resume']:
        state, _ = state_from_checkpoint(config['resume'], argen_config.ema_momentum)
        logger.info('Resuming from %s after stage %d', config['resume'], state.stage)

    def on_stage_end(stage, stage_state):
        paths['checkpoint_stage%d' % stage] = save_checkpoint(
            out / ('argen_stage%d.ckpt' % stage), stage_state.groups(),
            config={'config_hash': config.config_hash, 'train_argen': argen_config.to_dict(),
                    'dataset': dataset.manifest()},
            step=stage,
        )

    result = train_argen(argen_config, dataset, state=state, stages=config['stages'], on_stage_end=on_stage_end)
    paths['curve'] = write_csv(out / 'loss_curve.csv', ('stage', 'step', 'loss'), result.curve,
                               config.config_hash, config.command)
    paths['ratio_buckets'] = write_csv(
        out / 'mask_ratio_buckets.csv', ('stage', 'bucket', 'ratio_lo', 'ratio_hi', 'mse', 'count'),
        result.ratio_rows, config.config_hash, config.command,
    )
    return paths


def _metric_rows(config, generated, reference, null_reference, omega, seed_index):
    rows = []
    if 'hist_kl' in config['metrics'] and generated.shape[1] <= 2:
        rows.append((omega, 'hist_kl', hist_kl(generated, reference, bins=config['bins']), seed_index))
    if 'mmd' in config['metrics']:
        a, b = generated[:MMD_MAX_SAMPLES], reference[:MMD_MAX_SAMPLES]
        rows.append((omega, 'mmd', mmd_rbf(a, b, median_bandwidth(b, null_reference)), seed_index))
    return rows


def _eval_count(config, dataset):
    """Grids per guidance scale: the configured count, checked against hist_kl's sample floor."""
    scored = 'hist_kl' in config['metrics'] and dataset.d <= 2
    floor = -(-HIST_KL_MIN_SAMPLES // dataset.n) if scored else 1
    if config['count'] is None:
        return max(DEFAULT_EVAL_COUNT, floor)
    if config['count'] < floor:
        raise ValidationError(
            _("count must be at least %(floor)d for hist_kl on %(kind)s (%(n)d tokens per grid)."),
            code='too_few_samples', params={'floor': floor, 'kind': dataset.kind, 'n': dataset.n},
        )
    return config['count']


def run_sample_eval(config):
    """Generate over a guidance sweep and score against the dataset's true distribution."""
    out, paths = _start(config)
    groups, header = load_checkpoint(config['checkpoint'])
    if 'conditioner_ema' not in groups or 'head_ema' not in groups:
        raise CheckpointError('%s holds no EMA conditioner and head' % config['checkpoint'])
    manifest = header['config']['dataset']
    dataset = make_dataset(manifest['kind'], **manifest['params'])
    count = _eval_count(config, dataset)
    # The head records the schedule it was trained with
    s = groups['head_ema'].schedule()
    label = config['label'] if dataset.labelled else None
    if label is not None and label >= dataset.num_labels:
        raise ValueError('label must be below %d for this dataset' % dataset.num_labels)
    pm = config.precision_model()
    total = count * dataset.n

    rows = []
    for seed_index in range(config['seeds']):
        ref_gen = rng_streams.stream(config.seed, 'sample-eval', 'reference', seed_index)
        if label is None:
            reference = dataset.sample_tokens(total, ref_gen)[0]
            null_reference = dataset.sample_tokens(total, ref_gen)[0]
        else:
            reference = dataset.conditional_tokens(label, total, ref_gen)
            null_reference = dataset.conditional_tokens(label, total, ref_gen)
        for row in _metric_rows(config, null_reference, reference, null_reference, '', seed_index):
            rows.append((row[0], row[1] + '_null', row[2], row[3]))

        for index, omega in enumerate(config['omegas']):
            step_pm = EXACT_MODEL if pm.exact else pm.spawn('sample-eval', seed_index, index)
            grids = generate(
                groups['conditioner_ema'], groups['head_ema'],
                rng_streams.stream(config.seed, 'sample-eval', seed_index, index),
                count=count, label=label, guidance=GuidanceConfig(omega, config['guidance_space']),
                tokens_per_step=config['tokens_per_step'], order=config['order'], s=s,
                sampling_steps=config['sampling_steps'], pm=step_pm, sampler=config['sampler'],
                high_precision_cast=config['high_precision_cast'],
            )
            generated = np.concatenate([grid.values for grid in grids])
            rows.extend(_metric_rows(config, generated, reference, null_reference, omega, seed_index))
            logger.info('sample eval seed %d omega=%g done', seed_index, omega)
            if config['dump_grids']:
                paths['grids_%d_%d' % (seed_index, index)] = write_grids(
                    out / ('grids_seed%d_omega%d.csv' % (seed_index, index)), grids,
                    {'n': dataset.n, 'd': dataset.d, 'label': label, 'seed': config.seed, 'omega': omega},
                    config.config_hash, config.command,
                )
    paths['metrics'] = write_csv(out / 'metrics.csv', ('omega', 'metric', 'value', 'seed'), rows,
                                 config.config_hash, config.command)
    return paths


RUNNERS = {
    'error_sweep': run_error_sweep,
    'ddim_verify': run_ddim_verify,
    'cfg_check': run_cfg_check,
    'train_head': run_train_head,
    'train_argen': run_train_argen,
    'sample_eval': run_sample_eval,
}
