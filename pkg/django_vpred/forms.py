"""
Experiment configuration.

A run is configured by a flat JSON file, ``--set key=value`` overrides and
the ``--seed``/``--out`` flags, in that order of precedence (later wins).
The global keys ``seed``, ``out_dir`` and ``precision_mode`` may appear in
the file or in overrides; every other key is a command setting validated by
that command's form. Unknown keys are errors.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

from django import forms
from django.core import validators
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from .argen import ORDERS, RANDOM
from .conf import vpred_settings
from .fields import ChoiceListField, FloatListField, IntegerListField
from .param import EPS_PRED, V_PRED, X_PRED
from .precision import MODES, EXACT, PrecisionModel
from .sampler import DDIM, DDPM, SAMPLERS, SPACES, V_SPACE
from .schedule import KINDS as SCHEDULE_KINDS
from .schedule import SPACINGS, UNIFORM_T
from .serializers import content_hash, plain
from .toyspace import CORRELATED_GRID, GMM2D, HIST_KL_MIN_SAMPLES, KINDS as DATASET_KINDS
from .validators import (
    non_empty_validator, non_negative_validator, open_unit_interval_validator, positive_validator,
)

PARAM_KINDS = (EPS_PRED, X_PRED, V_PRED)


def _choices(values):
    return [(value, value) for value in values]


class ExperimentForm(forms.Form):
    """Base for command settings: fills defaults and rejects unknown keys."""
    schedule_kind = forms.ChoiceField(choices=_choices(SCHEDULE_KINDS), required=False)
    T = forms.IntegerField(validators=[positive_validator], required=False)
    delta_max = forms.FloatField(validators=[open_unit_interval_validator], required=False)

    def __init__(self, data=None, **kwargs):
        self.given = dict(data or {})
        merged = {name: self.default(name) for name in self.base_fields}
        merged.update(self.given)
        super().__init__(data=merged, **kwargs)

    def default(self, name):
        if name == 'schedule_kind':
            return vpred_settings.SCHEDULE_KIND
        if name == 'T':
            return vpred_settings.NUM_STEPS
        if name == 'delta_max':
            return vpred_settings.DELTA_MAX
        return self.base_fields[name].initial

    def clean(self):
        cleaned = super().clean()
        unknown = sorted(set(self.given) - set(self.fields))
        if unknown:
            raise ValidationError(
                _("Unknown setting(s): %(keys)s."),
                code='unknown_setting',
                params={'keys': ', '.join(unknown)},
            )
        return cleaned


class GlobalForm(forms.Form):
    seed = forms.IntegerField(validators=[validators.MinValueValidator(0)])
    out_dir = forms.CharField()
    precision_mode = forms.ChoiceField(choices=_choices(MODES))


class ErrorSweepForm(ExperimentForm):
    param_kinds = ChoiceListField(PARAM_KINDS, initial=list(PARAM_KINDS), validators=[non_empty_validator])
    samples = forms.IntegerField(initial=20000, validators=[validators.MinValueValidator(2)])
    t_stride = forms.IntegerField(initial=10, validators=[positive_validator])
    step_stride = forms.IntegerField(initial=10, validators=[positive_validator])
    model_error_std = forms.FloatField(initial=0.1, validators=[non_negative_validator,
                                                                validators.MaxValueValidator(1.0)])
    alpha_bar_min = forms.FloatField(initial=0.0, validators=[non_negative_validator])


class DdimVerifyForm(ExperimentForm):
    num_steps = forms.IntegerField(initial=50, validators=[positive_validator])
    spacing = forms.ChoiceField(choices=_choices(SPACINGS), initial=UNIFORM_T)
    samples = forms.IntegerField(initial=64, validators=[positive_validator])
    d = forms.IntegerField(initial=2, validators=[positive_validator])
    psi_offsets = FloatListField(initial=[0.3, -0.7, 1.2])
    tolerance = forms.FloatField(initial=1e-9, validators=[non_negative_validator])
    dump_trajectories = forms.BooleanField(initial=False, required=False)


class CfgCheckForm(ExperimentForm):
    omegas = FloatListField(initial=[0.0, 1.0, 3.0, 10.0], item_validators=[non_negative_validator],
                            validators=[non_empty_validator])
    seeds = forms.IntegerField(initial=4, validators=[positive_validator])
    num_steps = forms.IntegerField(initial=50, validators=[positive_validator])
    samples = forms.IntegerField(initial=16, validators=[positive_validator])
    d = forms.IntegerField(initial=2, validators=[positive_validator])
    sampler = forms.ChoiceField(choices=_choices(SAMPLERS), initial=DDIM)
    tolerance = forms.FloatField(initial=1e-9, validators=[non_negative_validator])


class TrainingForm(ExperimentForm):
    cond_dim = forms.IntegerField(initial=16, validators=[positive_validator])
    batch_size = forms.IntegerField(initial=256, validators=[positive_validator])
    lr = forms.FloatField(initial=1e-3, validators=[validators.MinValueValidator(0.0)])
    beta1 = forms.FloatField(initial=0.9, validators=[open_unit_interval_validator])
    beta2 = forms.FloatField(initial=0.95, validators=[open_unit_interval_validator])
    weight_decay = forms.FloatField(initial=0.0, validators=[non_negative_validator])
    warmup_steps = forms.IntegerField(initial=100, validators=[validators.MinValueValidator(0)])
    grad_clip = forms.FloatField(required=False, validators=[validators.MinValueValidator(0.0)])
    ema_momentum = forms.FloatField(initial=0.9999, validators=[open_unit_interval_validator])
    ema_warmup = forms.BooleanField(initial=True, required=False)
    log_every = forms.IntegerField(initial=100, validators=[positive_validator])


class TrainHeadForm(TrainingForm):
    dataset = forms.ChoiceField(choices=_choices(DATASET_KINDS), initial=GMM2D)
    param_kinds = ChoiceListField(PARAM_KINDS, initial=[V_PRED, EPS_PRED], validators=[non_empty_validator])
    width = forms.IntegerField(initial=128, validators=[positive_validator])
    depth = forms.IntegerField(initial=4, validators=[positive_validator])
    steps = forms.IntegerField(initial=2000, validators=[positive_validator])
    timestep_samples = forms.IntegerField(initial=1, validators=[positive_validator])
    t_buckets = forms.IntegerField(initial=10, validators=[positive_validator])
    conditional = forms.BooleanField(initial=True, required=False)
    eval_t = IntegerListField(initial=[1, 10, 100, 250, 500, 750, 900, 990, 1000],
                              item_validators=[positive_validator], validators=[non_empty_validator])
    eval_samples = forms.IntegerField(initial=2000, validators=[positive_validator])
    seeds = forms.IntegerField(initial=1, validators=[positive_validator])
    # Tokens drawn from each trained EMA head and scored with hist_kl; 0 skips sampling
    sample_count = forms.IntegerField(initial=2000, validators=[validators.MinValueValidator(0)])
    sampling_steps = forms.IntegerField(validators=[positive_validator], required=False)
    sampler = forms.ChoiceField(choices=_choices(SAMPLERS), initial=DDPM)
    bins = forms.IntegerField(initial=32, validators=[validators.MinValueValidator(8)])

    def default(self, name):
        if name == 'sampling_steps':
            return vpred_settings.SAMPLING_STEPS
        return super().default(name)

    def clean(self):
        cleaned = super().clean()
        T, eval_t = cleaned.get('T'), cleaned.get('eval_t') or []
        if T and any(t > T for t in eval_t):
            self.add_error('eval_t', ValidationError(_("Evaluation steps must not exceed T."), code='step_range'))
        sample_count = cleaned.get('sample_count')
        if sample_count and sample_count < HIST_KL_MIN_SAMPLES:
            self.add_error('sample_count', ValidationError(
                _("Scoring samples needs at least %(minimum)d of them (or 0 to skip)."),
                code='too_few_samples', params={'minimum': HIST_KL_MIN_SAMPLES},
            ))
        return cleaned


class TrainArgenForm(TrainingForm):
    batch_size = forms.IntegerField(initial=64, validators=[positive_validator])
    dataset = forms.ChoiceField(choices=_choices(DATASET_KINDS), initial=CORRELATED_GRID)
    param = forms.ChoiceField(choices=_choices(PARAM_KINDS), initial=V_PRED)
    conditioner_width = forms.IntegerField(initial=128, validators=[positive_validator])
    conditioner_depth = forms.IntegerField(initial=2, validators=[positive_validator])
    head_width = forms.IntegerField(initial=128, validators=[positive_validator])
    head_depth = forms.IntegerField(initial=4, validators=[positive_validator])
    stage1_steps = forms.IntegerField(initial=2000, validators=[validators.MinValueValidator(0)])
    stage2_steps = forms.IntegerField(initial=2000, validators=[validators.MinValueValidator(0)])
    stage1_timestep_samples = forms.IntegerField(initial=1, validators=[positive_validator])
    stage2_timestep_samples = forms.IntegerField(initial=4, validators=[positive_validator])
    cond_ratio = forms.FloatField(initial=0.9, validators=[non_negative_validator, validators.MaxValueValidator(1.0)])
    ratio_buckets = forms.IntegerField(initial=10, validators=[positive_validator])
    stages = IntegerListField(initial=[1, 2], validators=[non_empty_validator])
    resume = forms.CharField(required=False, initial='')

    def clean_stages(self):
        stages = self.cleaned_data['stages']
        if any(stage not in (1, 2) for stage in stages) or stages != sorted(set(stages)):
            raise ValidationError(_("Stages must be an increasing selection of 1 and 2."), code='invalid_stages')
        return stages


class SampleEvalForm(ExperimentForm):
    checkpoint = forms.CharField()
    omegas = FloatListField(initial=[1.0, 1.5, 2.0, 3.0, 5.0], item_validators=[non_negative_validator],
                            validators=[non_empty_validator])
    guidance_space = forms.ChoiceField(choices=_choices(SPACES), initial=V_SPACE)
    label = forms.IntegerField(initial=0, validators=[validators.MinValueValidator(0)])
    # Grids per guidance scale; left out, enough for every requested metric
    count = forms.IntegerField(validators=[positive_validator], required=False)
    seeds = forms.IntegerField(initial=1, validators=[positive_validator])
    sampling_steps = forms.IntegerField(validators=[positive_validator], required=False)
    sampler = forms.ChoiceField(choices=_choices(SAMPLERS), initial=DDPM)
    tokens_per_step = forms.IntegerField(initial=4, validators=[positive_validator])
    order = forms.ChoiceField(choices=_choices(ORDERS), initial=RANDOM)
    high_precision_cast = forms.BooleanField(initial=True, required=False)
    metrics = ChoiceListField(('hist_kl', 'mmd'), initial=['hist_kl', 'mmd'], validators=[non_empty_validator])
    bins = forms.IntegerField(initial=32, validators=[validators.MinValueValidator(8)])
    dump_grids = forms.BooleanField(initial=False, required=False)

    def default(self, name):
        if name == 'sampling_steps':
            return vpred_settings.SAMPLING_STEPS
        return super().default(name)


FORMS = {
    'error_sweep': ErrorSweepForm,
    'ddim_verify': DdimVerifyForm,
    'cfg_check': CfgCheckForm,
    'train_head': TrainHeadForm,
    'train_argen': TrainArgenForm,
    'sample_eval': SampleEvalForm,
}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    seed: int = 0
    out_dir: str = field(default_factory=lambda: vpred_settings.OUT_DIR)
    precision_mode: str = EXACT
    settings: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        # out_dir is left out so runs in different directories stay comparable
        return content_hash({
            'command': self.command,
            'seed': self.seed,
            'precision_mode': self.precision_mode,
            'settings': self.settings,
        })

    def __getitem__(self, name):
        return self.settings[name]

    def to_dict(self):
        return {
            'command': self.command,
            'seed': self.seed,
            'out_dir': self.out_dir,
            'precision_mode': self.precision_mode,
            'settings': self.settings,
        }

    def precision_model(self, mode=None):
        return PrecisionModel(
            mode=mode or self.precision_mode,
            delta_max=self.settings.get('delta_max', vpred_settings.DELTA_MAX),
            seed=self.seed,
        )

    @property
    def out_path(self):
        return Path(self.out_dir)


def parse_overrides(pairs):
    overrides = {}
    for pair in pairs or ():
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise ValidationError(
                _("Overrides must look like key=value, got %(pair)r."), code='invalid_override', params={'pair': pair},
            )
        overrides[key.strip()] = value
    return overrides


def load_config_file(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise ValidationError(_("Cannot read config file %(path)s: %(error)s"), code='unreadable_config',
                              params={'path': path, 'error': e})
    except ValueError as e:
        raise ValidationError(_("Config file %(path)s is not valid JSON: %(error)s"), code='invalid_json',
                              params={'path': path, 'error': e})
    if not isinstance(data, dict):
        raise ValidationError(_("A config file must hold a JSON object."), code='invalid_config')
    return data


def build_config(command, path=None, overrides=None, seed=None, out_dir=None):
    """Validated ExperimentConfig, or a ValidationError listing every problem."""
    if command not in FORMS:
        raise ValidationError(_("Unknown command %(command)r."), code='unknown_command', params={'command': command})
    data = load_config_file(path) if path else {}
    data.update(overrides or {})
    if seed is not None:
        data['seed'] = seed
    if out_dir is not None:
        data['out_dir'] = out_dir

    global_form = GlobalForm(data={
        'seed': data.pop('seed', 0),
        'out_dir': data.pop('out_dir', vpred_settings.OUT_DIR),
        'precision_mode': data.pop('precision_mode', EXACT),
    })
    form = FORMS[command](data)
    errors = {}
    if not global_form.is_valid():
        errors.update(global_form.errors.as_data())
    if not form.is_valid():
        errors.update(form.errors.as_data())
    if errors:
        raise ValidationError(errors)
    return ExperimentConfig(
        command=command,
        seed=global_form.cleaned_data['seed'],
        out_dir=global_form.cleaned_data['out_dir'],
        precision_mode=global_form.cleaned_data['precision_mode'],
        settings=plain(form.cleaned_data),
    )
