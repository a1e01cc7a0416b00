#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_forms
------------

Tests for experiment configuration: settings forms, list fields, overrides
and the config hash.
"""
import json
import tempfile
from pathlib import Path

from django.core.exceptions import ImproperlyConfigured, ValidationError
from django.test import SimpleTestCase, override_settings

from django_vpred.conf import vpred_settings
from django_vpred.fields import ChoiceListField, FloatListField, IntegerListField
from django_vpred.forms import (
    CfgCheckForm, ErrorSweepForm, SampleEvalForm, TrainArgenForm, TrainHeadForm, build_config, load_config_file,
    parse_overrides,
)
from django_vpred.precision import FIXED
from django_vpred.validators import non_negative_validator


class TestListFields(SimpleTestCase):
    def test_delimited_string(self):
        self.assertEqual(FloatListField().clean('0,1,3,10'), [0.0, 1.0, 3.0, 10.0])
        self.assertEqual(IntegerListField().clean(' 1, 2 ,3 '), [1, 2, 3])

    def test_json_list(self):
        self.assertEqual(FloatListField().clean('[0.5, 2]'), [0.5, 2.0])
        self.assertEqual(FloatListField().clean([0.5, 2]), [0.5, 2.0])

    def test_custom_delimiter(self):
        self.assertEqual(ChoiceListField(('a', 'b'), delimiter='|').clean('a|b'), ['a', 'b'])

    def test_invalid_items(self):
        with self.assertRaises(ValidationError) as caught:
            FloatListField().clean('1,x')
        self.assertEqual(caught.exception.error_list[0].code, 'item_invalid')
        with self.assertRaises(ValidationError):
            FloatListField(item_validators=[non_negative_validator]).clean('1,-2')
        with self.assertRaises(ValidationError):
            ChoiceListField(('a', 'b')).clean('a,c')

    def test_bad_json(self):
        with self.assertRaises(ValidationError) as caught:
            FloatListField().clean('[1, 2')
        self.assertEqual(caught.exception.code, 'invalid_json')

    def test_length_bounds(self):
        with self.assertRaises(ValidationError):
            FloatListField(min_length=2).clean('1')
        with self.assertRaises(ValidationError):
            FloatListField(max_length=2).clean('1,2,3')

    def test_prepare_value(self):
        self.assertEqual(IntegerListField().prepare_value([1, 2]), '1,2')

    def test_required(self):
        with self.assertRaises(ValidationError):
            FloatListField().clean('')
        self.assertEqual(FloatListField(required=False).clean(''), [])


class TestExperimentForms(SimpleTestCase):
    def test_defaults(self):
        form = CfgCheckForm({})
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(form.cleaned_data['omegas'], [0.0, 1.0, 3.0, 10.0])
        self.assertEqual(form.cleaned_data['T'], 1000)
        self.assertEqual(form.cleaned_data['schedule_kind'], 'cosine')

    @override_settings(VPRED={'NUM_STEPS': 200, 'SAMPLING_STEPS': 20})
    def test_defaults_follow_app_settings(self):
        form = SampleEvalForm({'checkpoint': 'x.ckpt'})
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(form.cleaned_data['T'], 200)
        self.assertEqual(form.cleaned_data['sampling_steps'], 20)

    def test_unknown_key(self):
        form = ErrorSweepForm({'samples': '100', 'sampels': '100'})
        self.assertFalse(form.is_valid())
        self.assertTrue(form.has_error('__all__', code='unknown_setting'))

    def test_empty_guidance_sweep(self):
        form = SampleEvalForm({'checkpoint': 'x.ckpt', 'omegas': '[]'})
        self.assertFalse(form.is_valid())
        self.assertIn('omegas', form.errors)

    def test_negative_guidance_scale(self):
        self.assertFalse(CfgCheckForm({'omegas': '1,-3'}).is_valid())

    def test_eval_steps_within_schedule(self):
        form = TrainHeadForm({'T': '100', 'eval_t': '1,50,200'})
        self.assertFalse(form.is_valid())
        self.assertTrue(form.has_error('eval_t', code='step_range'))

    def test_head_sample_count(self):
        form = TrainHeadForm({'sample_count': '500'})
        self.assertFalse(form.is_valid())
        self.assertTrue(form.has_error('sample_count', code='too_few_samples'))
        for count in ('0', '1000'):
            self.assertTrue(TrainHeadForm({'sample_count': count}).is_valid())

    @override_settings(VPRED={'SAMPLING_STEPS': 20})
    def test_head_sampling_steps_follow_app_settings(self):
        form = TrainHeadForm({})
        self.assertTrue(form.is_valid(), form.errors)
        self.assertEqual(form.cleaned_data['sampling_steps'], 20)
        self.assertEqual(form.cleaned_data['sample_count'], 2000)

    def test_eval_count_is_optional(self):
        form = SampleEvalForm({'checkpoint': 'x.ckpt'})
        self.assertTrue(form.is_valid(), form.errors)
        self.assertIsNone(form.cleaned_data['count'])
        self.assertFalse(SampleEvalForm({'checkpoint': 'x.ckpt', 'count': '0'}).is_valid())

    def test_stage_selection(self):
        self.assertTrue(TrainArgenForm({'stages': '2'}).is_valid())
        for stages in ('2,1', '1,1', '3'):
            form = TrainArgenForm({'stages': stages})
            self.assertFalse(form.is_valid())
            self.assertTrue(form.has_error('stages', code='invalid_stages'))

    def test_boolean_strings(self):
        form = TrainHeadForm({'conditional': 'false'})
        self.assertTrue(form.is_valid(), form.errors)
        self.assertFalse(form.cleaned_data['conditional'])


class TestOverrides(SimpleTestCase):
    def test_parse(self):
        self.assertEqual(parse_overrides(['omegas=0,1,3', 'T=100']), {'omegas': '0,1,3', 'T': '100'})
        self.assertEqual(parse_overrides(None), {})

    def test_malformed(self):
        with self.assertRaises(ValidationError) as caught:
            parse_overrides(['omegas'])
        self.assertEqual(caught.exception.code, 'invalid_override')


class TestBuildConfig(SimpleTestCase):
    def test_precedence(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'config.json'
            path.write_text(json.dumps({'samples': 50, 'seed': 3, 'precision_mode': FIXED, 'T': 300}))
            config = build_config('error_sweep', path, {'samples': '70'}, seed=9, out_dir=tmp)
        self.assertEqual(config['samples'], 70)
        self.assertEqual(config['T'], 300)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.precision_mode, FIXED)
        self.assertEqual(config.out_dir, tmp)

    def test_hash_ignores_out_dir(self):
        first = build_config('cfg_check', out_dir='a')
        second = build_config('cfg_check', out_dir='b')
        self.assertEqual(first.config_hash, second.config_hash)
        self.assertNotEqual(first.config_hash, build_config('cfg_check', seed=1).config_hash)
        self.assertNotEqual(first.config_hash, build_config('cfg_check', overrides={'omegas': '0,1'}).config_hash)

    def test_collects_every_problem(self):
        with self.assertRaises(ValidationError) as caught:
            build_config('cfg_check', overrides={'omegas': '', 'precision_mode': 'fp8', 'bogus': '1'})
        self.assertEqual(set(caught.exception.error_dict), {'omegas', 'precision_mode', '__all__'})

    def test_unknown_command(self):
        with self.assertRaises(ValidationError):
            build_config('train_everything')

    def test_precision_model(self):
        config = build_config('error_sweep', overrides={'precision_mode': FIXED, 'delta_max': '0.01'}, seed=4)
        pm = config.precision_model()
        self.assertEqual((pm.mode, pm.delta_max, pm.seed), (FIXED, 0.01, 4))

    def test_config_file_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'config.json'
            with self.assertRaises(ValidationError):
                load_config_file(path)
            path.write_text('[1, 2]')
            with self.assertRaises(ValidationError):
                load_config_file(path)
            path.write_text('{not json')
            with self.assertRaises(ValidationError):
                load_config_file(path)


class TestAppSettings(SimpleTestCase):
    @override_settings(VPRED={'NUM_STEP': 10})
    def test_unknown_app_setting(self):
        with self.assertRaises(ImproperlyConfigured):
            vpred_settings.check()

    def test_unknown_attribute(self):
        with self.assertRaises(AttributeError):
            vpred_settings.NOT_A_SETTING
