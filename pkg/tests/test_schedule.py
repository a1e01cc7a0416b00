#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_schedule
------------

Tests for `django_vpred` schedule module.
"""
import numpy as np
from django.test import SimpleTestCase, override_settings

from django_vpred.exceptions import ScheduleError, ShapeMismatchError, StepRangeError
from django_vpred.schedule import (
    COSINE, LINEAR, UNIFORM_PHI, UNIFORM_T, Schedule, forward_diffuse, make_schedule, make_step_list, phase_of,
)


class TestMakeSchedule(SimpleTestCase):
    def test_cosine_endpoints(self):
        s = make_schedule(COSINE, 1000)
        self.assertEqual(s.alpha_bar[0], 1.0)
        self.assertAlmostEqual(s.alpha_bar[500], 0.5, places=15)
        # Floored, never exactly zero
        self.assertEqual(s.alpha_bar[1000], 1e-9)

    def test_linear_strictly_decreasing(self):
        s = make_schedule(LINEAR, 10)
        self.assertTrue(np.all(np.diff(s.alpha_bar) < 0))
        self.assertTrue(np.all((s.alpha_bar >= 0) & (s.alpha_bar <= 1)))

    def test_rejects_bad_step_counts(self):
        with self.assertRaises(ScheduleError):
            make_schedule(COSINE, 0)
        with self.assertRaises(ScheduleError):
            make_schedule(COSINE, 2.5)

    def test_rejects_unknown_kind(self):
        with self.assertRaises(ScheduleError):
            make_schedule('sigmoid', 10)

    def test_rejects_invalid_tables(self):
        with self.assertRaises(ScheduleError):
            Schedule('custom', 2, [1.0, 0.5, 0.5])
        with self.assertRaises(ScheduleError):
            Schedule('custom', 2, [0.9, 0.5, 0.1])
        with self.assertRaises(ScheduleError):
            Schedule('custom', 3, [1.0, 0.5, 0.1])

    def test_tables_are_read_only(self):
        s = make_schedule(COSINE, 10)
        with self.assertRaises(ValueError):
            s.alpha_bar[3] = 0.0
        with self.assertRaises(ValueError):
            s.cos_phi[3] = 0.0

    def test_trig_tables_are_consistent(self):
        s = make_schedule(COSINE, 1000)
        self.assertTrue(np.all(np.abs(s.cos_phi ** 2 + s.sin_phi ** 2 - 1.0) <= 4 * np.finfo(np.float64).eps))

    @override_settings(VPRED={'NUM_STEPS': 50, 'SCHEDULE_KIND': 'linear'})
    def test_defaults_follow_settings(self):
        s = make_schedule()
        self.assertEqual(s.T, 50)
        self.assertEqual(s.kind, LINEAR)

    def test_dict_round_trip(self):
        s = make_schedule(COSINE, 100)
        restored = Schedule.from_dict(s.to_dict())
        np.testing.assert_array_equal(restored.alpha_bar, s.alpha_bar)
        self.assertEqual(restored.T, 100)


class TestPhase(SimpleTestCase):
    def setUp(self):
        self.quarter = Schedule('custom', 2, [1.0, 0.25, 0.0])

    def test_endpoints(self):
        self.assertEqual(phase_of(self.quarter, 0), 0.0)
        self.assertEqual(phase_of(self.quarter, 2), np.pi / 2)

    def test_quarter_alpha_bar(self):
        self.assertEqual(self.quarter.cos_phi[1], 0.5)
        self.assertAlmostEqual(self.quarter.sin_phi[1], 0.8660254, places=7)

    def test_monotone(self):
        s = make_schedule(COSINE, 1000)
        self.assertTrue(np.all(np.diff(phase_of(s, np.arange(1001))) > 0))

    def test_out_of_range(self):
        s = make_schedule(COSINE, 10)
        with self.assertRaises(StepRangeError):
            phase_of(s, 11)
        # Also an IndexError for callers that treat steps as indices
        with self.assertRaises(IndexError):
            phase_of(s, -1)


class TestForwardDiffuse(SimpleTestCase):
    def test_clean_step_is_exact(self):
        s = make_schedule(COSINE, 1000)
        x = np.random.default_rng(0).standard_normal((50, 3))
        eps = np.random.default_rng(1).standard_normal((50, 3))
        np.testing.assert_array_equal(forward_diffuse(s, 0, x, eps), x)

    def test_last_step_is_noise(self):
        s = make_schedule(COSINE, 1000)
        x = np.random.default_rng(0).standard_normal(100)
        eps = np.random.default_rng(1).standard_normal(100)
        np.testing.assert_allclose(forward_diffuse(s, 1000, x, eps), eps, atol=2e-4)

    def test_quarter_turn_example(self):
        s = Schedule('custom', 2, [1.0, 0.5, 0.0])
        self.assertAlmostEqual(float(forward_diffuse(s, 1, 0.3, -1.2)), -0.6363961, places=7)

    def test_per_sample_steps(self):
        s = make_schedule(COSINE, 100)
        x, eps = np.ones((3, 2)), np.zeros((3, 2))
        out = forward_diffuse(s, np.array([0, 50, 100]), x, eps)
        np.testing.assert_allclose(out[:, 0], s.cos_phi[[0, 50, 100]])

    def test_unit_variance(self):
        s = make_schedule(COSINE, 1000)
        gen = np.random.default_rng(7)
        for t in (1, 250, 500, 900):
            out = forward_diffuse(s, t, gen.standard_normal(100000), gen.standard_normal(100000))
            self.assertAlmostEqual(np.var(out), 1.0, delta=0.02)

    def test_shape_mismatch(self):
        s = make_schedule(COSINE, 10)
        with self.assertRaises(ShapeMismatchError):
            forward_diffuse(s, 1, np.zeros(3), np.zeros(4))


class TestStepList(SimpleTestCase):
    def test_uniform_t(self):
        s = make_schedule(COSINE, 1000)
        self.assertEqual(make_step_list(s, 10, UNIFORM_T), list(range(1000, -1, -100)))

    def test_uniform_phi(self):
        s = make_schedule(COSINE, 1000)
        steps = make_step_list(s, 20, UNIFORM_PHI)
        self.assertEqual(steps[0], 1000)
        self.assertEqual(steps[-1], 0)
        self.assertTrue(all(later < earlier for earlier, later in zip(steps, steps[1:])))

    def test_more_steps_than_schedule(self):
        s = make_schedule(LINEAR, 5)
        self.assertEqual(make_step_list(s, 50), [5, 4, 3, 2, 1, 0])

    def test_rejects_bad_input(self):
        s = make_schedule(LINEAR, 5)
        with self.assertRaises(ScheduleError):
            make_step_list(s, 0)
        with self.assertRaises(ScheduleError):
            make_step_list(s, 3, 'log')
