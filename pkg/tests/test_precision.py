#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_precision
------------

Tests for bfloat16 rounding, the relative-error models and the closed-form
error theory they are checked against.
"""
import numpy as np
from django.test import SimpleTestCase

from django_vpred.exceptions import ScheduleError
from django_vpred.param import EPS, V
from django_vpred.precision import (
    BF16, EXACT, FIXED, UNIFORM, PrecisionModel, eps_pred_step_error_std, equiv_vpred_error, inject,
    measure_unit_step_error, round_bf16, step_error_std_theory, theoretical_vloss_overhead, unit_step_error_sq_theory,
)
from django_vpred.rng import stream
from django_vpred.sampler import ddim_step_general
from django_vpred.schedule import COSINE, Schedule, make_schedule


class TestRoundBf16(SimpleTestCase):
    def test_known_values(self):
        self.assertEqual(round_bf16(1.0), 1.0)
        self.assertEqual(round_bf16(3.1415926), 3.140625)
        self.assertEqual(round_bf16(-3.1415926), -3.140625)

    def test_ties_to_even(self):
        # Halfway cases between neighbours spaced 2**-7 apart at 1.0
        self.assertEqual(round_bf16(1.0 + 2.0 ** -8), 1.0)
        self.assertEqual(round_bf16(1.0 + 3 * 2.0 ** -8), 1.0 + 2.0 ** -6)

    def test_idempotent(self):
        x = np.random.default_rng(0).standard_normal(10 ** 6) * 10.0
        once = round_bf16(x)
        np.testing.assert_array_equal(round_bf16(once), once)

    def test_relative_error_bound(self):
        x = np.random.default_rng(1).standard_normal(10 ** 5)
        self.assertTrue(np.all(np.abs(round_bf16(x) - x) <= 2.0 ** -8 * np.abs(x)))

    def test_non_finite_passes_through(self):
        out = round_bf16(np.array([np.inf, -np.inf, np.nan]))
        self.assertEqual(out[0], np.inf)
        self.assertEqual(out[1], -np.inf)
        self.assertTrue(np.isnan(out[2]))

    def test_overflow_and_subnormals(self):
        self.assertEqual(round_bf16(1e39), np.inf)
        self.assertEqual(round_bf16(2.0 ** -130), 2.0 ** -130)
        self.assertEqual(round_bf16(1e-45), 0.0)

    def test_scalar_in_scalar_out(self):
        self.assertIsInstance(round_bf16(0.1), float)


class TestPrecisionModel(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ValueError):
            PrecisionModel('fp8')
        with self.assertRaises(ValueError):
            PrecisionModel(FIXED, delta_max=0.0)
        with self.assertRaises(ValueError):
            PrecisionModel(FIXED, delta_max=1.0)

    def test_exact_is_identity(self):
        u = np.random.default_rng(2).standard_normal(100)
        np.testing.assert_array_equal(inject(PrecisionModel(EXACT), u), u)

    def test_fixed_delta_values(self):
        out = inject(PrecisionModel(FIXED), np.ones(1000))
        self.assertEqual(set(np.unique(out)), {0.9921875, 1.0078125})

    def test_uniform_delta_variance(self):
        out = inject(PrecisionModel(UNIFORM), np.ones(10 ** 6))
        self.assertAlmostEqual(np.mean((out - 1.0) ** 2) / (1 / 128) ** 2, 1 / 3, delta=0.02 / 3)

    def test_bf16_mode_rounds(self):
        self.assertEqual(inject(PrecisionModel(BF16), np.array([3.1415926]))[0], 3.140625)

    def test_streams(self):
        u = np.ones(64)
        first = inject(PrecisionModel(FIXED, seed=3), u)
        np.testing.assert_array_equal(inject(PrecisionModel(FIXED, seed=3), u), first)
        spawned = PrecisionModel(FIXED, seed=3).spawn('worker', 1)
        self.assertFalse(np.array_equal(inject(spawned, u), first))

    def test_dict_round_trip(self):
        pm = PrecisionModel(UNIFORM, delta_max=0.01, seed=4)
        restored = PrecisionModel.from_dict(pm.to_dict())
        self.assertEqual((restored.mode, restored.delta_max, restored.seed), (UNIFORM, 0.01, 4))


class TestErrorTheory(SimpleTestCase):
    def setUp(self):
        self.s = make_schedule(COSINE, 1000)

    def test_zero_length_step(self):
        self.assertEqual(eps_pred_step_error_std(self.s, 300, 300, 1 / 128), 0.0)

    def test_small_near_clean(self):
        self.assertLess(eps_pred_step_error_std(self.s, 2, 1, 1 / 128), 1 / 128)

    def test_explodes_near_noise(self):
        s = Schedule('custom', 2, [1.0, 0.5, 1e-9])
        self.assertGreater(eps_pred_step_error_std(s, 2, 1, 1 / 128), 1.0)

    def test_linear_in_delta(self):
        small = eps_pred_step_error_std(self.s, 900, 800, 1 / 256)
        self.assertEqual(eps_pred_step_error_std(self.s, 900, 800, 1 / 128), 2 * small)

    def test_rejects_increasing_steps(self):
        with self.assertRaises(ScheduleError):
            eps_pred_step_error_std(self.s, 10, 20, 1 / 128)
        with self.assertRaises(ScheduleError):
            step_error_std_theory(V, self.s, 10, 20, PrecisionModel(FIXED))

    def test_vloss_overhead(self):
        self.assertAlmostEqual(float(theoretical_vloss_overhead(self.s, 0, 1 / 128)), 6.1035e-5, places=9)
        s = Schedule('custom', 2, [1.0, 0.01, 0.001])
        self.assertAlmostEqual(float(theoretical_vloss_overhead(s, 1, 1 / 128)), 6.1035e-3, places=7)
        self.assertEqual(float(theoretical_vloss_overhead(s, 1, 0.0)), 0.0)

    def test_equiv_vpred_error(self):
        s = Schedule('custom', 2, [1.0, 0.25, 0.0])
        self.assertEqual(float(equiv_vpred_error(s, 1, 1.0, 1 / 128)), 0.015625)

    def test_general_matches_eps_closed_form(self):
        pm = PrecisionModel(FIXED)
        for t_from, t_to in ((1000, 990), (500, 400), (20, 0)):
            self.assertAlmostEqual(
                step_error_std_theory(EPS, self.s, t_from, t_to, pm),
                eps_pred_step_error_std(self.s, t_from, t_to, 1 / 128),
                delta=1e-12 * max(1.0, eps_pred_step_error_std(self.s, t_from, t_to, 1 / 128)),
            )

    def test_v_pred_error_is_t_independent(self):
        pm = PrecisionModel(FIXED)
        t = np.arange(1, 1001)
        np.testing.assert_allclose(unit_step_error_sq_theory(V, self.s, t, pm), (1 / 128) ** 2)

    def test_step_error_decomposition(self):
        # One DDIM step moves by sin(dphi) * delta * u / sin(psi - phi) under fixed-delta
        gen = stream(0, 'decomposition')
        x_t, u = gen.standard_normal(256), gen.standard_normal(256)
        for p in (EPS, V):
            for t_from, t_to in ((900, 880), (300, 250)):
                exact = ddim_step_general(p, self.s, t_from, t_to, x_t, u)
                noisy = ddim_step_general(p, self.s, t_from, t_to, x_t, u, PrecisionModel(FIXED, seed=1))
                _, _, gap = p.trig(self.s, t_from)
                sin_dphi = np.sin(self.s.phi[t_to] - self.s.phi[t_from])
                np.testing.assert_allclose(
                    np.abs(noisy - exact), np.abs(sin_dphi / gap) * (1 / 128) * np.abs(u), rtol=1e-6, atol=1e-12,
                )


class TestMonteCarlo(SimpleTestCase):
    def setUp(self):
        self.s = make_schedule(COSINE, 1000)

    def test_fixed_delta_matches_theory(self):
        pm = PrecisionModel(FIXED, seed=5)
        for p in (EPS, V):
            for t in (100, 500, 900, 990):
                m = measure_unit_step_error(p, self.s, t, pm, 10 ** 5, stream(5, 'mc', str(p), t))
                theory = float(unit_step_error_sq_theory(p, self.s, t, pm))
                self.assertAlmostEqual(m.mean_sq / theory, 1.0, delta=0.05)
                self.assertLess(abs(m.cross), 3 * m.cross_stderr)

    def test_eps_overhead_tracks_inverse_alpha_bar(self):
        pm = PrecisionModel(FIXED, seed=6)
        for t in (200, 600, 950):
            m = measure_unit_step_error(EPS, self.s, t, pm, 10 ** 5, stream(6, 'mc', t))
            self.assertAlmostEqual(m.mean_sq / float(theoretical_vloss_overhead(self.s, t, 1 / 128)), 1.0, delta=0.05)

    def test_bf16_slope(self):
        pm = PrecisionModel(BF16)
        t = np.array([t for t in range(1, 1001, 9) if 1e-4 <= self.s.alpha_bar[t] <= 0.5])
        errors = [
            measure_unit_step_error(EPS, self.s, int(step), pm, 20000, stream(7, 'bf16', int(step))).mean_sq
            for step in t
        ]
        slope = np.polyfit(np.log(self.s.alpha_bar[t]), np.log(errors), 1)[0]
        self.assertAlmostEqual(slope, -1.0, delta=0.1)
