#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_param
------------

Tests for the linear target family and conversions between its members.
"""
import numpy as np
from django.test import SimpleTestCase

from django_vpred.exceptions import IllPosedParameterizationError, ShapeMismatchError
from django_vpred.param import (
    CUSTOM, EPS, V, X, Parameterization, by_name, convert, recover_x_eps, target, unit_step_gain,
)
from django_vpred.schedule import COSINE, Schedule, forward_diffuse, make_schedule


class TestTarget(SimpleTestCase):
    def setUp(self):
        self.s = Schedule('custom', 2, [1.0, 0.5, 0.0])

    def test_v_endpoints(self):
        x, eps = np.array([0.3, -0.7]), np.array([-1.2, 0.4])
        np.testing.assert_array_equal(target(V, self.s, 0, x, eps).values, eps)
        np.testing.assert_array_equal(target(V, self.s, 2, x, eps).values, -x)

    def test_v_quarter_turn(self):
        self.assertAlmostEqual(float(target(V, self.s, 1, 0.3, -1.2).values), -1.0606602, places=7)

    def test_named_kinds(self):
        x, eps = np.array([0.3]), np.array([-1.2])
        np.testing.assert_array_equal(target(EPS, self.s, 1, x, eps).values, eps)
        np.testing.assert_array_equal(target(X, self.s, 1, x, eps).values, x)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            target(V, self.s, 1, np.zeros(2), np.zeros(3))

    def test_unit_scale(self):
        s = make_schedule(COSINE, 1000)
        gen = np.random.default_rng(3)
        for p in (EPS, X, V, Parameterization(CUSTOM, psi_offset=0.4)):
            for t in (1, 300, 999):
                u = target(p, s, t, gen.standard_normal(100000), gen.standard_normal(100000)).values
                self.assertAlmostEqual(np.mean((u / p.r) ** 2), 1.0, delta=0.02)


class TestRecovery(SimpleTestCase):
    def setUp(self):
        self.s = Schedule('custom', 2, [1.0, 0.5, 0.0])

    def test_eps_pred_example(self):
        x_hat, _ = recover_x_eps(EPS, self.s, 1, 0.0, 1.0)
        self.assertEqual(float(x_hat), -1.0)

    def test_v_pred_example(self):
        x_hat, eps_hat = recover_x_eps(V, self.s, 1, -0.6363961, -1.0606602)
        self.assertAlmostEqual(float(x_hat), 0.3, places=6)
        self.assertAlmostEqual(float(eps_hat), -1.2, places=6)

    def test_round_trip_named_and_custom(self):
        s = make_schedule(COSINE, 1000)
        gen = np.random.default_rng(11)
        offsets = gen.uniform(-np.pi, np.pi, size=400)
        customs = [Parameterization(CUSTOM, psi_offset=o) for o in offsets if abs(np.sin(o)) >= 0.1][:100]
        self.assertEqual(len(customs), 100)
        for p in [EPS, X, V] + customs:
            t = int(gen.integers(1, 1001))
            if abs(p.trig(s, t)[2]) < 0.1:
                continue
            x, eps = gen.standard_normal(64), gen.standard_normal(64)
            x_hat, eps_hat = recover_x_eps(p, s, t, forward_diffuse(s, t, x, eps), target(p, s, t, x, eps))
            np.testing.assert_allclose(x_hat, x, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(eps_hat, eps, rtol=1e-12, atol=1e-12)

    def test_ill_posed(self):
        # psi fixed at pi/4 meets phi at t=1
        p = Parameterization(CUSTOM, psi_offset=np.pi / 4, absolute=True)
        with self.assertRaises(IllPosedParameterizationError):
            recover_x_eps(p, self.s, 1, np.zeros(2), np.zeros(2))
        with self.assertRaises(IllPosedParameterizationError):
            recover_x_eps(X, self.s, 0, np.zeros(2), np.zeros(2))
        # Also a ValueError
        with self.assertRaises(ValueError):
            p.check_well_posed(self.s, 1)


class TestConvert(SimpleTestCase):
    def test_identity(self):
        s = make_schedule(COSINE, 100)
        u = np.array([0.1, -0.2])
        out = convert(EPS, EPS, s, 10, np.zeros(2), u)
        np.testing.assert_array_equal(out.values, u)
        self.assertIsNot(out.values, u)

    def test_eps_to_v_matches_direct_target(self):
        s = make_schedule(COSINE, 1000)
        gen = np.random.default_rng(5)
        x, eps = gen.standard_normal(32), gen.standard_normal(32)
        for t in (1, 100, 500, 900):
            x_t = forward_diffuse(s, t, x, eps)
            v = convert(EPS, V, s, t, x_t, target(EPS, s, t, x, eps))
            np.testing.assert_allclose(v.values, target(V, s, t, x, eps).values, atol=1e-10)

    def test_v_to_x_at_clean_step(self):
        s = make_schedule(COSINE, 100)
        x, eps = np.array([0.5, -1.5]), np.array([2.0, 0.1])
        out = convert(V, X, s, 0, forward_diffuse(s, 0, x, eps), target(V, s, 0, x, eps))
        np.testing.assert_array_equal(out.values, x)

    def test_transitive_chain(self):
        s = make_schedule(COSINE, 1000)
        gen = np.random.default_rng(6)
        x, eps = gen.standard_normal(16), gen.standard_normal(16)
        t = 400
        x_t = forward_diffuse(s, t, x, eps)
        u = target(EPS, s, t, x, eps)
        chained = convert(V, X, s, t, x_t, convert(EPS, V, s, t, x_t, u))
        np.testing.assert_allclose(chained.values, convert(EPS, X, s, t, x_t, u).values, rtol=1e-10, atol=1e-12)


class TestParameterization(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ValueError):
            Parameterization('score')
        with self.assertRaises(ValueError):
            Parameterization(CUSTOM, r=0.0)

    def test_dict_round_trip(self):
        for p in (EPS, V, Parameterization(CUSTOM, psi_offset=0.25, absolute=True, r=2.0)):
            self.assertEqual(Parameterization.from_dict(p.to_dict()), p)

    def test_by_name(self):
        self.assertEqual(by_name('v-pred'), V)
        with self.assertRaises(KeyError):
            by_name('custom')

    def test_quarter_turn_custom_is_v(self):
        s = make_schedule(COSINE, 100)
        p = Parameterization(CUSTOM, psi_offset=np.pi / 2)
        for got, expected in zip(p.trig(s, 40), V.trig(s, 40)):
            self.assertAlmostEqual(float(got), float(expected), places=12)

    def test_unit_step_gain(self):
        s = make_schedule(COSINE, 1000)
        t = np.arange(1, 1001)
        np.testing.assert_array_equal(unit_step_gain(V, s, t), np.ones(1000))
        np.testing.assert_allclose(unit_step_gain(EPS, s, t), 1.0 / s.cos_phi[t])
