#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_serializers
------------

Tests for checkpoints and the CSV/JSON outputs.
"""
import json
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from django_vpred.argen import TokenGrid
from django_vpred.conditioner import ConditionerParams, init_conditioner
from django_vpred.exceptions import CheckpointError
from django_vpred.head import HeadParams, init_head
from django_vpred.param import EPS
from django_vpred.rng import stream
from django_vpred.serializers import (
    content_hash, load_checkpoint, read_csv, save_checkpoint, suite_result, write_csv, write_grids,
)


class TestCheckpoint(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'state.ckpt'
        gen = stream(0, 'checkpoint')
        self.head = init_head(2, 4, 8, 2, 50, gen, param=EPS)
        self.conditioner = init_conditioner(2, 4, 3, 5, gen, width=8, depth=1)

    def test_round_trip(self):
        save_checkpoint(self.path, OrderedDict(head=self.head, conditioner=self.conditioner),
                        config={'note': 'x'}, step=7)
        groups, header = load_checkpoint(self.path)
        self.assertEqual(list(groups), ['head', 'conditioner'])
        self.assertIsInstance(groups['head'], HeadParams)
        self.assertIsInstance(groups['conditioner'], ConditionerParams)
        self.assertEqual(groups['head'].param, EPS)
        self.assertEqual(groups['conditioner'].null_label, 5)
        self.assertEqual((header['config'], header['step']), ({'note': 'x'}, 7))
        for name, value in self.head.items():
            np.testing.assert_array_equal(groups['head'][name], value.astype(np.float32))
            self.assertEqual(groups['head'][name].dtype, np.float64)

    def test_saving_is_deterministic(self):
        save_checkpoint(self.path, OrderedDict(head=self.head))
        other = Path(self.tmp.name) / 'again.ckpt'
        save_checkpoint(other, OrderedDict(head=self.head))
        self.assertEqual(self.path.read_bytes(), other.read_bytes())

    def test_truncated(self):
        save_checkpoint(self.path, OrderedDict(head=self.head))
        self.path.write_bytes(self.path.read_bytes()[:-4])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_garbage(self):
        self.path.write_bytes(b'\x05\x00\x00\x00notjson')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
        self.path.write_bytes(b'\x01')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_wrong_format(self):
        header = json.dumps({'format': 'something-else/1'}).encode()
        self.path.write_bytes(len(header).to_bytes(4, 'little') + header)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)


class TestOutputs(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_csv_header_and_floats(self):
        rows = [(1, 0.1, 'v-pred'), (2, np.float64(1 / 3), 'x')]
        path = write_csv(self.dir / 'out.csv', ('t', 'value', 'kind'), rows, 'abc', 'error_sweep')
        lines = path.read_text().splitlines()
        self.assertEqual(lines[:3], ['# config_hash=abc', '# command=error_sweep', 't,value,kind'])
        self.assertEqual(lines[4], '2,0.3333333333333333,x')
        comments, columns, rows = read_csv(path)
        self.assertEqual(comments, {'config_hash': 'abc', 'command': 'error_sweep'})
        self.assertEqual(columns, ['t', 'value', 'kind'])
        self.assertEqual(rows[0], ['1', '0.1', 'v-pred'])

    def test_grids(self):
        grid = TokenGrid(values=[[0.5, -1.0], [2.0, 0.25]], mask=[False, False], positions=[0, 1])
        path = write_grids(self.dir / 'grids.csv', [grid], {'n': 2, 'd': 2}, 'abc', 'sample_eval')
        _, columns, rows = read_csv(path)
        self.assertEqual(columns, ['grid_id', 'position', 'component', 'value'])
        self.assertEqual(rows[3], ['0', '1', '1', '0.25'])
        manifest = json.loads(path.with_suffix('.json').read_text())
        self.assertEqual(manifest, {'n': 2, 'd': 2, 'config_hash': 'abc'})

    def test_suite_result(self):
        self.assertTrue(suite_result('a', 1e-12, 1e-9)['pass'])
        self.assertFalse(suite_result('a', 1e-6, 1e-9)['pass'])
        self.assertIsNone(suite_result('a', 1e-6)['pass'])

    def test_content_hash(self):
        self.assertEqual(content_hash({'a': 1, 'b': [1.0]}), content_hash({'b': [np.float64(1.0)], 'a': np.int64(1)}))
        self.assertNotEqual(content_hash({'a': 1}), content_hash({'a': 2}))
