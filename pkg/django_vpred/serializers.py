"""
Files written by the experiment commands.

CSV files start with ``# config_hash=...`` and ``# command=...`` comment lines
and print floats with ``repr``, so reruns of a command are byte-identical.
"""
import csv
import hashlib
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .conditioner import ConditionerParams
from .exceptions import CheckpointError
from .head import HeadParams
from .nn import Params

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'django-vpred-checkpoint/1'
PARAM_CLASSES = {cls.__name__: cls for cls in (Params, HeadParams, ConditionerParams)}


def plain(value):
    """numpy scalars and arrays to JSON-friendly Python values."""
    if isinstance(value, dict):
        return {str(key): plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def canonical_json(data):
    return json.dumps(plain(data), sort_keys=True, separators=(',', ':'), allow_nan=True)


def content_hash(data):
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def format_value(value):
    value = plain(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows, config_hash, command):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        handle.write('# config_hash=%s\n' % config_hash)
        handle.write('# command=%s\n' % command)
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(value) for value in row])
    logger.info('Wrote %s', path)
    return path


def read_csv(path):
    """(header comments as a dict, column names, rows of strings)."""
    comments = {}
    with Path(path).open(newline='') as handle:
        lines = handle.read().splitlines()
    body = []
    for line in lines:
        if line.startswith('# ') and not body:
            key, _, value = line[2:].partition('=')
            comments[key] = value
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return comments, rows[0], rows[1:]


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(plain(data), sort_keys=True, indent=2) + '\n')
    logger.info('Wrote %s', path)
    return path


def write_report(path, config_hash, command, suites):
    return write_json(path, {'config_hash': config_hash, 'command': command, 'suites': list(suites)})


def suite_result(suite, max_abs_err, tolerance=None, **extra):
    """One report entry; suites without a tolerance are reported, not asserted."""
    entry = {'suite': suite, 'max_abs_err': float(max_abs_err), 'tolerance': tolerance}
    entry['pass'] = None if tolerance is None else bool(max_abs_err <= tolerance)
    entry.update(extra)
    return entry


def write_config_echo(path, config):
    return write_json(path, {**config.to_dict(), 'config_hash': config.config_hash})


def save_checkpoint(path, groups, config=None, step=0):
    """
    ``groups`` maps a group name (``head``, ``conditioner_ema``...) to a
    Params instance. Arrays are stored as little-endian float32.
    """
    names, shapes, blobs = [], [], []
    group_header = OrderedDict()
    for group, params in groups.items():
        group_header[group] = {'class': type(params).__name__, 'meta': params.meta, 'names': list(params)}
        for name, value in params.items():
            names.append('%s/%s' % (group, name))
            shapes.append(list(value.shape))
            blobs.append(np.ascontiguousarray(value, dtype='<f4').tobytes())
    header = json.dumps(plain({
        'format': CHECKPOINT_FORMAT,
        'names': names,
        'shapes': shapes,
        'groups': group_header,
        'config': config or {},
        'step': step,
    }), sort_keys=True).encode('utf-8')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as handle:
        handle.write(struct.pack('<I', len(header)))
        handle.write(header)
        for blob in blobs:
            handle.write(blob)
    logger.info('Saved checkpoint %s (%d arrays)', path, len(names))
    return path


def load_checkpoint(path):
    """(groups of float64 Params, header dict)."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError('Cannot read checkpoint %s: %s' % (path, e)) from e
    if len(data) < 4:
        raise CheckpointError('%s is too short to be a checkpoint' % path)
    (length,) = struct.unpack('<I', data[:4])
    try:
        header = json.loads(data[4:4 + length].decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError('Unreadable checkpoint header in %s' % path) from e
    if header.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError('Unsupported checkpoint format %r' % header.get('format'))

    blob = data[4 + length:]
    expected = sum(int(np.prod(shape)) for shape in header['shapes']) * 4
    if len(blob) != expected:
        raise CheckpointError('Checkpoint %s holds %d bytes of parameters, expected %d' % (path, len(blob), expected))
    flat = np.frombuffer(blob, dtype='<f4')
    arrays, offset = {}, 0
    for name, shape in zip(header['names'], header['shapes']):
        size = int(np.prod(shape))
        arrays[name] = flat[offset:offset + size].astype(np.float64).reshape(shape)
        offset += size

    groups = OrderedDict()
    for group, spec in header['groups'].items():
        cls = PARAM_CLASSES.get(spec['class'])
        if cls is None:
            raise CheckpointError('Unknown parameter class %r' % spec['class'])
        groups[group] = cls(
            OrderedDict((name, arrays['%s/%s' % (group, name)]) for name in spec['names']), **spec['meta']
        )
    return groups, header


def dump_trajectory_csv(path, trajectories, config_hash, command):
    """Rows of (traj_id, t, component_index, value) for recorded trajectories."""
    def rows():
        for traj_id, trajectory in enumerate(trajectories):
            for t, state in zip(trajectory.step_list, trajectory.states):
                for index, value in enumerate(np.ravel(state)):
                    yield traj_id, t, index, float(value)

    return write_csv(path, ('traj_id', 't', 'component_index', 'value'), rows(), config_hash, command)


def write_grids(path, grids, manifest, config_hash, command):
    """Grid CSV (grid_id, position, component, value) plus a JSON manifest next to it."""
    def rows():
        for grid_id, grid in enumerate(grids):
            for position in range(grid.n):
                for component in range(grid.d):
                    yield grid_id, int(grid.positions[position]), component, float(grid.values[position, component])

    path = write_csv(path, ('grid_id', 'position', 'component', 'value'), rows(), config_hash, command)
    write_json(Path(path).with_suffix('.json'), {**manifest, 'config_hash': config_hash})
    return path
