"""
Synthetic continuous-token datasets with known distributions, and sample
divergences used to score generated tokens.

Every dataset is whitened to zero mean and unit variance per token component
using analytic statistics, so diffusion always sees unit-variance data.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import rel_entr

from .exceptions import ShapeMismatchError

logger = logging.getLogger(__name__)

GMM2D = 'gmm2d'
CHECKERBOARD = 'checkerboard'
CORRELATED_GRID = 'correlated-grid'
KINDS = (GMM2D, CHECKERBOARD, CORRELATED_GRID)

SMOOTHING = 0.5
HIST_KL_MIN_SAMPLES = 1000


@dataclass
class GridBatch:
    # (count, n, d), whitened
    values: np.ndarray
    labels: Optional[np.ndarray] = None

    @property
    def count(self):
        return self.values.shape[0]


@dataclass
class ToyDataset:
    kind: str
    params: dict
    mean: np.ndarray
    std: np.ndarray
    n: int = 1
    num_labels: int = 0
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def d(self):
        return self.mean.shape[0]

    @property
    def labelled(self):
        return self.num_labels > 0

    def whiten(self, raw):
        return (raw - self.mean) / self.std

    def unwhiten(self, tokens):
        return tokens * self.std + self.mean

    def sample(self, count, gen):
        return sample_dataset(self, count, gen)

    def sample_tokens(self, count, gen):
        """``count`` tokens pooled over grid positions, with their grid labels."""
        grids = sample_dataset(self, -(-count // self.n), gen)
        tokens = grids.values.reshape(-1, self.d)[:count]
        labels = None
        if grids.labels is not None:
            labels = np.repeat(grids.labels, self.n)[:count]
        return tokens, labels

    def conditional_tokens(self, label, count, gen):
        """Reference tokens (pooled over positions) for one label."""
        if not self.labelled:
            raise ValueError('%s dataset is unlabelled' % self.kind)
        if not 0 <= label < self.num_labels:
            raise ValueError('label must lie in [0, %d), got %r' % (self.num_labels, label))
        if self.kind == CORRELATED_GRID:
            raw = _correlated_grid(self, np.full(-(-count // self.n), label), gen)
        else:
            raw = _gmm(self, np.full(count, label), gen)[:, None, :]
        return self.whiten(raw.reshape(-1, self.d)[:count])

    def manifest(self):
        return {'kind': self.kind, 'params': self.params, 'n': self.n}


def make_gmm2d(means=None, stds=None, weights=None, n=1):
    if means is None:
        angles = 2 * np.pi * np.arange(8) / 8
        means = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    k = means.shape[0]
    stds = np.full(k, 0.25) if stds is None else np.broadcast_to(np.asarray(stds, dtype=np.float64), (k,))
    weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64) / np.sum(weights)
    mean = weights @ means
    second = weights @ (means ** 2 + stds[:, None] ** 2)
    return ToyDataset(
        kind=GMM2D,
        params={'means': means.tolist(), 'stds': stds.tolist(), 'weights': weights.tolist(), 'n': n},
        mean=mean,
        std=np.sqrt(second - mean ** 2),
        n=n,
        num_labels=k,
        extra={'means': means, 'stds': stds, 'weights': weights},
    )


def _checker_squares(size, extent):
    width = 2.0 * extent / size
    corners = [
        (-extent + i * width, -extent + j * width)
        for i in range(size) for j in range(size) if (i + j) % 2 == 0
    ]
    return np.array(corners), width


def make_checkerboard(size=4, extent=2.0, n=1):
    corners, width = _checker_squares(size, extent)
    # Each square is uniform on [a, a + w]^2
    mean = np.mean(corners + width / 2, axis=0)
    second = np.mean((corners ** 2 + corners * (corners + width) + (corners + width) ** 2) / 3.0, axis=0)
    return ToyDataset(
        kind=CHECKERBOARD,
        params={'size': size, 'extent': extent, 'n': n},
        mean=mean,
        std=np.sqrt(second - mean ** 2),
        n=n,
        extra={'corners': corners, 'width': width},
    )


def make_correlated_grid(n=16, modes=8, radius=2.0, twist=np.pi / 8, noise=0.3):
    """
    One shared latent mode per grid (its label) places every token near a
    mode- and position-dependent mean, so tokens inform each other.
    """
    angles = 2 * np.pi * np.arange(modes)[:, None] / modes + twist * np.arange(n)[None, :]
    centres = radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    mean = centres.reshape(-1, 2).mean(axis=0)
    second = (centres.reshape(-1, 2) ** 2).mean(axis=0) + noise ** 2
    return ToyDataset(
        kind=CORRELATED_GRID,
        params={'n': n, 'modes': modes, 'radius': radius, 'twist': twist, 'noise': noise},
        mean=mean,
        std=np.sqrt(second - mean ** 2),
        n=n,
        num_labels=modes,
        extra={'centres': centres, 'noise': noise},
    )


def make_dataset(kind, **params):
    factory = {GMM2D: make_gmm2d, CHECKERBOARD: make_checkerboard, CORRELATED_GRID: make_correlated_grid}
    if kind not in factory:
        raise ValueError('Unknown dataset kind %r, expected one of %s' % (kind, ', '.join(KINDS)))
    return factory[kind](**params)


def _gmm(ds, components, gen):
    means, stds = ds.extra['means'], ds.extra['stds']
    return means[components] + stds[components, None] * gen.standard_normal((len(components), ds.d))


def _correlated_grid(ds, modes, gen):
    centres = ds.extra['centres'][modes]
    return centres + ds.extra['noise'] * gen.standard_normal(centres.shape)


def sample_dataset(ds, count, gen):
    if count < 1:
        raise ValueError('count must be at least 1')
    if ds.kind == GMM2D:
        labels = gen.choice(len(ds.extra['weights']), size=count * ds.n, p=ds.extra['weights'])
        raw = _gmm(ds, labels, gen).reshape(count, ds.n, ds.d)
        labels = labels.reshape(count, ds.n)[:, 0] if ds.n == 1 else None
    elif ds.kind == CHECKERBOARD:
        corners, width = ds.extra['corners'], ds.extra['width']
        picks = gen.integers(0, len(corners), size=count * ds.n)
        raw = (corners[picks] + width * gen.random((count * ds.n, 2))).reshape(count, ds.n, ds.d)
        labels = None
    else:
        labels = gen.integers(0, ds.num_labels, size=count)
        raw = _correlated_grid(ds, labels, gen)
    return GridBatch(values=ds.whiten(raw), labels=labels)


def _as_samples(samples):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    return samples


def hist_kl(samples_a, samples_b, bins=32, min_samples=HIST_KL_MIN_SAMPLES, value_range=None):
    """
    KL(P_a || P_b) between smoothed histograms (add 0.5 per cell) over the
    joint bounding box. Argument order: generated first, reference second.
    """
    a, b = _as_samples(samples_a), _as_samples(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError('Sample sets have different dimensions')
    if a.shape[1] > 2:
        raise ValueError('hist_kl handles at most 2 dimensions; use mmd_rbf instead')
    if min(len(a), len(b)) < min_samples:
        raise ValueError('hist_kl needs at least %d samples per set' % min_samples)
    if bins < 8:
        raise ValueError('hist_kl needs at least 8 bins per axis')
    if value_range is None:
        both = np.concatenate([a, b])
        value_range = list(zip(both.min(axis=0), both.max(axis=0)))
    hist_a, _ = np.histogramdd(a, bins=bins, range=value_range)
    hist_b, _ = np.histogramdd(b, bins=bins, range=value_range)
    p = (hist_a + SMOOTHING) / (hist_a.sum() + SMOOTHING * hist_a.size)
    q = (hist_b + SMOOTHING) / (hist_b.sum() + SMOOTHING * hist_b.size)
    return float(np.sum(rel_entr(p, q)))


def _rbf(distances_sq, bandwidth):
    return np.exp(-0.5 * distances_sq / bandwidth ** 2)


def _mmd_from_kernel(kernel, m):
    kxx, kyy, kxy = kernel[:m, :m], kernel[m:, m:], kernel[:m, m:]
    n = kernel.shape[0] - m
    return (
        (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
        - 2.0 * kxy.sum() / (m * n)
    )


def mmd_rbf(samples_a, samples_b, bandwidth):
    """Unbiased MMD^2 estimate with an RBF kernel."""
    if not bandwidth > 0:
        raise ValueError('bandwidth must be positive')
    a, b = _as_samples(samples_a), _as_samples(samples_b)
    if len(a) < 2 or len(b) < 2:
        raise ValueError('mmd_rbf needs at least 2 samples per set')
    pooled = np.concatenate([a, b])
    return float(_mmd_from_kernel(_rbf(cdist(pooled, pooled, 'sqeuclidean'), bandwidth), len(a)))


def mmd_permutation_test(samples_a, samples_b, bandwidth, permutations, gen):
    """(MMD^2, standard deviation of the permutation null, p-value)."""
    a, b = _as_samples(samples_a), _as_samples(samples_b)
    pooled = np.concatenate([a, b])
    kernel = _rbf(cdist(pooled, pooled, 'sqeuclidean'), bandwidth)
    observed = _mmd_from_kernel(kernel, len(a))
    null = np.empty(permutations)
    for i in range(permutations):
        order = gen.permutation(len(pooled))
        null[i] = _mmd_from_kernel(kernel[np.ix_(order, order)], len(a))
    p_value = (1 + np.sum(null >= observed)) / (1 + permutations)
    return float(observed), float(np.std(null)), float(p_value)


def median_bandwidth(samples_a, samples_b, limit=1000):
    pooled = np.concatenate([_as_samples(samples_a)[:limit], _as_samples(samples_b)[:limit]])
    return float(np.median(pdist(pooled)))
