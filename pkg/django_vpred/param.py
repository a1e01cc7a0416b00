"""
The linear family of denoiser targets

    u_t = r * cos(psi_t) * x + r * sin(psi_t) * eps

and conversions between its members. eps-prediction is psi = pi/2,
x-prediction is psi = 0 and v-prediction is psi = phi_t + pi/2, all with
r = 1.

Trigonometric values of psi are assembled from the schedule's cos/sin tables
with angle-addition identities, never from ``np.sin(psi)``, so the named
parameterizations are exact wherever the tables are.
"""
from dataclasses import dataclass

import numpy as np

from .conf import vpred_settings
from .exceptions import IllPosedParameterizationError, ShapeMismatchError
from .schedule import column

EPS_PRED = 'eps-pred'
X_PRED = 'x-pred'
V_PRED = 'v-pred'
CUSTOM = 'custom'
KINDS = (EPS_PRED, X_PRED, V_PRED, CUSTOM)


@dataclass(frozen=True)
class Parameterization:
    kind: str = V_PRED
    # custom only: psi = psi_offset if absolute, else phi_t + psi_offset
    psi_offset: float = 0.0
    absolute: bool = False
    r: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError('Unknown parameterization %r, expected one of %s' % (self.kind, ', '.join(KINDS)))
        if not self.r > 0.0:
            raise ValueError('r must be positive, got %r' % (self.r,))

    def __str__(self):
        if self.kind == CUSTOM:
            return '%s(%s%.6g)' % (self.kind, '' if self.absolute else 'phi+', self.psi_offset)
        return self.kind

    def trig(self, s, t):
        """(cos psi, sin psi, sin(psi - phi)) at step(s) t."""
        t = s.check_step(t)
        cos_phi, sin_phi = s.cos_phi[t], s.sin_phi[t]
        ones = np.ones_like(cos_phi)
        if self.kind == EPS_PRED:
            return 0.0 * ones, ones, cos_phi
        if self.kind == X_PRED:
            return ones, 0.0 * ones, -sin_phi
        if self.kind == V_PRED:
            return -sin_phi, cos_phi, ones
        c, d = np.cos(self.psi_offset), np.sin(self.psi_offset)
        if self.absolute:
            return c * ones, d * ones, d * cos_phi - c * sin_phi
        return cos_phi * c - sin_phi * d, sin_phi * c + cos_phi * d, d * ones

    def psi(self, s, t):
        cos_psi, sin_psi, _ = self.trig(s, t)
        return np.arctan2(sin_psi, cos_psi)

    def check_well_posed(self, s, t, floor=None):
        _, _, gap = self.trig(s, t)
        return self.check_gap(gap, t, floor)

    def check_gap(self, gap, t, floor=None):
        floor = vpred_settings.ILL_POSED_FLOOR if floor is None else floor
        if np.any(np.abs(gap) < floor):
            raise IllPosedParameterizationError(
                '%s has |sin(psi - phi)| = %.3g < %.3g at t=%s' % (
                    self, np.min(np.abs(gap)), floor, np.asarray(t).tolist()
                )
            )
        return gap

    def to_dict(self):
        data = {'kind': self.kind}
        if self.kind == CUSTOM:
            data.update(psi_offset=self.psi_offset, absolute=self.absolute)
        if self.r != 1.0:
            data['r'] = self.r
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(
            kind=data['kind'],
            psi_offset=float(data.get('psi_offset', 0.0)),
            absolute=bool(data.get('absolute', False)),
            r=float(data.get('r', 1.0)),
        )


EPS = Parameterization(EPS_PRED)
X = Parameterization(X_PRED)
V = Parameterization(V_PRED)


def by_name(name):
    return {EPS_PRED: EPS, X_PRED: X, V_PRED: V}[name]


@dataclass(frozen=True, eq=False)
class TargetVector:
    values: np.ndarray
    step: object
    param: Parameterization

    @property
    def kind(self):
        return self.param.kind

    def replace(self, values):
        return TargetVector(values=values, step=self.step, param=self.param)


def _values(u):
    return u.values if isinstance(u, TargetVector) else np.asarray(u, dtype=np.float64)


def _same_shape(*arrays):
    shapes = {np.shape(array) for array in arrays}
    if len(shapes) != 1:
        raise ShapeMismatchError('Mismatched shapes: %s' % ', '.join(str(shape) for shape in shapes))


def target(p, s, t, x, eps):
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(x, eps)
    cos_psi, sin_psi, gap = p.trig(s, t)
    # At t=0 nothing needs recovering, so only noisy steps must be well-posed
    noisy = np.asarray(t) >= 1
    p.check_gap(np.where(noisy, gap, 1.0), t)
    values = p.r * (column(cos_psi, x) * x + column(sin_psi, x) * eps)
    return TargetVector(values=values, step=t, param=p)


def recover_x_eps(p, s, t, x_t, u):
    x_t = np.asarray(x_t, dtype=np.float64)
    u = _values(u)
    _same_shape(x_t, u)
    cos_psi, sin_psi, gap = p.trig(s, t)
    p.check_gap(gap, t)
    cos_phi, sin_phi = column(s.cos_phi[t], x_t), column(s.sin_phi[t], x_t)
    cos_psi, sin_psi, gap = column(cos_psi, x_t), column(sin_psi, x_t), column(gap, x_t)
    unit = u / p.r
    x_hat = (sin_psi * x_t - sin_phi * unit) / gap
    eps_hat = -(cos_psi * x_t - cos_phi * unit) / gap
    return x_hat, eps_hat


def convert(p_from, p_to, s, t, x_t, u_from):
    if p_from == p_to:
        return TargetVector(values=np.array(_values(u_from)), step=t, param=p_to)
    x_hat, eps_hat = recover_x_eps(p_from, s, t, x_t, u_from)
    return target(p_to, s, t, x_hat, eps_hat)


def unit_step_gain(p, s, t):
    """1 / |r sin(psi - phi)|: relative output error -> v-space error per unit of u."""
    _, _, gap = p.trig(s, t)
    return 1.0 / np.abs(p.r * gap)
