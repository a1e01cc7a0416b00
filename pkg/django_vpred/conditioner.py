"""
A small set-attention encoder that turns a partially masked token grid (and
an optional label) into one condition vector z per position.

Sequence layout, one row per grid::

    [context] [position 0] [position 1] ... [position n-1]

The context slot holds the label embedding (the last row of ``label_embed``
is the learned null condition). Known positions carry ``token_proj(x) +
pos_embed``, unknown ones ``mask_embed + pos_embed``. Attention is
bidirectional over the context and the known positions only. Rows are sorted
by position id before anything is computed, so the order tokens arrive in
cannot change a single bit of z.
"""
from collections import OrderedDict

import numpy as np

from .exceptions import ShapeMismatchError
from .nn import (
    Params, affine, affine_backward, attention, attention_backward, layer_norm, layer_norm_backward, silu,
    silu_backward,
)


class ConditionerParams(Params):
    @property
    def null_label(self):
        return self.num_labels

    def layer_names(self, i):
        prefix = 'layers.%d.' % i
        return tuple(prefix + name for name in ('wq', 'wk', 'wv', 'wo', 'linear1', 'linear2'))


def init_conditioner(token_dim, cond_dim, n, num_labels, gen, width=128, depth=2):
    def normal(fan_in, fan_out):
        return gen.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    arrays = OrderedDict()
    arrays['label_embed'] = 0.02 * gen.standard_normal((num_labels + 1, width))
    arrays['pos_embed'] = 0.02 * gen.standard_normal((n, width))
    arrays['mask_embed'] = 0.02 * gen.standard_normal(width)
    arrays['token_proj.weight'] = normal(token_dim, width)
    arrays['token_proj.bias'] = np.zeros(width)
    for i in range(depth):
        prefix = 'layers.%d.' % i
        for name in ('wq', 'wk', 'wv', 'wo'):
            arrays[prefix + name] = normal(width, width)
        arrays[prefix + 'linear1.weight'] = normal(width, width)
        arrays[prefix + 'linear1.bias'] = np.zeros(width)
        arrays[prefix + 'linear2.weight'] = normal(width, width)
        arrays[prefix + 'linear2.bias'] = np.zeros(width)
    arrays['out_proj.weight'] = normal(width, cond_dim)
    arrays['out_proj.bias'] = np.zeros(cond_dim)
    return ConditionerParams(
        arrays, token_dim=token_dim, cond_dim=cond_dim, n=n, num_labels=num_labels, width=width, depth=depth,
    )


def _canonical(cp, values, mask, positions):
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if values.ndim == 2:
        values, mask = values[None], mask[None]
        positions = np.asarray(positions)[None]
    positions = np.asarray(positions)
    B, n, d = values.shape
    if (n, d) != (cp.n, cp.token_dim) or mask.shape != (B, n) or positions.shape != (B, n):
        raise ShapeMismatchError('Expected grids of shape (B, %d, %d) with matching mask and positions' % (
            cp.n, cp.token_dim))
    order = np.argsort(positions, axis=1, kind='stable')
    if np.any(np.take_along_axis(positions, order, axis=1) != np.arange(n)):
        raise ValueError('Position ids must be a permutation of 0..%d' % (n - 1))
    values = np.take_along_axis(values, order[..., None], axis=1)
    mask = np.take_along_axis(mask, order, axis=1)
    # Masked slots may hold anything, NaN included
    values = np.where(mask[..., None], 0.0, values)
    return values, mask


def conditioner_forward(cp, values, mask, positions, labels=None, return_cache=False):
    """
    z for every position, indexed by position id: (B, n, cond_dim).
    ``labels`` of None (or the null label) asks for the unconditional context.
    """
    x, mask = _canonical(cp, values, mask, positions)
    B, n, _ = x.shape
    labels = np.full(B, cp.null_label) if labels is None else np.broadcast_to(np.asarray(labels), (B,))
    if np.any(labels < 0) or np.any(labels > cp.null_label):
        raise ValueError('Labels must lie in [0, %d]' % cp.null_label)

    tokens = np.where(mask[..., None], cp['mask_embed'], affine(x, cp['token_proj.weight'], cp['token_proj.bias']))
    h = np.concatenate([cp['label_embed'][labels][:, None], tokens + cp['pos_embed']], axis=1)
    valid = np.concatenate([np.ones((B, 1), dtype=bool), ~mask], axis=1)

    layers = []
    for i in range(cp.depth):
        wq, wk, wv, wo, linear1, linear2 = cp.layer_names(i)
        normed, inv_std = layer_norm(h)
        att, att_cache = attention(normed, valid, cp[wq], cp[wk], cp[wv])
        h_mid = h + att @ cp[wo]
        normed2, inv_std2 = layer_norm(h_mid)
        pre = affine(normed2, cp[linear1 + '.weight'], cp[linear1 + '.bias'])
        act, sig = silu(pre)
        h = h_mid + affine(act, cp[linear2 + '.weight'], cp[linear2 + '.bias'])
        layers.append((normed, inv_std, att, att_cache, normed2, inv_std2, pre, sig, act))

    final, inv_final = layer_norm(h[:, 1:])
    z = affine(final, cp['out_proj.weight'], cp['out_proj.bias'])
    if not return_cache:
        return z
    return z, {'x': x, 'mask': mask, 'labels': labels, 'layers': layers, 'final': final, 'inv_final': inv_final}


def conditioner_backward(cp, cache, grad_z):
    """Parameter gradients for upstream gradient ``grad_z`` (B, n, cond_dim)."""
    grads = OrderedDict((name, np.zeros_like(value)) for name, value in cp.items())
    dfinal, grads['out_proj.weight'], grads['out_proj.bias'] = affine_backward(
        grad_z, cache['final'], cp['out_proj.weight'])
    B, n, _ = grad_z.shape
    dh = np.zeros((B, n + 1, cp.width))
    dh[:, 1:] = layer_norm_backward(dfinal, cache['final'], cache['inv_final'])

    for i in reversed(range(cp.depth)):
        wq, wk, wv, wo, linear1, linear2 = cp.layer_names(i)
        normed, inv_std, att, att_cache, normed2, inv_std2, pre, sig, act = cache['layers'][i]
        dact, grads[linear2 + '.weight'], grads[linear2 + '.bias'] = affine_backward(
            dh, act, cp[linear2 + '.weight'])
        dpre = silu_backward(dact, pre, sig)
        dnormed2, grads[linear1 + '.weight'], grads[linear1 + '.bias'] = affine_backward(
            dpre, normed2, cp[linear1 + '.weight'])
        dh_mid = dh + layer_norm_backward(dnormed2, normed2, inv_std2)
        datt, grads[wo], _ = affine_backward(dh_mid, att, cp[wo])
        dnormed, grads[wq], grads[wk], grads[wv] = attention_backward(
            datt, normed, att_cache, cp[wq], cp[wk], cp[wv])
        dh = dh_mid + layer_norm_backward(dnormed, normed, inv_std)

    np.add.at(grads['label_embed'], cache['labels'], dh[:, 0])
    dtokens = dh[:, 1:]
    grads['pos_embed'] = dtokens.sum(axis=0)
    mask = cache['mask'][..., None]
    grads['mask_embed'] = np.where(mask, dtokens, 0.0).sum(axis=(0, 1))
    _, grads['token_proj.weight'], grads['token_proj.bias'] = affine_backward(
        np.where(mask, 0.0, dtokens), cache['x'], cp['token_proj.weight'])
    return grads


def make_conditioner_fn(cp):
    """Adapt parameters to the generator's ``condition_fn`` protocol."""
    def condition_fn(values, mask, positions, labels):
        return conditioner_forward(cp, values, mask, positions, labels)

    return condition_fn
