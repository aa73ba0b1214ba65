"""Small dense kernel: layers with hand-written backward passes, weighted BCE,
Adam and a finite-difference gradient checker.

Everything runs in float64 on numpy arrays. Forward functions return
``(output, cache)``; the matching ``*_backward`` function consumes the cache.
Leading axes are treated as batch axes, so the same code serves a single
vector and a batch of them.
"""

from __future__ import annotations

import copy
import math
from collections import OrderedDict
from collections.abc import Mapping

import numpy as np

from .errors import EmptySequence, MissingGradient, NumericError, ShapeError

BCE_EPS = 1e-7

# gate order inside an LSTM weight matrix (blocks of `hidden` rows each)
LSTM_GATES = ("input", "forget", "output", "candidate")


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def sigmoid(x):
    x = _f64(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --------------------------------------------------------------------------
# dense layer


def dense_forward(x, W, b):
    """Affine map ``W @ x + b`` over the last axis of ``x``."""
    x, W, b = _f64(x), _f64(W), _f64(b)
    if W.ndim != 2:
        raise ShapeError(f"W must be a matrix, got shape {W.shape}")
    if x.shape[-1:] != (W.shape[1],):
        raise ShapeError(f"x has {x.shape[-1:]} trailing dims but W has {W.shape[1]} columns")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"b has shape {b.shape} but W has {W.shape[0]} rows")
    return x @ W.T + b, (x, W)


def dense_backward(dy, cache):
    """Returns ``(dx, dW, db)``."""
    x, W = cache
    dy = _f64(dy)
    dx = dy @ W
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, dy2.T @ x2, dy2.sum(axis=0)


# --------------------------------------------------------------------------
# activations


def activation(x, kind):
    x = _f64(x)
    if kind == "relu":
        y = np.maximum(x, 0.0)
    elif kind == "sigmoid":
        y = sigmoid(x)
    elif kind == "tanh":
        y = np.tanh(x)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return y, (kind, x, y)


def activation_backward(dy, cache):
    kind, x, y = cache
    if kind == "relu":
        return dy * (x > 0)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    return dy * (1.0 - y * y)


# --------------------------------------------------------------------------
# LSTM


def lstm_cell_step(x_in, h_prev, c_prev, W, b):
    """One LSTM step.

    ``W`` has shape ``(4*H, I+H)`` and acts on ``concat(x_in, h_prev)``; its
    row blocks are the input, forget, output and candidate gates in that
    order. Returns ``(h_next, c_next, cache)``.
    """
    x_in, h_prev, c_prev, W, b = map(_f64, (x_in, h_prev, c_prev, W, b))
    H = h_prev.shape[-1]
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"c_prev shape {c_prev.shape} != h_prev shape {h_prev.shape}")
    I = x_in.shape[-1]
    if W.shape != (4 * H, I + H):
        raise ShapeError(f"W has shape {W.shape}, expected {(4 * H, I + H)}")
    if b.shape != (4 * H,):
        raise ShapeError(f"b has shape {b.shape}, expected {(4 * H,)}")
    if x_in.shape[:-1] != h_prev.shape[:-1]:
        raise ShapeError(f"batch shape of x_in {x_in.shape} does not match h_prev {h_prev.shape}")

    xh = np.concatenate([x_in, h_prev], axis=-1)
    z = xh @ W.T + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c_next = f * c_prev + i * g
    tc = np.tanh(c_next)
    h_next = o * tc
    return h_next, c_next, (xh, c_prev, i, f, o, g, tc, W, I)


def lstm_cell_backward(dh, dc, cache):
    """Returns ``(dx_in, dh_prev, dc_prev, dW, db)``."""
    xh, c_prev, i, f, o, g, tc, W, I = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            do * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=-1,
    )
    dxh = dz @ W
    dz2 = dz.reshape(-1, dz.shape[-1])
    xh2 = xh.reshape(-1, xh.shape[-1])
    return dxh[..., :I], dxh[..., I:], dc * f, dz2.T @ xh2, dz2.sum(axis=0)


def _run_direction(seq, mask, W, b, order):
    B = seq.shape[0]
    H = b.shape[0] // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t in order:
        hn, cn, cache = lstm_cell_step(seq[:, t], h, c, W, b)
        m = mask[:, t, None]
        h = np.where(m, hn, h)
        c = np.where(m, cn, c)
        steps.append((t, m, cache))
    return h, steps


def _back_direction(dh_final, steps, W, b, dseq):
    dh = dh_final
    dc = np.zeros_like(dh_final)
    dW = np.zeros_like(W)
    db = np.zeros_like(b)
    for t, m, cache in reversed(steps):
        dx, dh_prev, dc_prev, dWt, dbt = lstm_cell_backward(dh * m, dc * m, cache)
        dW += dWt
        db += dbt
        dseq[:, t] += dx
        keep = ~m
        dh = dh_prev + dh * keep
        dc = dc_prev + dc * keep
    return dW, db


def bilstm_forward(seq, lengths, fwd_W, fwd_b, bwd_W, bwd_b):
    """Many-to-one bidirectional LSTM over a padded batch.

    ``seq`` is ``(B, T, I)`` and ``lengths[j]`` says how many leading steps of
    row ``j`` are real. Padded steps leave the state untouched, so a row of
    length L gives exactly what an unpadded length-L run would. Returns the
    final forward state concatenated with the final backward state,
    shape ``(B, 2*H)``.
    """
    seq = _f64(seq)
    lengths = np.asarray(lengths)
    if seq.ndim != 3:
        raise ShapeError(f"seq must be (batch, time, features), got {seq.shape}")
    B, T, _ = seq.shape
    if lengths.shape != (B,):
        raise ShapeError(f"lengths has shape {lengths.shape}, expected {(B,)}")
    if T == 0 or np.any(lengths < 1) or np.any(lengths > T):
        raise EmptySequence("every sequence needs between 1 and T steps")
    mask = np.arange(T)[None, :] < lengths[:, None]
    hf, fsteps = _run_direction(seq, mask, fwd_W, fwd_b, range(T))
    hb, bsteps = _run_direction(seq, mask, bwd_W, bwd_b, range(T - 1, -1, -1))
    cache = (seq.shape, fsteps, bsteps, _f64(fwd_W), _f64(fwd_b), _f64(bwd_W), _f64(bwd_b))
    return np.concatenate([hf, hb], axis=1), cache


def bilstm_backward(dout, cache):
    """Returns ``(dseq, grads)`` with grads keyed fwd.W, fwd.b, bwd.W, bwd.b."""
    shape, fsteps, bsteps, fW, fb, bW, bb = cache
    H = fb.shape[0] // 4
    dseq = np.zeros(shape)
    dfW, dfb = _back_direction(dout[:, :H], fsteps, fW, fb, dseq)
    dbW, dbb = _back_direction(dout[:, H:], bsteps, bW, bb, dseq)
    return dseq, {"fwd.W": dfW, "fwd.b": dfb, "bwd.W": dbW, "bwd.b": dbb}


def bilstm_reduce(seq, weights):
    """Run a single sequence through both directions.

    ``seq`` is a list of input vectors (or scalars for input size 1);
    ``weights`` maps fwd.W, fwd.b, bwd.W and bwd.b to arrays.
    """
    if len(seq) == 0:
        raise EmptySequence("bilstm_reduce needs a non-empty sequence")
    arr = _f64(seq)
    if arr.ndim == 1:
        arr = arr[:, None]
    out, _ = bilstm_forward(
        arr[None], np.array([len(arr)]),
        weights["fwd.W"], weights["fwd.b"], weights["bwd.W"], weights["bwd.b"],
    )
    return out[0]


# --------------------------------------------------------------------------
# loss


def weighted_bce_loss(p, y, w):
    """Weighted binary cross-entropy and its derivative w.r.t. ``p``.

    ``p`` is clamped to ``[BCE_EPS, 1 - BCE_EPS]`` before the logs; the
    derivative is evaluated at the clamped value.
    """
    pc = np.clip(_f64(p), BCE_EPS, 1.0 - BCE_EPS)
    y = _f64(y)
    w = _f64(w)
    loss = -w * (y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    grad = -w * (y / pc - (1.0 - y) / (1.0 - pc))
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


# --------------------------------------------------------------------------
# parameters and optimiser


class ParamStore:
    """Ordered named float64 tensors plus their gradients and Adam state."""

    def __init__(self, params=None):
        self.params: OrderedDict[str, np.ndarray] = OrderedDict()
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        if params:
            for name, value in params.items():
                self.add(name, value)

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self):
        return list(self.params)

    def size(self):
        return sum(v.size for v in self.params.values())

    def set_grads(self, grads: Mapping[str, np.ndarray]):
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            if g.shape != self.params[name].shape:
                raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected {self.params[name].shape}")
            self.grads[name] = g

    def zero_grad(self):
        self.grads = {}

    def copy(self):
        return copy.deepcopy(self)


def adam_step(store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place. Clears the gradients afterwards."""
    for name in store.params:
        if name not in store.grads:
            raise MissingGradient(name)
    store.step += 1
    bc1 = 1.0 - beta1**store.step
    bc2 = 1.0 - beta2**store.step
    for name, theta in store.params.items():
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    store.zero_grad()


def grad_check(f, store: ParamStore, h=1e-4):
    """Largest relative gap between analytic and central-difference gradients.

    ``f(store)`` must return ``(loss, grads)`` where ``grads`` maps every
    parameter name to its analytic gradient. The relative error of one
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    loss, grads = f(store)
    if not math.isfinite(loss):
        raise NumericError(f"loss is not finite: {loss!r}")
    worst = 0.0
    for name, theta in store.params.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        flat = theta.reshape(-1)
        a_flat = analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus = f(store)[0]
            flat[j] = orig - h
            minus = f(store)[0]
            flat[j] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NumericError(f"loss is not finite while perturbing {name}[{j}]")
            numeric = (plus - minus) / (2.0 * h)
            a = float(a_flat[j])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
