"""The meta-classifier: pairwise matching network, recurrent vote, open-world decision.

For a query ``x`` and the top-k stored neighbours ``a_1..a_k`` of one class:

* each pair is mapped to similarity features ``|x - a| ++ (x + a)`` and
  scored by a shared two-layer network ending in a sigmoid, giving ``r_i``;
* the score sequence ``r_1..r_k`` (most similar first) runs through a
  bidirectional LSTM with one hidden unit per direction, and a final dense
  layer plus sigmoid turns the two outputs into ``p(class | x, neighbours)``;
* over a set of seen classes the query is rejected when no class
  probability exceeds 0.5, otherwise it goes to the arg-max class.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .errors import EmptyNeighbors, EmptySeenSet, FormatError, ParseError, ShapeError

REJECT = "REJECT"
THRESHOLD = 0.5
SIM_MODES = ("abssub_sum", "abssub", "sum")
TENSOR_ORDER = ("W1", "b1", "W2", "b2", "fwd.W", "fwd.b", "bwd.W", "bwd.b", "W", "b")
LSTM_HIDDEN = 1
INIT_SCALE = 0.1
FORGET_BIAS = 1.0

_HEADER_RE = re.compile(r"^#l2ac-model v1 k=(\d+) dim=(\d+) hidden=(\d+) sim=(\w+)\s*$")


def feature_width(dim, sim):
    return 2 * dim if sim == "abssub_sum" else dim


def sim_features(x_t, x_a, sim="abssub_sum"):
    """``|x_t - x_a|`` concatenated with ``x_t + x_a`` (or one of the two)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    x_a = np.asarray(x_a, dtype=np.float64)
    if x_t.shape[-1] != x_a.shape[-1]:
        raise ShapeError(f"x_t has {x_t.shape[-1]} dims but x_a has {x_a.shape[-1]}")
    if sim == "abssub":
        return np.abs(x_t - x_a)
    if sim == "sum":
        return x_t + x_a
    if sim != "abssub_sum":
        raise ValueError(f"unknown similarity mode {sim!r}")
    x_t, x_a = np.broadcast_arrays(x_t, x_a)
    return np.concatenate([np.abs(x_t - x_a), x_t + x_a], axis=-1)


@dataclass
class MetaClassifierParams:
    store: nk.ParamStore
    k: int
    dim: int
    hidden: int
    sim: str = "abssub_sum"

    def __post_init__(self):
        if self.sim not in SIM_MODES:
            raise ValueError(f"unknown similarity mode {self.sim!r}")
        expected = self.shapes(self.dim, self.hidden, self.sim)
        if list(self.store.names()) != list(TENSOR_ORDER):
            raise ShapeError(f"parameter names {self.store.names()} != {list(TENSOR_ORDER)}")
        for name, shape in expected.items():
            if self.store[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.store[name].shape}, expected {shape}")

    @staticmethod
    def shapes(dim, hidden, sim="abssub_sum"):
        H = LSTM_HIDDEN
        return {
            "W1": (hidden, feature_width(dim, sim)),
            "b1": (hidden,),
            "W2": (1, hidden),
            "b2": (1,),
            "fwd.W": (4 * H, 1 + H),
            "fwd.b": (4 * H,),
            "bwd.W": (4 * H, 1 + H),
            "bwd.b": (4 * H,),
            "W": (1, 2 * H),
            "b": (1,),
        }

    @classmethod
    def init(cls, dim, k, hidden, sim="abssub_sum", seed=0, rng=None):
        """Weights uniform in [-0.1, 0.1]; dense biases zero; LSTM forget bias 1."""
        rng = np.random.default_rng(seed) if rng is None else rng
        store = nk.ParamStore()
        for name, shape in cls.shapes(dim, hidden, sim).items():
            if name.endswith("W") or name in ("W1", "W2"):
                value = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
            else:
                value = np.zeros(shape)
                if name in ("fwd.b", "bwd.b"):
                    value[LSTM_HIDDEN : 2 * LSTM_HIDDEN] = FORGET_BIAS
            store.add(name, value)
        return cls(store, k, dim, hidden, sim)

    @classmethod
    def zeros(cls, dim, k, hidden, sim="abssub_sum"):
        store = nk.ParamStore({n: np.zeros(s) for n, s in cls.shapes(dim, hidden, sim).items()})
        return cls(store, k, dim, hidden, sim)

    def __getitem__(self, name):
        return self.store[name]

    def copy(self):
        store = nk.ParamStore({n: v.copy() for n, v in self.store.items()})
        return MetaClassifierParams(store, self.k, self.dim, self.hidden, self.sim)

    def to_text(self):
        lines = [f"#l2ac-model v1 k={self.k} dim={self.dim} hidden={self.hidden} sim={self.sim}"]
        for name in TENSOR_ORDER:
            value = self.store[name]
            mat = value if value.ndim == 2 else value.reshape(1, -1)
            lines.append(f"{name} {mat.shape[0]} {mat.shape[1]}")
            for row in mat:
                lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text, path=None):
        lines = text.splitlines()
        if not lines:
            raise ParseError("empty model file", path, 1)
        match = _HEADER_RE.match(lines[0])
        if not match:
            raise ParseError(f"bad header {lines[0]!r}", path, 1)
        k, dim, hidden = (int(g) for g in match.groups()[:3])
        sim = match.group(4)
        if sim not in SIM_MODES:
            raise FormatError(f"unknown sim mode {sim!r}", path, 1)
        shapes = cls.shapes(dim, hidden, sim)
        store = nk.ParamStore()
        pos = 1
        for name in TENSOR_ORDER:
            if pos >= len(lines):
                raise ParseError(f"missing tensor {name}", path, pos + 1)
            head = lines[pos].split()
            if len(head) != 3 or head[0] != name:
                raise ParseError(f"expected '{name} <rows> <cols>', got {lines[pos]!r}", path, pos + 1)
            rows, cols = int(head[1]), int(head[2])
            pos += 1
            data = []
            for _ in range(rows):
                if pos >= len(lines):
                    raise ParseError(f"tensor {name} truncated", path, pos + 1)
                try:
                    row = [float(tok) for tok in lines[pos].split()]
                except ValueError as exc:
                    raise ParseError(str(exc), path, pos + 1) from None
                if len(row) != cols:
                    raise FormatError(f"{name} row has {len(row)} values, expected {cols}", path, pos + 1)
                data.append(row)
                pos += 1
            value = np.array(data, dtype=np.float64).reshape(rows, cols)
            if value.size != int(np.prod(shapes[name])):
                raise FormatError(f"{name} is {rows}x{cols}, expected {shapes[name]}", path, pos)
            store.add(name, value.reshape(shapes[name]))
        return cls(store, k, dim, hidden, sim)

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"), path=str(path))


# --------------------------------------------------------------------------
# batched forward / backward


def _match_forward(params, X, A):
    F = sim_features(X[:, None, :], A, params.sim)
    z1, c1 = nk.dense_forward(F, params["W1"], params["b1"])
    h1, ca = nk.activation(z1, "relu")
    z2, c2 = nk.dense_forward(h1, params["W2"], params["b2"])
    r, cr = nk.activation(z2[..., 0], "sigmoid")
    return r, (c1, ca, c2, cr)


def _match_backward(dr, cache, grads):
    c1, ca, c2, cr = cache
    dz2 = nk.activation_backward(dr, cr)[..., None]
    dh1, grads["W2"], grads["b2"] = nk.dense_backward(dz2, c2)
    dz1 = nk.activation_backward(dh1, ca)
    _, grads["W1"], grads["b1"] = nk.dense_backward(dz1, c1)


def forward(params: MetaClassifierParams, X, A, lengths):
    """Class probabilities for a padded batch.

    ``X`` is ``(B, dim)`` queries, ``A`` is ``(B, T, dim)`` neighbours in
    retrieval order, ``lengths`` the real neighbour count per row. Returns
    ``(p, r, cache)`` where ``r`` holds the per-neighbour match scores.
    """
    X = np.asarray(X, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if X.ndim != 2 or A.ndim != 3 or A.shape[0] != X.shape[0] or A.shape[2] != X.shape[1]:
        raise ShapeError(f"incompatible query/neighbour shapes {X.shape} and {A.shape}")
    if X.shape[1] != params.dim:
        raise ShapeError(f"inputs have dim {X.shape[1]}, model expects {params.dim}")
    r, mcache = _match_forward(params, X, A)
    hb, bcache = nk.bilstm_forward(r[..., None], lengths, params["fwd.W"], params["fwd.b"],
                                   params["bwd.W"], params["bwd.b"])
    o, ocache = nk.dense_forward(hb, params["W"], params["b"])
    p, pcache = nk.activation(o[:, 0], "sigmoid")
    return p, r, (mcache, bcache, ocache, pcache)


def backward(dp, cache):
    mcache, bcache, ocache, pcache = cache
    grads = {}
    do = nk.activation_backward(dp, pcache)[:, None]
    dhb, grads["W"], grads["b"] = nk.dense_backward(do, ocache)
    dseq, lstm_grads = nk.bilstm_backward(dhb, bcache)
    grads.update(lstm_grads)
    _match_backward(dseq[..., 0], mcache, grads)
    return {name: grads[name] for name in TENSOR_ORDER}


def loss_and_grads(params: MetaClassifierParams, X, A, lengths, y, w):
    """Mean weighted BCE over the batch and its gradient for every tensor."""
    p, _, cache = forward(params, X, A, lengths)
    losses, dldp = nk.weighted_bce_loss(p, y, w)
    B = len(p)
    return float(losses.sum() / B), backward(dldp / B, cache)


# --------------------------------------------------------------------------
# single-query API


def match_score(x_t, x_a, params: MetaClassifierParams):
    x_t = np.asarray(x_t, dtype=np.float64)
    x_a = np.asarray(x_a, dtype=np.float64)
    if x_t.shape != (params.dim,) or x_a.shape != (params.dim,):
        raise ShapeError(f"expected vectors of length {params.dim}, got {x_t.shape} and {x_a.shape}")
    r, _ = _match_forward(params, x_t[None], x_a[None, None])
    return float(r[0, 0])


def match_scores(x_t, neighbors, params: MetaClassifierParams):
    """Per-neighbour match scores ``r_1..r_n``."""
    if len(neighbors) == 0:
        raise EmptyNeighbors("no neighbours given")
    A = np.asarray(neighbors, dtype=np.float64)
    r, _ = _match_forward(params, np.asarray(x_t, dtype=np.float64)[None], A[None])
    return r[0]


def class_probability(x_t, neighbors, params: MetaClassifierParams):
    if len(neighbors) == 0:
        raise EmptyNeighbors("no neighbours given")
    if len(neighbors) > params.k:
        raise ShapeError(f"{len(neighbors)} neighbours exceeds k={params.k}")
    A = np.asarray(neighbors, dtype=np.float64)
    p, _, _ = forward(params, np.asarray(x_t, dtype=np.float64)[None], A[None], np.array([len(A)]))
    return float(p[0])


def vote_probability(x_t, neighbors, params: MetaClassifierParams, vote):
    """Non-parametric vote over the first ``vote`` neighbours.

    Each neighbour is scored on its own, as a length-1 sequence through the
    full model, and the scores are averaged. The inner match score ``r`` is
    not used directly: training only supervises the final probability, so
    ``r`` may come out with either orientation.
    """
    if len(neighbors) == 0:
        raise EmptyNeighbors("no neighbours given")
    A = np.asarray(neighbors[:vote], dtype=np.float64)[:, None, :]
    X = np.broadcast_to(np.asarray(x_t, dtype=np.float64), (len(A), A.shape[2]))
    p, _, _ = forward(params, X, A, np.ones(len(A), dtype=np.int64))
    return float(np.mean(p))


def decide_from_probabilities(probs):
    """Arg-max label, or :data:`REJECT` when the best probability is <= 0.5.

    Ties on the maximum go to the smallest label.
    """
    if not probs:
        raise EmptySeenSet("no seen classes")
    best_label, best = None, -np.inf
    for label in sorted(probs):
        if probs[label] > best:
            best_label, best = label, probs[label]
    return REJECT if best <= THRESHOLD else best_label


def decide(x_t, S, params: MetaClassifierParams, k=None, vote=None):
    """Open-world decision over the seen-class set ``S``.

    ``S`` must expose ``labels`` and ``neighbors(query, label, k)``. With
    ``vote`` set, each class scores by :func:`vote_probability` over its
    top-``vote`` neighbours instead of one k-step sequence. Returns ``(outcome, probabilities)``.
    """
    k = params.k if k is None else k
    labels = list(S.labels)
    if not labels:
        raise EmptySeenSet("no seen classes")
    probs = {}
    for label in labels:
        if vote is None:
            probs[label] = class_probability(x_t, S.neighbors(x_t, label, k), params)
        else:
            probs[label] = vote_probability(x_t, S.neighbors(x_t, label, max(k, vote)), params, vote)
    return decide_from_probabilities(probs), probs


def check_gradients(dim=8, k=3, hidden=16, seed=0, h=1e-4, batch=6, sim="abssub_sum",
                    kink_margin=1e-2, max_draws=1000):
    """Finite-difference check of the whole pipeline (matching net, recurrent
    vote, weighted BCE) on random parameters and inputs.

    Configurations with a live ReLU pre-activation within ``kink_margin`` of
    zero are redrawn: central differences straddling the kink measure the
    kink, not the gradient.
    """
    rng = np.random.default_rng(seed)
    lengths = 1 + np.arange(batch) % k
    live = np.arange(k)[None, :] < lengths[:, None]
    y = (np.arange(batch) % 2 == 0).astype(np.float64)
    w = np.where(y == 1, 9.0, 1.0)
    for _ in range(max_draws):
        params = MetaClassifierParams.init(dim, k, hidden, sim, rng=rng)
        # larger weights than the training init keep gradients well above round-off
        for value in params.store.params.values():
            value += rng.normal(0.0, 0.5, size=value.shape)
        X = rng.normal(size=(batch, dim))
        A = rng.normal(size=(batch, k, dim))
        z1, _ = nk.dense_forward(sim_features(X[:, None, :], A, sim), params["W1"], params["b1"])
        if np.abs(z1[live]).min() > kink_margin:
            break
    else:
        raise RuntimeError("could not draw a configuration away from ReLU kinks")

    def f(store):
        return loss_and_grads(params, X, A, lengths, y, w)

    return nk.grad_check(f, params.store, h)
