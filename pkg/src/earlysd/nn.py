"""Minimal differentiable numeric core.

Backward passes are hand-derived for a small, closed op set instead of
running a general autodiff graph: the models here are tiny and fixed,
and an explicit core stays auditable and deterministic (single-threaded
numpy reductions in fixed order). Everything is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, NumericError, ShapeError


class Param:
    """Dense value array with a same-shape gradient accumulator."""

    __slots__ = ("values", "grad")

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)

    def zero_grad(self):
        self.grad[...] = 0.0

    @property
    def shape(self):
        return self.values.shape


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    scale = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-scale, scale, size=(fan_in, fan_out))


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_2d(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what}: expected (*, {dim}), got {x.shape}")
    return x


class FfnLayer:
    """y = act(x W + b) with act in {relu, identity}."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu",
                 rng: np.random.Generator | None = None):
        if activation not in ("relu", "identity"):
            raise DomainError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.weight = Param(glorot(rng, in_dim, out_dim))
        self.bias = Param(np.zeros(out_dim))
        self._cache = None

    @property
    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x = _check_2d(x, self.in_dim, "FfnLayer input")
        pre = x @ self.weight.values + self.bias.values
        y = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        self._cache = (x, pre)
        return y

    def backward(self, dy):
        x, pre = self._cache
        dy = _check_2d(dy, self.out_dim, "FfnLayer grad")
        dpre = dy * (pre > 0.0) if self.activation == "relu" else dy
        self.weight.grad += x.T @ dpre
        self.bias.grad += dpre.sum(axis=0)
        return dpre @ self.weight.values.T


@dataclass
class ConvStructure:
    """Index arrays driving one heterogeneous aggregation.

    User-user edges are directed here: each stored undirected edge
    appears twice. uu_slot maps a directed entry back to its undirected
    edge so weight gradients can be folded per stored edge.
    """

    n_users: int
    n_topics: int
    uu_src: np.ndarray
    uu_dst: np.ndarray
    uu_weight: np.ndarray
    uu_slot: np.ndarray
    ut_user: np.ndarray
    ut_topic: np.ndarray

    @classmethod
    def empty(cls, n_users, n_topics):
        z = np.zeros(0, dtype=np.int64)
        return cls(n_users, n_topics, z, z, np.zeros(0), z, z.copy(), z.copy())

    @classmethod
    def from_graph(cls, graph, user_index=None, topic_index=None):
        uidx = user_index or graph.user_index
        tidx = topic_index or graph.topic_index
        src, dst, w, slot = [], [], [], []
        for k, e in enumerate(graph.uu_edges):
            a, b = uidx[e.u], uidx[e.v]
            src += [a, b]
            dst += [b, a]
            w += [e.weight, e.weight]
            slot += [k, k]
        ut_u = [uidx[e.user] for e in graph.ut_edges]
        ut_t = [tidx[e.topic] for e in graph.ut_edges]
        return cls(len(uidx), len(tidx),
                   np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64),
                   np.asarray(w, dtype=np.float64), np.asarray(slot, dtype=np.int64),
                   np.asarray(ut_u, dtype=np.int64), np.asarray(ut_t, dtype=np.int64))

    def n_uu_edges(self) -> int:
        return 0 if self.uu_slot.size == 0 else int(self.uu_slot.max()) + 1

    def set_uu_weights(self, per_edge: np.ndarray):
        """Install per-undirected-edge weights (length = stored edges)."""
        self.uu_weight = np.asarray(per_edge, dtype=np.float64)[self.uu_slot]


class HeteroConvLayer:
    """User update: sum over user neighbors of f_uu plus topic neighbors
    of f_ut, with user-user messages scaled by the edge weight. Both
    message functions are plain linear maps; nonlinearity is applied by
    the caller between layers.
    """

    def __init__(self, user_dim: int, topic_dim: int, out_dim: int,
                 aggregation: str = "sum", rng: np.random.Generator | None = None):
        if aggregation not in ("sum", "degree_mean"):
            raise DomainError(f"unknown aggregation {aggregation!r}")
        rng = rng or np.random.default_rng(0)
        self.user_dim, self.topic_dim, self.out_dim = user_dim, topic_dim, out_dim
        self.aggregation = aggregation
        self.f_uu = Param(glorot(rng, user_dim, out_dim))
        self.f_ut = Param(glorot(rng, topic_dim, out_dim))
        self._cache = None

    @property
    def params(self):
        return [self.f_uu, self.f_ut]

    def forward(self, h_user, h_topic, structure: ConvStructure):
        h_user = _check_2d(h_user, self.user_dim, "conv user input")
        h_topic = _check_2d(h_topic, self.topic_dim, "conv topic input")
        if h_user.shape[0] != structure.n_users or h_topic.shape[0] != structure.n_topics:
            raise ShapeError("conv structure / embedding row count mismatch")
        mu = h_user @ self.f_uu.values
        mt = h_topic @ self.f_ut.values
        acc_uu = np.zeros((structure.n_users, self.out_dim))
        acc_ut = np.zeros((structure.n_users, self.out_dim))
        np.add.at(acc_uu, structure.uu_dst,
                  structure.uu_weight[:, None] * mu[structure.uu_src])
        np.add.at(acc_ut, structure.ut_user, mt[structure.ut_topic])
        if self.aggregation == "degree_mean":
            deg_uu = np.bincount(structure.uu_dst, minlength=structure.n_users)
            deg_ut = np.bincount(structure.ut_user, minlength=structure.n_users)
            scale_uu = 1.0 / np.maximum(deg_uu, 1)[:, None]
            scale_ut = 1.0 / np.maximum(deg_ut, 1)[:, None]
        else:
            scale_uu = scale_ut = np.ones((structure.n_users, 1))
        out = acc_uu * scale_uu + acc_ut * scale_ut
        self._cache = (h_user, h_topic, mu, structure, scale_uu, scale_ut)
        return out

    def backward(self, dout):
        h_user, h_topic, mu, st, scale_uu, scale_ut = self._cache
        dout = _check_2d(dout, self.out_dim, "conv grad")
        d_acc_uu = dout * scale_uu
        d_acc_ut = dout * scale_ut
        dmu = np.zeros_like(mu)
        np.add.at(dmu, st.uu_src, st.uu_weight[:, None] * d_acc_uu[st.uu_dst])
        d_w_directed = np.einsum("ij,ij->i", mu[st.uu_src], d_acc_uu[st.uu_dst]) \
            if st.uu_src.size else np.zeros(0)
        d_uu_weight = np.zeros(st.n_uu_edges())
        np.add.at(d_uu_weight, st.uu_slot, d_w_directed)
        dmt = np.zeros((st.n_topics, self.out_dim))
        np.add.at(dmt, st.ut_topic, d_acc_ut[st.ut_user])
        self.f_uu.grad += h_user.T @ dmu
        self.f_ut.grad += h_topic.T @ dmt
        dh_user = dmu @ self.f_uu.values.T
        dh_topic = dmt @ self.f_ut.values.T
        return dh_user, dh_topic, d_uu_weight


class KanEdgeModule:
    """Blend-weight head: alpha = sigmoid(phi_f(sim_f) + phi_t(sim_t) + b).

    phi_f and phi_t are piecewise-linear splines over a fixed knot grid
    on [-1, 1]; their knot coefficients and the bias are the learnable
    state. Output always lies in (0, 1).
    """

    def __init__(self, n_knots: int = 8, rng: np.random.Generator | None = None):
        if n_knots < 2:
            raise DomainError("need at least 2 knots")
        rng = rng or np.random.default_rng(0)
        self.knots = np.linspace(-1.0, 1.0, n_knots)
        self.coef_f = Param(rng.normal(0.0, 0.1, size=n_knots))
        self.coef_t = Param(rng.normal(0.0, 0.1, size=n_knots))
        self.bias = Param(np.zeros(1))
        self._cache = None

    @property
    def params(self):
        return [self.coef_f, self.coef_t, self.bias]

    def _locate(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any(np.abs(x) > 1.0 + 1e-6):
            raise DomainError("similarity input outside [-1, 1]")
        x = np.clip(x, -1.0, 1.0)
        h = self.knots[1] - self.knots[0]
        pos = (x - self.knots[0]) / h
        idx = np.clip(np.floor(pos).astype(np.int64), 0, len(self.knots) - 2)
        return idx, pos - idx

    @staticmethod
    def _spline(coef, idx, t):
        return (1.0 - t) * coef.values[idx] + t * coef.values[idx + 1]

    def forward(self, sim_f, sim_t):
        sim_f = np.atleast_1d(np.asarray(sim_f, dtype=np.float64))
        sim_t = np.atleast_1d(np.asarray(sim_t, dtype=np.float64))
        if sim_f.shape != sim_t.shape:
            raise ShapeError("sim_f / sim_t length mismatch")
        if_, tf = self._locate(sim_f)
        it_, tt = self._locate(sim_t)
        z = self._spline(self.coef_f, if_, tf) + self._spline(self.coef_t, it_, tt) \
            + self.bias.values[0]
        alpha = sigmoid(z)
        self._cache = (if_, tf, it_, tt, alpha)
        return alpha

    def backward(self, dalpha):
        if_, tf, it_, tt, alpha = self._cache
        dz = np.asarray(dalpha, dtype=np.float64) * alpha * (1.0 - alpha)
        np.add.at(self.coef_f.grad, if_, (1.0 - tf) * dz)
        np.add.at(self.coef_f.grad, if_ + 1, tf * dz)
        np.add.at(self.coef_t.grad, it_, (1.0 - tt) * dz)
        np.add.at(self.coef_t.grad, it_ + 1, tt * dz)
        self.bias.grad[0] += dz.sum()


# -- losses -----------------------------------------------------------------

_EPS = 1e-7


def bce(p, y):
    """Mean binary cross-entropy; returns (loss, dloss/dp)."""
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if np.any(np.isnan(p)) or np.any(np.isnan(y)):
        raise NumericError("NaN input to bce")
    if p.shape != y.shape:
        raise ShapeError("bce probability / label length mismatch")
    pc = np.clip(p, _EPS, 1.0 - _EPS)
    loss = float(np.mean(-y * np.log(pc) - (1.0 - y) * np.log(1.0 - pc)))
    dp = (pc - y) / (pc * (1.0 - pc)) / p.size
    # no gradient through the clamp
    dp[(p < _EPS) | (p > 1.0 - _EPS)] = 0.0
    return loss, dp


def cross_entropy(logits, y):
    """Mean softmax cross-entropy; returns (loss, dloss/dlogits)."""
    logits = _check_2d(logits, np.asarray(logits).shape[-1], "cross_entropy logits")
    if np.any(np.isnan(logits)):
        raise NumericError("NaN input to cross_entropy")
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy label shape mismatch")
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300))))
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    return loss, dlogits / n


# -- cosine -----------------------------------------------------------------

def cosine(a, b) -> float:
    c, _, _ = cosine_with_grad(a, b)
    return c


def cosine_with_grad(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        raise NumericError("cosine of a near-zero vector")
    c = float(a @ b) / (na * nb)
    da = b / (na * nb) - c * a / (na * na)
    db = a / (na * nb) - c * b / (nb * nb)
    return c, da, db


def cosine_rows(a, b):
    """Row-wise cosine for equal-shape 2-D arrays; returns (c, cache)."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na < 1e-12) or np.any(nb < 1e-12):
        raise NumericError("cosine of a near-zero vector")
    c = np.einsum("ij,ij->i", a, b) / (na * nb)
    return c, (a, b, na, nb, c)


def cosine_rows_backward(dc, cache):
    a, b, na, nb, c = cache
    dc = dc[:, None]
    da = dc * (b / (na * nb)[:, None] - (c / na**2)[:, None] * a)
    db = dc * (a / (na * nb)[:, None] - (c / nb**2)[:, None] * b)
    return da, db


# -- optimizer --------------------------------------------------------------

class Adam:
    """Standard adaptive-moment optimizer over a fixed parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# -- checkpoint container ---------------------------------------------------

_MAGIC = b"ESDC"
_VERSION = 1


def save_checkpoint(path, arrays: dict, hyper: dict | None = None):
    """Flat binary container: header + little-endian float64 arrays.

    Hyperparameters, when given, are echoed into a TOML sidecar next to
    the checkpoint (informational only; load ignores it).
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    if hyper is not None:
        lines = []
        for k, v in hyper.items():
            if isinstance(v, bool):
                lines.append(f"{k} = {str(v).lower()}")
            elif isinstance(v, (int, float)):
                lines.append(f"{k} = {v}")
            else:
                lines.append(f'{k} = "{v}"')
        path.with_suffix(".toml").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8")


def load_checkpoint(path) -> dict:
    path = Path(path)
    arrays = {}
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise NumericError(f"{path} is not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise NumericError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8")
            arrays[name] = data.reshape(shape).copy()
    return arrays
