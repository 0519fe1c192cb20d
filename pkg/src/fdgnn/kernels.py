"""Dense layers, neighbor aggregators, loss, manual backprop, SGD.

Everything is plain numpy. Models are small ordered stacks of stages:

* ``Dense``      y = x @ W + b, optional ReLU
* ``GnnLayer``   aggregates a node's neighbors then applies a dense
                 transform. ``aggr`` selects the scheme:
                 - "mean":      x = concat(own, mean(neigh)); y = x @ W + b
                 - "maxpool":   each neighbor passes a learned pool layer
                                (ReLU), aggregation is the elementwise max;
                                x = concat(own, max); y = x @ W + b
                 - "attention": per-head scores LeakyReLU(0.2) over
                                neighbors and self, softmax-weighted sum of
                                projected vectors, heads concatenated.

Empty neighborhoods aggregate to a zero vector (attention falls back to
self only). Batched forward/backward operate on padded neighbor tensors
``(B, M, d)`` with a boolean validity mask.

All training arithmetic stays in the dtype of the parameters (float32 in
experiments); gradient checking promotes a shadow copy to float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .rng import INIT, keyed_rng

LEAKY_SLOPE = 0.2


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray
    relu: bool = False

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def weight_floats(self) -> int:
        return self.W.size


@dataclass
class GnnLayer:
    aggr: str  # "mean" | "maxpool" | "attention"
    W: np.ndarray
    b: np.ndarray
    relu: bool = False
    pool_W: np.ndarray | None = None
    pool_b: np.ndarray | None = None
    att_dst: np.ndarray | None = None  # (heads, head_dim)
    att_src: np.ndarray | None = None
    heads: int = 1

    def arrays(self) -> list[np.ndarray]:
        out = [self.W, self.b]
        if self.aggr == "maxpool":
            out += [self.pool_W, self.pool_b]
        elif self.aggr == "attention":
            out += [self.att_dst, self.att_src]
        return out

    def weight_floats(self) -> int:
        n = self.W.size
        if self.aggr == "maxpool":
            n += self.pool_W.size
        elif self.aggr == "attention":
            n += self.att_dst.size + self.att_src.size
        return n


@dataclass
class ModelParams:
    """One trainable model: a plain MLP, a full GNN, or one layerwise block."""

    arch: str  # "mlp" | "gcn" | "sage" | "gat" | "block"
    dims: tuple  # (input, hidden, output)
    stages: list = field(default_factory=list)
    base: str | None = None  # aggregator family for arch == "block"
    heads: int = 1
    pool_dim: int = 0
    residual: bool = False

    def arrays(self) -> list[np.ndarray]:
        out = []
        for st in self.stages:
            out.extend(st.arrays())
        return out

    @property
    def n_floats(self) -> int:
        return sum(a.size for a in self.arrays())

    @property
    def dtype(self):
        return self.stages[0].W.dtype

    def copy(self) -> "ModelParams":
        return from_vec(self, to_vec(self).copy())

    def astype(self, dtype) -> "ModelParams":
        m = self.copy()
        for st in m.stages:
            for name in ("W", "b", "pool_W", "pool_b", "att_dst", "att_src"):
                a = getattr(st, name, None)
                if a is not None:
                    setattr(st, name, a.astype(dtype))
        return m


def to_vec(model: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in model.arrays()])


def from_vec(template: ModelParams, vec: np.ndarray) -> ModelParams:
    stages = []
    off = 0

    def take(ref):
        nonlocal off
        a = vec[off : off + ref.size].reshape(ref.shape)
        off += ref.size
        return a

    for st in template.stages:
        if isinstance(st, Dense):
            stages.append(Dense(take(st.W), take(st.b), st.relu))
        else:
            g = GnnLayer(st.aggr, take(st.W), take(st.b), st.relu, heads=st.heads)
            if st.aggr == "maxpool":
                g.pool_W, g.pool_b = take(st.pool_W), take(st.pool_b)
            elif st.aggr == "attention":
                g.att_dst, g.att_src = take(st.att_dst), take(st.att_src)
            stages.append(g)
    if off != vec.size:
        raise ConfigError(f"vector length {vec.size} != model size {off}")
    return replace(template, stages=stages)


def zeros_like_model(model: ModelParams) -> ModelParams:
    return from_vec(model, np.zeros(model.n_floats, dtype=model.dtype))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _glorot(rng: np.random.Generator, shape: tuple, dtype) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[-1]
    fan_out = shape[-1]
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def _dense(rng, din, dout, use_relu, dtype) -> Dense:
    return Dense(_glorot(rng, (din, dout), dtype), np.zeros(dout, dtype), use_relu)


def _gnn_layer(rng, aggr, din, dout, use_relu, heads, pool_dim, dtype) -> GnnLayer:
    if aggr == "mean":
        return GnnLayer("mean", _glorot(rng, (2 * din, dout), dtype),
                        np.zeros(dout, dtype), use_relu)
    if aggr == "maxpool":
        g = GnnLayer("maxpool", _glorot(rng, (din + pool_dim, dout), dtype),
                     np.zeros(dout, dtype), use_relu)
        g.pool_W = _glorot(rng, (din, pool_dim), dtype)
        g.pool_b = np.zeros(pool_dim, dtype)
        return g
    if aggr == "attention":
        if dout % heads:
            raise ConfigError(f"hidden size {dout} not divisible by {heads} heads")
        hd = dout // heads
        g = GnnLayer("attention", _glorot(rng, (din, dout), dtype),
                     np.zeros(dout, dtype), use_relu, heads=heads)
        g.att_dst = _glorot(rng, (heads, hd), dtype)
        g.att_src = _glorot(rng, (heads, hd), dtype)
        return g
    raise ConfigError(f"unknown aggregator '{aggr}'")


_AGGR_OF = {"gcn": "mean", "sage": "maxpool", "gat": "attention"}


def init_mlp(I: int, H: int, O: int, seed: int, tag: int = 0,
             dtype=np.float32) -> ModelParams:
    r = keyed_rng(seed, INIT, tag, 0)
    return ModelParams(
        arch="mlp", dims=(I, H, O),
        stages=[_dense(r, I, H, True, dtype),
                _dense(keyed_rng(seed, INIT, tag, 1), H, O, False, dtype)],
    )


def init_gnn(arch: str, I: int, H: int, O: int, K: int, seed: int,
             heads: int = 8, pool_dim: int = 512, residual: bool = False,
             tag: int = 0, dtype=np.float32) -> ModelParams:
    """End-to-end K-layer GNN. Attention uses 1 head on the final layer."""
    if arch not in _AGGR_OF:
        raise ConfigError(f"unknown GNN arch '{arch}'")
    aggr = _AGGR_OF[arch]
    stages = []
    for l in range(K):
        din = I if l == 0 else H
        dout = O if l == K - 1 else H
        h = (heads if dout == H else 1) if aggr == "attention" else 1
        stages.append(_gnn_layer(keyed_rng(seed, INIT, tag, l), aggr, din, dout,
                                 l < K - 1, h, pool_dim, dtype))
    return ModelParams(arch=arch, dims=(I, H, O), stages=stages, heads=heads,
                       pool_dim=pool_dim, residual=residual)


def init_block(base: str, in_dim: int, H: int, O: int, seed: int,
               heads: int = 8, pool_dim: int = 512, tag: int = 0,
               dtype=np.float32) -> ModelParams:
    """One layerwise model: base aggregation front-end plus a dense head."""
    if base not in _AGGR_OF:
        raise ConfigError(f"unknown block base '{base}'")
    aggr = _AGGR_OF[base]
    stages = [
        _gnn_layer(keyed_rng(seed, INIT, tag, 0), aggr, in_dim, H, True,
                   heads if aggr == "attention" else 1, pool_dim, dtype),
        _dense(keyed_rng(seed, INIT, tag, 1), H, O, False, dtype),
    ]
    return ModelParams(arch="block", dims=(in_dim, H, O), stages=stages,
                       base=base, heads=heads, pool_dim=pool_dim)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def dense_forward(st: Dense, X: np.ndarray):
    pre = X @ st.W + st.b
    out = relu(pre) if st.relu else pre
    return out, (X, pre)


def dense_backward(st: Dense, tape, dout: np.ndarray):
    """Returns (dW, db, dX); parameter grads are summed over the batch."""
    X, pre = tape
    dpre = dout * (pre > 0) if st.relu else dout
    return X.T @ dpre, dpre.sum(axis=0), dpre @ st.W.T


def _masked_counts(mask: np.ndarray, dtype):
    return mask.sum(axis=1).astype(dtype)


def gnn_layer_forward(st: GnnLayer, own: np.ndarray, neigh: np.ndarray,
                      mask: np.ndarray):
    """own (B,d), neigh (B,M,d) padded, mask (B,M) -> out (B,dout), tape."""
    B, d = own.shape
    dt = own.dtype
    if st.aggr == "mean":
        cnt = _masked_counts(mask, dt)
        s = np.einsum("bmd,bm->bd", neigh, mask.astype(dt)) if neigh.size else np.zeros((B, d), dt)
        denom = np.where(cnt > 0, cnt, 1)
        meanv = s / denom[:, None]
        x = np.concatenate([own, meanv], axis=1)
        pre = x @ st.W + st.b
        out = relu(pre) if st.relu else pre
        return out, ("mean", own, neigh, mask, cnt, x, pre)

    if st.aggr == "maxpool":
        cnt = _masked_counts(mask, dt)
        P = st.pool_b.shape[0]
        if neigh.size:
            pool_pre = neigh @ st.pool_W + st.pool_b  # (B,M,P)
            pooled = relu(pool_pre)
            neg = np.asarray(-np.inf, dt)
            masked = np.where(mask[:, :, None], pooled, neg)
            agg = masked.max(axis=1)
            arg = masked.argmax(axis=1)  # (B,P)
            agg = np.where(cnt[:, None] > 0, agg, 0)
        else:
            pool_pre = np.zeros((B, 0, P), dt)
            agg = np.zeros((B, P), dt)
            arg = np.zeros((B, P), np.int64)
        x = np.concatenate([own, agg], axis=1)
        pre = x @ st.W + st.b
        out = relu(pre) if st.relu else pre
        return out, ("maxpool", own, neigh, mask, cnt, pool_pre, arg, x, pre)

    if st.aggr == "attention":
        h, dout = st.heads, st.b.shape[0]
        hd = dout // h
        z_own = (own @ st.W).reshape(B, h, hd)
        M = neigh.shape[1]
        z_nb = (neigh @ st.W).reshape(B, M, h, hd) if neigh.size else np.zeros((B, M, h, hd), dt)
        s_dst = np.einsum("bhd,hd->bh", z_own, st.att_dst)
        s_self = s_dst + np.einsum("bhd,hd->bh", z_own, st.att_src)
        s_nb = s_dst[:, None, :] + np.einsum("bmhd,hd->bmh", z_nb, st.att_src)
        s_raw = np.concatenate([s_self[:, None, :], s_nb], axis=1)  # (B,M+1,h)
        e = np.where(s_raw > 0, s_raw, LEAKY_SLOPE * s_raw)
        full_mask = np.concatenate([np.ones((B, 1), bool), mask], axis=1)
        e = np.where(full_mask[:, :, None], e, np.asarray(-np.inf, dt))
        e = e - e.max(axis=1, keepdims=True)
        ex = np.exp(e)
        alpha = ex / ex.sum(axis=1, keepdims=True)  # (B,M+1,h)
        attended = alpha[:, 0, :, None] * z_own + np.einsum("bmh,bmhd->bhd", alpha[:, 1:], z_nb)
        pre = attended.reshape(B, dout) + st.b
        out = relu(pre) if st.relu else pre
        return out, ("attention", own, neigh, mask, z_own, z_nb, alpha, s_raw, pre)

    raise ConfigError(f"unknown aggregator '{st.aggr}'")


def gnn_layer_backward(st: GnnLayer, tape, dout: np.ndarray):
    """Returns (param grads list matching st.arrays(), d_own, d_neigh)."""
    kind = tape[0]
    if kind == "mean":
        _, own, neigh, mask, cnt, x, pre = tape
        dt = own.dtype
        dpre = dout * (pre > 0) if st.relu else dout
        dW = x.T @ dpre
        db = dpre.sum(axis=0)
        dx = dpre @ st.W.T
        d = own.shape[1]
        d_own = dx[:, :d]
        dmean = dx[:, d:]
        denom = np.where(cnt > 0, cnt, 1)
        d_neigh = (dmean / denom[:, None])[:, None, :] * mask[:, :, None].astype(dt)
        return [dW, db], d_own, d_neigh

    if kind == "maxpool":
        _, own, neigh, mask, cnt, pool_pre, arg, x, pre = tape
        dt = own.dtype
        dpre = dout * (pre > 0) if st.relu else dout
        dW = x.T @ dpre
        db = dpre.sum(axis=0)
        dx = dpre @ st.W.T
        d = own.shape[1]
        d_own = dx[:, :d]
        dagg = dx[:, d:] * (cnt > 0)[:, None]
        B, M, P = pool_pre.shape
        d_neigh = np.zeros_like(neigh)
        dpW = np.zeros_like(st.pool_W)
        dpb = np.zeros_like(st.pool_b)
        if M:
            dpooled = np.zeros((B, M, P), dt)
            bi = np.arange(B)[:, None]
            pi = np.arange(P)[None, :]
            dpooled[bi, arg, pi] = dagg
            dpool_pre = dpooled * (pool_pre > 0)
            dpW = np.einsum("bmd,bmp->dp", neigh, dpool_pre)
            dpb = dpool_pre.sum(axis=(0, 1))
            d_neigh = dpool_pre @ st.pool_W.T
        return [dW, db, dpW, dpb], d_own, d_neigh

    if kind == "attention":
        _, own, neigh, mask, z_own, z_nb, alpha, s_raw, pre = tape
        dt = own.dtype
        B, M = mask.shape
        h = st.heads
        hd = z_own.shape[-1]
        dpre = dout * (pre > 0) if st.relu else dout
        db = dpre.sum(axis=0)
        g = dpre.reshape(B, h, hd)
        dz_own = alpha[:, 0, :, None] * g
        dz_nb = alpha[:, 1:, :, None] * g[:, None]
        dalpha = np.empty((B, M + 1, h), dt)
        dalpha[:, 0] = np.einsum("bhd,bhd->bh", g, z_own)
        dalpha[:, 1:] = np.einsum("bhd,bmhd->bmh", g, z_nb)
        inner = np.einsum("bmh,bmh->bh", alpha, dalpha)
        ds = alpha * (dalpha - inner[:, None, :])
        ds = ds * np.where(s_raw > 0, 1, LEAKY_SLOPE).astype(dt)
        ds_self = ds[:, 0]
        ds_nb = ds[:, 1:]
        # scores: s_self = z_own.(a_dst + a_src); s_nb_m = z_own.a_dst + z_nb_m.a_src
        ds_dst = ds_self + ds_nb.sum(axis=1)
        datt_dst = np.einsum("bh,bhd->hd", ds_dst, z_own)
        datt_src = np.einsum("bh,bhd->hd", ds_self, z_own) + \
            np.einsum("bmh,bmhd->hd", ds_nb, z_nb)
        dz_own = dz_own + ds_dst[:, :, None] * st.att_dst + ds_self[:, :, None] * st.att_src
        dz_nb = dz_nb + ds_nb[:, :, :, None] * st.att_src
        dout_dim = st.b.shape[0]
        dzo = dz_own.reshape(B, dout_dim)
        dzn = dz_nb.reshape(B, M, dout_dim)
        dW = own.T @ dzo
        if M:
            dW = dW + np.einsum("bmd,bme->de", neigh, dzn)
        d_own = dzo @ st.W.T
        d_neigh = dzn @ st.W.T
        return [dW, db, datt_dst, datt_src], d_own, d_neigh

    raise ConfigError(f"unknown tape kind '{kind}'")


def model_forward(model: ModelParams, own: np.ndarray,
                  neigh: np.ndarray | None = None,
                  mask: np.ndarray | None = None):
    """Batched forward pass to logits; returns (logits (B,O), tape)."""
    tapes = []
    h = own
    for st in model.stages:
        if isinstance(st, GnnLayer):
            if neigh is None:
                raise ConfigError(f"{model.arch} model requires neighbor inputs")
            h, t = gnn_layer_forward(st, h, neigh, mask)
        else:
            h, t = dense_forward(st, h)
        tapes.append(t)
    return h, tapes


def model_backward(model: ModelParams, tapes, dlogits: np.ndarray):
    """Backprop to a flat gradient vector (summed over the batch)."""
    grads: list[list[np.ndarray]] = [None] * len(model.stages)
    d = dlogits
    for i in range(len(model.stages) - 1, -1, -1):
        st = model.stages[i]
        if isinstance(st, GnnLayer):
            g, d, _ = gnn_layer_backward(st, tapes[i], d)
        else:
            dW, db, d = dense_backward(st, tapes[i], d)
            g = [dW, db]
        grads[i] = g
    return np.concatenate([a.ravel() for gs in grads for a in gs])


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Per-row cross-entropy; returns (losses (B,), dlogits for sum-loss)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    p = ez / denom
    rows = np.arange(len(labels))
    losses = np.log(denom[:, 0]) - z[rows, labels]
    dlogits = p.copy()
    dlogits[rows, labels] -= 1
    return losses, dlogits


# ---------------------------------------------------------------------------
# Public single-sample operations
# ---------------------------------------------------------------------------

def _as_batch(own, neigh, dtype):
    own = np.asarray(own, dtype)[None, :]
    if neigh is None or len(neigh) == 0:
        nb = np.zeros((1, 0, own.shape[1]), dtype)
        mask = np.zeros((1, 0), bool)
    else:
        nb = np.asarray(neigh, dtype)[None, :, :]
        mask = np.ones((1, nb.shape[1]), bool)
    return own, nb, mask


def forward_mlp(p: ModelParams, x: np.ndarray):
    """Logits and activation tape for one input vector."""
    x = np.asarray(x, p.dtype)
    if x.shape != (p.dims[0],):
        raise ConfigError(f"input shape {x.shape} != ({p.dims[0]},)")
    logits, tape = model_forward(p, x[None, :])
    return logits[0], tape


def combine_aggregate(arch: str, own: np.ndarray, neigh,
                      p: ModelParams | None = None) -> np.ndarray:
    """COMBINE(own, AGGR(neighbors)) for one node.

    gcn needs no parameters; sage/gat read pool / attention parameters from
    the first GnnLayer stage of ``p``.
    """
    own = np.asarray(own)
    neigh = [np.asarray(u) for u in neigh]
    for u in neigh:
        if u.shape != own.shape:
            raise ConfigError("neighbor vector length mismatch")
    if arch == "gcn":
        agg = np.mean(neigh, axis=0) if neigh else np.zeros_like(own)
        return np.concatenate([own, agg])
    if p is None or not isinstance(p.stages[0], GnnLayer):
        raise ConfigError(f"{arch} aggregation requires model parameters")
    st = p.stages[0]
    o, nb, mask = _as_batch(own, neigh, own.dtype)
    if arch == "sage":
        if nb.shape[1]:
            pooled = relu(nb @ st.pool_W + st.pool_b)
            agg = pooled.max(axis=1)[0]
        else:
            agg = np.zeros(st.pool_b.shape[0], own.dtype)
        return np.concatenate([own, agg])
    if arch == "gat":
        out, tape = gnn_layer_forward(
            replace(st, relu=False, b=np.zeros_like(st.b)), o, nb, mask)
        return out[0]
    raise ConfigError(f"unknown arch '{arch}'")


def loss_and_grad(p: ModelParams, inp: np.ndarray, label: int,
                  neigh=None):
    """Cross-entropy loss and full analytic gradient for one sample."""
    O = p.dims[2]
    if not (0 <= label < O):
        raise ConfigError(f"label {label} out of range [0, {O})")
    own, nb, mask = _as_batch(inp, neigh, p.dtype)
    if isinstance(p.stages[0], Dense):
        logits, tapes = model_forward(p, own)
    else:
        logits, tapes = model_forward(p, own, nb, mask)
    losses, dlogits = softmax_xent(logits, np.array([label]))
    gvec = model_backward(p, tapes, dlogits)
    return float(losses[0]), from_vec(p, gvec)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: np.ndarray | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


def sgd_step(p: ModelParams, o: OptimizerState, grads: ModelParams | np.ndarray):
    """Momentum SGD with weight decay folded into the gradient.

        v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v

    Returns (updated params, updated optimizer state); inputs untouched.
    """
    gv = grads if isinstance(grads, np.ndarray) else to_vec(grads)
    pv = to_vec(p)
    g = gv + o.weight_decay * pv
    v = g if o.velocity is None else o.momentum * o.velocity + g
    return from_vec(p, pv - o.learning_rate * v), replace(o, velocity=v)


def average_models(models: list[ModelParams]) -> ModelParams:
    """Elementwise arithmetic mean; inputs must be shape-identical."""
    if not models:
        raise ConfigError("average_models requires a non-empty list")
    n = models[0].n_floats
    for m in models[1:]:
        if m.n_floats != n:
            raise ConfigError("model shapes differ")
    stack = np.stack([to_vec(m) for m in models])
    return from_vec(models[0], stack.mean(axis=0))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def _build_check_model(arch: str, dims: tuple, seed: int, heads: int):
    I, H, O = dims
    if arch == "mlp":
        return init_mlp(I, H, O, seed, tag=90).astype(np.float64)
    base = arch.replace("-block", "")
    m = init_block(base, I, H, O, seed, heads=heads, pool_dim=max(4, H),
                   tag=90)
    return m.astype(np.float64)


def grad_check(arch: str, dims: tuple, seed: int, heads: int = 2,
               eps: float = 1e-5, n_neighbors: int = 3) -> float:
    """Worst relative error of analytic grads vs central finite differences.

    Runs entirely in float64. ``arch`` is one of mlp / gcn / sage / gat
    (block aggregation paths for the latter three).
    """
    m = _build_check_model(arch, dims, seed, heads)
    rng = keyed_rng(seed, INIT, 91)
    I = dims[0]
    x = rng.standard_normal(I)
    neigh = rng.standard_normal((n_neighbors, I)) if arch != "mlp" else None
    label = int(rng.integers(0, dims[2]))

    _, g = loss_and_grad(m, x, label, neigh=neigh)
    gv = to_vec(g)
    pv = to_vec(m)
    fd = np.empty_like(pv)
    for i in range(pv.size):
        for sgn, slot in ((1, 0), (-1, 1)):
            p2 = pv.copy()
            p2[i] += sgn * eps
            loss, _ = loss_and_grad(from_vec(m, p2), x, label, neigh=neigh)
            if slot == 0:
                lo_hi = loss
            else:
                fd[i] = (lo_hi - loss) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(gv), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(gv - fd) / denom))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(path: str | Path, model: ModelParams) -> Path:
    """JSON header line + little-endian float32 parameter block."""
    stages = []
    for st in model.stages:
        if isinstance(st, Dense):
            stages.append({"kind": "dense", "w": list(st.W.shape), "relu": st.relu})
        else:
            e = {"kind": "gnn", "aggr": st.aggr, "w": list(st.W.shape),
                 "relu": st.relu, "heads": st.heads}
            if st.aggr == "maxpool":
                e["pool_w"] = list(st.pool_W.shape)
            elif st.aggr == "attention":
                e["att"] = list(st.att_dst.shape)
            stages.append(e)
    header = {
        "arch": model.arch, "base": model.base, "dims": list(model.dims),
        "heads": model.heads, "pool_dim": model.pool_dim,
        "residual": model.residual, "stages": stages,
    }
    path = Path(path)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(np.ascontiguousarray(to_vec(model), dtype="<f4").tobytes())
    return path


def load_model(path: str | Path) -> ModelParams:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        blob = f.read()
    dt = np.float32
    stages = []
    for e in header["stages"]:
        w = np.zeros(e["w"], dt)
        b = np.zeros(e["w"][1], dt)
        if e["kind"] == "dense":
            stages.append(Dense(w, b, e["relu"]))
        else:
            g = GnnLayer(e["aggr"], w, b, e["relu"], heads=e.get("heads", 1))
            if e["aggr"] == "maxpool":
                g.pool_W = np.zeros(e["pool_w"], dt)
                g.pool_b = np.zeros(e["pool_w"][1], dt)
            elif e["aggr"] == "attention":
                g.att_dst = np.zeros(e["att"], dt)
                g.att_src = np.zeros(e["att"], dt)
            stages.append(g)
    tmpl = ModelParams(
        arch=header["arch"], dims=tuple(header["dims"]), stages=stages,
        base=header.get("base"), heads=header.get("heads", 1),
        pool_dim=header.get("pool_dim", 0), residual=header.get("residual", False),
    )
    vec = np.frombuffer(blob, dtype="<f4")
    if vec.size != tmpl.n_floats:
        raise DataError(
            f"checkpoint payload {vec.size} floats, header implies {tmpl.n_floats}")
    return from_vec(tmpl, vec.astype(np.float32))


def share_weight_floats(model: ModelParams, stage_idx: int) -> int:
    """Float count of one stage's weight/attention matrices (biases excluded).

    This is the unit neighbors receive when layer parameters travel over
    client-to-client links; for a mean-aggregation first layer it equals
    2 * input_dim * hidden.
    """
    return model.stages[stage_idx].weight_floats()
