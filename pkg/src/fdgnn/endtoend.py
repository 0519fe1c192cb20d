"""End-to-end distributed GNN training with exact message accounting.

Every round, sampled train/validation clients mobilize their K-hop sampled
neighborhoods: layer parameters travel to the nodes that must apply them,
raw representations are exchanged along contact edges (cached after the
first exchange, features never change), hidden representations flow up the
tree every round, and gradient factors flow back for train clients. The
learning itself is computed centrally over the same sampled subgraphs,
so the enactment affects only the ledger, never the math.

Charging rules, per train or validation client tree (hop 0 = the client):

* model-share: a node at hop p computes representations up to level K-p,
  so it receives the weights of layers 1..K-p from its lowest-id parent.
* repr0: I floats each direction along every contact edge (w in nbrs(u)
  for every u that computes at least level 1), once ever per ordered pair.
* repr1: node u sends its level-l representation (H floats) to each
  aggregating tree parent, every round, once per tree.
* grad-factor (train trees only): I floats from each hop-p node to each
  adjacent hop-(p-1) node, for p in 1..K-1.
* server-model / grad-up / val-report on the client-to-server channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fedsgd import (EarlyStopTracker, PerClientVelocity, PooledVelocity,
                     RunSettings, full_participation, sample_round_clients)
from .graphs import GraphBundle, GraphView, SamplerConfig, sample_neighbors
from .kernels import (LEAKY_SLOPE, GnnLayer, ModelParams, from_vec, init_gnn,
                      softmax_xent, to_vec)
from .netsim import SERVER, CommLedger


# ---------------------------------------------------------------------------
# Cost schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostSchedule:
    """Float counts for every message kind, derived from model shapes.

    Weight matrices only for layer shares (biases stay home); full
    parameter count for server round-trips.
    """

    I: int
    H: int
    O: int
    K: int
    layer_weight_floats: tuple
    model_floats: int

    @staticmethod
    def from_model(model: ModelParams) -> "CostSchedule":
        I, H, O = model.dims
        return CostSchedule(
            I=I, H=H, O=O, K=len(model.stages),
            layer_weight_floats=tuple(st.weight_floats() for st in model.stages),
            model_floats=model.n_floats,
        )

    def share_floats_for_hop(self, p: int) -> int:
        """Parameters a hop-p node needs: layers 1..K-p."""
        return sum(self.layer_weight_floats[: self.K - p])

    def repr_floats(self, level: int) -> int:
        if level == 0:
            return self.I
        return self.H if level < self.K else self.O

    @property
    def grad_factor_floats(self) -> int:
        return self.I


# ---------------------------------------------------------------------------
# Round planning
# ---------------------------------------------------------------------------

@dataclass
class RoundPlan:
    round: int
    train_ids: np.ndarray
    val_ids: np.ndarray
    nbrs: dict  # node -> sampled neighbor array used this round
    train_hops: dict  # client -> [L0..LK] BFS level arrays
    val_hops: dict
    val_nbrs: dict | None = None  # separate sampled adjacency (inductive)

    def degree(self, u: int) -> int:
        return len(self.nbrs[u])

    @property
    def hops(self) -> dict:
        merged = dict(self.train_hops)
        merged.update(self.val_hops)
        return merged


def _bfs_levels(client: int, K: int, nbrs_of) -> list:
    levels = [np.array([client], np.int64)]
    seen = {int(client)}
    for _ in range(K):
        nxt = set()
        for u in levels[-1]:
            for w in nbrs_of(int(u)):
                if int(w) not in seen:
                    nxt.add(int(w))
        seen |= nxt
        levels.append(np.array(sorted(nxt), np.int64))
    return levels


def plan_round(view: GraphView, train_ids: np.ndarray, val_ids: np.ndarray,
               s: RunSettings, round_no: int,
               val_view: GraphView | None = None) -> RoundPlan:
    """Sampled adjacency and K-hop participation for one round.

    Neighbor samples are keyed on (seed, node, round), so a node's sampled
    list is consistent across every tree it appears in within the round.
    """
    cfg = SamplerConfig(max_neighbors_per_hop=s.neighbor_cap,
                        edge_keep_fraction=s.edge_keep, seed=s.seed)
    vv = val_view if val_view is not None else view

    nbrs: dict[int, np.ndarray] = {}

    def sampler_for(g):
        def nbrs_of(u: int) -> np.ndarray:
            got = nbrs.get(u)
            if got is None:
                got = sample_neighbors(g, u, cfg, round_no)
                nbrs[u] = got
            return got
        return nbrs_of

    train_hops = {int(c): _bfs_levels(int(c), s.k, sampler_for(view))
                  for c in train_ids}
    if vv is view:
        val_hops = {int(c): _bfs_levels(int(c), s.k, sampler_for(view))
                    for c in val_ids}
        val_nbrs = None
    else:
        # inductive validation happens on its own graph; keep its sampled
        # adjacency separate from the training graph's
        val_nbrs = {}

        def vnbrs_of(u: int) -> np.ndarray:
            got = val_nbrs.get(u)
            if got is None:
                got = sample_neighbors(vv, u, cfg, round_no)
                val_nbrs[u] = got
            return got

        val_hops = {int(c): _bfs_levels(int(c), s.k, vnbrs_of)
                    for c in val_ids}

    return RoundPlan(round=round_no, train_ids=np.asarray(train_ids),
                     val_ids=np.asarray(val_ids), nbrs=nbrs,
                     train_hops=train_hops, val_hops=val_hops,
                     val_nbrs=val_nbrs)


# ---------------------------------------------------------------------------
# Charging
# ---------------------------------------------------------------------------

def _tree_groups(nbrs: dict, costs: CostSchedule, hops: dict,
                 with_factors: bool):
    """Deterministic (kind, floats) -> (src, dst) message groups for trees."""
    groups: dict[tuple, tuple[list, list]] = {}

    def put(kind, floats, src, dst):
        g = groups.setdefault((kind, floats), ([], []))
        g[0].append(src)
        g[1].append(dst)

    K = costs.K
    for c in sorted(hops):
        levels = hops[c]
        for p in range(1, K + 1):
            floats = costs.share_floats_for_hop(p)
            if floats == 0:
                continue
            parents = levels[p - 1]
            parent_nbrs = {int(u): set(map(int, nbrs.get(int(u), ())))
                           for u in parents}
            for w in levels[p]:
                giver = min(int(u) for u in parents
                            if int(w) in parent_nbrs[int(u)])
                put("model-share", floats, giver, int(w))
        for p in range(0, K):
            for w in levels[p]:
                for lvl in range(1, K - p):
                    for u in nbrs.get(int(w), ()):
                        put("repr1", costs.repr_floats(lvl), int(u), int(w))
        if with_factors:
            for p in range(1, K):
                for w in levels[p - 1]:
                    at_p = set(map(int, levels[p]))
                    for u in nbrs.get(int(w), ()):
                        if int(u) in at_p:
                            put("grad-factor", costs.grad_factor_floats,
                                int(u), int(w))
    return groups


def _repr0_pairs(nbrs: dict, costs: CostSchedule, hops: dict):
    """Ordered feature-exchange pairs this round's enactment touches."""
    pairs = []
    K = costs.K
    for c in sorted(hops):
        levels = hops[c]
        for p in range(0, K):  # nodes that compute at least level 1
            for w in levels[p]:
                for u in nbrs.get(int(w), ()):
                    pairs.append((int(u), int(w)))
                    pairs.append((int(w), int(u)))
    return pairs


def charge_forward_pass(plan: RoundPlan, costs: CostSchedule,
                        ledger: CommLedger, repr0_seen: set) -> None:
    """Model shares, first-representation exchanges, hidden representations."""
    val_nbrs = plan.val_nbrs if plan.val_nbrs is not None else plan.nbrs
    for hops, nbrs in ((plan.train_hops, plan.nbrs), (plan.val_hops, val_nbrs)):
        if not hops:
            continue
        groups = _tree_groups(nbrs, costs, hops, with_factors=False)
        for (kind, floats), (src, dst) in groups.items():
            ledger.record_many(kind, np.array(src), np.array(dst), floats,
                               round_no=plan.round)
        fresh_src, fresh_dst = [], []
        for pair in _repr0_pairs(nbrs, costs, hops):
            if pair not in repr0_seen:
                repr0_seen.add(pair)
                fresh_src.append(pair[0])
                fresh_dst.append(pair[1])
        if fresh_src:
            ledger.record_many("repr0", np.array(fresh_src),
                               np.array(fresh_dst), costs.I,
                               round_no=plan.round)


def charge_backward_pass(plan: RoundPlan, costs: CostSchedule,
                         ledger: CommLedger) -> None:
    """Gradient factors along train trees (hops 1..K-1 toward the client)."""
    groups = _tree_groups(plan.nbrs, costs, plan.train_hops, with_factors=True)
    for (kind, floats), (src, dst) in groups.items():
        if kind != "grad-factor":
            continue
        ledger.record_many(kind, np.array(src), np.array(dst), floats,
                           round_no=plan.round)


def charge_server_round(plan: RoundPlan, model_floats: int,
                        ledger: CommLedger) -> None:
    """Model down to all sampled clients, model up from train clients."""
    down = np.concatenate([plan.train_ids, plan.val_ids])
    if len(down):
        ledger.record_many("server-model", np.full(len(down), SERVER), down,
                           model_floats, round_no=plan.round)
    if len(plan.train_ids):
        ledger.record_many("grad-up", plan.train_ids,
                           np.full(len(plan.train_ids), SERVER),
                           model_floats, round_no=plan.round)
    if len(plan.val_ids):
        ledger.record_many("val-report", plan.val_ids,
                           np.full(len(plan.val_ids), SERVER), 2,
                           round_no=plan.round)


# ---------------------------------------------------------------------------
# Centralized-equivalent math over the sampled subgraphs
# ---------------------------------------------------------------------------

@dataclass
class LevelStruct:
    """Per-level batch: which nodes compute this level, from which inputs."""

    nodes: np.ndarray
    counts: np.ndarray  # sampled degree per node
    flat_nbrs: np.ndarray  # concatenated sampled neighbor ids
    offsets: np.ndarray  # reduceat segment starts
    neigh_idx: np.ndarray  # (B, M) padded, for gather-style aggregators
    mask: np.ndarray


def build_levels(nbrs: dict, hops: dict, K: int) -> list:
    """LevelStruct for levels 1..K from this round's trees."""
    min_hop: dict[int, int] = {}
    for c, levels in hops.items():
        for p, lv in enumerate(levels):
            for u in lv:
                ui = int(u)
                if min_hop.get(ui, K + 1) > p:
                    min_hop[ui] = p
    out = []
    for lvl in range(1, K + 1):
        nodes = np.array(sorted(u for u, p in min_hop.items()
                                if K - p >= lvl), np.int64)
        lists = [nbrs[int(u)] for u in nodes]
        counts = np.array([len(l) for l in lists], np.int64)
        flat = (np.concatenate(lists) if lists and counts.sum() else
                np.empty(0, np.int64))
        offsets = np.zeros(len(nodes), np.int64)
        if len(nodes):
            np.cumsum(counts[:-1], out=offsets[1:])
        m = int(counts.max()) if len(counts) else 0
        neigh_idx = np.zeros((len(nodes), m), np.int64)
        mask = np.zeros((len(nodes), m), bool)
        for i, l in enumerate(lists):
            neigh_idx[i, : len(l)] = l
            mask[i, : len(l)] = True
        out.append(LevelStruct(nodes, counts, flat, offsets, neigh_idx, mask))
    return out


def _segment_mean(values: np.ndarray, ls: LevelStruct) -> np.ndarray:
    """Mean of neighbor rows per node; zeros for isolated nodes."""
    dt = values.dtype
    out = np.zeros((len(ls.nodes), values.shape[1]), dt)
    if ls.flat_nbrs.size:
        gathered = values[ls.flat_nbrs]
        sums = np.add.reduceat(gathered, ls.offsets, axis=0)
        # reduceat repeats the row where a segment is empty; zero those out
        nz = ls.counts > 0
        out[nz] = sums[nz] / ls.counts[nz, None].astype(dt)
    return out


def _forward_level_maxpool(st: GnnLayer, prev: np.ndarray, ls: LevelStruct):
    """Pool projections are per node, so project once and gather."""
    dt = prev.dtype
    B = len(ls.nodes)
    P = st.pool_b.shape[0]
    pool_pre = prev @ st.pool_W + st.pool_b  # (N, P); rows we gather are valid
    pooled = np.maximum(pool_pre, 0)
    if ls.mask.size:
        gath = pooled[ls.neigh_idx]
        masked = np.where(ls.mask[:, :, None], gath, np.asarray(-np.inf, dt))
        arg = masked.argmax(axis=1)  # slot index per (node, dim)
        agg = np.take_along_axis(masked, arg[:, None, :], axis=1)[:, 0, :]
        agg = np.where(ls.counts[:, None] > 0, agg, 0)
    else:
        agg = np.zeros((B, P), dt)
        arg = np.zeros((B, 0), np.int64)
    own = prev[ls.nodes]
    x = np.concatenate([own, agg], axis=1)
    pre = x @ st.W + st.b
    out = np.maximum(pre, 0) if st.relu else pre
    return out, ("maxpool-seg", pool_pre, arg, x, pre)


def _forward_level_attention(st: GnnLayer, prev: np.ndarray, ls: LevelStruct):
    """Head projections are per node; attention runs on gathered rows."""
    dt = prev.dtype
    B = len(ls.nodes)
    h, dout = st.heads, st.b.shape[0]
    hd = dout // h
    z = (prev @ st.W).reshape(prev.shape[0], h, hd)  # (N, h, hd)
    z_own = z[ls.nodes]
    M = ls.neigh_idx.shape[1]
    z_nb = z[ls.neigh_idx] if ls.mask.size else np.zeros((B, 0, h, hd), dt)
    s_dst = np.einsum("bhd,hd->bh", z_own, st.att_dst)
    s_self = s_dst + np.einsum("bhd,hd->bh", z_own, st.att_src)
    s_nb = s_dst[:, None, :] + np.einsum("bmhd,hd->bmh", z_nb, st.att_src)
    s_raw = np.concatenate([s_self[:, None, :], s_nb], axis=1)
    e = np.where(s_raw > 0, s_raw, np.asarray(LEAKY_SLOPE, dt) * s_raw)
    full_mask = np.concatenate([np.ones((B, 1), bool), ls.mask], axis=1)
    e = np.where(full_mask[:, :, None], e, np.asarray(-np.inf, dt))
    e = e - e.max(axis=1, keepdims=True)
    ex = np.exp(e)
    alpha = ex / ex.sum(axis=1, keepdims=True)
    attended = alpha[:, 0, :, None] * z_own + \
        np.einsum("bmh,bmhd->bhd", alpha[:, 1:], z_nb)
    pre = attended.reshape(B, dout) + st.b
    out = np.maximum(pre, 0) if st.relu else pre
    return out, ("attention-seg", z_own, z_nb, alpha, s_raw, pre)


def forward_levels(params: ModelParams, feats: np.ndarray,
                   levels: list, static_x1=None):
    """All representation levels over the sampled subgraph.

    Returns (reps, tapes): ``reps[l]`` is a global (N, d_l) array filled at
    the nodes that computed level l; tapes feed backward_levels.
    """
    K = len(params.stages)
    N = feats.shape[0]
    reps = [feats]
    tapes = []
    for lvl in range(1, K + 1):
        st = params.stages[lvl - 1]
        ls = levels[lvl - 1]
        prev = reps[lvl - 1]
        own = prev[ls.nodes]
        if st.aggr == "mean":
            if lvl == 1 and static_x1 is not None:
                x = static_x1
            else:
                x = np.concatenate([own, _segment_mean(prev, ls)], axis=1)
            pre = x @ st.W + st.b
            out = np.maximum(pre, 0) if st.relu else pre
            tape = ("mean-x", x, pre)
        elif st.aggr == "maxpool":
            out, tape = _forward_level_maxpool(st, prev, ls)
        else:
            out, tape = _forward_level_attention(st, prev, ls)
        if params.residual and 1 < lvl < K:
            out = out + own
        q = np.zeros((N, out.shape[1]), feats.dtype)
        q[ls.nodes] = out
        reps.append(q)
        tapes.append(tape)
    return reps, tapes


def backward_levels(params: ModelParams, levels: list, reps: list,
                    tapes: list, dlogits_nodes: np.ndarray,
                    dlogits: np.ndarray) -> np.ndarray:
    """Flat parameter gradient from logits deltas at the given nodes."""
    K = len(params.stages)
    N = reps[0].shape[0]
    dt = reps[0].dtype
    d_up = np.zeros((N, reps[K].shape[1]), dt)
    d_up[dlogits_nodes] = dlogits
    grads: list = [None] * K
    for lvl in range(K, 0, -1):
        st = params.stages[lvl - 1]
        ls = levels[lvl - 1]
        prev = reps[lvl - 1]
        dout = d_up[ls.nodes]
        need_down = lvl > 1
        d_prev = (np.zeros((N, prev.shape[1]), dt) if need_down else None)
        tape = tapes[lvl - 1]
        kind = tape[0]

        if kind == "mean-x":
            _, x, pre = tape
            dpre = dout * (pre > 0) if st.relu else dout
            grads[lvl - 1] = [x.T @ dpre, dpre.sum(axis=0)]
            if need_down:
                dx = dpre @ st.W.T
                d = prev.shape[1]
                np.add.at(d_prev, ls.nodes, dx[:, :d])
                if ls.flat_nbrs.size:
                    dmean = dx[:, d:]
                    denom = np.maximum(ls.counts, 1).astype(dt)
                    per_edge = np.repeat(dmean / denom[:, None],
                                         ls.counts, axis=0)
                    np.add.at(d_prev, ls.flat_nbrs, per_edge)

        elif kind == "maxpool-seg":
            _, pool_pre, arg, x, pre = tape
            dpre = dout * (pre > 0) if st.relu else dout
            dW = x.T @ dpre
            db = dpre.sum(axis=0)
            dx = dpre @ st.W.T
            d = prev.shape[1]
            dagg = dx[:, d:] * (ls.counts > 0)[:, None]
            dpool_nodes = np.zeros_like(pool_pre)  # (N, P)
            if ls.mask.size:
                B, M = ls.mask.shape
                P = pool_pre.shape[1]
                dpooled = np.zeros((B, M, P), dt)
                bi = np.arange(B)[:, None]
                pi = np.arange(P)[None, :]
                dpooled[bi, arg, pi] = dagg
                dpooled *= ls.mask[:, :, None]
                np.add.at(dpool_nodes, ls.neigh_idx[ls.mask], dpooled[ls.mask])
            dpool_pre = dpool_nodes * (pool_pre > 0)
            touched = np.unique(ls.flat_nbrs) if ls.flat_nbrs.size else \
                np.empty(0, np.int64)
            dpW = prev[touched].T @ dpool_pre[touched] if touched.size else \
                np.zeros_like(st.pool_W)
            dpb = dpool_pre[touched].sum(axis=0) if touched.size else \
                np.zeros_like(st.pool_b)
            grads[lvl - 1] = [dW, db, dpW, dpb]
            if need_down:
                np.add.at(d_prev, ls.nodes, dx[:, :d])
                if touched.size:
                    d_prev[touched] += dpool_pre[touched] @ st.pool_W.T

        else:  # attention-seg
            _, z_own, z_nb, alpha, s_raw, pre = tape
            B, M = ls.mask.shape
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
            ds_dst = ds_self + ds_nb.sum(axis=1)
            datt_dst = np.einsum("bh,bhd->hd", ds_dst, z_own)
            datt_src = np.einsum("bh,bhd->hd", ds_self, z_own) + \
                np.einsum("bmh,bmhd->hd", ds_nb, z_nb)
            dz_own = dz_own + ds_dst[:, :, None] * st.att_dst + \
                ds_self[:, :, None] * st.att_src
            dz_nb = dz_nb + ds_nb[:, :, :, None] * st.att_src
            dout_dim = st.b.shape[0]
            # accumulate z-deltas per node, then one projection backward
            dz_nodes = np.zeros((N, dout_dim), dt)
            np.add.at(dz_nodes, ls.nodes, dz_own.reshape(B, dout_dim))
            if ls.mask.size:
                np.add.at(dz_nodes, ls.neigh_idx[ls.mask],
                          dz_nb.reshape(B, M, dout_dim)[ls.mask])
            touched = np.unique(np.concatenate(
                [ls.nodes, ls.flat_nbrs])) if ls.flat_nbrs.size else ls.nodes
            dW = prev[touched].T @ dz_nodes[touched]
            grads[lvl - 1] = [dW, db, datt_dst, datt_src]
            if need_down:
                d_prev[touched] += dz_nodes[touched] @ st.W.T

        if params.residual and 1 < lvl < K and need_down:
            np.add.at(d_prev, ls.nodes, dout)
        if need_down:
            d_up = d_prev
    return np.concatenate([a.ravel() for g in grads for a in g])


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class EndToEndRun:
    model: ModelParams  # best-validation-loss snapshot
    val_loss_curve: list
    val_acc_curve: list
    rounds_run: int
    ledger: CommLedger


class _ChargeRecorder:
    """Captures one round's message groups so static rounds can replay them.

    repr0 traffic is excluded from replay: features are cached after the
    first exchange, and on a static plan every pair appears in round 0.
    """

    def __init__(self, ledger: CommLedger):
        self.ledger = ledger
        self.groups: list[tuple] = []

    def record_many(self, kind, src, dst, float_count, round_no):
        if kind != "repr0":
            self.groups.append((kind, np.array(src), np.array(dst), float_count))
        self.ledger.record_many(kind, src, dst, float_count, round_no)

    def replay(self, ledger: CommLedger, round_no: int) -> None:
        for kind, src, dst, floats in self.groups:
            ledger.record_many(kind, src, dst, floats, round_no)


def train_endtoend(bundle: GraphBundle, view: GraphView,
                   train_ids: np.ndarray, val_ids: np.ndarray,
                   s: RunSettings, ledger: CommLedger | None = None,
                   val_view: GraphView | None = None,
                   charge_cache: bool = True) -> EndToEndRun:
    """R rounds of FedSGD over sampled K-hop subgraphs, fully charged."""
    if s.arch not in ("gcn", "sage", "gat"):
        raise ConfigError(f"end-to-end protocol needs a GNN arch, got '{s.arch}'")
    if ledger is None:
        ledger = CommLedger(bundle.num_nodes, log_events=s.log_events)
    I, O, H = bundle.feature_dim, bundle.num_classes, s.hidden
    labels = bundle.labels
    feats = bundle.features
    params = init_gnn(s.arch, I, H, O, K=s.k, seed=s.seed, heads=s.heads,
                      pool_dim=s.pool_dim, residual=s.residual, tag=0)
    costs = CostSchedule.from_model(params)
    theta = to_vec(params)
    pooled = full_participation(train_ids, val_ids, s.batch_cap)
    bank = (PooledVelocity(theta.size, theta.dtype) if pooled
            else PerClientVelocity(train_ids, theta.size, theta.dtype))
    tracker = EarlyStopTracker(s.patience)
    best_vec = None
    loss_curve, acc_curve = [], []
    repr0_seen: set = set()

    vv = val_view if val_view is not None else view
    static = (pooled and s.edge_keep >= 1.0
              and view.max_degree <= s.neighbor_cap
              and (val_view is None or vv.max_degree <= s.neighbor_cap))
    cached_plan = cached_levels = cached_val_levels = None
    cached_x1 = None
    charge_template: _ChargeRecorder | None = None
    rounds_run = 0

    for r in range(s.rounds):
        rounds_run = r + 1
        if static and cached_plan is not None:
            plan = RoundPlan(round=r, train_ids=cached_plan.train_ids,
                             val_ids=cached_plan.val_ids,
                             nbrs=cached_plan.nbrs,
                             train_hops=cached_plan.train_hops,
                             val_hops=cached_plan.val_hops,
                             val_nbrs=cached_plan.val_nbrs)
            levels, val_levels = cached_levels, cached_val_levels
        else:
            tr_s, val_s = sample_round_clients(train_ids, val_ids,
                                               s.batch_cap, s.seed, 0, r)
            plan = plan_round(view, tr_s, val_s, s, r, val_view=val_view)
            levels = build_levels(plan.nbrs, plan.train_hops if vv is not view
                                  else plan.hops, s.k)
            val_levels = (build_levels(plan.val_nbrs, plan.val_hops, s.k)
                          if vv is not view else None)
            if static:
                cached_plan, cached_levels = plan, levels
                cached_val_levels = val_levels
                if params.stages[0].aggr == "mean":
                    ls = levels[0]
                    cached_x1 = np.concatenate(
                        [feats[ls.nodes], _segment_mean(feats, ls)], axis=1)

        if charge_template is not None:
            charge_template.replay(ledger, r)
        else:
            sink = (_ChargeRecorder(ledger) if static and charge_cache
                    else ledger)
            charge_server_round(plan, costs.model_floats, sink)
            charge_forward_pass(plan, costs, sink, repr0_seen)
            charge_backward_pass(plan, costs, sink)
            if isinstance(sink, _ChargeRecorder):
                charge_template = sink

        cur = from_vec(params, theta)
        reps, tapes = forward_levels(cur, feats, levels, static_x1=cached_x1)
        stop = False
        if len(plan.val_ids):
            if val_levels is not None:
                vreps, _ = forward_levels(cur, feats, val_levels)
                vlogits = vreps[s.k][plan.val_ids]
            else:
                vlogits = reps[s.k][plan.val_ids]
            vlosses, _ = softmax_xent(vlogits, labels[plan.val_ids])
            vloss = float(vlosses.mean())
            vacc = float(np.mean(vlogits.argmax(axis=1) == labels[plan.val_ids]))
            loss_curve.append(vloss)
            acc_curve.append(vacc)
            if vloss < tracker.best_loss:
                best_vec = theta.copy()
            stop = tracker.update(vloss)

        tr = plan.train_ids
        if isinstance(bank, PooledVelocity):
            logits = reps[s.k][tr]
            _, dlog = softmax_xent(logits, labels[tr])
            gbar = backward_levels(cur, levels, reps, tapes, tr,
                                   dlog / np.asarray(len(tr), theta.dtype))
            vel = bank.step(gbar, theta, s.momentum, s.weight_decay)
        else:
            rows = []
            for v in tr:
                hv = {int(v): plan.train_hops[int(v)]}
                lv = build_levels(plan.nbrs, hv, s.k)
                rp, tp = forward_levels(cur, feats, lv)
                lg = rp[s.k][np.array([v])]
                _, dl = softmax_xent(lg, labels[np.array([v])])
                rows.append(backward_levels(cur, lv, rp, tp,
                                            np.array([v]), dl))
            vel = bank.step_rows(tr, np.stack(rows), theta,
                                 s.momentum, s.weight_decay)
        theta = theta - np.asarray(s.lr, theta.dtype) * vel
        if stop:
            break

    final = best_vec if best_vec is not None else theta
    return EndToEndRun(model=from_vec(params, final),
                       val_loss_curve=loss_curve, val_acc_curve=acc_curve,
                       rounds_run=rounds_run, ledger=ledger)


def endtoend_logits(params: ModelParams, bundle: GraphBundle,
                    view: GraphView, ids: np.ndarray, s: RunSettings,
                    round_tag: int) -> np.ndarray:
    """Inference over sampled K-hop neighborhoods of the given nodes."""
    cfg = SamplerConfig(max_neighbors_per_hop=s.neighbor_cap,
                        edge_keep_fraction=1.0, seed=s.seed)
    nbrs: dict[int, np.ndarray] = {}

    def nbrs_of(u: int) -> np.ndarray:
        got = nbrs.get(u)
        if got is None:
            got = sample_neighbors(view, u, cfg, round_tag)
            nbrs[u] = got
        return got

    K = len(params.stages)
    hops = {int(c): _bfs_levels(int(c), K, nbrs_of) for c in ids}
    levels = build_levels(nbrs, hops, K)
    reps, _ = forward_levels(params, bundle.features, levels)
    return reps[K][np.asarray(ids)]
