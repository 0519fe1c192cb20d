"""Layer-wise protocol: K+1 models trained sequentially with FedSGD.

The first model is a plain MLP over raw features. Before each subsequent
model m, the server syncs the just-trained model m-1 to every client, each
client computes its stage-m embedding (the logits of model m-1) and shares
it once with every currently-available neighbor. Received embeddings are
cached, aggregated (up to ``neighbor_cap`` of them, deterministically
sampled), and the aggregate becomes the fixed training input of model m.
Exactly K client-to-client rounds happen regardless of the round budget R.

Event-log round numbers: training traffic carries the stage-local round
index; sync and embedding traffic carry the message-passing round m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fedsgd import (EarlyStopTracker, PerClientVelocity, PooledVelocity,
                     RunSettings, full_participation, sample_round_clients)
from .graphs import GraphBundle, GraphView, sample_from
from .kernels import (ModelParams, from_vec, init_block, init_mlp,
                      model_backward, model_forward, softmax_xent, to_vec)
from .netsim import SERVER, CommLedger, ContactSchedule, contact

EVAL_ALWAYS = ContactSchedule(model="always")


@dataclass
class StageInputs:
    """Fixed training inputs of one model, rows indexed by global node id."""

    own: np.ndarray  # (N, d)
    neigh_val: np.ndarray | None = None  # (N, M, d)
    neigh_idx: np.ndarray | None = None  # (N, M) source node per slot
    mask: np.ndarray | None = None  # (N, M)

    def rows(self, ids: np.ndarray):
        if self.neigh_val is None:
            return self.own[ids], None, None
        return self.own[ids], self.neigh_val[ids], self.mask[ids]


@dataclass
class LayerwiseRun:
    models: list  # best-validation-loss snapshot per stage
    stage_inputs: list  # StageInputs used to train each stage (training view)
    val_loss_curves: list
    val_acc_curves: list
    rounds_run: list
    ledger: CommLedger


def stage0_inputs(bundle: GraphBundle) -> StageInputs:
    return StageInputs(own=bundle.features)


def compute_embeddings(model: ModelParams, inputs: StageInputs,
                       ids: np.ndarray) -> np.ndarray:
    """Logits of ``model`` for the given nodes (their stage inputs)."""
    own, nb, mask = inputs.rows(ids)
    logits, _ = model_forward(model, own, nb, mask)
    return logits


def compute_embedding(models: list, m: int, stage_inputs: list,
                      v: int) -> np.ndarray:
    """Q^m for one client: model m-1 applied to its cached stage input."""
    if m < 1 or m > len(models):
        raise ConfigError(f"stage {m} requires trained models 0..{m - 1}")
    if m - 1 >= len(stage_inputs):
        raise ConfigError(f"missing cached inputs for stage {m - 1}")
    return compute_embeddings(models[m - 1], stage_inputs[m - 1],
                              np.array([v]))[0]


def message_passing_round(models: list, m: int, prev_inputs: StageInputs,
                          view: GraphView, s: RunSettings,
                          schedule: ContactSchedule,
                          ledger: CommLedger | None) -> StageInputs:
    """Sync + embedding exchange producing stage-m training inputs.

    Computes Q^m for every client of the view, sends it along every
    available edge (charging the ledger when given), caches what arrived,
    and aggregates up to ``neighbor_cap`` cached embeddings per client.
    """
    bundle = view.bundle
    members = view.members
    n, O = bundle.num_nodes, bundle.num_classes

    if ledger is not None:  # server syncs model m-1 with every client
        ledger.record_many("sync", np.full(len(members), SERVER), members,
                           models[m - 1].n_floats, round_no=m)

    q = np.zeros((n, O), np.float32)
    q[members] = compute_embeddings(models[m - 1], prev_inputs, members)
    if s.residual and m >= 2:
        # intermediate blocks add their own-input embedding to the output
        q[members] += prev_inputs.own[members]

    always = schedule.model == "always" or schedule.p >= 1.0
    received: dict[int, np.ndarray] = {}
    src_parts, dst_parts = [], []
    for v in members:
        nbrs = view.neighbors(v)
        if always:
            kept = nbrs
        else:
            keep = np.fromiter(
                (contact(schedule, int(u), int(v), m) for u in nbrs),
                bool, count=len(nbrs))
            kept = nbrs[keep]
        received[int(v)] = kept  # symmetric contact: senders == receivers
        if ledger is not None and len(kept):
            src_parts.append(np.full(len(kept), v))
            dst_parts.append(kept)
    if ledger is not None and src_parts:
        ledger.record_many("embedding", np.concatenate(src_parts),
                           np.concatenate(dst_parts), O, round_no=m)

    agg = {v: sample_from(received[int(v)], s.neighbor_cap, s.seed, int(v), m)
           for v in members}
    mcap = max((len(a) for a in agg.values()), default=0)
    idx = np.zeros((n, mcap), np.int64)
    mask = np.zeros((n, mcap), bool)
    for v in members:
        a = agg[int(v)]
        idx[v, : len(a)] = a
        mask[v, : len(a)] = True
    return StageInputs(own=q, neigh_val=q[idx], neigh_idx=idx, mask=mask)


def _mean_loss_and_grad(model, inputs, ids, labels):
    own, nb, mask = inputs.rows(ids)
    logits, tapes = model_forward(model, own, nb, mask)
    losses, dlog = softmax_xent(logits, labels[ids])
    gvec = model_backward(model, tapes, dlog / np.asarray(len(ids), logits.dtype))
    return float(losses.mean()), gvec


def _per_client_grads(model, inputs, ids, labels):
    rows = []
    for v in ids:
        _, g = _mean_loss_and_grad(model, inputs, np.array([v]), labels)
        rows.append(g)
    return np.stack(rows)


def validate_clients(model, inputs, ids, labels):
    """Mean loss and accuracy reported by the sampled validation clients."""
    own, nb, mask = inputs.rows(ids)
    logits, _ = model_forward(model, own, nb, mask)
    losses, _ = softmax_xent(logits, labels[ids])
    acc = float(np.mean(logits.argmax(axis=1) == labels[ids]))
    return float(losses.mean()), acc


def predict(model, inputs: StageInputs, ids: np.ndarray) -> np.ndarray:
    own, nb, mask = inputs.rows(ids)
    logits, _ = model_forward(model, own, nb, mask)
    return logits.argmax(axis=1)


def train_stage_federated(model: ModelParams, stage: int, inputs: StageInputs,
                          val_inputs: StageInputs, labels: np.ndarray,
                          train_ids: np.ndarray, val_ids: np.ndarray,
                          s: RunSettings, ledger: CommLedger):
    """FedSGD rounds for one model; returns the best-val-loss snapshot.

    Validation happens on the model as sent each round (before that round's
    update), matching the protocol's message order.
    """
    theta = to_vec(model)
    pooled = full_participation(train_ids, val_ids, s.batch_cap)
    bank = (PooledVelocity(theta.size, theta.dtype) if pooled
            else PerClientVelocity(train_ids, theta.size, theta.dtype))
    tracker = EarlyStopTracker(s.patience)
    best_vec = None
    loss_curve, acc_curve = [], []
    rounds_done = 0
    model_floats = model.n_floats

    for r in range(s.rounds):
        tr_s, val_s = sample_round_clients(train_ids, val_ids, s.batch_cap,
                                           s.seed, stage, r)
        down = np.concatenate([tr_s, val_s])
        ledger.record_many("server-model", np.full(len(down), SERVER), down,
                           model_floats, round_no=r)
        ledger.record_many("grad-up", tr_s, np.full(len(tr_s), SERVER),
                           model_floats, round_no=r)
        ledger.record_many("val-report", val_s, np.full(len(val_s), SERVER),
                           2, round_no=r)
        rounds_done = r + 1

        cur = from_vec(model, theta)
        stop = False
        if len(val_s):
            vloss, vacc = validate_clients(cur, val_inputs, val_s, labels)
            loss_curve.append(vloss)
            acc_curve.append(vacc)
            if vloss < tracker.best_loss:
                best_vec = theta.copy()
            stop = tracker.update(vloss)

        if isinstance(bank, PooledVelocity):
            _, gbar = _mean_loss_and_grad(cur, inputs, tr_s, labels)
            vel = bank.step(gbar, theta, s.momentum, s.weight_decay)
        else:
            rows = _per_client_grads(cur, inputs, tr_s, labels)
            vel = bank.step_rows(tr_s, rows, theta, s.momentum, s.weight_decay)
        theta = theta - np.asarray(s.lr, theta.dtype) * vel

        if stop:
            break

    final = best_vec if best_vec is not None else theta
    return from_vec(model, final), loss_curve, acc_curve, rounds_done


def train_layerwise(bundle: GraphBundle, view: GraphView,
                    train_ids: np.ndarray, val_ids: np.ndarray,
                    s: RunSettings, ledger: CommLedger | None = None,
                    val_view: GraphView | None = None) -> LayerwiseRun:
    """Full protocol run: K+1 models, K message-passing rounds.

    ``val_view`` switches validation inputs to a separate (inductive)
    graph; its embedding chains are recomputed from the frozen models at
    each stage boundary and are not charged to the ledger.
    """
    if s.arch == "mlp" and s.k != 0:
        raise ConfigError("mlp runs are single-model; use k=0")
    if s.arch != "mlp" and s.arch not in ("gcn", "sage", "gat"):
        raise ConfigError(f"unknown arch '{s.arch}'")
    if ledger is None:
        ledger = CommLedger(bundle.num_nodes, log_events=s.log_events)
    I, O, H = bundle.feature_dim, bundle.num_classes, s.hidden
    labels = bundle.labels
    schedule = (EVAL_ALWAYS if s.edge_keep >= 1.0 else
                ContactSchedule(model="edge-drop", p=s.edge_keep, seed=s.seed))

    models: list[ModelParams] = []
    inputs = [stage0_inputs(bundle)]
    val_inputs = [stage0_inputs(bundle)] if val_view is not None else None
    loss_curves, acc_curves, rounds_run = [], [], []

    for m in range(s.k + 1):
        init = (init_mlp(I, H, O, s.seed, tag=m) if m == 0 else
                init_block(s.arch, O, H, O, s.seed, heads=s.heads,
                           pool_dim=s.pool_dim, tag=m))
        v_inp = inputs[m] if val_inputs is None else val_inputs[m]
        best, lc, ac, nr = train_stage_federated(
            init, m, inputs[m], v_inp, labels, train_ids, val_ids, s, ledger)
        models.append(best)
        loss_curves.append(lc)
        acc_curves.append(ac)
        rounds_run.append(nr)
        if m < s.k:
            inputs.append(message_passing_round(models, m + 1, inputs[m],
                                                view, s, schedule, ledger))
            if val_inputs is not None:
                val_inputs.append(message_passing_round(
                    models, m + 1, val_inputs[m], val_view, s, EVAL_ALWAYS, None))

    return LayerwiseRun(models=models, stage_inputs=inputs,
                        val_loss_curves=loss_curves, val_acc_curves=acc_curves,
                        rounds_run=rounds_run, ledger=ledger)


def chain_inputs(models: list, bundle: GraphBundle, view: GraphView,
                 s: RunSettings, upto: int) -> list:
    """Recompute stage inputs 0..upto on a view with full availability.

    Used for inference on graphs the protocol never trained on (inductive
    validation/test); returns the same structures the protocol caches.
    """
    out = [stage0_inputs(bundle)]
    for m in range(1, upto + 1):
        out.append(message_passing_round(models, m, out[m - 1], view, s,
                                         EVAL_ALWAYS, None))
    return out
