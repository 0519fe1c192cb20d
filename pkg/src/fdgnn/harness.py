"""Experiment configuration, orchestration, grid search, report emission.

A single JSON config document fully determines a run. Defaults follow the
round-based training regime: 400 rounds, SGD momentum 0.9, weight decay
5e-4, per-round client budget 1024, neighbor cap 25 per hop; hidden size
and learning rate are per-experiment. Micro-F1 equals plain accuracy here
(single-label nodes, every test node classified).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .fedsgd import RunSettings
from .graphs import (GraphBundle, GraphView, SplitSpec, full_view,
                     induced_view, load_bundle, make_inductive_split,
                     make_per_class_split, make_transductive_split)
from .kernels import save_model
from .layerwise import (LayerwiseRun, chain_inputs, predict, train_layerwise)
from .endtoend import EndToEndRun, endtoend_logits, train_endtoend
from .netsim import CommLedger, summary_dict
from .synth import PRESETS, SynthSpec, preset_spec, synth_graph

ARCHS = ("mlp", "gcn", "sage", "gat")
MODES = ("gnn", "layerwise")
LR_GRID_DEFAULT = (0.005, 0.01, 0.025, 0.05, 0.075, 0.1)
HIDDEN_GRID_DEFAULT = (64, 128, 256)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully-resolved description of one experiment."""

    arch: str = "gcn"
    mode: str = "gnn"  # end-to-end GNN vs layer-wise models
    bundle: str | None = None
    synthetic: dict | None = None  # SynthSpec fields; exclusive with bundle
    k: int = 2
    rounds: int = 400
    lr: float = 0.01
    hidden: int = 256
    heads: int = 8
    pool_dim: int = 512
    batch_cap: int = 1024
    neighbor_cap: int = 25
    momentum: float = 0.9
    weight_decay: float = 0.0005
    patience: int | None = None
    edge_keep: float = 1.0
    seed: int = 0
    repeats: int = 1
    residual: bool = False
    split_mode: str = "transductive"  # "transductive" | "inductive"
    train_frac: float = 0.1
    val_frac: float = 0.1
    train_per_class: int | None = None  # per-class split overrides fractions
    val_total: int | None = None
    attribution: str = "sender"
    log_events: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got '{self.arch}'")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if (self.bundle is None) == (self.synthetic is None):
            raise ConfigError("exactly one of bundle / synthetic is required")
        if self.arch == "mlp" and self.mode == "gnn":
            # a featureless-graph MLP is the degenerate layerwise run
            object.__setattr__(self, "mode", "layerwise")
        if self.rounds < 0 or self.repeats < 1:
            raise ConfigError("rounds must be >= 0 and repeats >= 1")
        if self.k < 0 or (self.arch == "mlp" and self.k != 0):
            raise ConfigError("k must be >= 0, and 0 for mlp")
        if self.arch != "mlp" and self.k == 0:
            raise ConfigError("GNN architectures need k >= 1")
        if not (0 < self.edge_keep <= 1):
            raise ConfigError("edge_keep must be in (0, 1]")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 (or null)")
        if self.split_mode not in ("transductive", "inductive"):
            raise ConfigError(f"unknown split_mode '{self.split_mode}'")
        return self

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        cfg = ExperimentConfig(**doc)
        if cfg.arch == "mlp" and "k" not in doc:
            cfg = replace(cfg, k=0)
        return cfg.validate()

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return ExperimentConfig.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)


def settings_for(cfg: ExperimentConfig, seed: int) -> RunSettings:
    return RunSettings(
        arch=cfg.arch, k=cfg.k, rounds=cfg.rounds, lr=cfg.lr,
        hidden=cfg.hidden, heads=cfg.heads, pool_dim=cfg.pool_dim,
        batch_cap=cfg.batch_cap, neighbor_cap=cfg.neighbor_cap,
        momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        patience=cfg.patience, edge_keep=cfg.edge_keep, seed=seed,
        residual=cfg.residual, log_events=cfg.log_events,
    )


def load_dataset(cfg: ExperimentConfig) -> GraphBundle:
    if cfg.bundle is not None:
        return load_bundle(cfg.bundle)
    doc = dict(cfg.synthetic)
    preset = doc.pop("preset", None)
    if preset is not None:
        return synth_graph(preset_spec(preset, **doc))
    try:
        return synth_graph(SynthSpec(**doc))
    except TypeError as e:
        raise ConfigError(f"bad synthetic spec: {e}") from e


def make_split(bundle: GraphBundle, cfg: ExperimentConfig, seed: int) -> SplitSpec:
    if cfg.split_mode == "inductive":
        return make_inductive_split(bundle, seed)
    if cfg.train_per_class is not None:
        val_total = (cfg.val_total if cfg.val_total is not None
                     else cfg.train_per_class * bundle.num_classes)
        return make_per_class_split(bundle, cfg.train_per_class, val_total, seed)
    return make_transductive_split(bundle, cfg.train_frac, cfg.val_frac, seed)


def micro_f1(preds: np.ndarray, labels: np.ndarray) -> float:
    """Global F1 over single-label nodes: identical to accuracy."""
    if len(preds) == 0:
        return float("nan")
    return float(np.mean(preds == labels))


@dataclass
class SeedOutcome:
    seed: int
    micro_f1: float
    rounds_run: list
    val_loss_curves: list
    val_acc_curves: list
    best_val_loss: float
    ledger: CommLedger


def run_single(cfg: ExperimentConfig, bundle: GraphBundle, seed: int,
               save_models_dir: str | None = None) -> SeedOutcome:
    s = settings_for(cfg, seed)
    split = make_split(bundle, cfg, seed)
    ledger = CommLedger(bundle.num_nodes, log_events=cfg.log_events)

    if cfg.split_mode == "inductive":
        train_graph = induced_view(bundle, split.train_nodes)
        val_graph = induced_view(bundle, split.val_nodes)
        test_graph = full_view(bundle)
    else:
        train_graph = val_graph = test_graph = full_view(bundle)

    if cfg.mode == "layerwise":
        run = train_layerwise(
            bundle, train_graph, split.train_ids, split.val_ids, s, ledger,
            val_view=None if val_graph is train_graph else val_graph)
        if test_graph is train_graph:
            test_inputs = run.stage_inputs[-1]
        else:
            test_inputs = chain_inputs(run.models[:-1], bundle, test_graph,
                                       s, cfg.k)[-1]
        preds = predict(run.models[-1], test_inputs, split.test_ids)
        models = run.models
        rounds_run = run.rounds_run
        loss_curves, acc_curves = run.val_loss_curves, run.val_acc_curves
    else:
        run = train_endtoend(
            bundle, train_graph, split.train_ids, split.val_ids, s, ledger,
            val_view=None if val_graph is train_graph else val_graph)
        logits = endtoend_logits(run.model, bundle, test_graph,
                                 split.test_ids, s, round_tag=cfg.rounds)
        preds = logits.argmax(axis=1)
        models = [run.model]
        rounds_run = [run.rounds_run]
        loss_curves, acc_curves = [run.val_loss_curve], [run.val_acc_curve]

    if save_models_dir:
        out = Path(save_models_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(models):
            save_model(out / f"model_{i}_seed{seed}.bin", m)

    best = min((min(c) for c in loss_curves if c), default=float("nan"))
    return SeedOutcome(
        seed=seed, micro_f1=micro_f1(preds, bundle.labels[split.test_ids]),
        rounds_run=rounds_run, val_loss_curves=loss_curves,
        val_acc_curves=acc_curves, best_val_loss=best, ledger=ledger)


@dataclass
class RunReport:
    """Everything a run produced. ``wall_time_s`` is informational and is
    excluded from the canonical JSON so identical runs serialize identically."""

    config: dict
    seeds: list
    micro_f1_per_seed: list
    micro_f1_mean: float
    micro_f1_std: float
    best_val_loss: float
    rounds_run: list
    val_loss_curves: list
    val_acc_curves: list
    ledger_summary: dict
    per_client_c2c: list
    per_client_c2s: list
    wall_time_s: float = 0.0

    def to_json(self) -> str:
        doc = asdict(self)
        doc.pop("wall_time_s")
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunReport":
        doc = json.loads(text)
        doc.setdefault("wall_time_s", 0.0)
        return RunReport(**doc)


def run_experiment(cfg: ExperimentConfig,
                   save_models_dir: str | None = None) -> RunReport:
    """Run ``cfg.repeats`` seeded replicas and aggregate micro-F1.

    The communication summary and curves come from the first seed; byte
    totals are structural and agree across seeds on fixed availability.
    """
    cfg = cfg.validate()
    t0 = time.time()
    bundle = load_dataset(cfg)
    outcomes = [run_single(cfg, bundle, cfg.seed + i, save_models_dir)
                for i in range(cfg.repeats)]
    scores = [o.micro_f1 for o in outcomes]
    first = outcomes[0]
    per_client = first.ledger.client_bytes(cfg.attribution)
    return RunReport(
        config=cfg.to_dict(),
        seeds=[o.seed for o in outcomes],
        micro_f1_per_seed=scores,
        micro_f1_mean=float(np.mean(scores)),
        micro_f1_std=float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0,
        best_val_loss=first.best_val_loss,
        rounds_run=first.rounds_run,
        val_loss_curves=first.val_loss_curves,
        val_acc_curves=first.val_acc_curves,
        ledger_summary=summary_dict(first.ledger, attribution=cfg.attribution,
                                    seed=first.seed),
        per_client_c2c=per_client[:, 0].tolist(),
        per_client_c2s=per_client[:, 1].tolist(),
        wall_time_s=time.time() - t0,
    )


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

@dataclass
class GridResult:
    best_config: dict
    best_val_loss: float
    table: list  # rows of {lr, hidden, val_loss, micro_f1}


def grid_search(base: ExperimentConfig,
                lr_grid=LR_GRID_DEFAULT,
                hidden_grid=HIDDEN_GRID_DEFAULT) -> GridResult:
    """Exhaustive search; argmin validation loss, ties to lower lr then
    smaller hidden size."""
    if not lr_grid or not hidden_grid:
        raise ConfigError("grid search needs a non-empty space")
    rows = []
    best = None
    for lr in sorted(lr_grid):
        for hidden in sorted(hidden_grid):
            cfg = replace(base, lr=lr, hidden=int(hidden)).validate()
            rep = run_experiment(cfg)
            row = {"lr": lr, "hidden": int(hidden),
                   "val_loss": rep.best_val_loss,
                   "micro_f1": rep.micro_f1_mean}
            rows.append(row)
            key = (row["val_loss"], lr, hidden)
            if best is None or key < best[0]:
                best = (key, cfg)
    return GridResult(best_config=best[1].to_dict(),
                      best_val_loss=best[0][0], table=rows)


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------

def emit_figures_data(reports: list[RunReport], out_dir: str | Path,
                      channel: str = "total") -> list[Path]:
    """Per-client data-transfer CSVs (``Sno,node`` columns), one per report.

    Values are MB per client, descending, on the chosen channel scope
    (total = c2c + c2s). File names encode dataset tag, mode-arch and
    rounds (or ``es`` when early stopping was on).
    """
    if channel not in ("total", "c2c", "c2s"):
        raise ConfigError(f"unknown channel '{channel}'")
    out_dir = Path(out_dir)
    written = []
    for rep in reports:
        cfg = rep.config
        c2c = np.asarray(rep.per_client_c2c, dtype=np.float64)
        c2s = np.asarray(rep.per_client_c2s, dtype=np.float64)
        vals = {"total": c2c + c2s, "c2c": c2c, "c2s": c2s}[channel]
        mb = np.sort(vals)[::-1] / 1e6
        if cfg.get("bundle"):
            tag = Path(cfg["bundle"]).name
        else:
            tag = (cfg.get("synthetic") or {}).get("preset", "synthetic")
        mode = cfg["arch"] if cfg["arch"] == "mlp" else (
            cfg["arch"] if cfg["mode"] == "gnn" else f"layerwise_{cfg['arch']}")
        rounds = "es" if cfg.get("patience") else str(cfg["rounds"])
        suffix = "" if channel == "total" else f"_{channel}"
        path = out_dir / f"{tag}_{mode}_{rounds}{suffix}.csv"
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write("Sno,node\n")
            for i, v in enumerate(mb):
                f.write(f"{i},{v:.6f}\n")
        written.append(path)
    return written
