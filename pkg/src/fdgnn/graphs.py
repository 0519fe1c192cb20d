"""Graph bundles, splits, views and deterministic neighbor sampling.

A bundle is an immutable undirected graph with node features and class
labels. The on-disk format is a directory of plain TSV files:

    edges.tsv     two integer columns, one undirected edge per line
    features.tsv  one row per node, tab-separated decimals
    labels.tsv    one integer per line
    meta.json     optional {"num_nodes": N, "feature_dim": I, "num_classes": C}

Node ids are 0-based. Edges may be listed in either orientation; the loader
symmetrizes, de-duplicates, and drops self-loops (counted on the bundle).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .rng import SAMPLER, SPLIT, keyed_rng


@dataclass(frozen=True)
class GraphBundle:
    """Undirected graph with per-node features and labels."""

    num_nodes: int
    adjacency: tuple  # tuple of sorted int64 arrays, one per node
    features: np.ndarray  # (num_nodes, feature_dim) float32
    labels: np.ndarray  # (num_nodes,) int64, values in [0, num_classes)
    feature_dim: int
    num_classes: int
    self_loops_dropped: int = 0

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.adjacency[v]

    @property
    def directed_edge_count(self) -> int:
        """Number of directed adjacency entries (2x undirected edges)."""
        return sum(len(a) for a in self.adjacency)

    def validate(self) -> None:
        n = self.num_nodes
        if self.features.shape != (n, self.feature_dim):
            raise DataError(
                f"features shape {self.features.shape} does not match "
                f"{n} nodes x {self.feature_dim} dims"
            )
        if self.labels.shape != (n,):
            raise DataError(f"labels shape {self.labels.shape}, expected ({n},)")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(
                f"labels must lie in [0, {self.num_classes}); "
                f"saw range [{self.labels.min()}, {self.labels.max()}]"
            )
        for v, nbrs in enumerate(self.adjacency):
            if len(nbrs) == 0:
                continue
            if nbrs[0] < 0 or nbrs[-1] >= n:
                raise DataError(f"node {v} has neighbor outside [0, {n})")
            if np.any(np.diff(nbrs) <= 0):
                raise DataError(f"adjacency of node {v} not sorted/unique")
            if v in nbrs:
                raise DataError(f"self-loop survived at node {v}")
        # symmetry
        for v, nbrs in enumerate(self.adjacency):
            for u in nbrs:
                if v not in self.adjacency[u]:
                    raise DataError(f"edge {v}->{u} missing reverse entry")


def build_adjacency(num_nodes: int, edges: np.ndarray) -> tuple[tuple, int]:
    """Symmetrized adjacency lists from an (m, 2) edge array.

    Returns (adjacency, self_loops_dropped). Duplicate edges collapse.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise DataError(f"edge endpoint outside [0, {num_nodes})")
    loops = int(np.sum(edges[:, 0] == edges[:, 1])) if edges.size else 0
    edges = edges[edges[:, 0] != edges[:, 1]] if edges.size else edges
    lists: list[list[int]] = [[] for _ in range(num_nodes)]
    for a, b in edges:
        lists[a].append(int(b))
        lists[b].append(int(a))
    adjacency = tuple(
        np.unique(np.asarray(l, dtype=np.int64)) if l else np.empty(0, np.int64)
        for l in lists
    )
    return adjacency, loops


def make_bundle(
    num_nodes: int,
    edges: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int | None = None,
) -> GraphBundle:
    """Bundle from in-memory arrays; validates invariants."""
    features = np.ascontiguousarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    adjacency, loops = build_adjacency(num_nodes, edges)
    b = GraphBundle(
        num_nodes=num_nodes,
        adjacency=adjacency,
        features=features,
        labels=labels,
        feature_dim=features.shape[1] if features.ndim == 2 else 0,
        num_classes=int(num_classes),
        self_loops_dropped=loops,
    )
    b.validate()
    return b


def load_bundle(path: str | Path) -> GraphBundle:
    """Load a bundle directory. Raises DataError on malformed contents."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"bundle directory not found: {root}")
    for name in ("edges.tsv", "features.tsv", "labels.tsv"):
        if not (root / name).is_file():
            raise DataError(f"missing {name} in bundle {root}")

    feats = pd.read_csv(
        root / "features.tsv", sep="\t", header=None, dtype=np.float32
    ).to_numpy()
    labels = pd.read_csv(
        root / "labels.tsv", sep="\t", header=None, dtype=np.int64
    ).to_numpy()[:, 0]
    edges_path = root / "edges.tsv"
    if edges_path.stat().st_size:
        edges = pd.read_csv(
            edges_path, sep="\t", header=None, dtype=np.int64
        ).to_numpy()
        if edges.shape[1] != 2:
            raise DataError("edges.tsv must have exactly two columns")
    else:
        edges = np.empty((0, 2), np.int64)

    num_nodes = feats.shape[0]
    num_classes = int(labels.max()) + 1 if labels.size else 1
    meta_path = root / "meta.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        if meta.get("num_nodes", num_nodes) != num_nodes:
            raise DataError(
                f"meta num_nodes {meta['num_nodes']} != {num_nodes} feature rows"
            )
        if meta.get("feature_dim", feats.shape[1]) != feats.shape[1]:
            raise DataError("meta feature_dim disagrees with features.tsv")
        num_classes = int(meta.get("num_classes", num_classes))
    if labels.shape[0] != num_nodes:
        raise DataError(
            f"{labels.shape[0]} labels for {num_nodes} feature rows"
        )
    return make_bundle(num_nodes, edges, feats, labels, num_classes)


def save_bundle(path: str | Path, bundle: GraphBundle) -> Path:
    """Write a bundle directory (undirected edges listed once, u < v)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for v, nbrs in enumerate(bundle.adjacency):
        for u in nbrs:
            if v < u:
                lines.append(f"{v}\t{u}")
    (root / "edges.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))
    np.savetxt(root / "features.tsv", bundle.features, fmt="%.8g", delimiter="\t")
    np.savetxt(root / "labels.tsv", bundle.labels[:, None], fmt="%d")
    (root / "meta.json").write_text(
        json.dumps(
            {
                "num_nodes": bundle.num_nodes,
                "feature_dim": bundle.feature_dim,
                "num_classes": bundle.num_classes,
            }
        )
        + "\n"
    )
    return root


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test node ids, plus subgraph memberships in inductive mode.

    Transductive: train/val/test partition the node set; the graph used for
    training, validation and testing is the whole graph.

    Inductive: ``train_nodes`` (50% of nodes) induce the training graph,
    ``val_nodes`` (60%) the validation graph, the test graph is everything.
    ``train_ids`` are the labeled 10% of the training graph; ``val_ids`` are
    the nodes only present in the validation graph, ``test_ids`` the rest.
    """

    mode: str  # "transductive" | "inductive"
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    train_nodes: np.ndarray | None = None
    val_nodes: np.ndarray | None = None
    test_nodes: np.ndarray | None = None


def make_transductive_split(
    g: GraphBundle, train_frac: float, val_frac: float, seed: int
) -> SplitSpec:
    """Uniform disjoint train/val sets of floor(frac * N); rest is test."""
    if not (0 < train_frac < 1) or not (0 <= val_frac < 1):
        raise ConfigError(f"fractions out of range: {train_frac}, {val_frac}")
    if train_frac + val_frac >= 1:
        raise ConfigError("train_frac + val_frac must be < 1")
    n = g.num_nodes
    n_tr = int(n * train_frac)
    n_val = int(n * val_frac)
    if n_tr == 0:
        raise ConfigError("train fraction yields an empty train set")
    perm = keyed_rng(seed, SPLIT, 0).permutation(n)
    return SplitSpec(
        mode="transductive",
        train_ids=np.sort(perm[:n_tr]),
        val_ids=np.sort(perm[n_tr : n_tr + n_val]),
        test_ids=np.sort(perm[n_tr + n_val :]),
    )


def make_per_class_split(
    g: GraphBundle, train_per_class: int, val_total: int, seed: int
) -> SplitSpec:
    """Fixed number of train nodes per class, val sampled from the rest."""
    if train_per_class < 1 or val_total < 0:
        raise ConfigError("per-class split sizes must be positive")
    rng = keyed_rng(seed, SPLIT, 1)
    train: list[np.ndarray] = []
    for c in range(g.num_classes):
        ids = np.flatnonzero(g.labels == c)
        if len(ids) < train_per_class:
            raise ConfigError(
                f"class {c} has {len(ids)} nodes < {train_per_class} requested"
            )
        train.append(rng.permutation(ids)[:train_per_class])
    train_ids = np.sort(np.concatenate(train))
    rest = np.setdiff1d(np.arange(g.num_nodes), train_ids)
    if val_total > len(rest):
        raise ConfigError("val_total exceeds remaining nodes")
    val_ids = np.sort(rng.permutation(rest)[:val_total])
    test_ids = np.setdiff1d(rest, val_ids)
    return SplitSpec(
        mode="transductive", train_ids=train_ids, val_ids=val_ids, test_ids=test_ids
    )


def make_inductive_split(g: GraphBundle, seed: int) -> SplitSpec:
    """50%/60%/100% nested subgraph memberships with 10% labeled train nodes."""
    n = g.num_nodes
    if n < 10:
        raise ConfigError(f"inductive split needs >= 10 nodes, got {n}")
    perm = keyed_rng(seed, SPLIT, 2).permutation(n)
    n_tr_graph = n // 2
    n_val_graph = (n * 6) // 10
    train_nodes = np.sort(perm[:n_tr_graph])
    val_nodes = np.sort(perm[:n_val_graph])
    test_nodes = np.arange(n)
    n_labeled = max(1, n_tr_graph // 10)
    labeled = np.sort(keyed_rng(seed, SPLIT, 3).permutation(train_nodes)[:n_labeled])
    val_ids = np.setdiff1d(val_nodes, train_nodes)
    test_ids = np.setdiff1d(test_nodes, val_nodes)
    return SplitSpec(
        mode="inductive",
        train_ids=labeled,
        val_ids=val_ids,
        test_ids=test_ids,
        train_nodes=train_nodes,
        val_nodes=val_nodes,
        test_nodes=test_nodes,
    )


# ---------------------------------------------------------------------------
# Views and sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphView:
    """A bundle restricted to a member node set, keeping global node ids."""

    bundle: GraphBundle
    members: np.ndarray  # sorted global ids
    adjacency: tuple  # filtered neighbor lists, indexed by global id
    member_mask: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.members)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.adjacency[v]

    @property
    def directed_edge_count(self) -> int:
        return sum(len(self.adjacency[v]) for v in self.members)

    @property
    def max_degree(self) -> int:
        return max((len(self.adjacency[v]) for v in self.members), default=0)


def full_view(bundle: GraphBundle) -> GraphView:
    mask = np.ones(bundle.num_nodes, dtype=bool)
    return GraphView(
        bundle=bundle,
        members=np.arange(bundle.num_nodes),
        adjacency=bundle.adjacency,
        member_mask=mask,
    )


def induced_view(bundle: GraphBundle, members: np.ndarray) -> GraphView:
    """Subgraph induced by ``members``; edges to outside nodes are removed."""
    members = np.sort(np.asarray(members, dtype=np.int64))
    mask = np.zeros(bundle.num_nodes, dtype=bool)
    mask[members] = True
    adjacency = tuple(
        bundle.adjacency[v][mask[bundle.adjacency[v]]] if mask[v] else np.empty(0, np.int64)
        for v in range(bundle.num_nodes)
    )
    return GraphView(bundle=bundle, members=members, adjacency=adjacency, member_mask=mask)


@dataclass(frozen=True)
class SamplerConfig:
    max_neighbors_per_hop: int = 25
    edge_keep_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_neighbors_per_hop < 1:
            raise ConfigError("max_neighbors_per_hop must be >= 1")
        if not (0 < self.edge_keep_fraction <= 1):
            raise ConfigError("edge_keep_fraction must be in (0, 1]")


def _sample_sorted(pool: np.ndarray, k: int, seed: int, *key: int) -> np.ndarray:
    """Sorted uniform sample without replacement; full pool needs no RNG."""
    if k >= len(pool):
        return pool
    rng = keyed_rng(seed, SAMPLER, *key)
    idx = rng.permutation(len(pool))[:k]
    return np.sort(pool[idx])


def sample_size(degree: int, cfg: SamplerConfig) -> int:
    kept = int(np.floor(degree * cfg.edge_keep_fraction + 0.5))
    return min(kept, cfg.max_neighbors_per_hop, degree)


def sample_neighbors(
    g: GraphBundle | GraphView, v: int, cfg: SamplerConfig, round_tag: int
) -> np.ndarray:
    """Deterministic neighbor sample for node v in a given round.

    The draw is a pure function of (cfg.seed, v, round_tag); isolated nodes
    yield an empty array.
    """
    nbrs = g.neighbors(v)
    return _sample_sorted(nbrs, sample_size(len(nbrs), cfg), cfg.seed, v, round_tag)


def sample_from(
    pool: np.ndarray, cap: int, seed: int, v: int, round_tag: int
) -> np.ndarray:
    """Sample up to ``cap`` entries from an explicit pool, same keying."""
    return _sample_sorted(np.asarray(pool, dtype=np.int64), min(cap, len(pool)), seed, v, round_tag)
