"""Synthetic graph generation (stochastic block model with Gaussian features).

Desk-scale stand-ins for public node-classification datasets. ``homophily``
is the fraction of edges that connect same-class nodes; features are drawn
around a per-class center so that feature-only classifiers get partial
signal and aggregation adds more.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graphs import GraphBundle, make_bundle
from .rng import SYNTH, keyed_rng


@dataclass(frozen=True)
class SynthSpec:
    nodes: int
    classes: int
    homophily: float
    feature_dim: int
    avg_degree: float
    seed: int = 0
    class_sep: float = 1.0  # feature-center separation, in noise units
    edges: int | None = None  # exact undirected edge count; overrides avg_degree

    def __post_init__(self):
        if self.nodes < self.classes:
            raise ConfigError("need at least one node per class")
        if not (0 <= self.homophily <= 1):
            raise ConfigError("homophily must be in [0, 1]")
        if self.feature_dim < 1 or self.avg_degree < 0:
            raise ConfigError("invalid feature_dim or avg_degree")


def _draw_edges(
    rng: np.random.Generator, labels: np.ndarray, n_edges: int, homophily: float
) -> np.ndarray:
    """Exact-count edge sampling with an intra-class quota."""
    n = len(labels)
    n_intra = int(np.floor(n_edges * homophily + 0.5))
    n_inter = n_edges - n_intra
    chosen: set[tuple[int, int]] = set()
    edges = np.empty((n_edges, 2), np.int64)
    filled = 0
    want_intra, want_inter = n_intra, n_inter
    max_tries = 200 * n_edges + 1000
    tries = 0
    while filled < n_edges:
        tries += 1
        if tries > max_tries:
            raise ConfigError(
                "could not place requested edge counts; graph too dense "
                "for the homophily target"
            )
        a, b = rng.integers(0, n, 2)
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key in chosen:
            continue
        intra = labels[a] == labels[b]
        if intra and want_intra > 0:
            want_intra -= 1
        elif not intra and want_inter > 0:
            want_inter -= 1
        else:
            continue
        chosen.add(key)
        edges[filled] = key
        filled += 1
    return edges


def synth_graph(spec: SynthSpec) -> GraphBundle:
    """Deterministic SBM-style bundle for the given spec."""
    rng = keyed_rng(spec.seed, SYNTH, 0)
    n, c = spec.nodes, spec.classes
    # near-equal class sizes, shuffled assignment
    labels = np.sort(np.arange(n) % c)
    labels = labels[rng.permutation(n)]
    n_edges = spec.edges if spec.edges is not None else int(round(n * spec.avg_degree / 2))
    edges = _draw_edges(rng, labels, n_edges, spec.homophily)

    centers = rng.standard_normal((c, spec.feature_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    feats = spec.class_sep * centers[labels] + rng.standard_normal((n, spec.feature_dim))
    return make_bundle(n, edges, feats.astype(np.float32), labels, num_classes=c)


# Structure-exact stand-ins for common citation graphs (node/edge/feature/class
# counts match the public datasets; features and wiring are synthetic).
PRESETS: dict[str, dict] = {
    "cora-like": dict(
        nodes=2708, classes=7, homophily=0.81, feature_dim=1433,
        avg_degree=0.0, edges=5283, class_sep=1.0,
    ),
    "citeseer-like": dict(
        nodes=3327, classes=6, homophily=0.74, feature_dim=3703,
        avg_degree=0.0, edges=4552, class_sep=1.0,
    ),
}


def preset_spec(name: str, seed: int = 0, **overrides) -> SynthSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; have {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return SynthSpec(seed=seed, **kw)
