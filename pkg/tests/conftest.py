import os

import numpy as np
import pytest

from fdgnn.graphs import load_bundle, make_bundle
from fdgnn.synth import SynthSpec, preset_spec, synth_graph

# Real citation bundle, if one is mounted; otherwise a structure-exact
# synthetic stand-in (same node/edge/feature/class counts) is used for the
# communication-accounting criteria.
CORA_ENV = "FDGNN_CORA_BUNDLE"


@pytest.fixture(scope="session")
def cora_like():
    path = os.environ.get(CORA_ENV)
    if path:
        return load_bundle(path), True
    return synth_graph(preset_spec("cora-like", seed=7, class_sep=1.4)), False


@pytest.fixture(scope="session")
def accept_bundle():
    """500-node homophilous graph used by the accuracy-property criteria."""
    return synth_graph(SynthSpec(nodes=500, classes=5, homophily=0.85,
                                 feature_dim=32, avg_degree=10, seed=11,
                                 class_sep=2.4))


@pytest.fixture(scope="session")
def small_bundle():
    return synth_graph(SynthSpec(nodes=120, classes=3, homophily=0.85,
                                 feature_dim=16, avg_degree=8, seed=1,
                                 class_sep=2.0))


def star_bundle(n_leaves: int, feature_dim: int = 4, classes: int = 2):
    """Node 0 is the hub; leaves 1..n."""
    edges = np.array([[0, i] for i in range(1, n_leaves + 1)], np.int64)
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((n_leaves + 1, feature_dim)).astype(np.float32)
    labels = np.arange(n_leaves + 1) % classes
    return make_bundle(n_leaves + 1, edges, feats, labels, classes)
