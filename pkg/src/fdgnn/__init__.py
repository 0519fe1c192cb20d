"""Training simulator for graph neural networks on fully-distributed graphs.

One graph node lives on one client; a coordinating server never sees the
graph. The package implements two training protocols over a simulated
network with byte-exact accounting: end-to-end GNN training (every round
mobilizes K-hop neighborhoods) and the layer-wise transformation (K+1
sequentially trained models with exactly K embedding-sharing rounds).
"""

__version__ = "0.1.0"
