"""Correlation graph over a batch and its message-propagation network.

The graph is dense: node i starts as embedding z_i and the ordered edge
(i, j) as the elementwise product z_i * z_j. One propagation step advances
nodes first, then edges:

* nodes add masked multi-head self-attention (each row attends only to
  other-class columns; self and same-class weights are exactly zero) plus
  the unnormalized sum of incident edges, through post-norm residual
  transformer sublayers;
* edges attend from a single query (the edge state) over exactly its two
  endpoint nodes, through the same sublayer pattern.

Blocks are shared across the K steps by default; per-step weights are kept
behind a flag for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backbone import EmbeddingBatch
from .errors import ConfigurationError, GraphError, ShapeError


@dataclass
class GraphNetConfig:
    k_steps: int = 1
    heads: int = 2
    ffn_expansion: int = 4
    share_weights_across_steps: bool = True

    def validate(self, dim: int) -> None:
        if self.k_steps < 1:
            raise ConfigurationError("k_steps must be >= 1")
        if self.heads < 1:
            raise ConfigurationError("heads must be >= 1")
        if dim % self.heads != 0:
            raise ConfigurationError(
                f"embed dim {dim} not divisible by {self.heads} heads"
            )
        if self.ffn_expansion < 1:
            raise ConfigurationError("ffn_expansion must be >= 1")


@dataclass
class CorrelationGraph:
    v: ad.Tensor          # (B, D) node states
    e: ad.Tensor          # (B, B, D) ordered-pair edge states
    labels: np.ndarray    # (B,) class ids
    step: int = 0

    @property
    def size(self) -> int:
        return self.v.shape[0]

    @property
    def dim(self) -> int:
        return self.v.shape[1]


def init_graph(zb: EmbeddingBatch) -> CorrelationGraph:
    """Step-0 graph: V = z, E_ij = z_i * z_j for every ordered pair."""
    norms = np.linalg.norm(zb.z.data, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-5):
        raise ShapeError("init_graph expects unit-norm embedding rows")
    return CorrelationGraph(v=zb.z, e=ad.hadamard_pairs(zb.z), labels=zb.labels)


def attention_block_mask(labels: np.ndarray) -> np.ndarray:
    """True where node attention is blocked: self and same-class columns."""
    labels = np.asarray(labels)
    return labels[:, None] == labels[None, :]


def _split_heads(x: ad.Tensor, heads: int) -> ad.Tensor:
    b, d = x.shape
    return x.reshape(b, heads, d // heads).swapaxes(0, 1)  # (H, B, hd)


class NodeBlock(ad.Module):
    """One node-propagation step: masked self-attention + edge sum + FFN."""

    def __init__(self, dim: int, heads: int, ffn_expansion: int, rng: np.random.Generator):
        self.dim = dim
        self.heads = heads
        self.wq = ad.Linear(dim, dim, rng)
        self.wk = ad.Linear(dim, dim, rng)
        self.wv = ad.Linear(dim, dim, rng)
        self.wo = ad.Linear(dim, dim, rng)
        self.ln1 = ad.LayerNorm(dim)
        self.ln2 = ad.LayerNorm(dim)
        self.ffn = ad.FeedForward(dim, ffn_expansion, rng)

    def attention(self, v: ad.Tensor, labels: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        """Multi-head attention output (B, D) and its weights (H, B, B)."""
        blocked = attention_block_mask(labels)
        if np.any(blocked.all(axis=1)):
            raise GraphError("no negatives to attend: batch has a single class")
        hd = self.dim // self.heads
        q = _split_heads(self.wq(v), self.heads)
        k = _split_heads(self.wk(v), self.heads)
        val = _split_heads(self.wv(v), self.heads)
        scores = (q @ k.swapaxes(1, 2)) * (1.0 / np.sqrt(hd))
        probs = ad.masked_softmax(scores, blocked[None, :, :])
        ctx = (probs @ val).swapaxes(0, 1).reshape(v.shape[0], self.dim)
        return self.wo(ctx), probs

    def __call__(
        self, v: ad.Tensor, e: ad.Tensor, labels: np.ndarray, include_edge_sum: bool = True
    ) -> ad.Tensor:
        attn, _ = self.attention(v, labels)
        pre = v + attn
        if include_edge_sum:
            pre = pre + e.sum(axis=1)
        vbar = self.ln1(pre)
        return self.ln2(self.ffn(vbar) + vbar)


class EdgeBlock(ad.Module):
    """One edge-propagation step: cross-attention over the two endpoints."""

    def __init__(self, dim: int, heads: int, ffn_expansion: int, rng: np.random.Generator):
        self.dim = dim
        self.heads = heads
        self.wq = ad.Linear(dim, dim, rng)
        self.wk = ad.Linear(dim, dim, rng)
        self.wv = ad.Linear(dim, dim, rng)
        self.wo = ad.Linear(dim, dim, rng)
        self.ln1 = ad.LayerNorm(dim)
        self.ln2 = ad.LayerNorm(dim)
        self.ffn = ad.FeedForward(dim, ffn_expansion, rng)

    def cross_attention(self, e_flat: ad.Tensor, v: ad.Tensor, b: int) -> tuple[ad.Tensor, ad.Tensor]:
        """Attend each edge query over its endpoint tokens {V_i, V_j}."""
        hd = self.dim // self.heads
        n_pairs = b * b
        anchor_idx = np.repeat(np.arange(b), b)
        other_idx = np.tile(np.arange(b), b)
        tokens = ad.stack([v[anchor_idx], v[other_idx]], axis=1)  # (B^2, 2, D)
        q = self.wq(e_flat).reshape(n_pairs, self.heads, 1, hd)
        k = self.wk(tokens).reshape(n_pairs, 2, self.heads, hd).swapaxes(1, 2)
        val = self.wv(tokens).reshape(n_pairs, 2, self.heads, hd).swapaxes(1, 2)
        scores = (q @ k.swapaxes(2, 3)) * (1.0 / np.sqrt(hd))
        probs = ad.masked_softmax(scores, np.zeros(scores.shape, dtype=bool))
        ctx = (probs @ val).reshape(n_pairs, self.dim)
        return self.wo(ctx), probs

    def __call__(self, e: ad.Tensor, v: ad.Tensor) -> ad.Tensor:
        b = v.shape[0]
        e_flat = e.reshape(b * b, self.dim)
        ca, _ = self.cross_attention(e_flat, v, b)
        ebar = self.ln1(e_flat + ca)
        out = self.ln2(self.ffn(ebar) + ebar)
        return out.reshape(b, b, self.dim)


class GraphNet(ad.Module):
    """K iterations of node-then-edge propagation over the batch graph."""

    def __init__(self, dim: int, config: GraphNetConfig, rng: np.random.Generator):
        config.validate(dim)
        self.config = config
        self.dim = dim
        n_blocks = 1 if config.share_weights_across_steps else config.k_steps
        self.node_blocks = [
            NodeBlock(dim, config.heads, config.ffn_expansion, rng) for _ in range(n_blocks)
        ]
        self.edge_blocks = [
            EdgeBlock(dim, config.heads, config.ffn_expansion, rng) for _ in range(n_blocks)
        ]

    def _blocks(self, k: int) -> tuple[NodeBlock, EdgeBlock]:
        i = 0 if self.config.share_weights_across_steps else k
        return self.node_blocks[i], self.edge_blocks[i]

    def node_propagate(self, graph: CorrelationGraph, include_edge_sum: bool = True) -> CorrelationGraph:
        if graph.step >= self.config.k_steps:
            raise GraphError(f"graph already at step {graph.step} of {self.config.k_steps}")
        node_block, _ = self._blocks(graph.step)
        v = node_block(graph.v, graph.e, graph.labels, include_edge_sum=include_edge_sum)
        return CorrelationGraph(v=v, e=graph.e, labels=graph.labels, step=graph.step)

    def edge_propagate(self, graph: CorrelationGraph) -> CorrelationGraph:
        _, edge_block = self._blocks(graph.step)
        e = edge_block(graph.e, graph.v)
        return CorrelationGraph(v=graph.v, e=e, labels=graph.labels, step=graph.step + 1)

    def propagate(
        self,
        graph: CorrelationGraph,
        node_propagation: bool = True,
        include_edge_sum: bool = True,
    ) -> CorrelationGraph:
        """Run all K steps; flags implement the ablation arms (skip node
        propagation entirely, or drop the incident-edge sum)."""
        if graph.step != 0:
            raise GraphError("propagate expects a step-0 graph")
        for _ in range(self.config.k_steps):
            if node_propagation:
                graph = self.node_propagate(graph, include_edge_sum=include_edge_sum)
            graph = self.edge_propagate(graph)
        return graph

    def attention_maps(self, graph: CorrelationGraph, node_propagation: bool = True,
                       include_edge_sum: bool = True) -> list[np.ndarray]:
        """Node-attention weights per step, each (H, B, B); diagnostic only."""
        maps: list[np.ndarray] = []
        for k in range(self.config.k_steps):
            node_block, edge_block = self._blocks(k)
            if node_propagation:
                _, probs = node_block.attention(graph.v, graph.labels)
                maps.append(probs.data.copy())
                v = node_block(graph.v, graph.e, graph.labels, include_edge_sum)
                graph = CorrelationGraph(v=v, e=graph.e, labels=graph.labels, step=k)
            e = edge_block(graph.e, graph.v)
            graph = CorrelationGraph(v=graph.v, e=e, labels=graph.labels, step=k + 1)
        return maps
