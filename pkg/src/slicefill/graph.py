"""Slice-graph completion: build a graph over slices, impute missing nodes
from two augmented views, align the views contrastively, and fold the fused
embeddings back into the token stream through a residual channel adapter.

The two views are:
  attribute view  - missing node rows replaced by learnable completion rows,
                    original binary kNN adjacency;
  structure view  - node features and adjacency diffused by personalized
                    PageRank, with missing rows zeroed before diffusion so
                    they are filled from their neighbourhoods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DegenerateInputError, ShapeError


@dataclass
class SliceGraph:
    """Node attributes [n, d], binary adjacency [n, n], missing-node flags."""

    x: Tensor
    adj: np.ndarray
    missing: np.ndarray


@dataclass
class ViewPair:
    """The two augmented graphs and (once encoded) their embeddings."""

    x_a: Tensor | None
    adj_a: np.ndarray | None
    x_s: Tensor | None
    adj_s: np.ndarray | None
    z_a: Tensor | None = None
    z_s: Tensor | None = None


@dataclass
class GatParams:
    w1: Tensor  # [d, dh]
    a1_src: Tensor  # [dh, 1]
    a1_dst: Tensor  # [dh, 1]
    w2: Tensor  # [dh, d_out]
    a2_src: Tensor  # [d_out, 1]
    a2_dst: Tensor  # [d_out, 1]


@dataclass
class VsgcParams:
    """One tap's learnable state plus its graph hyperparameters."""

    adapter_in_w: Tensor  # [C, d]
    adapter_in_b: Tensor  # [d]
    completion: Tensor  # [n_max, d], learnable attribute rows per slice position
    gat: GatParams
    fusion_w: Tensor  # [d_out, C], zero-initialized
    fusion_b: Tensor  # [C], zero-initialized
    k_nn: int = 3
    ppr_alpha: float = 0.15
    tau: float = 0.8


def init_gat_params(d_in: int, d_hidden: int, d_out: int,
                    rng: np.random.Generator, dtype=np.float32) -> GatParams:
    def w(shape, fan):
        return Tensor((rng.standard_normal(shape) / np.sqrt(fan)).astype(dtype),
                      requires_grad=True)

    return GatParams(
        w1=w((d_in, d_hidden), d_in),
        a1_src=w((d_hidden, 1), d_hidden),
        a1_dst=w((d_hidden, 1), d_hidden),
        w2=w((d_hidden, d_out), d_hidden),
        a2_src=w((d_out, 1), d_out),
        a2_dst=w((d_out, 1), d_out),
    )


def init_vsgc_params(channels: int, node_dim: int, gat_hidden: int, gat_out: int,
                     n_max: int, rng: np.random.Generator, dtype=np.float32,
                     k_nn: int = 3, ppr_alpha: float = 0.15, tau: float = 0.8) -> VsgcParams:
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if not 0.0 < ppr_alpha <= 1.0:
        raise ConfigError(f"ppr_alpha must lie in (0, 1], got {ppr_alpha}")
    return VsgcParams(
        adapter_in_w=Tensor(
            (rng.standard_normal((channels, node_dim)) / np.sqrt(channels)).astype(dtype),
            requires_grad=True,
        ),
        adapter_in_b=Tensor(np.zeros(node_dim, dtype=dtype), requires_grad=True),
        completion=Tensor(
            (rng.standard_normal((n_max, node_dim)) * 0.02).astype(dtype),
            requires_grad=True,
        ),
        gat=init_gat_params(node_dim, gat_hidden, gat_out, rng, dtype),
        fusion_w=Tensor(np.zeros((gat_out, channels), dtype=dtype), requires_grad=True),
        fusion_b=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        k_nn=k_nn,
        ppr_alpha=ppr_alpha,
        tau=tau,
    )


def tokens_to_nodes(tokens: Tensor, grid: tuple[int, int, int], n_nodes: int,
                    params: VsgcParams) -> Tensor:
    """Mean-pool each slice's tokens, then map C -> d with the channel adapter.

    One node per non-pad slice; pad slices sit at the high indices and are
    dropped. Requires patch depth 1 so each slice owns its token rows.
    """
    d, hp, wp = grid
    if n_nodes < 1:
        raise DegenerateInputError("graph needs at least one non-pad slice")
    if n_nodes > d:
        raise ShapeError(f"n_nodes={n_nodes} exceeds token grid depth {d}")
    per_slice = ad.mean(ad.reshape(tokens, (d, hp * wp, tokens.shape[1])), axis=1)
    pooled = per_slice[:n_nodes] if n_nodes < d else per_slice
    return ad.add(ad.matmul(pooled, params.adapter_in_w), params.adapter_in_b)


def knn_graph(x: np.ndarray, k: int, missing: np.ndarray | None = None) -> np.ndarray:
    """Symmetrized k-nearest-neighbour adjacency under cosine distance.

    Every node (missing ones included) links to its k nearest others; an edge
    exists if either endpoint selected it. Distance ties break toward the
    lower node index. Edges incident to missing nodes are kept; callers that
    distrust them (the structure view) rebuild connectivity by diffusion.
    Returns a binary [n, n] matrix with zero diagonal.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k >= n:
        raise ConfigError(f"k_nn={k} must be smaller than the node count {n}")
    if k < 1:
        raise ConfigError(f"k_nn must be >= 1, got {k}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    xh = x / np.maximum(norms, 1e-12)
    dist = 1.0 - xh @ xh.T
    np.fill_diagonal(dist, np.inf)
    adj = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        # stable sort: equal distances resolve to the lower index
        order = np.argsort(dist[i], kind="stable")[:k]
        adj[i, order] = 1.0
    adj = np.maximum(adj, adj.T)
    np.fill_diagonal(adj, 0.0)
    return adj


def ppr_matrix(adj: np.ndarray, alpha: float) -> np.ndarray:
    """Closed-form personalized PageRank: alpha * (I - (1-alpha) * A_hat)^-1.

    A_hat is the row-stochastic random-walk transition matrix of the graph
    with self-loops, D^-1 (A + I), so the result is row-stochastic and equals
    the identity when alpha = 1.
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"ppr alpha must lie in (0, 1], got {alpha}")
    n = adj.shape[0]
    eye = np.eye(n)
    a_loop = adj + eye
    a_hat = a_loop / a_loop.sum(axis=1, keepdims=True)
    return alpha * np.linalg.inv(eye - (1.0 - alpha) * a_hat)


def attribute_view(x: Tensor, missing: np.ndarray, completion: Tensor) -> Tensor:
    """Replace missing node rows by the matching learnable completion rows.

    Available rows pass through untouched, so completion rows only receive
    gradient through missing positions.
    """
    n = x.shape[0]
    if completion.shape[0] < n or completion.shape[1] != x.shape[1]:
        raise ShapeError(
            f"completion matrix {completion.shape} cannot cover nodes {x.shape}"
        )
    m = missing.astype(x.dtype).reshape(n, 1)
    if not m.any():
        return x
    rows = completion[:n] if completion.shape[0] > n else completion
    return ad.add(ad.mul(x, 1.0 - m), ad.mul(rows, m))


def structure_view(x: Tensor, adj: np.ndarray, missing: np.ndarray,
                   alpha: float) -> tuple[Tensor, np.ndarray]:
    """Diffuse features and adjacency by personalized PageRank.

    Missing rows are zeroed before diffusion, so their features are rebuilt
    from the neighbourhood; the diffused (dense, row-stochastic) matrix
    replaces the possibly unreliable kNN adjacency.
    """
    pi = ppr_matrix(adj, alpha)
    keep = (~missing).astype(x.dtype).reshape(-1, 1)
    x0 = ad.mul(x, keep)
    x_s = ad.matmul(ad.Tensor(pi.astype(x.data.dtype)), x0)
    return x_s, pi


def _with_self_loops(adj: np.ndarray) -> np.ndarray:
    if np.all(np.diag(adj) > 0):
        return adj
    return adj + np.eye(adj.shape[0], dtype=adj.dtype)


def _gat_layer(x: Tensor, weights: np.ndarray, w: Tensor, a_src: Tensor,
               a_dst: Tensor) -> tuple[Tensor, Tensor]:
    h = ad.matmul(x, w)
    s_src = ad.matmul(h, a_src)  # [n, 1]
    s_dst = ad.matmul(h, a_dst)  # [n, 1]
    logits = ad.leaky_relu(ad.add(s_src, ad.transpose(s_dst)), 0.2)
    # weighted masked softmax over each neighbourhood; the row max is a
    # constant shift (softmax is shift-invariant), subtracted for stability
    shift = logits.data.max(axis=1, keepdims=True)
    e = ad.exp(ad.sub(logits, ad.Tensor(shift)))
    we = ad.mul(e, ad.Tensor(weights.astype(x.data.dtype)))
    attn = ad.div(we, ad.sum_(we, axis=1, keepdims=True))
    return ad.matmul(attn, h), attn


def gat_forward(x: Tensor, adj: np.ndarray, params: GatParams,
                return_attention: bool = False):
    """Two-layer graph attention encoder.

    `adj` may be binary (self-loops are added) or real-valued and positive on
    the diagonal (the PPR view), in which case entries weight the attention
    softmax. ELU joins the layers; attention rows sum to 1.
    """
    if np.any(adj < 0):
        raise ContractError("gat_forward requires a nonnegative adjacency")
    weights = _with_self_loops(np.asarray(adj, dtype=np.float64))
    h1, attn1 = _gat_layer(x, weights, params.w1, params.a1_src, params.a1_dst)
    h2, attn2 = _gat_layer(ad.elu(h1), weights, params.w2, params.a2_src, params.a2_dst)
    if return_attention:
        return h2, (attn1, attn2)
    return h2


def contrastive_loss(z_a: Tensor, z_s: Tensor, tau: float) -> Tensor:
    """Two-direction InfoNCE-style alignment of per-node view embeddings.

    phi(a, b) = exp(cos(a, b) / tau); the denominator for node i sums
    phi over j != i only, so the loss can go negative.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    n = z_a.shape[0]
    if n < 2:
        raise ContractError(f"contrastive_loss needs n >= 2 nodes, got {n}")
    if z_a.shape != z_s.shape:
        raise ShapeError(f"view embeddings disagree: {z_a.shape} vs {z_s.shape}")
    for z in (z_a, z_s):
        if float(np.min(np.linalg.norm(z.data, axis=1))) < 1e-20:
            raise DegenerateInputError("contrastive_loss requires nonzero rows")

    def normalize_rows(z):
        sq = ad.sum_(ad.mul(z, z), axis=1, keepdims=True)
        return ad.div(z, ad.sqrt(ad.add(sq, 1e-12)))

    za = normalize_rows(z_a)
    zs = normalize_rows(z_s)
    sim = ad.mul(ad.matmul(za, ad.transpose(zs)), 1.0 / tau)  # [n, n]
    e = ad.exp(sim)
    off = ad.Tensor((1.0 - np.eye(n)).astype(z_a.data.dtype))
    den_a = ad.sum_(ad.mul(e, off), axis=1)  # sum_j!=i phi(z_i^a, z_j^s)
    den_s = ad.sum_(ad.mul(e, off), axis=0)  # sum_j!=i phi(z_i^s, z_j^a)
    pos = ad.sum_(ad.mul(sim, ad.Tensor(np.eye(n).astype(z_a.data.dtype))), axis=1)
    total = ad.sum_(ad.sub(ad.mul(pos, 2.0), ad.add(ad.log(den_a), ad.log(den_s))))
    return ad.mul(total, -1.0 / (2.0 * n))


def vsgc_apply(tokens: Tensor, grid: tuple[int, int, int], missing: np.ndarray,
               params: VsgcParams, *, use_attribute: bool = True,
               use_structure: bool = True, compute_cl: bool = True):
    """Run one graph-completion tap and fold the result back into the tokens.

    Returns (tokens', contrastive loss or None, ViewPair). The fusion adapter
    output is zero-initialized, so an untrained tap leaves tokens unchanged
    while still exposing the contrastive loss.
    """
    if not (use_attribute or use_structure):
        raise ConfigError("vsgc_apply needs at least one view enabled")
    d, hp, wp = grid
    n = int(missing.size)
    x = tokens_to_nodes(tokens, grid, n, params)
    if n < 2:
        raise ContractError(f"slice graph needs n >= 2 nodes, got {n}")
    adj = knn_graph(x.data, min(params.k_nn, n - 1), missing)

    x_a = attribute_view(x, missing, params.completion) if use_attribute else None
    x_s, adj_s = structure_view(x, adj, missing, params.ppr_alpha) if use_structure else (None, None)

    z_a = gat_forward(x_a, adj, params.gat) if use_attribute else None
    z_s = gat_forward(x_s, adj_s, params.gat) if use_structure else None
    views = ViewPair(x_a=x_a, adj_a=adj if use_attribute else None,
                     x_s=x_s, adj_s=adj_s, z_a=z_a, z_s=z_s)

    if z_a is not None and z_s is not None:
        fused = ad.add(z_a, z_s)
        cl = contrastive_loss(z_a, z_s, params.tau) if compute_cl else None
    else:
        fused = z_a if z_a is not None else z_s
        cl = None  # a single view has nothing to contrast against

    corr = ad.add(ad.matmul(fused, params.fusion_w), params.fusion_b)  # [n, C]
    if n < d:
        pad = ad.Tensor(np.zeros((d - n, corr.shape[1]), dtype=corr.data.dtype))
        corr = ad.concat([corr, pad], axis=0)
    t3 = ad.reshape(tokens, (d, hp * wp, tokens.shape[1]))
    shifted = ad.add(t3, ad.reshape(corr, (d, 1, corr.shape[1])))
    out = ad.reshape(shifted, tokens.shape)
    return out, cl, views
