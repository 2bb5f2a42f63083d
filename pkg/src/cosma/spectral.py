"""Network numerics: scaled patch Laplacians, Chebyshev graph convolution with
exact reverse-mode gradients, pooling/unpooling as sparse averaging maps, ELU
and dense layers.

Everything is float64 by default and written against (batch, vertices,
channels) arrays; single patches (vertices, channels) are promoted.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DisconnectedGraph, ShapeMismatch, UnsupportedLevel
from .patches import PaddedPatchTemplate


@dataclass
class SpectralOperator:
    """Symmetric normalized Laplacian of one template level plus its rescale.

    ``scaled`` is (2/lambda_max) L - I, whose spectrum lies in [-1, 1].
    """

    laplacian: sparse.csr_matrix
    lambda_max: float
    scaled: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.scaled.shape[0]


def build_spectral_operator(edges: np.ndarray, n_vertices: int) -> SpectralOperator:
    """Build the scaled Laplacian for an undirected graph given as an edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if n_vertices < 2:
        raise DisconnectedGraph("graph needs at least two vertices")
    if (edges[:, 0] == edges[:, 1]).any():
        raise ValueError("self-loops are not allowed")
    _check_connected(edges, n_vertices)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)),
                            shape=(n_vertices, n_vertices))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    lap = sparse.eye(n_vertices, format="csr") \
        - adj.multiply(dinv[:, None]).multiply(dinv[None, :])
    lap = lap.tocsr()
    lmax = _power_iteration_lambda_max(lap)
    scaled = (2.0 / lmax) * lap.toarray() - np.eye(n_vertices)
    return SpectralOperator(lap, lmax, scaled)


def build_level_operator(template: PaddedPatchTemplate, level: int) -> SpectralOperator:
    if level not in (0, 1):
        raise UnsupportedLevel(f"convolution levels are 0 and 1, got {level}")
    lvl = template.levels[level]
    return build_spectral_operator(lvl.adjacency, lvl.count)


def _check_connected(edges, n):
    nbrs = [[] for _ in range(n)]
    for u, v in edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    seen = np.zeros(n, dtype=bool)
    queue = deque([0])
    seen[0] = True
    while queue:
        u = queue.popleft()
        for w in nbrs[u]:
            if not seen[w]:
                seen[w] = True
                queue.append(w)
    if not seen.all():
        raise DisconnectedGraph(f"{(~seen).sum()} vertices unreachable from 0")


def _power_iteration_lambda_max(lap, rel_residual=1e-11, max_iter=500):
    """Largest eigenvalue: power iteration with a dense-eigensolve fallback.

    Stops on the residual ||L x - lam x|| <= rel_residual * lam, which bounds
    the Rayleigh quotient error well below the 1e-9 the scaled operator's
    spectrum bound requires. The patch lattice graphs have nearly degenerate
    top eigenvalue pairs on which power iteration stalls; since every graph
    here is tiny and built once, those fall back to an exact symmetric
    eigensolve.
    """
    rng = np.random.default_rng(0)
    x = rng.standard_normal(lap.shape[0])
    x /= np.linalg.norm(x)
    for _ in range(max_iter):
        y = lap @ x
        lam = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        if np.linalg.norm(y - lam * x) <= rel_residual * max(lam, 1e-30):
            return lam
        x = y / norm
    return float(np.linalg.eigvalsh(lap.toarray()).max())


# ---------------------------------------------------------------------------
# Chebyshev convolution

@dataclass
class ChebLayer:
    """Coefficients of one Chebyshev filter bank: theta is (K, C_in, C_out)."""

    theta: np.ndarray
    bias: np.ndarray

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def c_in(self) -> int:
        return self.theta.shape[1]

    @property
    def c_out(self) -> int:
        return self.theta.shape[2]

    @property
    def param_count(self) -> int:
        return self.theta.size + self.bias.size


def _promote(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeMismatch(f"expected 2 or 3 dimensional features, got {x.ndim}")


def _apply_operator(scaled, x):
    # (V, V) times (B, V, C) over the vertex axis
    return np.tensordot(scaled, x, axes=([1], [1])).transpose(1, 0, 2)


def _cheb_basis(x, op, K):
    """Stack [T_0(L~)x, ..., T_{K-1}(L~)x] via the three-term recursion."""
    ts = [x]
    if K > 1:
        ts.append(_apply_operator(op.scaled, x))
    for _ in range(2, K):
        ts.append(2.0 * _apply_operator(op.scaled, ts[-1]) - ts[-2])
    return ts


def cheb_conv(x, op: SpectralOperator, layer: ChebLayer):
    """y = sum_k T_k(L~) x theta_k + bias."""
    x, squeeze = _promote(x)
    if x.shape[1] != op.n_vertices:
        raise ShapeMismatch(f"{x.shape[1]} rows vs operator size {op.n_vertices}")
    if x.shape[2] != layer.c_in:
        raise ShapeMismatch(f"{x.shape[2]} channels vs layer C_in {layer.c_in}")
    ts = _cheb_basis(x, op, layer.K)
    y = np.zeros((x.shape[0], x.shape[1], layer.c_out))
    for k, tk in enumerate(ts):
        y += tk @ layer.theta[k]
    y += layer.bias
    return y[0] if squeeze else y


def cheb_conv_grad(x, op: SpectralOperator, layer: ChebLayer, upstream,
                   basis=None):
    """Reverse-mode gradients of cheb_conv contracted with ``upstream``.

    Returns (grad_x, grad_theta, grad_bias). ``basis`` optionally reuses the
    forward pass's Chebyshev stack.
    """
    x, squeeze = _promote(x)
    upstream, _ = _promote(upstream)
    if upstream.shape != (x.shape[0], x.shape[1], layer.c_out):
        raise ShapeMismatch(f"upstream shape {upstream.shape} does not match")
    K = layer.K
    ts = basis if basis is not None else _cheb_basis(x, op, K)
    grad_theta = np.empty_like(layer.theta)
    for k in range(K):
        grad_theta[k] = np.einsum("bvc,bvo->co", ts[k], upstream)
    grad_bias = upstream.sum(axis=(0, 1))
    # adjoint of the recursion; L~ is symmetric so transposes vanish
    adj = [upstream @ layer.theta[k].T for k in range(K)]
    for k in range(K - 1, 1, -1):
        adj[k - 1] += 2.0 * _apply_operator(op.scaled, adj[k])
        adj[k - 2] -= adj[k]
    if K > 1:
        adj[0] += _apply_operator(op.scaled, adj[1])
    grad_x = adj[0]
    return (grad_x[0] if squeeze else grad_x), grad_theta, grad_bias


# ---------------------------------------------------------------------------
# pooling / unpooling

@dataclass
class LinearMap:
    """Row-stochastic sparse map between template levels."""

    rows: int
    cols: int
    weights: sparse.csr_matrix

    def apply(self, x):
        x, squeeze = _promote(x)
        if x.shape[1] != self.cols:
            raise ShapeMismatch(f"{x.shape[1]} rows vs map input size {self.cols}")
        out = self._matmul(x)
        return out[0] if squeeze else out

    def _matmul(self, x):
        b, v, c = x.shape
        flat = x.transpose(1, 0, 2).reshape(v, b * c)
        out = self.weights @ flat
        return out.reshape(self.rows, b, c).transpose(1, 0, 2)

    def transpose_apply(self, upstream):
        upstream, squeeze = _promote(upstream)
        if upstream.shape[1] != self.rows:
            raise ShapeMismatch(
                f"{upstream.shape[1]} rows vs map output size {self.rows}")
        b, v, c = upstream.shape
        flat = upstream.transpose(1, 0, 2).reshape(v, b * c)
        out = self.weights.T @ flat
        out = out.reshape(self.cols, b, c).transpose(1, 0, 2)
        return out[0] if squeeze else out


def build_pool_map(template: PaddedPatchTemplate, level: int) -> LinearMap:
    """Averaging pool from template level ``level`` to ``level + 1``.

    The row for a kept vertex averages its own value and the values of its
    removed neighbors.
    """
    if level not in (0, 1):
        raise UnsupportedLevel(f"pooling stages are 0 and 1, got {level}")
    src = template.levels[level]
    dst = template.levels[level + 1]
    keep = template.pool_keep[level]
    kept_set = set(int(i) for i in keep)
    nbrs = src.neighbor_lists()
    rows, cols, vals = [], [], []
    for j, i in enumerate(keep):
        group = [int(i)] + [w for w in nbrs[int(i)] if w not in kept_set]
        w = 1.0 / len(group)
        for g in group:
            rows.append(j)
            cols.append(g)
            vals.append(w)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(dst.count, src.count))
    return LinearMap(dst.count, src.count, mat)


def build_unpool_map(template: PaddedPatchTemplate, level: int) -> LinearMap:
    """Averaging unpool from template level ``level + 1`` back to ``level``.

    Kept vertices copy their coarse value; new vertices average their (up to
    two) coarse parents; parent-less pad slots clamp to the nearest kept
    vertex by lattice distance.
    """
    if level not in (0, 1):
        raise UnsupportedLevel(f"unpooling stages are 0 and 1, got {level}")
    src = template.levels[level]
    dst = template.levels[level + 1]
    rows, cols, vals = [], [], []
    for i, (parents, clamp) in enumerate(template.unpool_parents[level]):
        targets = parents if parents else [clamp]
        w = 1.0 / len(targets)
        for t in targets:
            rows.append(i)
            cols.append(t)
            vals.append(w)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(src.count, dst.count))
    return LinearMap(src.count, dst.count, mat)


# ---------------------------------------------------------------------------
# pointwise and dense layers

def elu(x):
    x = np.asarray(x)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x, upstream):
    x = np.asarray(x)
    return upstream * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def dense(x, weight, bias):
    x = np.asarray(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"{x.shape[-1]} features vs weight rows {weight.shape[0]}")
    return x @ weight + bias


def dense_grad(x, weight, upstream):
    """Returns (grad_x, grad_weight, grad_bias)."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    grad_x = upstream @ weight.T
    gx = x.reshape(-1, x.shape[-1])
    gu = upstream.reshape(-1, upstream.shape[-1])
    return grad_x, gx.T @ gu, gu.sum(axis=0)
