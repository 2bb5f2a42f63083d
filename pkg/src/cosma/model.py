"""The patch autoencoder: two Chebyshev encoder blocks, dense bottleneck,
mirrored decoder, surface-aware loss, and exact reverse-mode gradients.

Encoder: ChebConv 3->c1, pool, ELU, ChebConv c1->c2, pool, ELU, dense -> hr.
Decoder: dense hr -> c2 * embedding, unpool, ChebConv c2->c2, ELU, unpool,
ChebConv c2->c1, ELU, ChebConv c1->3 with no activation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ShapeMismatch, UnsupportedLevel
from .patches import build_patch_template
from .spectral import (
    ChebLayer,
    build_level_operator,
    build_pool_map,
    build_unpool_map,
    cheb_conv,
    cheb_conv_grad,
    dense,
    dense_grad,
    elu,
    elu_grad,
    _cheb_basis,
    _promote,
)


@dataclass(frozen=True)
class ModelConfig:
    rl: int = 4
    K: int = 6
    hr: int = 10
    channels: tuple = (16, 32)
    seed: int = 0
    precision: str = "f64"

    @property
    def dtype(self):
        if self.precision == "f64":
            return np.float64
        if self.precision == "f32":
            return np.float32
        raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray

    @property
    def param_count(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class ModelParams:
    config: ModelConfig
    enc_conv1: ChebLayer
    enc_conv2: ChebLayer
    enc_fc: DenseLayer
    dec_fc: DenseLayer
    dec_conv1: ChebLayer
    dec_conv2: ChebLayer
    dec_conv3: ChebLayer

    LAYER_ORDER = ("enc_conv1", "enc_conv2", "enc_fc", "dec_fc",
                   "dec_conv1", "dec_conv2", "dec_conv3")

    def layer_param_counts(self) -> dict:
        return {name: getattr(self, name).param_count for name in self.LAYER_ORDER}

    @property
    def param_count(self) -> int:
        return sum(self.layer_param_counts().values())

    def arrays(self):
        """(key, array) pairs in a fixed order; arrays are the live buffers."""
        out = []
        for name in self.LAYER_ORDER:
            layer = getattr(self, name)
            if isinstance(layer, ChebLayer):
                out.append((f"{name}.theta", layer.theta))
                out.append((f"{name}.bias", layer.bias))
            else:
                out.append((f"{name}.weight", layer.weight))
                out.append((f"{name}.bias", layer.bias))
        return out


@lru_cache(maxsize=8)
def model_ops(rl: int):
    """Template, spectral operators and pooling maps shared by every model
    of one refinement level."""
    template = build_patch_template(rl)
    return {
        "template": template,
        "op0": build_level_operator(template, 0),
        "op1": build_level_operator(template, 1),
        "pool0": build_pool_map(template, 0),
        "pool1": build_pool_map(template, 1),
        "unpool0": build_unpool_map(template, 0),
        "unpool1": build_unpool_map(template, 1),
    }


def _uniform(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build_model(config: ModelConfig) -> ModelParams:
    """Deterministically initialized parameters for the configured network."""
    ops = model_ops(config.rl)  # raises UnsupportedLevel for bad rl
    template = ops["template"]
    c1, c2 = config.channels
    K, hr = config.K, config.hr
    v2 = template.embedding_count
    rng = np.random.default_rng(config.seed)
    dt = config.dtype

    def cheb(c_in, c_out):
        theta = _uniform(rng, K * c_in, c_out, (K, c_in, c_out), dt)
        return ChebLayer(theta, np.zeros(c_out, dtype=dt))

    def fc(n_in, n_out):
        w = _uniform(rng, n_in, n_out, (n_in, n_out), dt)
        return DenseLayer(w, np.zeros(n_out, dtype=dt))

    return ModelParams(
        config=config,
        enc_conv1=cheb(3, c1),
        enc_conv2=cheb(c1, c2),
        enc_fc=fc(v2 * c2, hr),
        dec_fc=fc(hr, v2 * c2),
        dec_conv1=cheb(c2, c2),
        dec_conv2=cheb(c2, c1),
        dec_conv3=cheb(c1, 3),
    )


# ---------------------------------------------------------------------------
# forward / backward

def encode(x, params: ModelParams):
    """Patch features (total, 3) or (B, total, 3) -> latent (hr,) or (B, hr)."""
    x, squeeze = _promote(x)
    ops = model_ops(params.config.rl)
    if x.shape[1] != ops["template"].total_count or x.shape[2] != 3:
        raise ShapeMismatch(f"expected (*, {ops['template'].total_count}, 3), "
                            f"got {x.shape}")
    a1 = elu(ops["pool0"].apply(cheb_conv(x, ops["op0"], params.enc_conv1)))
    a2 = elu(ops["pool1"].apply(cheb_conv(a1, ops["op1"], params.enc_conv2)))
    z = dense(a2.reshape(len(a2), -1), params.enc_fc.weight, params.enc_fc.bias)
    return z[0] if squeeze else z


def decode(z, params: ModelParams):
    """Latent (hr,) or (B, hr) -> padded patch features (B, total, 3)."""
    z = np.asarray(z)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None]
    ops = model_ops(params.config.rl)
    v2 = ops["template"].embedding_count
    c2 = params.config.channels[1]
    if z.shape[1] != params.config.hr:
        raise ShapeMismatch(f"latent size {z.shape[1]} != hr {params.config.hr}")
    d0 = dense(z, params.dec_fc.weight, params.dec_fc.bias).reshape(len(z), v2, c2)
    a3 = elu(cheb_conv(ops["unpool1"].apply(d0), ops["op1"], params.dec_conv1))
    a4 = elu(cheb_conv(ops["unpool0"].apply(a3), ops["op0"], params.dec_conv2))
    y = cheb_conv(a4, ops["op0"], params.dec_conv3)
    return y[0] if squeeze else y


def forward_with_cache(x, params: ModelParams):
    """Full forward pass keeping every intermediate needed for backprop."""
    ops = model_ops(params.config.rl)
    cache = {"x": x}
    cache["b1"] = _cheb_basis(x, ops["op0"], params.config.K)
    t1 = _basis_apply(cache["b1"], params.enc_conv1)
    cache["p1"] = ops["pool0"].apply(t1)
    cache["t1"] = t1
    a1 = elu(cache["p1"])
    cache["b2"] = _cheb_basis(a1, ops["op1"], params.config.K)
    t2 = _basis_apply(cache["b2"], params.enc_conv2)
    cache["p2"] = ops["pool1"].apply(t2)
    a2 = elu(cache["p2"])
    cache["a2"] = a2
    flat = a2.reshape(len(a2), -1)
    cache["flat"] = flat
    z = dense(flat, params.enc_fc.weight, params.enc_fc.bias)
    cache["z"] = z

    v2 = ops["template"].embedding_count
    c2 = params.config.channels[1]
    d0 = dense(z, params.dec_fc.weight, params.dec_fc.bias)
    cache["d0"] = d0
    u1 = ops["unpool1"].apply(d0.reshape(len(z), v2, c2))
    cache["u1"] = u1
    cache["b3"] = _cheb_basis(u1, ops["op1"], params.config.K)
    t3 = _basis_apply(cache["b3"], params.dec_conv1)
    cache["t3"] = t3
    a3 = elu(t3)
    u2 = ops["unpool0"].apply(a3)
    cache["u2"] = u2
    cache["b4"] = _cheb_basis(u2, ops["op0"], params.config.K)
    t4 = _basis_apply(cache["b4"], params.dec_conv2)
    cache["t4"] = t4
    a4 = elu(t4)
    cache["b5"] = _cheb_basis(a4, ops["op0"], params.config.K)
    y = _basis_apply(cache["b5"], params.dec_conv3)
    cache["y"] = y
    return y, cache


def _basis_apply(basis, layer: ChebLayer):
    y = basis[0] @ layer.theta[0]
    for k in range(1, layer.K):
        y += basis[k] @ layer.theta[k]
    return y + layer.bias


def backward_from_output(grad_y, params: ModelParams, cache):
    """Gradients of a scalar loss wrt every parameter, given dLoss/doutput."""
    ops = model_ops(params.config.rl)
    grads = {}

    g, grads["dec_conv3.theta"], grads["dec_conv3.bias"] = cheb_conv_grad(
        elu(cache["t4"]), ops["op0"], params.dec_conv3, grad_y, basis=cache["b5"])
    g = elu_grad(cache["t4"], g)
    g, grads["dec_conv2.theta"], grads["dec_conv2.bias"] = cheb_conv_grad(
        cache["u2"], ops["op0"], params.dec_conv2, g, basis=cache["b4"])
    g = ops["unpool0"].transpose_apply(g)
    g = elu_grad(cache["t3"], g)
    g, grads["dec_conv1.theta"], grads["dec_conv1.bias"] = cheb_conv_grad(
        cache["u1"], ops["op1"], params.dec_conv1, g, basis=cache["b3"])
    g = ops["unpool1"].transpose_apply(g)
    g = g.reshape(len(g), -1)
    g, grads["dec_fc.weight"], grads["dec_fc.bias"] = dense_grad(
        cache["z"], params.dec_fc.weight, g)
    g, grads["enc_fc.weight"], grads["enc_fc.bias"] = dense_grad(
        cache["flat"], params.enc_fc.weight, g)
    g = g.reshape(cache["a2"].shape)
    g = elu_grad(cache["p2"], g)
    g = ops["pool1"].transpose_apply(g)
    g, grads["enc_conv2.theta"], grads["enc_conv2.bias"] = cheb_conv_grad(
        elu(cache["p1"]), ops["op1"], params.enc_conv2, g, basis=cache["b2"])
    g = elu_grad(cache["p1"], g)
    g = ops["pool0"].transpose_apply(g)
    g, grads["enc_conv1.theta"], grads["enc_conv1.bias"] = cheb_conv_grad(
        cache["x"], ops["op0"], params.enc_conv1, g, basis=cache["b1"])
    grads["input"] = g
    return grads


# ---------------------------------------------------------------------------
# losses

def surface_aware_loss(x_p, x_p_star, multiplicities):
    """Per-patch loss that down-weights vertices shared between patches.

    (1/m) sum_i (1/|P_i|) ||x_i - x*_i||^2 over the m interior vertices,
    squared error summed over the 3 coordinates per vertex.
    """
    x_p = np.asarray(x_p, dtype=np.float64)
    x_p_star = np.asarray(x_p_star, dtype=np.float64)
    mult = np.asarray(multiplicities, dtype=np.float64)
    if x_p.shape != x_p_star.shape or x_p.shape[:-1] != mult.shape \
            or x_p.shape[-1] != 3:
        raise ShapeMismatch(
            f"shapes {x_p.shape}, {x_p_star.shape}, {mult.shape} do not agree")
    sq = ((x_p - x_p_star) ** 2).sum(axis=-1)
    return float((sq / mult).mean())


def batch_loss_and_grad(y, x, weights, m):
    """Mean surface-aware loss over a batch plus its gradient wrt ``y``.

    ``y`` and ``x`` are (B, total, 3); only the first ``m`` interior slots
    contribute. ``weights`` is (B, m) holding 1/|P_i| (all ones recovers the
    plain patch MSE).
    """
    diff = y[:, :m, :] - x[:, :m, :]
    sq = (diff ** 2).sum(axis=-1)
    loss = float((sq * weights).sum() / (m * len(y)))
    grad = np.zeros_like(y)
    grad[:, :m, :] = 2.0 * weights[:, :, None] * diff / (m * len(y))
    return loss, grad
