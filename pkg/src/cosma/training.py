"""Adam training loop over patch datasets, checkpoints, and sequence
reconstruction."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyDataset,
    LevelMismatch,
    NonFiniteLoss,
    ParseError,
    ShapeMismatch,
    VersionMismatch,
)
from .model import (
    DenseLayer,
    ModelConfig,
    ModelParams,
    backward_from_output,
    batch_loss_and_grad,
    build_model,
    decode,
    encode,
    forward_with_cache,
    model_ops,
)
from .patches import PatchExtractor, reassemble
from .spectral import ChebLayer
from .subdivision import SemiRegularMesh

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 150
    batch_size: int = 100
    augment_rotations: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    loss: str = "surface_aware"  # or "patch_mse"


@dataclass
class PatchDataset:
    """Flat pool of training patches: zero-mean padded features plus the
    interior multiplicity weights used by the surface-aware loss."""

    features: np.ndarray  # (N, total, 3)
    weights: np.ndarray   # (N, m) holding 1/|P_i|
    rl: int

    def __len__(self):
        return len(self.features)

    @classmethod
    def from_frames(cls, extractor: PatchExtractor, frame_vertices) -> "PatchDataset":
        """Stack the patches of every frame of one sequence."""
        feats, weights = [], []
        for verts in frame_vertices:
            ps = extractor.extract(verts)
            feats.append(ps.features)
            weights.append(extractor.patch_weights)
        return cls(np.concatenate(feats), np.concatenate(weights),
                   extractor.template.rl)

    @staticmethod
    def concatenate(datasets):
        datasets = list(datasets)
        if not datasets:
            raise EmptyDataset("no datasets to concatenate")
        rl = datasets[0].rl
        if any(d.rl != rl for d in datasets):
            raise LevelMismatch("datasets have mixed refinement levels")
        return PatchDataset(np.concatenate([d.features for d in datasets]),
                            np.concatenate([d.weights for d in datasets]), rl)


class Adam:
    """Adaptive-moment optimizer updating parameter arrays in place."""

    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.arrays = list(arrays)
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]

    def step(self, grads):
        self.t += 1
        for i, (a, g) in enumerate(zip(self.arrays, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            a -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Checkpoint:
    format_version: int
    config: ModelConfig
    params: ModelParams
    history: dict = field(default_factory=dict)


def train(train_set: PatchDataset, val_set: PatchDataset | None,
          model_config: ModelConfig, train_config: TrainConfig,
          callback=None):
    """Train the autoencoder on a pool of patches.

    Patches from all shapes are pooled and shuffled together; the network is
    shared across meshes. With augmentation on, every patch appears under the
    0, 120 and 240 degree slot rotations each epoch. Deterministic for a
    fixed ``model_config.seed``.

    Returns ``(checkpoint, history)`` with per-epoch mean train loss and, if
    a validation set was given, validation loss.
    """
    if train_set is None or len(train_set) == 0:
        raise EmptyDataset("training set is empty")
    if train_set.rl != model_config.rl:
        raise LevelMismatch(
            f"dataset rl={train_set.rl} vs model rl={model_config.rl}")
    params = build_model(model_config)
    ops = model_ops(model_config.rl)
    template = ops["template"]
    m = template.interior_count
    rotations = template.rotations if train_config.augment_rotations \
        else template.rotations[:1]

    arrays = [a for _, a in params.arrays()]
    keys = [k for k, _ in params.arrays()]
    opt = Adam(arrays, train_config.learning_rate, train_config.beta1,
               train_config.beta2, train_config.epsilon)
    rng = np.random.default_rng([model_config.seed, 0x5D5])

    n = len(train_set)
    n_eff = n * len(rotations)
    history = {"train_loss": [], "val_loss": []}
    step = 0
    for epoch in range(train_config.epochs):
        order = rng.permutation(n_eff)
        total, seen = 0.0, 0
        for start in range(0, n_eff, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            feats, weights = _gather_batch(train_set, idx, rotations, m,
                                           train_config.loss)
            y, cache = forward_with_cache(feats, params)
            loss, gy = batch_loss_and_grad(y, feats, weights, m)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, step {step}")
            grads = backward_from_output(gy, params, cache)
            opt.step([grads[k] for k in keys])
            total += loss * len(idx)
            seen += len(idx)
            step += 1
        history["train_loss"].append(total / seen)
        history["val_loss"].append(
            evaluate_loss(val_set, params, train_config)
            if val_set is not None and len(val_set) else float("nan"))
        if callback is not None:
            callback(epoch, history)
    ckpt = Checkpoint(CHECKPOINT_VERSION, model_config, params, history)
    return ckpt, history


def _gather_batch(dataset, idx, rotations, m, loss_kind):
    sample = idx // len(rotations)
    rot = idx % len(rotations)
    feats = np.empty((len(idx), dataset.features.shape[1], 3))
    weights = np.empty((len(idx), m))
    for j, (s, r) in enumerate(zip(sample, rot)):
        perm = rotations[r]
        feats[j] = dataset.features[s][perm]
        w = dataset.weights[s] if loss_kind == "surface_aware" \
            else np.ones(m)
        weights[j] = w[perm[:m]]
    return feats, weights


def evaluate_loss(dataset: PatchDataset, params: ModelParams,
                  train_config: TrainConfig, batch_size: int = 256) -> float:
    """Mean loss over a dataset without augmentation."""
    m = model_ops(params.config.rl)["template"].interior_count
    total, seen = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        feats = dataset.features[start:start + batch_size]
        w = dataset.weights[start:start + batch_size] \
            if train_config.loss == "surface_aware" \
            else np.ones((len(feats), m))
        y, _ = forward_with_cache(feats, params)
        loss, _ = batch_loss_and_grad(y, feats, w, m)
        total += loss * len(feats)
        seen += len(feats)
    return total / seen if seen else float("nan")


# ---------------------------------------------------------------------------
# sequence reconstruction

def reconstruct_frame(extractor: PatchExtractor, vertices, params: ModelParams):
    """Extract, encode, decode and reassemble one frame.

    Returns (reconstructed positions, per-patch latents).
    """
    ps = extractor.extract(vertices)
    z = encode(ps.features, params)
    y = decode(z, params)
    recon = reassemble(ps, extractor.template, features=y,
                       n_vertices=extractor.n_vertices)
    return recon, z


def reconstruct_sequence(frames, checkpoint: Checkpoint):
    """Reconstruct every frame of a semi-regular sequence.

    ``frames`` is a list of SemiRegularMesh sharing one topology (any base
    mesh; patch-wise processing makes the network connectivity-independent).
    Returns the reconstructed meshes and the (T, k, hr) latent array.
    """
    frames = list(frames)
    if not frames:
        raise EmptyDataset("no frames to reconstruct")
    if any(f.rl != checkpoint.config.rl for f in frames):
        raise LevelMismatch(
            f"sequence rl does not match checkpoint rl={checkpoint.config.rl}")
    template = model_ops(checkpoint.config.rl)["template"]
    extractor = PatchExtractor(frames[0], template)
    recons, latents = [], []
    for f in frames:
        if f.mesh.n_vertices != extractor.n_vertices:
            raise ShapeMismatch("frames do not share one topology")
        verts, z = reconstruct_frame(extractor, f.mesh.vertices,
                                     checkpoint.params)
        recons.append(f.mesh.with_vertices(verts))
        latents.append(z)
    return recons, np.stack(latents)


# ---------------------------------------------------------------------------
# checkpoint I/O

def save_checkpoint(ckpt: Checkpoint, path):
    doc = {
        "format_version": ckpt.format_version,
        "model": {
            "rl": ckpt.config.rl,
            "K": ckpt.config.K,
            "hr": ckpt.config.hr,
            "channels": list(ckpt.config.channels),
            "seed": ckpt.config.seed,
            "precision": ckpt.config.precision,
        },
        "params": {key: arr.tolist() for key, arr in ckpt.params.arrays()},
        "history": ckpt.history,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"bad checkpoint file: {exc}") from exc
    try:
        version = doc["format_version"]
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(
                f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        mc = doc["model"]
        config = ModelConfig(rl=mc["rl"], K=mc["K"], hr=mc["hr"],
                             channels=tuple(mc["channels"]), seed=mc["seed"],
                             precision=mc["precision"])
        params = build_model(config)
        for key, arr in params.arrays():
            stored = np.array(doc["params"][key], dtype=arr.dtype)
            if stored.shape != arr.shape:
                raise ParseError(f"parameter {key} has shape {stored.shape}, "
                                 f"expected {arr.shape}")
            arr[...] = stored
        history = doc.get("history", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad checkpoint structure: {exc}") from exc
    return Checkpoint(version, config, params, history)


def history_to_csv(history: dict, path):
    """Write per-epoch losses as ``epoch,train_loss,val_loss`` rows."""
    train = history.get("train_loss", [])
    val = history.get("val_loss", [])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, t in enumerate(train):
            v = val[i] if i < len(val) else float("nan")
            fh.write(f"{i},{t!r},{v!r}\n")
