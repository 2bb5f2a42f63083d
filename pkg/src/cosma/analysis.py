"""Embedding analytics: PCA projections, trajectory comparison by chamfer
distance, linear-SVM deformation-pattern scores, and latent interpolation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateData, ShapeMismatch, SingleClass, TooShort
from .model import ModelParams, decode, encode, model_ops
from .patches import PatchExtractor, PatchSet, reassemble
from .training import Checkpoint


# ---------------------------------------------------------------------------
# PCA

@dataclass
class Projection2D:
    mean: np.ndarray
    components: np.ndarray          # (out_dims, D), orthonormal rows
    explained_variances: np.ndarray

    def project(self, data):
        return (np.asarray(data, dtype=np.float64) - self.mean) @ self.components.T


def pca_fit_project(data, out_dims: int = 2):
    """Principal components via an eigendecomposition of the covariance.

    Deterministic sign convention: the largest-magnitude coordinate of each
    component is made positive. Returns (Projection2D, projected points).
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) < 3:
        raise ShapeMismatch("PCA needs a 2D array with at least 3 samples")
    if data.shape[1] < out_dims:
        raise ShapeMismatch(f"dimension {data.shape[1]} < out_dims {out_dims}")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (len(data) - 1)
    if not cov.any():
        raise DegenerateData("zero variance in every direction")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:out_dims]
    comps = evecs[:, order].T
    for i in range(out_dims):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    proj = Projection2D(mean, comps, np.maximum(evals[order], 0.0))
    return proj, centered @ comps.T


# ---------------------------------------------------------------------------
# trajectory comparison

def _standardize(track):
    std = track.std(axis=0)
    return (track - track.mean(axis=0)) / np.where(std > 0, std, 1.0)


def _subsample(track, samples_per_segment):
    t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)
    segs = track[:-1, None, :] + t[None, :, None] * (track[1:, None, :]
                                                     - track[:-1, None, :])
    return np.concatenate([segs.reshape(-1, track.shape[1]), track[-1:]])


def trajectory_chamfer_score(shape_2d, patch_2d, samples_per_segment: int = 20,
                             standardize: bool = True) -> float:
    """Symmetric chamfer distance between two densely subsampled polylines.

    Each consecutive-timestep segment is sampled linearly; by default both
    trajectories are standardized per axis first, since embeddings from
    different spaces have incommensurate scales.
    """
    a = np.asarray(shape_2d, dtype=np.float64)
    b = np.asarray(patch_2d, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatch(f"trajectory shapes {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise TooShort("need at least 2 timesteps")
    if standardize:
        a, b = _standardize(a), _standardize(b)
    pa = _subsample(a, samples_per_segment)
    pb = _subsample(b, samples_per_segment)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float((d_ab ** 2).mean() + (d_ba ** 2).mean())


# ---------------------------------------------------------------------------
# linear SVM patch score

def svm_patch_score(features, labels, folds: int = 5, seed: int = 0) -> float:
    """Mean stratified k-fold accuracy of a linear soft-margin SVM.

    Hinge loss with L2 regularization, trained by deterministic full-batch
    subgradient descent. Features are standardized once up front.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) < 2:
        raise SingleClass("need two classes to score")
    if len(classes) > 2:
        raise ValueError("binary labels expected")
    counts = [(y == c).sum() for c in classes]
    if min(counts) < 4:
        raise ValueError("need at least 4 samples per class")
    sign = np.where(y == classes[1], 1.0, -1.0)
    x = _standardize(x.reshape(len(x), -1))

    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    for c in classes:
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(len(idx)) % folds
    accs = []
    for f in range(folds):
        test = fold_of == f
        if not test.any():
            continue
        w, b = _train_linear_svm(x[~test], sign[~test])
        pred = np.sign(x[test] @ w + b)
        pred[pred == 0] = 1.0
        accs.append(float((pred == sign[test]).mean()))
    return float(np.mean(accs))


def _train_linear_svm(x, y, lam: float = 1e-3, steps: int = 2000):
    w = np.zeros(x.shape[1])
    b = 0.0
    for t in range(1, steps + 1):
        viol = y * (x @ w + b) < 1.0
        eta = 1.0 / (lam * t)
        gw = lam * w
        gb = 0.0
        if viol.any():
            gw = gw - (y[viol, None] * x[viol]).sum(axis=0) / len(x)
            gb = -y[viol].sum() / len(x)
        w = w - eta * gw
        b = b - eta * gb
    return w, b


# ---------------------------------------------------------------------------
# embeddings of sequences

@dataclass
class EmbeddingRun:
    """Latents of one sequence plus their 2D projections."""

    latents: np.ndarray          # (T, k, hr)
    shape_embedding: np.ndarray  # (T, k * hr)
    shape_projection: Projection2D
    shape_2d: np.ndarray         # (T, 2)
    patch_2d: np.ndarray         # (T, k, 2)
    metadata: dict = field(default_factory=dict)


def embed_sequence(latents, metadata=None) -> EmbeddingRun:
    """Project the concatenated shape embedding and every patch embedding to
    2D with PCA."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 3:
        raise ShapeMismatch(f"expected (T, k, hr) latents, got {latents.shape}")
    t, k, hr = latents.shape
    shape_emb = latents.reshape(t, k * hr)
    proj, shape_2d = pca_fit_project(shape_emb)
    patch_2d = np.empty((t, k, 2))
    for j in range(k):
        try:
            _, patch_2d[:, j] = pca_fit_project(latents[:, j, :])
        except DegenerateData:
            patch_2d[:, j] = 0.0  # patch does not move at all
    return EmbeddingRun(latents, shape_emb, proj, shape_2d, patch_2d,
                        metadata or {})


def patch_trajectory_scores(run: EmbeddingRun,
                            samples_per_segment: int = 20) -> np.ndarray:
    """Chamfer distance of every patch trajectory to the shape trajectory."""
    k = run.latents.shape[1]
    return np.array([
        trajectory_chamfer_score(run.shape_2d, run.patch_2d[:, j],
                                 samples_per_segment)
        for j in range(k)
    ])


def svm_patch_scores(latents_per_sample, labels, folds: int = 5,
                     seed: int = 0) -> np.ndarray:
    """Per-patch SVM accuracy for classifying two deformation patterns.

    ``latents_per_sample`` is (N, k, hr): one latent set per (sequence,
    timestep) sample, labeled by the sequence's pattern.
    """
    latents = np.asarray(latents_per_sample, dtype=np.float64)
    if latents.ndim != 3:
        raise ShapeMismatch(f"expected (N, k, hr), got {latents.shape}")
    return np.array([
        svm_patch_score(latents[:, j, :], labels, folds=folds, seed=seed)
        for j in range(latents.shape[1])
    ])


# ---------------------------------------------------------------------------
# latent interpolation

@dataclass
class FrameEncoding:
    """What the decoder needs to rebuild a frame: latents and patch offsets."""

    latents: np.ndarray  # (k, hr)
    offsets: np.ndarray  # (k, 3)


def encode_frame(extractor: PatchExtractor, vertices,
                 params: ModelParams) -> FrameEncoding:
    ps = extractor.extract(vertices)
    z = encode(ps.features, params)
    return FrameEncoding(np.asarray(z), ps.offsets.copy())


def latent_interpolate(enc_a: FrameEncoding, enc_b: FrameEncoding,
                       alpha: float, checkpoint: Checkpoint,
                       extractor: PatchExtractor) -> np.ndarray:
    """Decode the per-patch blend (1-alpha) a + alpha b and reassemble.

    Patch offsets are blended with the same alpha. Returns vertex positions
    on the extractor's topology.
    """
    if enc_a.latents.shape != enc_b.latents.shape:
        raise ShapeMismatch(f"latent shapes {enc_a.latents.shape} vs "
                            f"{enc_b.latents.shape}")
    hr = checkpoint.config.hr
    if enc_a.latents.shape[1] != hr:
        raise ShapeMismatch(f"latents have size {enc_a.latents.shape[1]}, "
                            f"checkpoint hr is {hr}")
    z = (1.0 - alpha) * enc_a.latents + alpha * enc_b.latents
    offsets = (1.0 - alpha) * enc_a.offsets + alpha * enc_b.offsets
    feats = decode(z, checkpoint.params)
    template = model_ops(checkpoint.config.rl)["template"]
    ps = PatchSet(np.asarray(feats), offsets, extractor.slot_sources,
                  checkpoint.config.rl)
    return reassemble(ps, template, n_vertices=extractor.n_vertices)
