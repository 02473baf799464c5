"""Synthetic instance generators and independent diagnostics.

Everything here is deliberately simple, seed-deterministic dense
arithmetic, kept separate from the optimized solvers so it can act as
ground truth in tests: union-of-subspaces point clouds for clustering,
planted low-rank annotation instances for refinement, and the
subspace-preserving-rate / clustering-accuracy oracles.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .metrics import NoiseSpec, inject_noise
from .subspace import ClusterAssignment, SelfRepresentation
from .tagmat import DatasetBundle, FeatureMatrix, TagMatrix

logger = logging.getLogger(__name__)


class TestkitError(ValueError):
    __test__ = False  # keep pytest from collecting this as a test class


@dataclass(frozen=True)
class SubspaceInstance:
    points: FeatureMatrix
    labels: np.ndarray
    bases: tuple[np.ndarray, ...]
    noise_sigma: float


def gen_union_of_subspaces(
    k: int,
    dim_subspace: int,
    dim_ambient: int,
    n_per_subspace: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> SubspaceInstance:
    """Unit-norm points drawn from k random low-dimensional subspaces.

    Each subspace gets a random orthonormal basis; points are Gaussian
    coefficient mixes of the basis plus optional ambient Gaussian noise,
    then normalized to unit length. Bit-reproducible for a fixed seed.
    """
    if k < 1:
        raise TestkitError(f"k must be >= 1, got {k}")
    if not 1 <= dim_subspace < dim_ambient:
        raise TestkitError(
            f"need 1 <= dim_subspace < dim_ambient, got {dim_subspace} / {dim_ambient}"
        )
    if n_per_subspace < 1:
        raise TestkitError("n_per_subspace must be >= 1")
    if noise_sigma < 0:
        raise TestkitError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    blocks, labels, bases = [], [], []
    for c in range(k):
        basis = np.linalg.qr(rng.standard_normal((dim_ambient, dim_subspace)))[0]
        coeff = rng.standard_normal((n_per_subspace, dim_subspace))
        pts = coeff @ basis.T
        if noise_sigma > 0:
            pts = pts + noise_sigma * rng.standard_normal(pts.shape)
        blocks.append(pts)
        labels.extend([c] * n_per_subspace)
        basis.setflags(write=False)
        bases.append(basis)
    points = np.vstack(blocks)
    norms = np.linalg.norm(points, axis=1)
    if np.any(norms == 0.0):
        raise TestkitError("degenerate zero-norm sample; change the seed")
    points /= norms[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    labels.setflags(write=False)
    return SubspaceInstance(
        points=FeatureMatrix(points),
        labels=labels,
        bases=tuple(bases),
        noise_sigma=noise_sigma,
    )


def subspace_preserving_rate(rep, labels) -> float:
    """Average fraction of each point's coefficient mass placed within its own cluster.

    Accepts a SelfRepresentation or a raw coefficient matrix. Rows with no
    coefficient mass are excluded from the average; if every row is zero
    there is nothing to measure and an error is raised.
    """
    z = rep.z if isinstance(rep, SelfRepresentation) else np.asarray(rep, dtype=np.float64)
    labels = np.asarray(labels)
    if z.shape[0] != z.shape[1] or z.shape[0] != labels.shape[0]:
        raise TestkitError(f"shape mismatch: z {z.shape}, labels {labels.shape}")
    mass = np.abs(z).copy()
    np.fill_diagonal(mass, 0.0)
    totals = mass.sum(axis=1)
    valid = totals > 0
    if not np.any(valid):
        raise TestkitError("all representation rows are zero; rate undefined")
    if not np.all(valid):
        logger.warning(
            "subspace_preserving_rate: excluded %d all-zero rows", int((~valid).sum())
        )
    same = labels[:, None] == labels[None, :]
    within = (mass * same).sum(axis=1)
    return float((within[valid] / totals[valid]).mean())


def clustering_accuracy(pred, truth) -> float:
    """Best label-permutation agreement between a predicted and true clustering.

    Exhaustive search for at most 8 labels, Hungarian assignment above.
    """
    pred_labels = pred.labels if isinstance(pred, ClusterAssignment) else np.asarray(pred)
    truth = np.asarray(truth)
    if pred_labels.shape[0] != truth.shape[0]:
        raise TestkitError(
            f"length mismatch: {pred_labels.shape[0]} predictions, {truth.shape[0]} truths"
        )
    n = truth.shape[0]
    k = int(max(pred_labels.max(initial=0), truth.max(initial=0))) + 1
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (pred_labels, truth), 1)
    if k <= 8:
        best = max(
            sum(confusion[a, perm[a]] for a in range(k))
            for perm in itertools.permutations(range(k))
        )
    else:
        rows, cols = scipy.optimize.linear_sum_assignment(-confusion)
        best = confusion[rows, cols].sum()
    return float(best) / n


@dataclass(frozen=True)
class PlantedAnnotation:
    """Low-rank annotation instance with known factors.

    scores is the exact product V P* Q*^T T^T with values in (0, 1); o_star
    is scores itself when density=1 (no thresholding) and otherwise the
    binary indicator of each image's top-ceil(density * n_tags) scores.
    """

    v: FeatureMatrix
    t: FeatureMatrix
    p_star: np.ndarray
    q_star: np.ndarray
    scores: np.ndarray
    o_star: TagMatrix


def gen_planted_annotation(
    n_images: int,
    n_tags: int,
    f_i: int,
    f_t: int,
    r: int,
    density: float = 1.0,
    seed: int = 0,
) -> PlantedAnnotation:
    """Plant factors with a nonnegative low-rank score matrix in (0, 1).

    Features and factors are folded (absolute-value) Gaussians so the
    product is strictly positive, then P* is rescaled to put the peak
    score just under 1. scores is recomputed from the rescaled factors,
    so it is bit-identical to the reconstruction at (p_star, q_star) and
    a valid confidence matrix the refinement model represents exactly.
    """
    if r > min(f_i, f_t):
        raise TestkitError(f"rank {r} exceeds min feature dim {min(f_i, f_t)}")
    if not 0.0 < density <= 1.0:
        raise TestkitError(f"density must be in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    v = np.abs(rng.standard_normal((n_images, f_i)))
    t = np.abs(rng.standard_normal((n_tags, f_t)))
    p_star = np.abs(rng.standard_normal((f_i, r)))
    q_star = np.abs(rng.standard_normal((f_t, r)))
    scores = (v @ p_star) @ (t @ q_star).T
    # Margin keeps the recomputed peak strictly below 1 despite reordering
    # of the floating-point products.
    p_star /= scores.max() * (1.0 + 1e-9)
    scores = (v @ p_star) @ (t @ q_star).T

    if density >= 1.0:
        o_star = TagMatrix.from_dense(scores)
    else:
        count = max(1, int(np.ceil(density * n_tags)))
        idx = np.arange(n_tags)
        dense = np.zeros_like(scores)
        for i in range(n_images):
            order = np.lexsort((idx, -scores[i]))
            dense[i, order[:count]] = 1.0
        o_star = TagMatrix.from_dense(dense)

    scores.setflags(write=False)
    p_star.setflags(write=False)
    q_star.setflags(write=False)
    return PlantedAnnotation(
        v=FeatureMatrix(v),
        t=FeatureMatrix(t),
        p_star=p_star,
        q_star=q_star,
        scores=scores,
        o_star=o_star,
    )


def gen_annotation_bundle(
    n_clusters: int = 5,
    images_per_cluster: int = 40,
    n_tags: int = 50,
    tags_per_cluster: int = 8,
    dim_subspace: int = 4,
    image_dim: int = 30,
    tag_dim: int = 16,
    tag_presence: float = 0.9,
    cluster_spread: float = 0.35,
    image_noise: float = 0.02,
    noise: NoiseSpec | None = None,
    seed: int = 0,
) -> tuple[DatasetBundle, np.ndarray]:
    """Full synthetic dataset: clustered images, cluster-themed tags, optional corruption.

    Each image cluster is a unit center direction plus a low-dimensional
    within-cluster spread (an affine patch, so self-representation with
    the row-sum constraint clusters it and a linear feature-to-tag map can
    separate the clusters). Each cluster owns a contiguous block of
    characteristic tags, and every image carries a random subset of its
    cluster's block (at least one). Tag features place same-block tags
    near a shared topic centroid so the semantic graph is informative.
    When a NoiseSpec is given, bundle.tags is the corrupted matrix and
    bundle.ground_truth keeps the clean one.
    """
    if n_clusters * tags_per_cluster > n_tags:
        raise TestkitError(
            f"{n_clusters} clusters x {tags_per_cluster} tags exceed the vocabulary {n_tags}"
        )
    if not 1 <= dim_subspace < image_dim:
        raise TestkitError(
            f"need 1 <= dim_subspace < image_dim, got {dim_subspace} / {image_dim}"
        )
    rng = np.random.default_rng(seed)
    n_images = n_clusters * images_per_cluster

    centers = rng.standard_normal((n_clusters, image_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    blocks = []
    labels = np.repeat(np.arange(n_clusters), images_per_cluster)
    for c in range(n_clusters):
        basis = np.linalg.qr(rng.standard_normal((image_dim, dim_subspace)))[0]
        coeff = cluster_spread * rng.standard_normal((images_per_cluster, dim_subspace))
        pts = centers[c] + coeff @ basis.T
        if image_noise > 0:
            pts = pts + image_noise * rng.standard_normal(pts.shape)
        blocks.append(pts)
    points = np.vstack(blocks)
    points /= np.linalg.norm(points, axis=1, keepdims=True)

    rng = np.random.default_rng(seed + 1)
    truth = np.zeros((n_images, n_tags))
    for i, c in enumerate(labels):
        block = np.arange(c * tags_per_cluster, (c + 1) * tags_per_cluster)
        on = block[rng.random(block.size) < tag_presence]
        if on.size == 0:
            on = block[[rng.integers(block.size)]]
        truth[i, on] = 1.0
    truth_tags = TagMatrix.from_dense(truth)

    centroids = rng.standard_normal((n_clusters, tag_dim))
    tag_features = rng.standard_normal((n_tags, tag_dim))
    for c in range(n_clusters):
        block = slice(c * tags_per_cluster, (c + 1) * tags_per_cluster)
        tag_features[block] = centroids[c] + 0.15 * rng.standard_normal(
            (tags_per_cluster, tag_dim)
        )

    observed = inject_noise(truth_tags, noise) if noise is not None else truth_tags
    bundle = DatasetBundle(
        tags=observed,
        image_features=FeatureMatrix(points),
        tag_features=FeatureMatrix(tag_features),
        image_ids=tuple(f"img_{i:05d}" for i in range(n_images)),
        tag_names=tuple(f"tag_{j:04d}" for j in range(n_tags)),
        ground_truth=truth_tags,
    )
    labels.setflags(write=False)
    return bundle, labels
