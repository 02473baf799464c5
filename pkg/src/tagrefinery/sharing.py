"""Cluster-local tag completion by neighbor voting.

Each cluster is scored independently: a candidate tag's score blends
(a) local frequency -- the similarity-weighted fraction of the image's
nearest in-cluster neighbors carrying the tag, (b) co-occurrence with the
image's existing tags, and (c) the tag's overall frequency in the cluster.
Components are min-max normalized per cluster and combined as a convex
combination, so every score lands in [0, 1] and can be stored as an
annotation confidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .subspace import ClusterAssignment
from .tagmat import SimilarityGraph, TagMatrix


class SharingError(ValueError):
    """Raised for invalid sharing configuration or mismatched inputs."""


@dataclass(frozen=True)
class SharingConfig:
    """Voting weights and admission thresholds for tag sharing.

    neighbor_source is read by the pipeline to decide which similarity
    graph to slice per cluster: "affinity" reuses the self-representation
    affinity, "cosine" recomputes cosine similarity over image features.
    """

    n_neighbors: int = 5
    w_local: float = 0.5
    w_cooc: float = 0.3
    w_freq: float = 0.2
    max_added_per_image: int = 10
    min_confidence: float = 0.2
    neighbor_source: str = "affinity"

    def validate(self) -> None:
        problems = []
        if self.n_neighbors < 1:
            problems.append(f"n_neighbors must be >= 1, got {self.n_neighbors}")
        if min(self.w_local, self.w_cooc, self.w_freq) < 0:
            problems.append("component weights must be nonnegative")
        if self.w_local + self.w_cooc + self.w_freq <= 0:
            problems.append("at least one component weight must be positive")
        if self.max_added_per_image < 0:
            problems.append("max_added_per_image must be >= 0")
        if not 0.0 <= self.min_confidence <= 1.1:
            problems.append(f"min_confidence out of range: {self.min_confidence}")
        if self.neighbor_source not in ("affinity", "cosine"):
            problems.append(f"neighbor_source must be 'affinity' or 'cosine', got {self.neighbor_source!r}")
        if problems:
            raise SharingError("; ".join(problems))


def _minmax(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi - lo <= 0.0:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def score_tags_in_cluster(
    tags: TagMatrix, image_sims: SimilarityGraph, config: SharingConfig = SharingConfig()
) -> np.ndarray:
    """Score every (image, tag) pair of one cluster; returns a dense block in [0, 1].

    tags and image_sims must already be restricted to the cluster's images.
    Component (a) uses the image's top n_neighbors by similarity; (b) is
    max over the image's existing tags t' of the add-one-smoothed
    in-cluster conditional P(tag | t'); (c) is the in-cluster tag
    frequency. Each component is min-max normalized over the block before
    the convex combination.
    """
    config.validate()
    m = tags.n_images
    if image_sims.size != m:
        raise SharingError(
            f"similarity block has {image_sims.size} images, tag block has {m}"
        )
    presence = (tags.toarray() != 0).astype(np.float64)
    sims = image_sims.weights

    local = np.zeros((m, tags.n_tags))
    if m > 1:
        n_nb = min(config.n_neighbors, m - 1)
        order = np.arange(m)
        for i in range(m):
            row = sims[i].copy()
            row[i] = -np.inf
            nb = np.lexsort((order, -row))[:n_nb]
            weight = sims[i, nb].sum()
            if weight > 0:
                local[i] = sims[i, nb] @ presence[nb] / weight

    counts = presence.sum(axis=0)
    pair = presence.T @ presence
    # Add-one smoothed P(t | t'), rows indexed by the conditioning tag t'.
    conditional = (pair + 1.0) / (counts[:, None] + 2.0)
    cooc = np.zeros((m, tags.n_tags))
    for i in range(m):
        own = np.flatnonzero(presence[i])
        if own.size:
            cooc[i] = conditional[own].max(axis=0)

    freq = np.tile(counts / m, (m, 1))

    total = config.w_local + config.w_cooc + config.w_freq
    score = (
        config.w_local * _minmax(local)
        + config.w_cooc * _minmax(cooc)
        + config.w_freq * _minmax(freq)
    ) / total
    return score


def share_tags(
    tags: TagMatrix,
    clusters: ClusterAssignment,
    image_sims: SimilarityGraph,
    config: SharingConfig = SharingConfig(),
) -> TagMatrix:
    """Densify a tag matrix by in-cluster voting.

    Existing entries are preserved unchanged (annotations at 1.0 stay at
    1.0); per image at most max_added_per_image previously-absent tags
    with score >= min_confidence are added at their scores.
    """
    config.validate()
    if clusters.labels.shape[0] != tags.n_images:
        raise SharingError(
            f"cluster assignment covers {clusters.labels.shape[0]} images, "
            f"tag matrix has {tags.n_images}"
        )
    if image_sims.size != tags.n_images:
        raise SharingError(
            f"similarity graph covers {image_sims.size} images, "
            f"tag matrix has {tags.n_images}"
        )

    dense = tags.toarray()
    add_rows: list[int] = []
    add_cols: list[int] = []
    add_vals: list[float] = []
    tag_order = np.arange(tags.n_tags)

    cluster_ids = np.unique(clusters.labels) if config.max_added_per_image > 0 else []
    for c in cluster_ids:
        idx = np.flatnonzero(clusters.labels == c)
        block = TagMatrix(sp.csr_array(tags.matrix[idx]))
        sims = SimilarityGraph(image_sims.weights[np.ix_(idx, idx)])
        scores = score_tags_in_cluster(block, sims, config)
        for row_in_block, image in enumerate(idx):
            absent = dense[image] == 0
            eligible = absent & (scores[row_in_block] >= config.min_confidence)
            cand = np.flatnonzero(eligible)
            if cand.size == 0:
                continue
            ranked = cand[np.lexsort((tag_order[cand], -scores[row_in_block, cand]))]
            chosen = ranked[: config.max_added_per_image]
            add_rows.extend([image] * len(chosen))
            add_cols.extend(chosen.tolist())
            add_vals.extend(scores[row_in_block, chosen].tolist())

    base = sp.coo_array(tags.matrix)
    rows = np.concatenate([base.row, np.asarray(add_rows, dtype=np.int64)])
    cols = np.concatenate([base.col, np.asarray(add_cols, dtype=np.int64)])
    vals = np.concatenate([base.data, np.asarray(add_vals, dtype=np.float64)])
    return TagMatrix.from_entries(tags.n_images, tags.n_tags, rows, cols, vals)
