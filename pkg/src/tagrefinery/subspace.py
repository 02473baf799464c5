"""Sparse subspace clustering of images.

Solves the sparse self-representation problem

    min_{Z,E} ||Z||_1 + mu * ||E||_F^2
    s.t.      X = Z X + E,  diag(Z) = 0,  Z 1 = 1,

with rows of X as images, via an augmented-Lagrangian splitting with an
adaptively growing penalty. The affinity |Z| + |Z^T| then feeds spectral
clustering on the symmetric normalized Laplacian with a deterministic,
seeded k-means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .tagmat import FeatureMatrix, SimilarityGraph


class SscError(ValueError):
    """Raised for invalid solver configuration or degenerate inputs."""


@dataclass(frozen=True)
class SscConfig:
    """Knobs for the self-representation solver.

    mu is the quadratic error penalty of the objective; the remaining
    fields drive the augmented-Lagrangian loop (stopping tolerance on the
    constraint residuals and the penalty growth schedule).
    """

    mu: float = 10.0
    max_iters: int = 4000
    tol: float = 1e-5
    penalty_init: float = 1.0
    penalty_growth: float = 1.1
    penalty_max: float = 1e8
    normalize_rows: bool = True

    def validate(self) -> None:
        problems = []
        if not self.mu > 0:
            problems.append(f"mu must be > 0, got {self.mu}")
        if not self.tol > 0:
            problems.append(f"tol must be > 0, got {self.tol}")
        if self.max_iters < 1:
            problems.append(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.penalty_init > 0:
            problems.append(f"penalty_init must be > 0, got {self.penalty_init}")
        if not self.penalty_growth > 1:
            problems.append(f"penalty_growth must be > 1, got {self.penalty_growth}")
        if self.penalty_max < self.penalty_init:
            problems.append("penalty_max must be >= penalty_init")
        if problems:
            raise SscError("; ".join(problems))


@dataclass(frozen=True)
class SscResiduals:
    recon_rel: float
    rowsum_max: float
    gap_max: float


@dataclass(frozen=True)
class SelfRepresentation:
    """Coefficients z (row i reconstructs image i from the others) and residual e.

    e is stored in the same row-per-image orientation as the (normalized)
    feature matrix the solver ran on. residuals holds the final constraint
    violations; converged reports whether they all met the tolerance.
    """

    z: np.ndarray
    e: np.ndarray
    residuals: SscResiduals
    converged: bool
    n_iters: int
    objective: float

    @property
    def n_points(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    k: int
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if self.k < 1:
            raise SscError(f"k must be >= 1, got {self.k}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise SscError("cluster labels out of range")

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def _soft_threshold(a: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(a) * np.maximum(np.abs(a) - tau, 0.0)


def ssc_solve(images: FeatureMatrix, config: SscConfig = SscConfig()) -> SelfRepresentation:
    """Solve the sparse self-representation problem for the given images.

    Splitting: Z carries the reconstruction and row-sum constraints, a copy
    J carries the L1 norm (soft-threshold update, diagonal projected to
    zero every iteration), E absorbs the reconstruction error in closed
    form. Dual ascent on all three couplings; penalty rho grows by
    penalty_growth up to penalty_max. The returned z is the thresholded
    copy, so its diagonal is exactly zero.

    Non-convergence within max_iters is not an error: the best iterate is
    returned with converged=False and the residuals achieved.
    """
    config.validate()
    x = np.asarray(images.data, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise SscError("self-representation needs at least 2 images")
    if config.normalize_rows:
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0.0):
            raise SscError("zero-norm feature row; cannot normalize")
        x = x / norms[:, None]

    x_norm = np.linalg.norm(x)
    ones = np.ones(n)
    # Constant system matrix of the Z update: X X^T + I + 1 1^T.
    m = x @ x.T + np.eye(n) + np.outer(ones, ones)
    cho = scipy.linalg.cho_factor(m, lower=True)

    z = np.zeros((n, n))
    j = np.zeros((n, n))
    e = np.zeros_like(x)
    y1 = np.zeros_like(x)      # dual of X = Z X + E
    y2 = np.zeros((n, n))      # dual of Z = J
    y3 = np.zeros(n)           # dual of Z 1 = 1
    rho = config.penalty_init

    residuals = SscResiduals(np.inf, np.inf, np.inf)
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        rhs = (
            (x - e + y1 / rho) @ x.T
            + j
            - y2 / rho
            + np.outer(ones - y3 / rho, ones)
        )
        z = scipy.linalg.cho_solve(cho, rhs.T).T

        j = _soft_threshold(z + y2 / rho, 1.0 / rho)
        np.fill_diagonal(j, 0.0)

        zx = z @ x
        e = (y1 + rho * (x - zx)) / (2.0 * config.mu + rho)

        r_recon = x - zx - e
        r_gap = z - j
        r_rowsum = z @ ones - 1.0
        y1 += rho * r_recon
        y2 += rho * r_gap
        y3 += rho * r_rowsum
        rho = min(rho * config.penalty_growth, config.penalty_max)

        # Feasibility is reported for the returned iterate J.
        residuals = SscResiduals(
            recon_rel=float(np.linalg.norm(x - j @ x - e) / x_norm),
            rowsum_max=float(np.abs(j @ ones - 1.0).max()),
            gap_max=float(np.abs(r_gap).max()),
        )
        if max(residuals.recon_rel, residuals.rowsum_max, residuals.gap_max) <= config.tol:
            converged = True
            break

    objective = float(np.abs(j).sum() + config.mu * (e ** 2).sum())
    j.setflags(write=False)
    e.setflags(write=False)
    return SelfRepresentation(
        z=j, e=e, residuals=residuals, converged=converged, n_iters=it, objective=objective
    )


def affinity(rep: SelfRepresentation) -> SimilarityGraph:
    """Affinity |Z| + |Z^T| over images; symmetric with zero diagonal."""
    a = np.abs(rep.z)
    return SimilarityGraph(a + a.T)


# ---------------------------------------------------------------------------
# Spectral clustering
# ---------------------------------------------------------------------------


def _spectral_embedding(weights: np.ndarray, k: int) -> np.ndarray:
    """Row-normalized k smallest eigenvectors of the symmetric normalized Laplacian."""
    n = weights.shape[0]
    deg = weights.sum(axis=1)
    dinv = np.zeros(n)
    pos = deg > 0
    dinv[pos] = 1.0 / np.sqrt(deg[pos])
    nlap = np.eye(n) - dinv[:, None] * weights * dinv[None, :]
    nlap = (nlap + nlap.T) / 2.0
    _, vecs = scipy.linalg.eigh(nlap, subset_by_index=(0, k - 1))
    norms = np.linalg.norm(vecs, axis=1)
    keep = norms > 0
    vecs[keep] /= norms[keep, None]
    return vecs


def _farthest_first_centers(points: np.ndarray, k: int, first: int) -> np.ndarray:
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[first]
    mind = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        nxt = int(np.argmax(mind))
        centers[c] = points[nxt]
        d = ((points - centers[c]) ** 2).sum(axis=1)
        mind = np.minimum(mind, d)
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    """Lloyd iterations with empty-cluster repair; returns labels, inertia, notes."""
    k = centers.shape[0]
    notes = []
    labels = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(points.shape[0]), new_labels]

        repairs = 0
        empty = [c for c in range(k) if not np.any(new_labels == c)]
        while empty and repairs < 3:
            # Re-seed each empty centroid at the point farthest from its own centroid.
            for c in empty:
                far = int(np.argmax(point_d2))
                centers[c] = points[far]
                new_labels[far] = c
                point_d2[far] = 0.0
            repairs += 1
            empty = [c for c in range(k) if not np.any(new_labels == c)]
        if empty:
            note = f"clusters {empty} empty after {repairs} repair passes"
            if note not in notes:
                notes.append(note)

        done = np.array_equal(new_labels, labels)
        labels = new_labels
        for c in range(k):
            mask = labels == c
            if np.any(mask):
                centers[c] = points[mask].mean(axis=0)
        if done:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(points.shape[0]), labels].sum())
    return labels, inertia, notes


def _kmeans(points: np.ndarray, k: int, seed: int, n_restarts: int = 10):
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        first = int(rng.integers(points.shape[0]))
        centers = _farthest_first_centers(points, k, first)
        labels, inertia, notes = _lloyd(points, centers)
        if best is None or inertia < best[1]:
            best = (labels, inertia, notes)
    return best


def spectral_cluster(aff: SimilarityGraph, k: int, seed: int = 0) -> ClusterAssignment:
    """Cluster by k-means on the spectral embedding of the affinity graph.

    Deterministic for a fixed seed: k-means uses greedy farthest-point
    seeding from seeded random starts, 10 restarts, best inertia wins.
    """
    n = aff.size
    if k < 1:
        raise SscError(f"k must be >= 1, got {k}")
    if k > n:
        raise SscError(f"k={k} exceeds the number of images {n}")
    if k == 1:
        return ClusterAssignment(labels=np.zeros(n, dtype=np.int64), k=1)
    embedding = _spectral_embedding(aff.weights, k)
    labels, _, notes = _kmeans(embedding, k, seed)
    return ClusterAssignment(labels=labels, k=k, notes=tuple(notes))


def eigengap_k(aff: SimilarityGraph, k_max: int) -> int:
    """Suggest k from the largest gap in the smallest normalized-Laplacian eigenvalues.

    Heuristic helper only; clustering never calls it implicitly.
    """
    n = aff.size
    k_max = min(k_max, n - 1)
    if k_max < 1:
        return 1
    deg = aff.weights.sum(axis=1)
    dinv = np.zeros(n)
    pos = deg > 0
    dinv[pos] = 1.0 / np.sqrt(deg[pos])
    nlap = np.eye(n) - dinv[:, None] * aff.weights * dinv[None, :]
    vals = scipy.linalg.eigh((nlap + nlap.T) / 2.0, eigvals_only=True,
                             subset_by_index=(0, k_max))
    gaps = np.diff(vals)
    return int(np.argmax(gaps)) + 1
