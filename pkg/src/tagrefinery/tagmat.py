"""Data model and ingestion for image-tag annotation datasets.

Holds sparse tag-confidence matrices, dense feature matrices, cosine
similarity graphs and their Laplacians, plus the manifest-driven dataset
bundle format (Matrix Market files + id lists).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

SYMMETRY_TOL = 1e-12
LAPLACIAN_ROWSUM_TOL = 1e-9


class DatasetError(ValueError):
    """Raised for malformed dataset files, dimension mismatches or bad values."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TagMatrix:
    """Sparse matrix of annotation confidences in [0, 1].

    Rows are images, columns are tags. Absent entries mean confidence 0.
    Stored compressed-row; explicit zeros are dropped and duplicate
    coordinates are summed before range validation. Immutable once built.
    """

    matrix: sp.csr_array

    def __post_init__(self):
        m = self.matrix
        if not sp.issparse(m):
            raise DatasetError("TagMatrix requires a scipy sparse matrix")
        m = sp.csr_array(m, dtype=np.float64)
        if m.shape[0] < 1 or m.shape[1] < 1:
            raise DatasetError(f"tag matrix must be at least 1x1, got {m.shape}")
        m.sum_duplicates()
        m.eliminate_zeros()
        if m.nnz:
            if not np.all(np.isfinite(m.data)):
                raise DatasetError("tag matrix contains non-finite confidences")
            if m.data.min() < 0.0 or m.data.max() > 1.0:
                raise DatasetError(
                    "tag confidences must lie in [0, 1], got range "
                    f"[{m.data.min():.6g}, {m.data.max():.6g}]"
                )
        for buf in (m.data, m.indices, m.indptr):
            buf.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_images(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_tags(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @classmethod
    def from_dense(cls, arr) -> "TagMatrix":
        return cls(sp.csr_array(np.asarray(arr, dtype=np.float64)))

    @classmethod
    def from_entries(cls, n_images, n_tags, rows, cols, vals) -> "TagMatrix":
        coo = sp.coo_array(
            (np.asarray(vals, dtype=np.float64), (rows, cols)), shape=(n_images, n_tags)
        )
        return cls(sp.csr_array(coo))

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def support(self) -> np.ndarray:
        """Boolean mask of annotated (nonzero) positions."""
        return self.matrix.toarray() != 0


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense row-wise feature matrix (one feature vector per row)."""

    data: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise DatasetError(f"feature matrix must be 2-D, got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise DatasetError(f"feature matrix must be at least 1x1, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise DatasetError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SimilarityGraph:
    """Symmetric nonnegative weight matrix with zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DatasetError(f"similarity graph must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DatasetError("similarity graph contains non-finite weights")
        if np.abs(w - w.T).max(initial=0.0) > SYMMETRY_TOL:
            raise DatasetError("similarity graph is not symmetric")
        if np.abs(np.diagonal(w)).max(initial=0.0) != 0.0:
            raise DatasetError("similarity graph must have a zero diagonal")
        if w.size and w.min() < 0.0:
            raise DatasetError("similarity graph weights must be nonnegative")
        object.__setattr__(self, "weights", _freeze(w))

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class GraphLaplacian:
    """L = diag(W @ 1) - W for a similarity graph W; symmetric PSD, L @ 1 = 0."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DatasetError(f"Laplacian must be square, got shape {m.shape}")
        if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_TOL:
            raise DatasetError("Laplacian is not symmetric")
        if np.abs(m.sum(axis=1)).max(initial=0.0) > LAPLACIAN_ROWSUM_TOL:
            raise DatasetError("Laplacian row sums are not zero")
        object.__setattr__(self, "matrix", _freeze(m))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class DatasetBundle:
    """A tag matrix plus the image/tag feature matrices and id lists it refers to."""

    tags: TagMatrix
    image_features: FeatureMatrix
    tag_features: FeatureMatrix
    image_ids: tuple[str, ...]
    tag_names: tuple[str, ...]
    ground_truth: TagMatrix | None = None

    def __post_init__(self):
        object.__setattr__(self, "image_ids", tuple(self.image_ids))
        object.__setattr__(self, "tag_names", tuple(self.tag_names))
        n_i, n_t = self.tags.n_images, self.tags.n_tags
        if self.image_features.n_rows != n_i:
            raise DatasetError(
                f"tag matrix has {n_i} images but image features have "
                f"{self.image_features.n_rows} rows"
            )
        if self.tag_features.n_rows != n_t:
            raise DatasetError(
                f"tag matrix has {n_t} tags but tag features have "
                f"{self.tag_features.n_rows} rows"
            )
        if len(self.image_ids) != n_i:
            raise DatasetError(f"expected {n_i} image ids, got {len(self.image_ids)}")
        if len(self.tag_names) != n_t:
            raise DatasetError(f"expected {n_t} tag names, got {len(self.tag_names)}")
        if self.ground_truth is not None:
            if (self.ground_truth.n_images, self.ground_truth.n_tags) != (n_i, n_t):
                raise DatasetError(
                    f"ground truth shape {(self.ground_truth.n_images, self.ground_truth.n_tags)} "
                    f"does not match tag matrix {(n_i, n_t)}"
                )


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


def cosine_similarity_graph(features: FeatureMatrix, rectify: str = "clamp") -> SimilarityGraph:
    """Pairwise cosine similarity between feature rows, rectified to [0, 1].

    Parameters
    ----------
    features : FeatureMatrix
        Row-wise feature vectors; rows with zero norm are rejected.
    rectify : {"clamp", "shift"}
        How to map raw cosines (possibly negative) onto nonnegative weights:
        "clamp" zeroes negatives, "shift" maps cos -> (1 + cos) / 2.
    """
    if rectify not in ("clamp", "shift"):
        raise ValueError(f"unknown rectification {rectify!r}")
    x = features.data
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DatasetError(f"zero-norm feature row(s) at indices {zero[:5].tolist()}")
    unit = x / norms[:, None]
    cos = unit @ unit.T
    cos = np.clip((cos + cos.T) / 2.0, -1.0, 1.0)
    if rectify == "clamp":
        w = np.maximum(cos, 0.0)
    else:
        w = (1.0 + cos) / 2.0
    np.fill_diagonal(w, 0.0)
    return SimilarityGraph(w)


def graph_laplacian(graph) -> GraphLaplacian:
    """Unnormalized Laplacian diag(W @ 1) - W of a similarity graph."""
    if isinstance(graph, SimilarityGraph):
        w = graph.weights
    else:
        w = np.asarray(graph, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DatasetError(f"graph must be square, got shape {w.shape}")
        if np.abs(w - w.T).max(initial=0.0) > SYMMETRY_TOL:
            raise DatasetError("asymmetric graph passed to graph_laplacian")
    lap = np.diag(w.sum(axis=1)) - w
    # Force exact zero row sums so L @ 1 = 0 holds to machine precision.
    np.fill_diagonal(lap, np.diagonal(lap) - lap.sum(axis=1))
    return GraphLaplacian(lap)


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


def top_n_tags(tags, n: int) -> list[np.ndarray]:
    """Indices of the n highest-confidence tags per image.

    Accepts a TagMatrix or any 2-D score array (raw, possibly negative,
    scores are fine). Ties break by ascending tag index; n beyond the tag
    count returns all tags in ranked order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = tags.toarray() if isinstance(tags, TagMatrix) else np.asarray(tags, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("expected a 2-D score matrix")
    n_tags = scores.shape[1]
    take = min(n, n_tags)
    idx = np.arange(n_tags)
    out = []
    for row in scores:
        order = np.lexsort((idx, -row))
        out.append(order[:take].copy())
    return out


# ---------------------------------------------------------------------------
# File formats: Matrix Market matrices, id lists, manifests
# ---------------------------------------------------------------------------

_MANIFEST_REQUIRED = ("tags", "image_features", "tag_features", "image_ids", "tag_names")
_MANIFEST_OPTIONAL = ("ground_truth",)


def write_sparse_matrix(path, tags: TagMatrix) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(tags.matrix))


def write_dense_matrix(path, arr: np.ndarray) -> None:
    scipy.io.mmwrite(str(path), np.asarray(arr, dtype=np.float64))


def read_sparse_matrix(path) -> TagMatrix:
    if not os.path.exists(path):
        raise DatasetError(f"missing matrix file: {path}")
    m = scipy.io.mmread(str(path))
    if not sp.issparse(m):
        m = sp.coo_array(np.atleast_2d(m))
    return TagMatrix(sp.csr_array(m))


def read_dense_matrix(path) -> np.ndarray:
    if not os.path.exists(path):
        raise DatasetError(f"missing matrix file: {path}")
    m = scipy.io.mmread(str(path))
    if sp.issparse(m):
        m = m.toarray()
    return np.atleast_2d(np.asarray(m, dtype=np.float64))


def read_id_list(path) -> list[str]:
    if not os.path.exists(path):
        raise DatasetError(f"missing id list: {path}")
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def write_id_list(path, ids) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in ids:
            fh.write(f"{name}\n")


def parse_manifest(path) -> dict[str, str]:
    """Parse a `key: value` manifest; values are paths relative to the manifest."""
    if not os.path.exists(path):
        raise DatasetError(f"missing manifest: {path}")
    base = os.path.dirname(os.path.abspath(path))
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise DatasetError(f"{path}:{lineno}: expected 'key: value', got {line!r}")
            key, value = line.split(":", 1)
            key, value = key.strip(), value.strip()
            if key not in _MANIFEST_REQUIRED + _MANIFEST_OPTIONAL:
                raise DatasetError(f"{path}:{lineno}: unknown manifest key {key!r}")
            if key in entries:
                raise DatasetError(f"{path}:{lineno}: duplicate manifest key {key!r}")
            entries[key] = os.path.join(base, value)
    missing = [k for k in _MANIFEST_REQUIRED if k not in entries]
    if missing:
        raise DatasetError(f"{path}: manifest missing keys {missing}")
    return entries


def load_dataset(manifest_path) -> DatasetBundle:
    """Load a dataset bundle from its manifest file.

    The manifest names the tag matrix (Matrix Market coordinate), the image
    and tag feature matrices (Matrix Market array), the image-id and
    tag-name lists (one per line, UTF-8), and optionally a ground-truth tag
    matrix. All cross-file dimension checks run before returning.
    """
    entries = parse_manifest(manifest_path)
    tags = read_sparse_matrix(entries["tags"])
    image_features = FeatureMatrix(read_dense_matrix(entries["image_features"]))
    tag_features = FeatureMatrix(read_dense_matrix(entries["tag_features"]))
    image_ids = read_id_list(entries["image_ids"])
    tag_names = read_id_list(entries["tag_names"])
    ground_truth = None
    if "ground_truth" in entries:
        ground_truth = read_sparse_matrix(entries["ground_truth"])
    return DatasetBundle(
        tags=tags,
        image_features=image_features,
        tag_features=tag_features,
        image_ids=tuple(image_ids),
        tag_names=tuple(tag_names),
        ground_truth=ground_truth,
    )


def save_dataset(bundle: DatasetBundle, out_dir, name: str = "dataset") -> str:
    """Write a bundle as manifest + component files; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    files = {
        "tags": f"{name}_tags.mtx",
        "image_features": f"{name}_image_features.mtx",
        "tag_features": f"{name}_tag_features.mtx",
        "image_ids": f"{name}_image_ids.txt",
        "tag_names": f"{name}_tag_names.txt",
    }
    write_sparse_matrix(os.path.join(out_dir, files["tags"]), bundle.tags)
    write_dense_matrix(os.path.join(out_dir, files["image_features"]), bundle.image_features.data)
    write_dense_matrix(os.path.join(out_dir, files["tag_features"]), bundle.tag_features.data)
    write_id_list(os.path.join(out_dir, files["image_ids"]), bundle.image_ids)
    write_id_list(os.path.join(out_dir, files["tag_names"]), bundle.tag_names)
    if bundle.ground_truth is not None:
        files["ground_truth"] = f"{name}_ground_truth.mtx"
        write_sparse_matrix(os.path.join(out_dir, files["ground_truth"]), bundle.ground_truth)
    manifest_path = os.path.join(out_dir, f"{name}.manifest")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("# tagrefinery dataset manifest\n")
        for key, fname in files.items():
            fh.write(f"{key}: {fname}\n")
    return manifest_path
