"""Ranking evaluation (average precision/recall at N) and noise injection."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .tagmat import TagMatrix, top_n_tags


class MetricsError(ValueError):
    """Raised for invalid evaluation inputs."""


@dataclass(frozen=True)
class EvalReport:
    """AP@N / AR@N means plus the per-image values behind them.

    per_image_* and included_images cover only the images that entered the
    means (images with empty ground-truth rows are skipped unless the
    caller opted to count them as zero).
    """

    n: int
    ap: float
    ar: float
    per_image_precision: tuple[float, ...]
    per_image_recall: tuple[float, ...]
    included_images: tuple[int, ...]


@dataclass(frozen=True)
class NoiseSpec:
    """Controlled annotation corruption: delete true entries, add spurious ones."""

    missing_rate: float
    inaccurate_rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.missing_rate <= 1.0:
            raise MetricsError(f"missing_rate must be in [0, 1], got {self.missing_rate}")
        if not 0.0 <= self.inaccurate_rate <= 1.0:
            raise MetricsError(f"inaccurate_rate must be in [0, 1], got {self.inaccurate_rate}")


def _require_binary(truth: TagMatrix, what: str) -> None:
    if truth.nnz and not np.all(truth.matrix.data == 1.0):
        raise MetricsError(f"{what} must be binary (confidences exactly 0 or 1)")


def ap_ar_at_n(predicted, truth: TagMatrix, n: int, include_empty: bool = False) -> EvalReport:
    """Precision@n and recall@n per image against binary ground truth.

    predicted may be a TagMatrix or a raw score matrix; ranking uses the
    shared deterministic top-n rule (score descending, tag index ascending).
    Precision always divides by n; recall divides by the image's
    ground-truth tag count. Images with no ground-truth tags are excluded
    from both means unless include_empty, which counts them as zero.
    """
    if n < 1:
        raise MetricsError(f"n must be >= 1, got {n}")
    scores = predicted.toarray() if isinstance(predicted, TagMatrix) else np.asarray(predicted)
    if scores.shape != (truth.n_images, truth.n_tags):
        raise MetricsError(
            f"prediction shape {scores.shape} does not match truth "
            f"{(truth.n_images, truth.n_tags)}"
        )
    _require_binary(truth, "ground truth")

    tops = top_n_tags(scores, n)
    truth_csr = truth.matrix
    precisions, recalls, included = [], [], []
    for i in range(truth.n_images):
        true_tags = truth_csr.indices[truth_csr.indptr[i]:truth_csr.indptr[i + 1]]
        if true_tags.size == 0:
            if include_empty:
                precisions.append(0.0)
                recalls.append(0.0)
                included.append(i)
            continue
        hits = np.intersect1d(tops[i], true_tags, assume_unique=True).size
        precisions.append(hits / n)
        recalls.append(hits / true_tags.size)
        included.append(i)
    if not included:
        raise MetricsError("all ground-truth rows are empty; nothing to evaluate")
    return EvalReport(
        n=n,
        ap=float(np.mean(precisions)),
        ar=float(np.mean(recalls)),
        per_image_precision=tuple(precisions),
        per_image_recall=tuple(recalls),
        included_images=tuple(included),
    )


def inject_noise(truth: TagMatrix, spec: NoiseSpec) -> TagMatrix:
    """Corrupt a binary tag matrix with missing and spurious annotations.

    Deletes floor(missing_rate * nnz) uniformly chosen true entries and
    flips floor(inaccurate_rate * nnz) uniformly chosen zero positions to
    1. Deletion and addition sets are disjoint by construction, and the
    result is bit-reproducible for a fixed seed.
    """
    _require_binary(truth, "noise injection input")
    rng = np.random.default_rng(spec.seed)
    coo = truth.matrix.tocoo()
    n_entries = coo.nnz
    n_cells = truth.n_images * truth.n_tags

    n_delete = int(np.floor(spec.missing_rate * n_entries))
    keep = np.ones(n_entries, dtype=bool)
    if n_delete:
        keep[rng.choice(n_entries, size=n_delete, replace=False)] = False

    n_add = int(np.floor(spec.inaccurate_rate * n_entries))
    n_zero = n_cells - n_entries
    if n_add > n_zero:
        raise MetricsError(
            f"cannot add {n_add} spurious entries: only {n_zero} zero positions available"
        )
    rows = [coo.row[keep]]
    cols = [coo.col[keep]]
    if n_add:
        zero_flat = np.flatnonzero(~truth.support().ravel())
        picked = rng.choice(zero_flat, size=n_add, replace=False)
        rows.append(picked // truth.n_tags)
        cols.append(picked % truth.n_tags)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return TagMatrix.from_entries(
        truth.n_images, truth.n_tags, rows, cols, np.ones(rows.size)
    )


def format_report(report: EvalReport) -> str:
    lines = [
        f"n: {report.n}",
        f"ap: {report.ap:.17g}",
        f"ar: {report.ar:.17g}",
        f"images_evaluated: {len(report.included_images)}",
    ]
    return "\n".join(lines) + "\n"


def save_report(report: EvalReport, path, per_image_csv=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report(report))
    if per_image_csv is not None:
        with open(per_image_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_index", f"precision_at_{report.n}", f"recall_at_{report.n}"])
            for img, prec, rec in zip(
                report.included_images, report.per_image_precision, report.per_image_recall
            ):
                writer.writerow([img, f"{prec:.17g}", f"{rec:.17g}"])
