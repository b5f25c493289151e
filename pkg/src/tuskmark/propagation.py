"""Semi-automated label propagation.

Human review labels a per-seizure sample; embeddings of all markings
are reduced to the principal components holding 75% of the variance;
one calibrated RBF classifier per sufficiently-frequent label then
assigns that label to unlabeled markings it is at least 90% sure about.
Everything downstream of the embedding file is deterministic for a
fixed seed.
"""

from __future__ import annotations

import logging
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .svm import (
    RbfSvm,
    SigmoidCalibrator,
    cross_validated_margins,
    fit_sigmoid,
    train_rbf_svm,
)

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingSet:
    """Embedding vectors keyed by marking id, one fixed dimension."""

    marking_ids: list[str]
    matrix: np.ndarray  # (n, d)

    def __post_init__(self) -> None:
        if len(self.marking_ids) != len(self.matrix):
            raise ValueError("id/vector count mismatch")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("non-finite embedding values")

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[1])

    def subset(self, ids: Sequence[str]) -> "EmbeddingSet":
        index = {m: i for i, m in enumerate(self.marking_ids)}
        rows = [index[m] for m in ids]
        return EmbeddingSet(list(ids), self.matrix[rows])


def read_embeddings(path: str | Path) -> EmbeddingSet:
    """Read `#dim=<d>` header then `marking_id,v1,...,vd` lines."""
    ids: list[str] = []
    rows: list[list[float]] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#dim="):
                dim = int(line.split("=", 1)[1])
                continue
            parts = line.split(",")
            if dim is None:
                raise ValueError(f"{path}: missing #dim= header before line {line_no}")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{line_no}: expected {dim} values")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if dim is None:
        raise ValueError(f"{path}: empty embedding file")
    return EmbeddingSet(ids, np.asarray(rows, dtype=float))


def write_embeddings(path: str | Path, embeddings: EmbeddingSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#dim={embeddings.dimension}\n")
        for marking_id, row in zip(embeddings.marking_ids, embeddings.matrix):
            fh.write(marking_id + "," + ",".join(f"{v:.9g}" for v in row) + "\n")


@dataclass
class Projection:
    """Principal-component projection retaining a target variance share."""

    mean: np.ndarray  # (d,)
    basis: np.ndarray  # (k, d), orthonormal rows
    explained_variance_ratio: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return int(self.basis.shape[0])


def fit_projection(embeddings: EmbeddingSet, variance_target: float = 0.75) -> Projection:
    """Principal components of mean-centered data, smallest k whose
    cumulative explained-variance ratio reaches the target."""
    x = embeddings.matrix
    if len(x) < 2:
        raise ValueError("need at least 2 vectors")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (len(x) - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.maximum(eigenvalues[order], 0.0)
    eigenvectors = eigenvectors[:, order]
    total = float(eigenvalues.sum())
    if total <= 0.0:
        raise ValueError("zero total variance")
    ratios = eigenvalues / total
    cumulative = np.cumsum(ratios)
    k = int(np.searchsorted(cumulative, variance_target) + 1)
    k = min(k, len(ratios))
    basis = eigenvectors[:, :k].T.copy()
    # Fix eigenvector signs so repeated fits give identical bases.
    for row in basis:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return Projection(mean=mean, basis=basis, explained_variance_ratio=ratios[:k])


def project(projection: Projection, vectors: np.ndarray) -> np.ndarray:
    """basis @ (v - mean) for one vector or a stack of vectors."""
    v = np.asarray(vectors, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != projection.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: vectors have {v.shape[1]}, projection expects {projection.mean.shape[0]}"
        )
    out = (v - projection.mean) @ projection.basis.T
    return out[0] if single else out


def eligible_labels(
    human_labels: Sequence[tuple[str, str]], min_fraction: float = 0.05
) -> list[str]:
    """Labels applied to at least `min_fraction` of the reviewed markings."""
    if not human_labels:
        raise ValueError("empty review set")
    reviewed = {marking_id for marking_id, _ in human_labels}
    counts: Counter = Counter()
    for marking_id, label in set(human_labels):
        counts[label] += 1
    threshold = min_fraction * len(reviewed)
    return sorted(label for label, n in counts.items() if n >= threshold)


@dataclass
class LabelModel:
    """Calibrated one-vs-rest classifier for a single group label."""

    label: str
    svm: RbfSvm
    calibrator: SigmoidCalibrator
    c: float
    positives: int
    negatives: int

    def probability(self, vectors: np.ndarray) -> np.ndarray:
        return self.calibrator.probability(self.svm.decision_function(vectors))


def _label_seed(seed: int, label: str) -> int:
    return seed + zlib.crc32(label.encode("utf-8"))


def train_label_models(
    projected: np.ndarray,
    marking_ids: Sequence[str],
    human_labels: Sequence[tuple[str, str]],
    min_fraction: float = 0.05,
    c: float = 1.0,
    gamma: float | None = None,
    tol: float = 5e-4,
    seed: int = 0,
) -> tuple[list[LabelModel], list[str]]:
    """One binary model per eligible label over the projected review set.

    Positives are the markings a human gave that label; everything else
    reviewed is negative.  Labels with fewer than 2 examples on either
    side are skipped with a warning rather than failing the batch.
    """
    index = {m: i for i, m in enumerate(marking_ids)}
    by_label: dict[str, set[str]] = {}
    for marking_id, label in human_labels:
        if marking_id not in index:
            raise ValueError(f"label references unknown marking {marking_id}")
        by_label.setdefault(label, set()).add(marking_id)

    models: list[LabelModel] = []
    warnings: list[str] = []
    for label in eligible_labels(human_labels, min_fraction):
        positive_ids = by_label[label]
        y = np.array([1.0 if m in positive_ids else -1.0 for m in marking_ids])
        n_pos = int((y > 0).sum())
        n_neg = len(y) - n_pos
        if n_pos < 2 or n_neg < 2:
            message = f"label {label!r} skipped: {n_pos} positive / {n_neg} negative examples"
            warnings.append(message)
            logger.warning(message)
            continue
        label_seed = _label_seed(seed, label)
        margins, is_positive = cross_validated_margins(
            projected, y, c=c, gamma=gamma, tol=tol, seed=label_seed
        )
        calibrator = fit_sigmoid(margins, is_positive)
        svm = train_rbf_svm(projected, y, c=c, gamma=gamma, tol=tol, seed=label_seed)
        models.append(
            LabelModel(
                label=label,
                svm=svm,
                calibrator=calibrator,
                c=c,
                positives=n_pos,
                negatives=n_neg,
            )
        )
    return models, warnings


@dataclass(frozen=True)
class PropagatedLabel:
    marking_id: str
    label: str
    probability: float


def propagate(
    models: Sequence[LabelModel],
    projected: np.ndarray,
    marking_ids: Sequence[str],
    threshold: float = 0.90,
) -> list[PropagatedLabel]:
    """Assign each vector the highest-probability label at or above the
    threshold; vectors with no such model stay unlabeled.  Probability
    ties break lexicographically by label."""
    if not models or len(marking_ids) == 0:
        return []
    vectors = np.atleast_2d(np.asarray(projected, dtype=float))
    probabilities = np.stack([m.probability(vectors) for m in models], axis=1)
    labels = [m.label for m in models]
    out: list[PropagatedLabel] = []
    for row, marking_id in enumerate(marking_ids):
        best_label: str | None = None
        best_p = -1.0
        for j, label in enumerate(labels):
            p = float(probabilities[row, j])
            if p < threshold:
                continue
            if p > best_p or (p == best_p and best_label is not None and label < best_label):
                best_label, best_p = label, p
        if best_label is not None:
            out.append(PropagatedLabel(marking_id, best_label, best_p))
    return out


def models_to_records(models: Iterable[LabelModel]) -> dict:
    """Versioned, JSON-serializable model state for reuse across sessions."""
    return {
        "schema_version": 1,
        "models": [
            {
                "label": m.label,
                "support_vectors": m.svm.support_vectors.tolist(),
                "dual_coef": m.svm.dual_coef.tolist(),
                "bias": m.svm.bias,
                "gamma": m.svm.gamma,
                "calibrator_a": m.calibrator.a,
                "calibrator_b": m.calibrator.b,
                "c": m.c,
                "positives": m.positives,
                "negatives": m.negatives,
            }
            for m in models
        ],
    }


def models_from_records(data: dict) -> list[LabelModel]:
    if data.get("schema_version") != 1:
        raise ValueError(f"unsupported model schema: {data.get('schema_version')}")
    models = []
    for rec in data["models"]:
        models.append(
            LabelModel(
                label=rec["label"],
                svm=RbfSvm(
                    support_vectors=np.asarray(rec["support_vectors"], dtype=float),
                    dual_coef=np.asarray(rec["dual_coef"], dtype=float),
                    bias=float(rec["bias"]),
                    gamma=float(rec["gamma"]),
                ),
                calibrator=SigmoidCalibrator(a=rec["calibrator_a"], b=rec["calibrator_b"]),
                c=float(rec["c"]),
                positives=int(rec["positives"]),
                negatives=int(rec["negatives"]),
            )
        )
    return models
