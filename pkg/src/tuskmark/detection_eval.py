"""Coverage-based evaluation of detector output against drawn ground truth.

The protocol is asymmetric by design: recall judges each ground-truth
box against the union of all overlapping predictions, while precision
judges each prediction against its best single ground-truth box.  Both
sides use the same coverage threshold, true-positive at >= threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .geometry import BoundingBox, Detection, area, union_coverage


@dataclass
class ItemVerdict:
    image_id: str
    kind: str  # "ground_truth" | "prediction"
    index: int
    verdict: str  # TP | FN for ground truth; FP | matched for predictions
    coverage: float


@dataclass
class EvalResult:
    true_positives: int = 0
    false_negatives: int = 0
    false_positives: int = 0
    per_item: list[ItemVerdict] = field(default_factory=list)

    @property
    def precision(self) -> float | None:
        denom = self.true_positives + self.false_positives
        return self.true_positives / denom if denom else None

    @property
    def recall(self) -> float | None:
        denom = self.true_positives + self.false_negatives
        return self.true_positives / denom if denom else None

    def merge(self, other: "EvalResult") -> None:
        self.true_positives += other.true_positives
        self.false_negatives += other.false_negatives
        self.false_positives += other.false_positives
        self.per_item.extend(other.per_item)


def evaluate(
    ground_truth: Sequence[BoundingBox],
    predictions: Sequence[BoundingBox],
    threshold: float = 0.6,
    image_id: str = "",
) -> EvalResult:
    """Score one image.

    A ground-truth box is a true positive iff the union of all
    predictions covers at least `threshold` of its area.  A prediction
    is a false positive iff less than `threshold` of its own area
    overlaps any single ground-truth box.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1]")
    result = EvalResult()
    for i, gt in enumerate(ground_truth):
        coverage = union_coverage(gt, predictions)
        if coverage >= threshold:
            result.true_positives += 1
            verdict = "TP"
        else:
            result.false_negatives += 1
            verdict = "FN"
        result.per_item.append(ItemVerdict(image_id, "ground_truth", i, verdict, coverage))
    for i, pred in enumerate(predictions):
        own = area(pred)
        best = max(
            (_overlap(pred, gt) / own for gt in ground_truth), default=0.0
        )
        if best < threshold:
            result.false_positives += 1
            verdict = "FP"
        else:
            verdict = "matched"
        result.per_item.append(ItemVerdict(image_id, "prediction", i, verdict, best))
    return result


def _overlap(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    return w * h if w > 0 and h > 0 else 0.0


@dataclass
class CorpusEvalResult:
    totals: EvalResult
    per_image: dict[str, EvalResult]
    threshold: float


def evaluate_corpus(
    ground_truth: Mapping[str, Sequence[Detection]],
    predictions: Mapping[str, Sequence[Detection]],
    threshold: float = 0.6,
) -> CorpusEvalResult:
    """Aggregate verdict counts across images.

    Prediction images missing from the ground-truth set indicate
    misaligned files and raise; ground-truth images with no prediction
    rows simply score all false negatives.
    """
    unmatched = sorted(set(predictions) - set(ground_truth))
    if unmatched:
        raise ValueError(f"prediction image ids missing from ground truth: {unmatched}")
    totals = EvalResult()
    per_image: dict[str, EvalResult] = {}
    for image_id in sorted(ground_truth):
        gt_boxes = [d.bbox for d in ground_truth[image_id]]
        pred_boxes = [d.bbox for d in predictions.get(image_id, [])]
        image_result = evaluate(gt_boxes, pred_boxes, threshold, image_id=image_id)
        per_image[image_id] = image_result
        totals.merge(image_result)
    return CorpusEvalResult(totals=totals, per_image=per_image, threshold=threshold)


def format_report(result: CorpusEvalResult) -> str:
    """Human-readable scorecard; metric lines say 'undefined' over 0/0."""
    t = result.totals

    def fmt(v: float | None) -> str:
        return f"{v:.4f}" if v is not None else "undefined"

    lines = [
        f"coverage threshold: {result.threshold}",
        f"images: {len(result.per_image)}",
        f"true positives:  {t.true_positives}",
        f"false negatives: {t.false_negatives}",
        f"false positives: {t.false_positives}",
        f"precision: {fmt(t.precision)}",
        f"recall:    {fmt(t.recall)}",
    ]
    return "\n".join(lines)
