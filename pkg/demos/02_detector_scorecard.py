"""Score detector output with the coverage-based evaluation protocol.

Recall judges each hand-drawn box against the *union* of overlapping
predictions; precision judges each prediction against its best single
ground-truth box. Both use the same 60% coverage threshold, inclusive.
"""

from tuskmark.detection_eval import evaluate, evaluate_corpus, format_report
from tuskmark.geometry import BoundingBox, Detection

gt = [BoundingBox(0, 0, 100, 100)]

print("one ground-truth box, predictions covering 59% / 60% / 61% of it:")
for height in (59, 60, 61):
    result = evaluate(gt, [BoundingBox(0, 0, 100, height)])
    verdict = result.per_item[0].verdict
    print(f"  coverage {height}% -> {verdict}")

print("\ntwo predictions jointly covering 70%, each individually inside the box:")
result = evaluate(gt, [BoundingBox(0, 0, 100, 40), BoundingBox(0, 30, 100, 70)])
print(f"  TP={result.true_positives} FP={result.false_positives}"
      "  (union counts for recall; neither prediction is a false positive)")

print("\na corpus with a stray prediction in empty space:")
gt_corpus = {
    "photo1": [Detection(bbox=BoundingBox(0, 0, 100, 100), confidence=1.0, image_id="photo1")]
}
pred_corpus = {
    "photo1": [
        Detection(bbox=BoundingBox(0, 0, 100, 100), confidence=0.9, image_id="photo1"),
        Detection(bbox=BoundingBox(300, 300, 340, 340), confidence=0.4, image_id="photo1"),
    ]
}
print()
print(format_report(evaluate_corpus(gt_corpus, pred_corpus)))
