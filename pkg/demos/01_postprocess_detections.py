"""Walk through the three detection post-processing stages.

A detector run over one photograph typically produces near-identical
duplicates, a large box spanning a multi-character marking whose
characters were also detected individually, and per-character fragments
of a single marking. This script shows each stage cleaning up one case.
"""

from tuskmark.geometry import BoundingBox, Detection, postprocess, union_coverage


def det(x0, y0, x1, y1, conf):
    return Detection(bbox=BoundingBox(x0, y0, x1, y1), confidence=conf, image_id="photo")


detections = [
    # Two near-identical boxes around the same characters.
    det(20, 20, 70, 50, 0.95),
    det(20, 20, 70, 50, 0.90),
    # An exterior box spanning two individually-detected characters.
    det(100, 20, 230, 55, 0.60),
    det(100, 20, 150, 50, 0.85),
    det(170, 25, 230, 55, 0.80),
    # Two like-sized adjacent fragments of one marking.
    det(20, 100, 60, 130, 0.70),
    det(70, 100, 110, 130, 0.75),
]

print(f"raw detections: {len(detections)}")

exterior = detections[2].bbox
interiors = [detections[3].bbox, detections[4].bbox]
coverage = union_coverage(exterior, interiors)
print(f"interior boxes cover {coverage:.1%} of the exterior (threshold 60%)")

result = postprocess(detections, image_size=(256, 256))

print(f"\nduplicates removed: {result.duplicates_removed}")
print(f"exteriors removed:  {result.exteriors_removed}")
print(f"fragments merged:   {result.merged_members} boxes -> {result.merged_groups} marking")
print(f"final markings:     {len(result.markings)}")
for d in result.markings:
    print(f"  box {d.bbox.as_tuple()}  confidence {d.confidence:.2f}")

assert result.conserved(), "bookkeeping identity must hold"
print("\nconservation: input - duplicates - exteriors - merge reduction == output  [ok]")
