"""Bounding-box arithmetic and detection post-processing.

Post-processing turns raw detector output into one box per marking in
three passes, run per image:

1. near-identical duplicates are dropped,
2. large "exterior" boxes whose area is mostly covered by smaller
   detections are dropped,
3. like-sized, proximate (and, for 3+, roughly collinear) fragments are
   merged into a single enclosing box.

All functions here are pure; images can be processed independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, exclusive of zero area."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def clip(self, width: float, height: float) -> "BoundingBox":
        """Clip to image bounds [0, width] x [0, height]."""
        return BoundingBox(
            max(0.0, self.x_min),
            max(0.0, self.y_min),
            min(float(width), self.x_max),
            min(float(height), self.y_max),
        )


@dataclass(frozen=True)
class Detection:
    """One detector output box for one image."""

    bbox: BoundingBox
    confidence: float
    image_id: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def key(self) -> str:
        """Stable identity used for deterministic ordering and tie-breaks."""
        b = self.bbox
        return f"{self.image_id}:{b.x_min:.6f},{b.y_min:.6f},{b.x_max:.6f},{b.y_max:.6f}:{self.confidence:.6f}"


def area(b: BoundingBox) -> float:
    """Box area in px^2."""
    return b.width * b.height


def _intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    inter = _intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = area(a) + area(b) - inter
    return inter / union


def union_coverage(target: BoundingBox, covers: Sequence[BoundingBox]) -> float:
    """Fraction of `target`'s area covered by the union of `covers`.

    Computed exactly with a coordinate-compression sweep: the covering
    boxes are clipped to the target, the clipped corner coordinates cut
    the target into a grid, and a grid cell is covered iff any clipped
    box contains it.  Exactness matters because evaluation thresholds
    sit right at the covered/uncovered boundary.
    """
    clipped: list[tuple[float, float, float, float]] = []
    for c in covers:
        x0 = max(c.x_min, target.x_min)
        y0 = max(c.y_min, target.y_min)
        x1 = min(c.x_max, target.x_max)
        y1 = min(c.y_max, target.y_max)
        if x0 < x1 and y0 < y1:
            clipped.append((x0, y0, x1, y1))
    if not clipped:
        return 0.0

    xs = sorted({target.x_min, target.x_max} | {b[0] for b in clipped} | {b[2] for b in clipped})
    ys = sorted({target.y_min, target.y_max} | {b[1] for b in clipped} | {b[3] for b in clipped})

    covered = 0.0
    for i in range(len(xs) - 1):
        x0, x1 = xs[i], xs[i + 1]
        for j in range(len(ys) - 1):
            y0, y1 = ys[j], ys[j + 1]
            for bx0, by0, bx1, by1 in clipped:
                if bx0 <= x0 and x1 <= bx1 and by0 <= y0 and y1 <= by1:
                    covered += (x1 - x0) * (y1 - y0)
                    break
    return min(1.0, covered / area(target))


def dedup(
    dets: Sequence[Detection], iou_threshold: float = 0.9
) -> tuple[list[Detection], int]:
    """Drop near-identical duplicate detections.

    Pairs with IoU >= `iou_threshold` form duplicate clusters
    (transitively); only the best box of each cluster survives, ranked
    by confidence, then area, then the stable detection key.  Output
    order is canonical (sorted by key), so the kept set is independent
    of input order.
    """
    dets = sorted(dets, key=lambda d: d.key)
    n = len(dets)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if iou(dets[i].bbox, dets[j].bbox) >= iou_threshold:
                parent[find(i)] = find(j)

    clusters: dict[int, list[Detection]] = {}
    for i, d in enumerate(dets):
        clusters.setdefault(find(i), []).append(d)

    kept = []
    for members in clusters.values():
        best = min(members, key=lambda d: (-d.confidence, -area(d.bbox), d.key))
        kept.append(best)
    kept.sort(key=lambda d: d.key)
    return kept, n - len(kept)


def suppress_exteriors(
    dets: Sequence[Detection], coverage_threshold: float = 0.6
) -> tuple[list[Detection], int]:
    """Drop exterior boxes mostly covered by strictly smaller neighbors.

    For every detection, the union coverage of its box by all other,
    strictly smaller, overlapping detections is computed against the
    original set; boxes at or above `coverage_threshold` are removed
    simultaneously.  Interior boxes are never removed by this stage.
    """
    removed: set[str] = set()
    for d in dets:
        d_area = area(d.bbox)
        interiors = [
            o.bbox
            for o in dets
            if o.key != d.key
            and area(o.bbox) < d_area
            and _intersection_area(o.bbox, d.bbox) > 0.0
        ]
        if interiors and union_coverage(d.bbox, interiors) >= coverage_threshold:
            removed.add(d.key)
    kept = [d for d in dets if d.key not in removed]
    return kept, len(removed)


@dataclass(frozen=True)
class MergeThresholds:
    """Fragment-merge criteria; all three are deliberately overridable."""

    size_ratio_min: float = 0.5
    size_ratio_max: float = 2.0
    gap_height_factor: float = 0.5
    collinearity_height_factor: float = 0.25


def _pair_mergeable(a: Detection, b: Detection, t: MergeThresholds) -> bool:
    ha, hb = a.bbox.height, b.bbox.height
    if not (t.size_ratio_min <= ha / hb <= t.size_ratio_max):
        return False
    if not (t.size_ratio_min <= area(a.bbox) / area(b.bbox) <= t.size_ratio_max):
        return False
    gap_x = max(0.0, max(a.bbox.x_min, b.bbox.x_min) - min(a.bbox.x_max, b.bbox.x_max))
    gap_y = max(0.0, max(a.bbox.y_min, b.bbox.y_min) - min(a.bbox.y_max, b.bbox.y_max))
    return max(gap_x, gap_y) <= t.gap_height_factor * min(ha, hb)


def _collinear(members: Sequence[Detection], t: MergeThresholds) -> bool:
    """Centers must sit near one total-least-squares line.

    The line is the principal axis of the centers; every center's
    perpendicular residual must stay under the height-relative bound.
    """
    centers = [d.bbox.center() for d in members]
    mx = sum(c[0] for c in centers) / len(centers)
    my = sum(c[1] for c in centers) / len(centers)
    sxx = sum((c[0] - mx) ** 2 for c in centers)
    syy = sum((c[1] - my) ** 2 for c in centers)
    sxy = sum((c[0] - mx) * (c[1] - my) for c in centers)
    # Principal axis angle of the 2x2 scatter matrix.
    theta = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    ux, uy = math.cos(theta), math.sin(theta)
    mean_height = sum(d.bbox.height for d in members) / len(members)
    limit = t.collinearity_height_factor * mean_height
    for cx, cy in centers:
        residual = abs(-(uy) * (cx - mx) + ux * (cy - my))
        if residual > limit:
            return False
    return True


@dataclass
class MergeStats:
    members_merged: int = 0
    groups_formed: int = 0

    @property
    def net_reduction(self) -> int:
        return self.members_merged - self.groups_formed


def merge_fragments(
    dets: Sequence[Detection], thresholds: MergeThresholds | None = None
) -> tuple[list[Detection], MergeStats]:
    """Merge character fragments of one marking into an enclosing box.

    Pairwise size/proximity compatibility defines a graph; each
    connected component is a candidate group.  Groups of two merge
    outright, groups of three or more merge only when their centers are
    reasonably collinear (components failing that are left untouched).
    The merged box encloses all members and takes the max confidence.
    """
    t = thresholds or MergeThresholds()
    dets = sorted(dets, key=lambda d: d.key)
    n = len(dets)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if _pair_mergeable(dets[i], dets[j], t):
                parent[find(i)] = find(j)

    groups: dict[int, list[Detection]] = {}
    for i, d in enumerate(dets):
        groups.setdefault(find(i), []).append(d)

    out: list[Detection] = []
    stats = MergeStats()
    for members in groups.values():
        if len(members) == 1 or (len(members) >= 3 and not _collinear(members, t)):
            out.extend(members)
            continue
        merged = Detection(
            bbox=BoundingBox(
                min(m.bbox.x_min for m in members),
                min(m.bbox.y_min for m in members),
                max(m.bbox.x_max for m in members),
                max(m.bbox.y_max for m in members),
            ),
            confidence=max(m.confidence for m in members),
            image_id=members[0].image_id,
        )
        out.append(merged)
        stats.members_merged += len(members)
        stats.groups_formed += 1
    out.sort(key=lambda d: d.key)
    return out, stats


@dataclass
class PostprocessResult:
    """Final boxes for one image plus stage bookkeeping counters."""

    image_id: str
    markings: list[Detection] = field(default_factory=list)
    input_count: int = 0
    duplicates_removed: int = 0
    exteriors_removed: int = 0
    merged_members: int = 0
    merged_groups: int = 0

    def conserved(self) -> bool:
        """input - duplicates - exteriors - (members - groups) == output."""
        return (
            self.input_count
            - self.duplicates_removed
            - self.exteriors_removed
            - (self.merged_members - self.merged_groups)
            == len(self.markings)
        )


def postprocess(
    dets: Sequence[Detection],
    image_size: tuple[float, float] | None = None,
    dedup_iou: float = 0.9,
    exterior_coverage: float = 0.6,
    merge_thresholds: MergeThresholds | None = None,
) -> PostprocessResult:
    """Run dedup -> exterior suppression -> fragment merge for one image.

    `image_size` (width, height), when given, clips raw detections to
    the image; no stage afterwards can emit an out-of-bounds box.
    """
    if not dets:
        return PostprocessResult(image_id="")
    image_ids = {d.image_id for d in dets}
    if len(image_ids) != 1:
        raise ValueError(f"detections span multiple images: {sorted(image_ids)}")
    image_id = next(iter(image_ids))

    if image_size is not None:
        w, h = image_size
        dets = [replace(d, bbox=d.bbox.clip(w, h)) for d in dets]

    result = PostprocessResult(image_id=image_id, input_count=len(dets))
    kept, result.duplicates_removed = dedup(dets, dedup_iou)
    kept, result.exteriors_removed = suppress_exteriors(kept, exterior_coverage)
    kept, merge_stats = merge_fragments(kept, merge_thresholds)
    result.merged_members = merge_stats.members_merged
    result.merged_groups = merge_stats.groups_formed
    result.markings = kept
    return result


def read_detections(path: str | Path, default_confidence: float = 1.0) -> dict[str, list[Detection]]:
    """Read a tab-separated detection file, grouped by image id.

    Line format: image_id, x_min, y_min, x_max, y_max[, confidence].
    Ground-truth files simply omit the confidence column.
    """
    by_image: dict[str, list[Detection]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (5, 6):
                raise ValueError(f"{path}:{line_no}: expected 5 or 6 fields, got {len(parts)}")
            image_id = parts[0]
            try:
                x0, y0, x1, y1 = (float(v) for v in parts[1:5])
                conf = float(parts[5]) if len(parts) == 6 else default_confidence
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
            by_image.setdefault(image_id, []).append(
                Detection(bbox=BoundingBox(x0, y0, x1, y1), confidence=conf, image_id=image_id)
            )
    return by_image


def write_detections(path: str | Path, by_image: dict[str, Iterable[Detection]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(by_image):
            for d in sorted(by_image[image_id], key=lambda d: d.key):
                b = d.bbox
                fh.write(
                    f"{image_id}\t{b.x_min:g}\t{b.y_min:g}\t{b.x_max:g}\t{b.y_max:g}\t{d.confidence:g}\n"
                )
