"""Deterministic synthetic fixtures for tests and demos.

The real photographic corpus is law-enforcement sensitive; these
builders produce small synthetic stand-ins with the same structure:
a catalog shaped like the published multi-seizure signature matrix, a
frequency distribution matching the published initial-pair aggregates,
and a miniature end-to-end pipeline corpus with images, detections,
embeddings, and a scripted annotation transcript.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import Catalog, ImageRecord, LogicalClock, Marking, marking_id_for, write_manifest
from .geometry import BoundingBox, Detection, postprocess, write_detections

# Multi-seizure signature matrix: (key, kind, {seizure: count}).
# Counts mirror the published 20-row table of cross-seizure signatures,
# with the final symbol row kept single-seizure so the per-set link
# tallies (7 for 2+8, 8 for 5+8, ...) stay consistent.
SIGNATURE_MATRIX: list[tuple[str, str, dict[int, int]]] = [
    ("circled z", "symbolic", {5: 152, 8: 1}),
    ("KT", "textual", {2: 131, 7: 3, 8: 4}),
    ("BB", "textual", {2: 3, 5: 64, 8: 24}),
    ("MN", "textual", {5: 47, 8: 5}),
    ("RC", "textual", {2: 42, 8: 3}),
    ("GW", "textual", {5: 12, 8: 6}),
    ("PL", "textual", {5: 14, 8: 1}),
    ("VV", "textual", {2: 3, 8: 8}),
    ("HS", "textual", {5: 1, 8: 9}),
    ("TD", "textual", {2: 1, 8: 7}),
    ("MA", "textual", {2: 5, 8: 3}),
    ("crossed arrows", "symbolic", {2: 1, 8: 7}),
    ("DD", "textual", {5: 5, 8: 2}),
    ("JB", "textual", {5: 1, 8: 5}),
    ("FK", "textual", {7: 1, 8: 4}),
    ("SJ", "textual", {5: 1, 8: 3}),
    ("KAMA", "textual", {2: 3, 8: 1}),
    ("WT", "textual", {2: 3, 8: 1}),
    ("EB", "textual", {3: 1, 8: 2}),
    ("double ring", "symbolic", {2: 2}),
]

IMAGE_SIDE = 4000  # synthetic photo size, px


def _slot_bbox(slot: int) -> BoundingBox:
    """Distinct small box per slot inside one large synthetic photo."""
    per_row = 60
    x = 10 + (slot % per_row) * 60
    y = 10 + (slot // per_row) * 60
    return BoundingBox(x, y, x + 40, y + 30)


class _MarkingPlacer:
    """Spreads markings across one image per seizure, distinct boxes."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.slots: dict[int, int] = {}

    def ensure_image(self, seizure: int) -> str:
        image_id = f"s{seizure}_photo"
        if image_id not in self.catalog.images:
            self.catalog.add_images(
                [ImageRecord(image_id, seizure, f"{image_id}.png", IMAGE_SIDE, IMAGE_SIDE)]
            )
        return image_id

    def place(self, seizure: int, **marking_fields) -> Marking:
        image_id = self.ensure_image(seizure)
        slot = self.slots.get(seizure, 0)
        self.slots[seizure] = slot + 1
        bbox = _slot_bbox(slot)
        return Marking(
            marking_id=marking_id_for(image_id, bbox),
            image_id=image_id,
            bbox=bbox,
            **marking_fields,
        )


def build_signature_matrix_catalog(root: str | Path) -> Catalog:
    """Catalog shaped like the published cross-seizure signature table.

    Besides the 20 signature rows it adds lambda-terminated X/O
    sequences in seizures 2 and 3, plain X markings, and post-seizure /
    illegible noise that the index must ignore.
    """
    catalog = Catalog(root, clock=LogicalClock())
    placer = _MarkingPlacer(catalog)
    markings: list[Marking] = []
    for key, kind, occurrence_map in SIGNATURE_MATRIX:
        for seizure, count in sorted(occurrence_map.items()):
            for _ in range(count):
                if kind == "textual":
                    fields = dict(kind="textual", text=key, legibility="legible")
                else:
                    fields = dict(kind="symbolic", symbol_name=key, legibility="legible")
                markings.append(
                    placer.place(seizure, stage="pre_seizure", **fields)
                )
    # Lambda-terminated X/O variant in seizures 2 and 3.
    for seizure in (2, 3):
        markings.append(
            placer.place(
                seizure,
                stage="pre_seizure",
                kind="textual",
                text="XOXO",
                legibility="legible",
                description="row of x and o characters ending in a lambda-like symbol; symbol:lambda",
            )
        )
    # Plain X sequences without lambda.
    for seizure, text in ((5, "XXX"), (8, "XOX"), (7, "X")):
        markings.append(
            placer.place(
                seizure, stage="pre_seizure", kind="textual", text=text, legibility="legible"
            )
        )
    # Post-seizure and illegible noise: excluded from signature analysis.
    for seizure in (2, 5, 8):
        markings.append(
            placer.place(
                seizure, stage="post_seizure", kind="textual", text="C 1042", legibility="legible"
            )
        )
        markings.append(placer.place(seizure, legibility="illegible"))
    catalog.upsert_markings(markings)
    return catalog


def initial_pair_counts() -> list[tuple[str, int]]:
    """133 initial-pair keys whose counts reproduce the published
    aggregates: 16 keys at >= 10 occurrences covering 909 of 1,196."""
    high = [267, 169] + [34] * 13 + [31]
    low = [9] * 21 + [3] + [1] * 95
    counts = high + low
    assert len(counts) == 133 and sum(counts) == 1196
    keys = []
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    for first in letters:
        for second in letters:
            keys.append(first + second)
    return list(zip(keys[: len(counts)], counts))


def build_frequency_catalog(root: str | Path) -> Catalog:
    """Catalog whose initial-pair frequency distribution matches the
    published 133-key / 1,196-occurrence aggregate."""
    catalog = Catalog(root, clock=LogicalClock())
    placer = _MarkingPlacer(catalog)
    markings = []
    rng = random.Random(4)
    for key, count in initial_pair_counts():
        for _ in range(count):
            seizure = rng.choice((2, 5, 8))
            markings.append(
                placer.place(
                    seizure, stage="pre_seizure", kind="textual", text=key, legibility="legible"
                )
            )
    catalog.upsert_markings(markings)
    return catalog


# ---------------------------------------------------------------------------
# End-to-end pipeline corpus
# ---------------------------------------------------------------------------

EMBEDDING_DIM = 16

# Cluster centers in embedding space, one per intended group label.
_CLUSTER_AXES = {
    "post_seizure": 0,
    "initials_bb": 1,
    "initials_vv": 2,
    "circled_z": 3,
    "xo_lambda": 4,
}
_CLUSTER_SCALE = 4.0
_CLUSTER_NOISE = 0.15


@dataclass
class ContentPlan:
    """Intended truth for one post-processed marking."""

    label: str
    transcript: dict[str, str | None]
    scattered: bool = False  # no cluster: stays unlabeled by propagation


def _textual_plan(label: str, text: str, description: str, rotation: str = "0") -> ContentPlan:
    return ContentPlan(
        label=label,
        transcript={
            "presence": "yes",
            "legibility": "legible",
            "orientation": rotation,
            "multiplicity": "1",
            "submarking_1": f"textual|{text}|{description}",
        },
    )


def _symbolic_plan(label: str, name: str, description: str) -> ContentPlan:
    return ContentPlan(
        label=label,
        transcript={
            "presence": "yes",
            "legibility": "legible",
            "orientation": "0",
            "multiplicity": "1",
            "submarking_1": f"symbolic|{name}|{description}",
        },
    )


def _xo_lambda_plan() -> ContentPlan:
    return ContentPlan(
        label="xo_lambda",
        transcript={
            "presence": "yes",
            "legibility": "legible",
            "orientation": "0",
            "multiplicity": "2",
            "submarking_1": "textual|XOXO|alternating tall crosses and rings",
            "submarking_2": "symbolic|lambda|angular symbol resembling a lambda",
        },
    )


def _unique_plan(text: str) -> ContentPlan:
    plan = _textual_plan("other", text, f"{text} in thin uneven strokes")
    plan.scattered = True
    return plan


_SLOTS = [
    (20, 20, 70, 50),
    (100, 20, 150, 50),
    (180, 20, 230, 50),
    (20, 100, 70, 130),
    (100, 100, 150, 130),
    (180, 100, 230, 130),
]

IMAGE_SIZE = 256


def _paint_image(path: Path, boxes: list[BoundingBox]) -> None:
    from PIL import Image, ImageDraw

    img = Image.new("RGB", (IMAGE_SIZE, IMAGE_SIZE), (208, 197, 178))
    draw = ImageDraw.Draw(img)
    for b in boxes:
        draw.rectangle(
            (int(b.x_min) + 2, int(b.y_min) + 2, int(b.x_max) - 2, int(b.y_max) - 2),
            outline=(52, 38, 28),
            width=3,
        )
    img.save(path)


@dataclass
class PipelineCorpus:
    root: Path
    config: Path
    manifest: Path
    detections: Path
    embeddings: Path
    transcript: Path
    human_labels: Path
    ground_truth: Path
    predictions: Path
    catalog_dir: Path
    planned: dict[str, ContentPlan]  # marking_id -> intended truth


def _image_plan(seizure: int, index: int, slot_plans: list[ContentPlan]):
    """Plain image: one detection per slot, content per slot."""
    image_id = f"s{seizure}_img{index}"
    boxes = [BoundingBox(*_SLOTS[i]) for i in range(len(slot_plans))]
    detections = [(b, 0.9) for b in boxes]
    content = {b.as_tuple(): plan for b, plan in zip(boxes, slot_plans)}
    return image_id, detections, content


def build_pipeline_corpus(root: str | Path, seed: int = 7) -> PipelineCorpus:
    """Miniature but complete pipeline input set.

    Detections include duplicate boxes, an exterior/interior pair, and a
    mergeable fragment pair so post-processing exercises every stage.
    Embeddings cluster per intended group label; the transcript scripts
    the annotation backend, including one false positive, one illegible
    crop, and one permanently timing-out marking.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    images: list[tuple[str, int]] = []  # (image_id, seizure)
    detections_by_image: dict[str, list[Detection]] = {}
    content_by_image: dict[str, dict[tuple, ContentPlan]] = {}

    def add_image(seizure, index, slot_plans, extra_detections=(), extra_content=()):
        image_id, dets, content = _image_plan(seizure, index, slot_plans)
        det_objs = [
            Detection(bbox=b, confidence=c, image_id=image_id) for b, c in dets
        ]
        for b, c in extra_detections:
            det_objs.append(Detection(bbox=b, confidence=c, image_id=image_id))
        for box_tuple, plan in extra_content:
            content[box_tuple] = plan
        images.append((image_id, seizure))
        detections_by_image[image_id] = det_objs
        content_by_image[image_id] = content

    post = lambda n: _textual_plan("post_seizure", f"C {n}", "stencilled inventory code")
    bb = lambda: _textual_plan("initials_bb", "BB", "two rounded capitals in thick marker", "90")
    vv = lambda: _textual_plan("initials_vv", "VV", "sharp double chevron strokes")
    cz = lambda: _symbolic_plan("circled_z", "circled z", "letter z inside a drawn circle")

    # Seizure 2: five images, includes a duplicate detection pair and XO/lambda.
    add_image(2, 0, [post(21), post(22), bb(), bb(), vv()],
              extra_detections=[(BoundingBox(*_SLOTS[0]), 0.95)])  # duplicate of slot 0
    add_image(2, 1, [post(23), post(24), bb(), vv(), _unique_plan("RJ")])
    add_image(2, 2, [post(25), post(26), bb(), vv(), _xo_lambda_plan()])
    add_image(2, 3, [post(27), post(28), bb(), vv(), _xo_lambda_plan()])
    add_image(2, 4, [post(29), post(30), bb(), _unique_plan("KLM")])

    # Seizure 3: two images with the lambda-terminated X/O variant.
    add_image(3, 0, [post(31), _xo_lambda_plan(), _unique_plan("TN")])
    add_image(3, 1, [post(32), post(33), _xo_lambda_plan(), _unique_plan("GQ")])

    # Seizure 5: exterior/interior suppression case plus an illegible crop.
    exterior = BoundingBox(100, 20, 230, 55)
    interior_a = BoundingBox(100, 20, 150, 50)
    interior_b = BoundingBox(170, 25, 230, 55)
    illegible_plan = ContentPlan(
        label="other",
        transcript={"presence": "yes", "legibility": "illegible"},
        scattered=True,
    )
    add_image(
        5, 0, [post(51)],
        extra_detections=[(exterior, 0.6), (interior_a, 0.85), (interior_b, 0.8)],
        extra_content=[
            (interior_a.as_tuple(), _unique_plan("HS")),
            (interior_b.as_tuple(), _unique_plan("KT")),
        ],
    )
    add_image(5, 1, [post(52), post(53), bb(), bb(), cz(), illegible_plan])
    add_image(5, 2, [post(54), post(55), bb(), bb(), cz()])
    add_image(5, 3, [post(56), post(57), bb(), bb(), cz(), cz()])

    # Seizure 8: merge case, a detector false positive, and a timeout.
    merge_left = BoundingBox(20, 100, 60, 130)
    merge_right = BoundingBox(70, 100, 110, 130)
    merged = BoundingBox(20, 100, 110, 130)
    add_image(
        8, 0, [post(81), post(82), bb()],
        extra_detections=[(merge_left, 0.7), (merge_right, 0.75)],
        extra_content=[(merged.as_tuple(), bb())],
    )
    no_marking_plan = ContentPlan(
        label="other", transcript={"presence": "no"}, scattered=True
    )
    timeout_plan = ContentPlan(
        label="other", transcript={"presence": None}, scattered=True
    )
    add_image(8, 1, [post(83), post(84), vv(), no_marking_plan, timeout_plan])
    add_image(8, 2, [post(85), post(86), bb(), vv(), cz()])
    add_image(8, 3, [post(87), post(88), bb(), vv(), cz()])
    add_image(8, 4, [post(89), post(90), bb(), vv(), _unique_plan("ZP")])

    # Paint photos and write the manifest.
    records = []
    for image_id, seizure in images:
        final_boxes = [d.bbox for d in detections_by_image[image_id]]
        _paint_image(root / "images" / f"{image_id}.png", final_boxes)
        records.append(
            ImageRecord(image_id, seizure, f"images/{image_id}.png", IMAGE_SIZE, IMAGE_SIZE)
        )
    manifest = root / "manifest.tsv"
    write_manifest(manifest, records)

    detections_file = root / "detections.tsv"
    write_detections(detections_file, detections_by_image)

    # Post-process exactly as the pipeline will, to learn final marking ids.
    planned: dict[str, ContentPlan] = {}
    for image_id, _ in images:
        result = postprocess(detections_by_image[image_id], image_size=(IMAGE_SIZE, IMAGE_SIZE))
        content = content_by_image[image_id]
        for det in result.markings:
            plan = content.get(det.bbox.as_tuple())
            if plan is None:
                raise AssertionError(
                    f"no content planned for {image_id} box {det.bbox.as_tuple()}"
                )
            planned[marking_id_for(image_id, det.bbox)] = plan

    # Embeddings: tight cluster per group label, scattered noise otherwise.
    embedding_lines = [f"#dim={EMBEDDING_DIM}"]
    for marking_id in sorted(planned):
        plan = planned[marking_id]
        vector = np.zeros(EMBEDDING_DIM)
        if not plan.scattered and plan.label in _CLUSTER_AXES:
            vector[_CLUSTER_AXES[plan.label]] = _CLUSTER_SCALE
        else:
            vector = np.array([rng.uniform(-2.0, 2.0) for _ in range(EMBEDDING_DIM)])
        vector = vector + np.array(
            [rng.gauss(0.0, _CLUSTER_NOISE) for _ in range(EMBEDDING_DIM)]
        )
        embedding_lines.append(
            marking_id + "," + ",".join(f"{v:.6f}" for v in vector)
        )
    embeddings_file = root / "embeddings.csv"
    embeddings_file.write_text("\n".join(embedding_lines) + "\n", encoding="utf-8")

    transcript_file = root / "transcript.json"
    transcript_file.write_text(
        json.dumps(
            {marking_id: plan.transcript for marking_id, plan in sorted(planned.items())},
            indent=1,
            sort_keys=True,
        ),
        encoding="utf-8",
    )

    human_labels_file = root / "human_labels.tsv"
    human_labels_file.write_text(
        "".join(
            f"{marking_id}\t{plan.label}\n" for marking_id, plan in sorted(planned.items())
        ),
        encoding="utf-8",
    )

    # Detector evaluation files for two images: ground truth = planned
    # boxes; predictions reuse the raw detections.
    eval_images = ["s2_img1", "s8_img2"]
    gt_file = root / "eval_gt.tsv"
    pred_file = root / "eval_pred.tsv"
    write_detections(
        gt_file,
        {
            image_id: [
                Detection(bbox=BoundingBox(*t), confidence=1.0, image_id=image_id)
                for t in sorted(content_by_image[image_id])
            ]
            for image_id in eval_images
        },
    )
    write_detections(
        pred_file, {image_id: detections_by_image[image_id] for image_id in eval_images}
    )

    config_file = root / "config.yaml"
    config_file.write_text(
        "\n".join(
            [
                f"catalog_dir: {root / 'catalog'}",
                f"image_root: {root}",
                f"manifest: {manifest}",
                f"detections: {detections_file}",
                f"embeddings: {embeddings_file}",
                f"human_labels: {human_labels_file}",
                f"ground_truth: {gt_file}",
                f"predictions: {pred_file}",
                f"seed: {seed}",
                "thresholds:",
                "  sample_fraction: 0.4",
                "  sample_minimum: 5",
                "backend:",
                "  kind: mock",
                f"  transcript: {transcript_file}",
                "",
            ]
        ),
        encoding="utf-8",
    )

    return PipelineCorpus(
        root=root,
        config=config_file,
        manifest=manifest,
        detections=detections_file,
        embeddings=embeddings_file,
        transcript=transcript_file,
        human_labels=human_labels_file,
        ground_truth=gt_file,
        predictions=pred_file,
        catalog_dir=root / "catalog",
        planned=planned,
    )
