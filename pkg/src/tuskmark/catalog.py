"""Persistent store for images, markings, labels, and review tasks.

The store is a directory of newline-delimited JSON record files plus an
index file: plain, diffable, greppable.  Evidence workflows favor that
over an embedded database.  Records are written sorted by id with
canonical JSON, so two catalogs with equal content are byte-identical.

Writes go through a single in-process owner (this class); readers can
work from any consistent snapshot of the directory.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .geometry import BoundingBox

SCHEMA_VERSION = 1

STAGES = ("pre_seizure", "post_seizure", "unknown")
LEGIBILITIES = ("legible", "illegible", "unknown")
KINDS = ("textual", "symbolic", "none", "unknown")
LABEL_SOURCES = ("human", "propagated", "vlm")
ROTATIONS = (0, 90, 180, 270)
QUEUES = ("initial_labeling", "illegible_review", "conflict_review")

# Group labels that double as stage assignments.
STAGE_LABELS = {"pre_seizure": "pre_seizure", "post_seizure": "post_seizure"}


class CatalogError(Exception):
    pass


class IntegrityError(CatalogError):
    pass


class TaskConflictError(CatalogError):
    """Attempt to decide a task that is no longer open."""


def utc_clock() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class LogicalClock:
    """Monotonic counter timestamps for byte-identical pipeline runs."""

    def __init__(self, start: int = 0):
        self._tick = start

    def __call__(self) -> str:
        self._tick += 1
        return f"T+{self._tick:08d}"


def marking_id_for(image_id: str, bbox: BoundingBox, rotation: int = 0) -> str:
    """Stable id: hash of (image, box, rotation), so re-running the
    post-processing yields the same ids."""
    payload = (
        f"{image_id}|{bbox.x_min:.6f},{bbox.y_min:.6f},{bbox.x_max:.6f},{bbox.y_max:.6f}|{rotation}"
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class LabelAssignment:
    label: str
    source: str
    probability: float
    created_at: str

    def __post_init__(self) -> None:
        if self.source not in LABEL_SOURCES:
            raise ValueError(f"unknown label source {self.source!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if self.source == "human" and self.probability != 1.0:
            raise ValueError("human labels carry probability 1.0")

    def to_record(self) -> dict:
        return {
            "label": self.label,
            "source": self.source,
            "probability": self.probability,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_record(rec: dict) -> "LabelAssignment":
        return LabelAssignment(
            rec["label"], rec["source"], rec["probability"], rec["created_at"]
        )


@dataclass
class ImageRecord:
    image_id: str
    seizure: int
    uri: str
    width_px: int
    height_px: int

    def __post_init__(self) -> None:
        if self.seizure <= 0:
            raise ValueError(f"seizure id must be positive, got {self.seizure}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"non-positive image dimensions for {self.image_id}")


@dataclass
class Marking:
    marking_id: str
    image_id: str
    bbox: BoundingBox
    rotation: int = 0
    stage: str = "unknown"
    legibility: str = "unknown"
    kind: str = "unknown"
    text: str | None = None
    symbol_name: str | None = None
    description: str | None = None
    labels: list[LabelAssignment] = field(default_factory=list)
    label_history: list[LabelAssignment] = field(default_factory=list)
    annotation_status: str = "pending"

    def validate(self) -> None:
        if self.rotation not in ROTATIONS:
            raise ValueError(f"{self.marking_id}: rotation {self.rotation} not in {ROTATIONS}")
        if self.stage not in STAGES:
            raise ValueError(f"{self.marking_id}: bad stage {self.stage!r}")
        if self.legibility not in LEGIBILITIES:
            raise ValueError(f"{self.marking_id}: bad legibility {self.legibility!r}")
        if self.kind not in KINDS:
            raise ValueError(f"{self.marking_id}: bad kind {self.kind!r}")
        if self.text is not None and self.kind != "textual":
            raise ValueError(f"{self.marking_id}: text requires kind=textual")
        if self.symbol_name is not None and self.kind != "symbolic":
            raise ValueError(f"{self.marking_id}: symbol_name requires kind=symbolic")
        seen = set()
        for assignment in self.labels:
            key = (assignment.label, assignment.source)
            if key in seen:
                raise ValueError(f"{self.marking_id}: duplicate active label {key}")
            seen.add(key)

    def active_label(self, label: str, source: str) -> LabelAssignment | None:
        for assignment in self.labels:
            if assignment.label == label and assignment.source == source:
                return assignment
        return None

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "marking_id": self.marking_id,
            "image_id": self.image_id,
            "bbox": list(self.bbox.as_tuple()),
            "rotation": self.rotation,
            "stage": self.stage,
            "legibility": self.legibility,
            "kind": self.kind,
            "text": self.text,
            "symbol_name": self.symbol_name,
            "description": self.description,
            "labels": [a.to_record() for a in self.labels],
            "label_history": [a.to_record() for a in self.label_history],
            "annotation_status": self.annotation_status,
        }

    @staticmethod
    def from_record(rec: dict) -> "Marking":
        if rec.get("schema_version") != SCHEMA_VERSION:
            raise CatalogError(f"unsupported marking schema {rec.get('schema_version')}")
        return Marking(
            marking_id=rec["marking_id"],
            image_id=rec["image_id"],
            bbox=BoundingBox(*rec["bbox"]),
            rotation=rec["rotation"],
            stage=rec["stage"],
            legibility=rec["legibility"],
            kind=rec["kind"],
            text=rec["text"],
            symbol_name=rec["symbol_name"],
            description=rec["description"],
            labels=[LabelAssignment.from_record(a) for a in rec["labels"]],
            label_history=[LabelAssignment.from_record(a) for a in rec["label_history"]],
            annotation_status=rec["annotation_status"],
        )


@dataclass
class ReviewTask:
    task_id: str
    marking_id: str
    queue: str
    status: str = "open"  # open | done | skipped
    assigned_label: str | None = None
    corrected_text: str | None = None
    reviewer: str | None = None
    created_at: str = ""
    decided_at: str | None = None

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "marking_id": self.marking_id,
            "queue": self.queue,
            "status": self.status,
            "assigned_label": self.assigned_label,
            "corrected_text": self.corrected_text,
            "reviewer": self.reviewer,
            "created_at": self.created_at,
            "decided_at": self.decided_at,
        }

    @staticmethod
    def from_record(rec: dict) -> "ReviewTask":
        return ReviewTask(**rec)


@dataclass
class IngestReport:
    added: int = 0
    already_present: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass
class MarkingFilter:
    """Conjunctive filter; substring matches are case-insensitive."""

    seizure: int | None = None
    stage: str | None = None
    legibility: str | None = None
    label: str | None = None
    source: str | None = None
    text_substring: str | None = None
    description_substring: str | None = None


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class Catalog:
    """Single-writer catalog over a directory of record files."""

    def __init__(self, root: str | Path, clock: Callable[[], str] | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.clock = clock or utc_clock
        self.images: dict[str, ImageRecord] = {}
        self.markings: dict[str, Marking] = {}
        self.tasks: dict[str, ReviewTask] = {}
        self._load()

    # -- persistence -------------------------------------------------

    def _file(self, name: str) -> Path:
        return self.root / name

    def _load(self) -> None:
        images_path = self._file("images.ndjson")
        if images_path.exists():
            for line in images_path.read_text(encoding="utf-8").splitlines():
                rec = json.loads(line)
                self.images[rec["image_id"]] = ImageRecord(
                    rec["image_id"], rec["seizure"], rec["uri"], rec["width_px"], rec["height_px"]
                )
        markings_path = self._file("markings.ndjson")
        if markings_path.exists():
            for line in markings_path.read_text(encoding="utf-8").splitlines():
                marking = Marking.from_record(json.loads(line))
                self.markings[marking.marking_id] = marking
        tasks_path = self._file("tasks.ndjson")
        if tasks_path.exists():
            for line in tasks_path.read_text(encoding="utf-8").splitlines():
                task = ReviewTask.from_record(json.loads(line))
                self.tasks[task.task_id] = task

    def _persist_images(self) -> None:
        lines = [
            _dump(
                {
                    "image_id": r.image_id,
                    "seizure": r.seizure,
                    "uri": r.uri,
                    "width_px": r.width_px,
                    "height_px": r.height_px,
                }
            )
            for _, r in sorted(self.images.items())
        ]
        _atomic_write(self._file("images.ndjson"), "\n".join(lines) + ("\n" if lines else ""))
        self._persist_index()

    def _persist_markings(self) -> None:
        lines = [_dump(m.to_record()) for _, m in sorted(self.markings.items())]
        _atomic_write(self._file("markings.ndjson"), "\n".join(lines) + ("\n" if lines else ""))
        self._persist_index()

    def _persist_tasks(self) -> None:
        lines = [_dump(t.to_record()) for _, t in sorted(self.tasks.items())]
        _atomic_write(self._file("tasks.ndjson"), "\n".join(lines) + ("\n" if lines else ""))
        self._persist_index()

    def _persist_index(self) -> None:
        index = {
            "schema_version": SCHEMA_VERSION,
            "counts": {
                "images": len(self.images),
                "markings": len(self.markings),
                "tasks": len(self.tasks),
            },
            "files": ["images.ndjson", "markings.ndjson", "tasks.ndjson"],
        }
        _atomic_write(self._file("index.json"), _dump(index) + "\n")

    def append_log(self, name: str, record: dict) -> None:
        """Append-only audit/conflict side logs."""
        with open(self._file(name), "a", encoding="utf-8") as fh:
            fh.write(_dump(record) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- images ------------------------------------------------------

    def ingest_images(self, manifest_path: str | Path) -> IngestReport:
        """Ingest a tab-separated manifest: image_id, seizure, path, width, height.

        Malformed lines are reported with their line number and skipped;
        unreadable image paths produce warnings, not failures.  Re-ingest
        of known image ids is a no-op.
        """
        report = IngestReport()
        manifest_path = Path(manifest_path)
        base = manifest_path.parent
        for line_no, raw in enumerate(
            manifest_path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                report.errors.append((line_no, f"expected 5 fields, got {len(parts)}"))
                continue
            image_id, seizure_text, uri, width_text, height_text = parts
            try:
                record = ImageRecord(
                    image_id, int(seizure_text), uri, int(width_text), int(height_text)
                )
            except ValueError as exc:
                report.errors.append((line_no, str(exc)))
                continue
            resolved = Path(uri) if os.path.isabs(uri) else base / uri
            if not resolved.exists():
                report.warnings.append(f"image path not readable: {uri}")
            if image_id in self.images:
                report.already_present += 1
                continue
            self.images[image_id] = record
            report.added += 1
        self._persist_images()
        return report

    def add_images(self, records: Sequence[ImageRecord]) -> int:
        """Direct registration path for programmatic corpora; ids already
        present are left untouched."""
        added = 0
        for record in records:
            if record.image_id not in self.images:
                self.images[record.image_id] = record
                added += 1
        self._persist_images()
        return added

    def image_path(self, image_id: str) -> Path:
        record = self.images[image_id]
        return Path(record.uri)

    # -- markings ----------------------------------------------------

    def upsert_markings(self, markings: Sequence[Marking]) -> int:
        """Insert or update markings; label history is never shrunk.

        Updates replace the mutable annotation fields but keep existing
        label assignments and history.
        """
        for marking in markings:
            if marking.image_id not in self.images:
                raise IntegrityError(
                    f"marking {marking.marking_id} references missing image {marking.image_id}"
                )
            image = self.images[marking.image_id]
            b = marking.bbox
            if b.x_min < 0 or b.y_min < 0 or b.x_max > image.width_px or b.y_max > image.height_px:
                raise IntegrityError(
                    f"marking {marking.marking_id} bbox {b.as_tuple()} outside image "
                    f"{marking.image_id} ({image.width_px}x{image.height_px})"
                )
            marking.validate()
        written = 0
        for marking in markings:
            existing = self.markings.get(marking.marking_id)
            if existing is None:
                self.markings[marking.marking_id] = replace(
                    marking,
                    labels=list(marking.labels),
                    label_history=list(marking.labels),
                )
            else:
                merged = replace(
                    marking,
                    labels=list(existing.labels),
                    label_history=list(existing.label_history),
                )
                self.markings[marking.marking_id] = merged
            written += 1
        self._persist_markings()
        self.verify_integrity()
        return written

    def get_marking(self, marking_id: str) -> Marking:
        try:
            return self.markings[marking_id]
        except KeyError:
            raise CatalogError(f"unknown marking {marking_id}") from None

    def update_marking_fields(self, marking_id: str, **fields) -> Marking:
        marking = replace(self.get_marking(marking_id), **fields)
        marking.validate()
        self.markings[marking_id] = marking
        self._persist_markings()
        return marking

    def add_label(
        self, marking_id: str, label: str, source: str, probability: float
    ) -> LabelAssignment:
        """Attach a label assignment; supersession appends, never deletes."""
        marking = self.get_marking(marking_id)
        assignment = LabelAssignment(label, source, probability, self.clock())
        existing = marking.active_label(label, source)
        if existing is not None:
            marking.labels.remove(existing)
        marking.labels.append(assignment)
        marking.label_history.append(assignment)
        if label in STAGE_LABELS:
            self.resolve_stage(marking)
        self._persist_markings()
        return assignment

    def resolve_stage(self, marking: Marking) -> None:
        """Stage precedence: human > propagated > vlm; conflicts logged."""
        by_source: dict[str, set[str]] = {}
        for assignment in marking.labels:
            if assignment.label in STAGE_LABELS:
                by_source.setdefault(assignment.source, set()).add(
                    STAGE_LABELS[assignment.label]
                )
        stages_seen = {s for stages in by_source.values() for s in stages}
        for source in ("human", "propagated", "vlm"):
            if source in by_source:
                chosen = sorted(by_source[source])[0]
                if len(stages_seen) > 1 or len(by_source[source]) > 1:
                    self.append_log(
                        "conflicts.ndjson",
                        {
                            "marking_id": marking.marking_id,
                            "field": "stage",
                            "kept": chosen,
                            "candidates": {k: sorted(v) for k, v in sorted(by_source.items())},
                            "at": self.clock(),
                        },
                    )
                marking.stage = chosen
                return

    def seizure_of(self, marking: Marking) -> int:
        return self.images[marking.image_id].seizure

    def markings_in_seizure(self, seizure: int) -> list[Marking]:
        return [
            m
            for _, m in sorted(self.markings.items())
            if self.images[m.image_id].seizure == seizure
        ]

    def seizures(self) -> list[int]:
        return sorted({r.seizure for r in self.images.values()})

    # -- sampling ----------------------------------------------------

    def sample_for_review(
        self,
        seizure: int,
        fraction: float = 0.10,
        minimum: int = 100,
        rng_seed: int = 0,
    ) -> list[str]:
        """Uniform sample of marking ids for human labeling.

        Sample size is max(ceil(fraction * N), minimum), capped at the
        seizure's marking count N; ceiling so the floor share is never
        under-sampled.  Deterministic for a fixed seed.
        """
        if seizure not in self.seizures():
            raise CatalogError(f"unknown seizure {seizure}")
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"fraction {fraction} outside (0, 1]")
        ids = sorted(m.marking_id for m in self.markings_in_seizure(seizure))
        size = min(len(ids), max(math.ceil(fraction * len(ids)), minimum))
        rng = random.Random(rng_seed)
        return sorted(rng.sample(ids, size))

    # -- queries -----------------------------------------------------

    def query(self, flt: MarkingFilter | None = None) -> list[Marking]:
        flt = flt or MarkingFilter()
        out = []
        for _, marking in sorted(self.markings.items()):
            if flt.seizure is not None and self.seizure_of(marking) != flt.seizure:
                continue
            if flt.stage is not None and marking.stage != flt.stage:
                continue
            if flt.legibility is not None and marking.legibility != flt.legibility:
                continue
            if flt.label is not None or flt.source is not None:
                if not any(
                    (flt.label is None or a.label == flt.label)
                    and (flt.source is None or a.source == flt.source)
                    for a in marking.labels
                ):
                    continue
            if flt.text_substring is not None:
                if marking.text is None or flt.text_substring.lower() not in marking.text.lower():
                    continue
            if flt.description_substring is not None:
                if (
                    marking.description is None
                    or flt.description_substring.lower() not in marking.description.lower()
                ):
                    continue
            out.append(marking)
        return out

    # -- review tasks ------------------------------------------------

    def create_tasks(
        self, queue: str, marking_ids: Sequence[str], skip_if_ever_tasked: bool = False
    ) -> list[ReviewTask]:
        """Open one task per marking; (marking, queue) pairs that already
        have an open task are skipped.  `skip_if_ever_tasked` also skips
        pairs with a completed task, which keeps pipeline re-runs from
        re-opening finished review work."""
        if queue not in QUEUES:
            raise CatalogError(f"unknown queue {queue!r}")
        if skip_if_ever_tasked:
            blocked = {(t.marking_id, t.queue) for t in self.tasks.values()}
        else:
            blocked = {
                (t.marking_id, t.queue) for t in self.tasks.values() if t.status == "open"
            }
        created = []
        for marking_id in marking_ids:
            self.get_marking(marking_id)
            if (marking_id, queue) in blocked:
                continue
            sequence = sum(
                1 for t in self.tasks.values() if t.marking_id == marking_id and t.queue == queue
            )
            task = ReviewTask(
                task_id=f"{queue}#{marking_id}#{sequence}",
                marking_id=marking_id,
                queue=queue,
                created_at=self.clock(),
            )
            self.tasks[task.task_id] = task
            created.append(task)
        self._persist_tasks()
        return created

    def open_tasks(
        self, queue: str, seizure: int | None = None, limit: int | None = None
    ) -> list[ReviewTask]:
        if queue not in QUEUES:
            raise CatalogError(f"unknown queue {queue!r}")
        tasks = [
            t for t in self.tasks.values() if t.queue == queue and t.status == "open"
        ]
        if seizure is not None:
            tasks = [
                t for t in tasks if self.seizure_of(self.get_marking(t.marking_id)) == seizure
            ]
        tasks.sort(key=lambda t: (t.created_at, t.task_id))
        return tasks[:limit] if limit is not None else tasks

    def complete_task(
        self,
        task_id: str,
        reviewer: str,
        label: str | None = None,
        corrected_text: str | None = None,
        skip: bool = False,
    ) -> ReviewTask:
        """Close a task and write its decision through to the marking.

        initial_labeling decisions become human label assignments;
        illegible_review decisions either confirm illegibility or flip
        the marking to legible text.  Completing a closed task raises.
        """
        task = self.tasks.get(task_id)
        if task is None:
            raise CatalogError(f"unknown task {task_id}")
        if task.status != "open":
            raise TaskConflictError(f"task {task_id} already {task.status}")
        if skip:
            task.status = "skipped"
            task.reviewer = reviewer
            task.decided_at = self.clock()
            self._persist_tasks()
            return task
        if task.queue == "illegible_review":
            if corrected_text:
                before = self.get_marking(task.marking_id)
                if before.legibility == "illegible":
                    self.append_log(
                        "conflicts.ndjson",
                        {
                            "marking_id": task.marking_id,
                            "field": "legibility",
                            "kept": "legible",
                            "overridden": "illegible",
                            "reviewer": reviewer,
                            "at": self.clock(),
                        },
                    )
                self.update_marking_fields(
                    task.marking_id,
                    legibility="legible",
                    kind="textual",
                    text=corrected_text,
                    symbol_name=None,
                )
                task.assigned_label = "legible"
                task.corrected_text = corrected_text
            elif label == "illegible":
                self.update_marking_fields(task.marking_id, legibility="illegible")
                task.assigned_label = "illegible"
            else:
                raise CatalogError(
                    "illegible_review expects label='illegible' or corrected_text"
                )
        else:
            if not label:
                raise CatalogError("label required")
            self.add_label(task.marking_id, label, source="human", probability=1.0)
            task.assigned_label = label
        task.status = "done"
        task.reviewer = reviewer
        task.decided_at = self.clock()
        self._persist_tasks()
        return task

    # -- integrity ---------------------------------------------------

    def verify_integrity(self) -> None:
        dangling = sorted(
            m.marking_id for m in self.markings.values() if m.image_id not in self.images
        )
        if dangling:
            raise IntegrityError(f"markings with missing images: {dangling}")

    def label_vocabulary(self) -> list[str]:
        labels = {a.label for m in self.markings.values() for a in m.labels}
        return sorted(labels)


def write_manifest(path: str | Path, records: Iterable[ImageRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in sorted(records, key=lambda r: r.image_id):
            fh.write(f"{r.image_id}\t{r.seizure}\t{r.uri}\t{r.width_px}\t{r.height_px}\n")
