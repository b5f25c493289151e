"""Vision-language annotation protocol orchestration.

Each marking crop runs through a fixed prompt sequence against a
pluggable backend: presence check, legibility check, an orientation
vote over the four rotations, a multiplicity split, and one combined
content-and-style query per sub-marking.  Early negative verdicts
short-circuit the rest.  Responses follow a closed answer grammar so
parsing stays reproducible; every backend exchange lands in an audit
log.

The production backend is an external model reached over a process or
HTTP boundary; a deterministic scripted backend ships for tests and
offline runs.
"""

from __future__ import annotations

import io
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .catalog import Catalog, Marking

STEP_PRESENCE = "presence"
STEP_LEGIBILITY = "legibility"
STEP_ORIENTATION = "orientation"
STEP_MULTIPLICITY = "multiplicity"
STEP_SUBMARKING = "submarking"  # suffixed with _<index>

# Templates are configuration: deployments may edit the wording, the
# machine-readable context header is added by the orchestrator.
DEFAULT_TEMPLATES = {
    STEP_PRESENCE: (
        "Is there a handwritten marking of any kind in this image? Answer yes or no."
    ),
    STEP_LEGIBILITY: "Is the marking legible? Answer legible or illegible.",
    STEP_ORIENTATION: (
        "Four rotations of the same crop are attached (0, 90, 180, 270 degrees "
        "clockwise). Which is right side up based on the writing? Answer 0, 90, 180, or 270."
    ),
    STEP_MULTIPLICITY: (
        "How many distinct markings are present? Answer with a single number."
    ),
    STEP_SUBMARKING: (
        "For marking {index} of {count}: is it textual or symbolic? If textual, give "
        "the text; if symbolic, give a short descriptive name. Then describe the marking "
        "with a focus on style and distinctive characters. "
        "Answer in the form kind|content|description."
    ),
}


class BackendError(Exception):
    pass


class BackendTimeout(BackendError):
    pass


class AnnotationBackend(Protocol):
    name: str
    version: str

    def answer(self, prompt: str, images: Sequence[bytes]) -> str: ...


def load_templates(directory: str | Path) -> dict[str, str]:
    """Read per-step prompt templates from `<step>.txt` files.

    Missing files fall back to the defaults, so a deployment can edit
    just the wording it cares about.
    """
    templates = {}
    for step in DEFAULT_TEMPLATES:
        path = Path(directory) / f"{step}.txt"
        if path.exists():
            templates[step] = path.read_text(encoding="utf-8").strip()
    return templates


def write_default_templates(directory: str | Path) -> None:
    """Materialize the default prompt wordings as editable files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for step, text in DEFAULT_TEMPLATES.items():
        (directory / f"{step}.txt").write_text(text + "\n", encoding="utf-8")


_CONTEXT_RE = re.compile(r"\[marking=(?P<marking>[^ \]]+) step=(?P<step>[^ \]]+)\]")


def _context_header(marking_id: str, step: str) -> str:
    return f"[marking={marking_id} step={step}]"


TIMEOUT_SENTINEL = None  # transcript value triggering a simulated timeout


class ScriptedBackend:
    """Deterministic mock: transcript maps (marking_id, step) to a response.

    Transcript file format: JSON object, marking id to {step: response};
    a null response simulates a backend timeout on every attempt.
    """

    name = "scripted-mock"
    version = "1"

    def __init__(self, transcript: dict[str, dict[str, str | None]]):
        self.transcript = transcript
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def answer(self, prompt: str, images: Sequence[bytes]) -> str:
        with self._lock:
            self.calls += 1
        match = _CONTEXT_RE.search(prompt)
        if not match:
            raise BackendError("prompt carries no context header")
        marking_id, step = match.group("marking"), match.group("step")
        try:
            response = self.transcript[marking_id][step]
        except KeyError:
            raise BackendError(f"no scripted response for ({marking_id}, {step})") from None
        if response is TIMEOUT_SENTINEL:
            raise BackendTimeout(f"scripted timeout at ({marking_id}, {step})")
        return response


class HttpBackend:
    """Backend over an HTTP boundary.

    Request: JSON {"prompt": ..., "images": [base64 PNG, ...]}; the
    response body is the plain-text answer.
    """

    name = "http"
    version = "1"

    def __init__(self, url: str, timeout_seconds: float = 60.0):
        self.url = url
        self.timeout_seconds = timeout_seconds

    def answer(self, prompt: str, images: Sequence[bytes]) -> str:
        import base64
        import urllib.error
        import urllib.request

        payload = json.dumps(
            {
                "prompt": prompt,
                "images": [base64.b64encode(img).decode("ascii") for img in images],
            }
        ).encode("utf-8")
        request = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_seconds) as response:
                return response.read().decode("utf-8")
        except TimeoutError as exc:
            raise BackendTimeout(str(exc)) from exc
        except urllib.error.URLError as exc:
            raise BackendError(str(exc)) from exc


@dataclass
class SubMarking:
    kind: str  # textual | symbolic
    text: str | None
    symbol_name: str | None
    description: str


@dataclass
class AnnotationResult:
    marking_id: str
    status: str  # annotated | no_marking | illegible | needs_retry | needs_review
    has_marking: bool = False
    legibility: str = "unknown"
    rotation_applied: int = 0
    needs_review: bool = False
    sub_markings: list[SubMarking] = field(default_factory=list)
    raw: str | None = None  # retained unparseable response
    backend_calls: int = 0


CropLoader = Callable[[Marking, int], bytes]
AuditSink = Callable[[dict], None]


def pil_crop_loader(catalog: Catalog, image_root: str | Path | None = None) -> CropLoader:
    """Crop loader reading source photos from disk via Pillow."""
    from PIL import Image

    root = Path(image_root) if image_root else None

    def load(marking: Marking, rotation: int) -> bytes:
        record = catalog.images[marking.image_id]
        path = Path(record.uri)
        if root is not None and not path.is_absolute():
            path = root / path
        with Image.open(path) as img:
            b = marking.bbox
            crop = img.crop((int(b.x_min), int(b.y_min), int(b.x_max), int(b.y_max)))
            if rotation:
                crop = crop.rotate(-rotation, expand=True)
            buffer = io.BytesIO()
            crop.save(buffer, format="PNG")
            return buffer.getvalue()

    return load


def _parse_submarking(response: str) -> SubMarking | None:
    parts = response.split("|", 2)
    if len(parts) != 3:
        return None
    kind = parts[0].strip().lower()
    content = parts[1].strip()
    description = parts[2].strip()
    if kind == "textual":
        return SubMarking(kind="textual", text=content, symbol_name=None, description=description)
    if kind == "symbolic":
        return SubMarking(
            kind="symbolic", text=None, symbol_name=content, description=description
        )
    return None


class Annotator:
    """Runs the prompt sequence for single markings and batches."""

    def __init__(
        self,
        backend: AnnotationBackend,
        crop_loader: CropLoader,
        audit_sink: AuditSink | None = None,
        templates: dict[str, str] | None = None,
        retries: int = 2,
        backoff_seconds: float = 0.0,
    ):
        self.backend = backend
        self.crop_loader = crop_loader
        self.audit_sink = audit_sink or (lambda record: None)
        self.templates = dict(DEFAULT_TEMPLATES)
        if templates:
            self.templates.update(templates)
        self.retries = retries
        self.backoff_seconds = backoff_seconds

    def _ask(
        self,
        marking: Marking,
        step: str,
        template_key: str,
        images: Sequence[bytes],
        audit: list[dict],
        **fmt,
    ) -> str:
        prompt = _context_header(marking.marking_id, step) + "\n" + self.templates[
            template_key
        ].format(**fmt)
        last_error: BackendError | None = None
        for attempt in range(self.retries + 1):
            if attempt and self.backoff_seconds:
                time.sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            try:
                response = self.backend.answer(prompt, images)
            except BackendError as exc:
                last_error = exc
                audit.append(
                    {
                        "marking_id": marking.marking_id,
                        "step": step,
                        "attempt": attempt,
                        "prompt": prompt,
                        "response": None,
                        "error": str(exc),
                        "backend": self.backend.name,
                    }
                )
                continue
            audit.append(
                {
                    "marking_id": marking.marking_id,
                    "step": step,
                    "attempt": attempt,
                    "prompt": prompt,
                    "response": response,
                    "error": None,
                    "backend": self.backend.name,
                }
            )
            return response
        raise last_error  # retries exhausted

    def annotate(self, marking: Marking) -> AnnotationResult:
        """Run the full step sequence for one marking crop.

        All prompt/response pairs are buffered and flushed to the audit
        sink on return, so concurrent annotations never interleave their
        audit records.
        """
        result = AnnotationResult(marking_id=marking.marking_id, status="annotated")
        audit: list[dict] = []

        def finish(status: str) -> AnnotationResult:
            result.status = status
            result.backend_calls = len(audit)
            for record in audit:
                self.audit_sink(record)
            return result

        try:
            crop0 = self.crop_loader(marking, 0)

            response = self._ask(marking, STEP_PRESENCE, STEP_PRESENCE, [crop0], audit)
            token = response.strip().lower()
            if token == "no":
                result.has_marking = False
                return finish("no_marking")
            if token != "yes":
                result.raw = response
                result.needs_review = True
                return finish("needs_review")
            result.has_marking = True

            response = self._ask(marking, STEP_LEGIBILITY, STEP_LEGIBILITY, [crop0], audit)
            token = response.strip().lower()
            if token == "illegible":
                result.legibility = "illegible"
                return finish("illegible")
            if token != "legible":
                result.raw = response
                result.needs_review = True
                return finish("needs_review")
            result.legibility = "legible"

            rotations = [self.crop_loader(marking, r) for r in (0, 90, 180, 270)]
            response = self._ask(marking, STEP_ORIENTATION, STEP_ORIENTATION, rotations, audit)
            token = response.strip()
            if token in ("0", "90", "180", "270"):
                result.rotation_applied = int(token)
            else:
                # Backend would not choose: keep 0 and flag for review.
                result.rotation_applied = 0
                result.needs_review = True
                result.raw = response

            oriented = self.crop_loader(marking, result.rotation_applied)
            response = self._ask(marking, STEP_MULTIPLICITY, STEP_MULTIPLICITY, [oriented], audit)
            token = response.strip()
            if not token.isdigit() or int(token) < 1:
                result.raw = response
                result.needs_review = True
                return finish("needs_review")
            count = int(token)

            for index in range(1, count + 1):
                step = f"{STEP_SUBMARKING}_{index}"
                response = self._ask(
                    marking, step, STEP_SUBMARKING, [oriented], audit, index=index, count=count
                )
                sub = _parse_submarking(response)
                if sub is None:
                    result.raw = response
                    result.needs_review = True
                    return finish("needs_review")
                result.sub_markings.append(sub)
        except BackendError:
            return finish("needs_retry")
        except OSError as exc:
            # Unreadable source image: retryable infrastructure failure.
            result.raw = str(exc)
            return finish("needs_retry")
        return finish("annotated")


@dataclass
class BatchSummary:
    annotated: int = 0
    no_marking: int = 0
    illegible: int = 0
    needs_retry: int = 0
    needs_review: int = 0
    skipped: int = 0
    failures: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "annotated": self.annotated,
            "no_marking": self.no_marking,
            "illegible": self.illegible,
            "needs_retry": self.needs_retry,
            "needs_review": self.needs_review,
            "skipped": self.skipped,
        }


_DONE_STATUSES = {"annotated", "no_marking", "illegible"}


class _BufferedAnnotator:
    """Routes each marking's audit records into a private buffer so
    concurrent workers never interleave them; flushed in sorted order."""

    def __init__(self, annotator: Annotator):
        self._buffers: dict[str, list[dict]] = {}
        self._lock = threading.Lock()
        self._inner = Annotator(
            backend=annotator.backend,
            crop_loader=annotator.crop_loader,
            audit_sink=self._collect,
            templates=annotator.templates,
            retries=annotator.retries,
            backoff_seconds=annotator.backoff_seconds,
        )

    def _collect(self, record: dict) -> None:
        with self._lock:
            self._buffers.setdefault(record["marking_id"], []).append(record)

    def annotate(self, marking: Marking) -> AnnotationResult:
        return self._inner.annotate(marking)

    def flush(self, annotator: Annotator) -> None:
        for marking_id in sorted(self._buffers):
            for record in self._buffers[marking_id]:
                annotator.audit_sink(record)


def apply_result(catalog: Catalog, result: AnnotationResult) -> None:
    """Write an annotation outcome into the catalog.

    Multi-part results keep the first sub-marking as the primary
    content; further parts are folded into the description with
    canonical `symbol:<name>` tokens so symbol evidence stays
    searchable next to the text.
    """
    marking = catalog.get_marking(result.marking_id)
    if result.status == "no_marking":
        catalog.update_marking_fields(
            marking.marking_id, kind="none", annotation_status="no_marking"
        )
        return
    if result.status == "illegible":
        catalog.update_marking_fields(
            marking.marking_id, legibility="illegible", annotation_status="illegible"
        )
        catalog.add_label(marking.marking_id, "illegible", source="vlm", probability=1.0)
        return
    if result.status in ("needs_retry", "needs_review"):
        catalog.update_marking_fields(marking.marking_id, annotation_status=result.status)
        return

    fragments = []
    for sub in result.sub_markings:
        if sub.kind == "symbolic":
            fragments.append(f"symbol:{sub.symbol_name} {sub.description}".strip())
        else:
            fragments.append(sub.description)
    primary = result.sub_markings[0] if result.sub_markings else None
    fields: dict = {
        "legibility": "legible",
        "rotation": result.rotation_applied,
        "description": " ; ".join(fragments) if fragments else None,
        "annotation_status": "needs_review" if result.needs_review else "annotated",
    }
    if primary is not None:
        fields.update(
            kind=primary.kind, text=primary.text, symbol_name=primary.symbol_name
        )
    catalog.update_marking_fields(marking.marking_id, **fields)


def annotate_batch(
    catalog: Catalog,
    marking_ids: Sequence[str],
    annotator: Annotator,
    force: bool = False,
    concurrency: int = 1,
) -> BatchSummary:
    """Annotate markings and apply results in deterministic sorted order.

    Backend calls run under a bounded worker pool; catalog writes and
    audit flushes happen sequentially afterwards, so output is identical
    for any concurrency level.  Already-annotated markings are skipped
    unless forced; failures are tallied, never fatal.  Illegible
    outcomes open review tasks.
    """
    summary = BatchSummary()
    illegible_ids = []
    pending: list[Marking] = []
    for marking_id in sorted(marking_ids):
        marking = catalog.get_marking(marking_id)
        if not force and marking.annotation_status in _DONE_STATUSES:
            summary.skipped += 1
            continue
        pending.append(marking)

    results: list[AnnotationResult]
    if concurrency > 1 and len(pending) > 1:
        from concurrent.futures import ThreadPoolExecutor

        hold = _BufferedAnnotator(annotator)
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(hold.annotate, pending))
        hold.flush(annotator)
    else:
        results = [annotator.annotate(marking) for marking in pending]

    for result in results:
        marking_id = result.marking_id
        apply_result(catalog, result)
        if result.status == "annotated" and result.needs_review:
            summary.needs_review += 1
            summary.failures.append(marking_id)
        elif result.status == "annotated":
            summary.annotated += 1
        elif result.status == "no_marking":
            summary.no_marking += 1
        elif result.status == "illegible":
            summary.illegible += 1
            illegible_ids.append(marking_id)
        elif result.status == "needs_retry":
            summary.needs_retry += 1
            summary.failures.append(marking_id)
        else:
            summary.needs_review += 1
            summary.failures.append(marking_id)
    if illegible_ids:
        catalog.create_tasks("illegible_review", illegible_ids)
    return summary


def reconcile_with_propagation(catalog: Catalog, marking_id: str) -> Marking:
    """Re-resolve stage from all label sources on one marking.

    Precedence is human > propagated > vlm; the losing source's verdict
    stays in the label history and a conflict record is logged.  Backend
    text and descriptions are never discarded by reconciliation.
    """
    marking = catalog.get_marking(marking_id)
    catalog.resolve_stage(marking)
    return catalog.update_marking_fields(marking_id, stage=marking.stage)
