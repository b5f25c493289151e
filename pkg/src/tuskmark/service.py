"""HTTP facade over the catalog for the human review workflow.

Serves labeling queues, records reviewer decisions, streams marking
crops, and exposes read-only signature reports for the browser UI.
Writes funnel through the catalog's single-writer contract and are
durable on disk before the response returns.  No authentication layer:
deployments front this with their own access controls.
"""

from __future__ import annotations

import io
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .analysis import build_signature_index, cross_seizure_links
from .catalog import QUEUES, ROTATIONS, Catalog, CatalogError, Marking, TaskConflictError


class LabelSubmission(BaseModel):
    task_id: str
    reviewer: str
    label: str | None = None
    corrected_text: str | None = None
    skip: bool = False


def _marking_payload(catalog: Catalog, marking: Marking) -> dict:
    return {
        "marking_id": marking.marking_id,
        "image_id": marking.image_id,
        "seizure": catalog.seizure_of(marking),
        "bbox": list(marking.bbox.as_tuple()),
        "rotation": marking.rotation,
        "stage": marking.stage,
        "legibility": marking.legibility,
        "kind": marking.kind,
        "text": marking.text,
        "symbol_name": marking.symbol_name,
        "description": marking.description,
        "annotation_status": marking.annotation_status,
        "labels": [a.to_record() for a in marking.labels],
    }


def create_app(
    catalog: Catalog,
    image_root: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="tuskmark review service")
    root = Path(image_root) if image_root else None

    def resolve_image_path(image_id: str) -> Path:
        record = catalog.images[image_id]
        path = Path(record.uri)
        if root is not None and not path.is_absolute():
            path = root / path
        return path

    @app.get("/api/queue/{name}")
    def get_queue(name: str, seizure: int | None = None, limit: int | None = None):
        if name not in QUEUES:
            raise HTTPException(status_code=404, detail=f"unknown queue {name!r}")
        tasks = catalog.open_tasks(name, seizure=seizure, limit=limit)
        return [
            {
                "task_id": t.task_id,
                "marking_id": t.marking_id,
                "queue": t.queue,
                "status": t.status,
                "created_at": t.created_at,
                "marking": _marking_payload(catalog, catalog.get_marking(t.marking_id)),
            }
            for t in tasks
        ]

    @app.post("/api/labels")
    def post_label(submission: LabelSubmission):
        try:
            task = catalog.complete_task(
                submission.task_id,
                reviewer=submission.reviewer,
                label=submission.label,
                corrected_text=submission.corrected_text,
                skip=submission.skip,
            )
        except TaskConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except CatalogError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "task_id": task.task_id,
            "marking_id": task.marking_id,
            "status": task.status,
            "assigned_label": task.assigned_label,
            "corrected_text": task.corrected_text,
            "reviewer": task.reviewer,
            "decided_at": task.decided_at,
        }

    @app.get("/api/markings/{marking_id}")
    def get_marking(marking_id: str):
        try:
            marking = catalog.get_marking(marking_id)
        except CatalogError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return _marking_payload(catalog, marking)

    @app.get("/api/markings/{marking_id}/crop")
    def get_crop(marking_id: str, rotation: int = 0):
        from PIL import Image

        if rotation not in ROTATIONS:
            raise HTTPException(status_code=422, detail=f"rotation must be one of {ROTATIONS}")
        try:
            marking = catalog.get_marking(marking_id)
        except CatalogError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        path = resolve_image_path(marking.image_id)
        if not path.exists():
            raise HTTPException(
                status_code=404, detail=f"source image missing: {marking.image_id} ({path})"
            )
        with Image.open(path) as img:
            b = marking.bbox
            crop = img.crop((int(b.x_min), int(b.y_min), int(b.x_max), int(b.y_max)))
            if rotation:
                crop = crop.rotate(-rotation, expand=True)
            buffer = io.BytesIO()
            crop.save(buffer, format="PNG")
        return Response(content=buffer.getvalue(), media_type="image/png")

    @app.get("/api/labels/vocabulary")
    def get_vocabulary():
        return catalog.label_vocabulary()

    @app.get("/api/seizures")
    def get_seizures():
        return catalog.seizures()

    @app.get("/api/signatures")
    def get_signatures():
        index = build_signature_index(catalog)
        return [
            {
                "key": g.key,
                "category": g.category,
                "occurrences": {str(s): n for s, n in sorted(g.occurrences.items())},
                "total": g.total,
                "recurring": g.recurring,
                "example_marking_ids": g.example_marking_ids,
            }
            for g in index
        ]

    @app.get("/api/links")
    def get_links():
        index = build_signature_index(catalog)
        return [
            {
                "seizures": list(link.seizure_set),
                "shared_signatures": link.shared_signatures,
                "evidence_kind": link.evidence_kind,
            }
            for link in cross_seizure_links(index)
        ]

    @app.exception_handler(CatalogError)
    def catalog_error_handler(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:

        @app.get("/")
        def index_page():
            return {"service": "tuskmark", "ui": "not bundled"}

    return app


def run_service(
    catalog: Catalog,
    host: str,
    port: int,
    image_root: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> None:
    import uvicorn

    app = create_app(catalog, image_root=image_root, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
