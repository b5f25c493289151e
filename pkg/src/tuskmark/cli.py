"""Command-line entry point wiring the pipeline end to end.

Stages run in a fixed order: ingest -> postprocess -> sample ->
(human labeling gate) -> propagate -> annotate -> analyze, with
detector evaluation and the review service as side commands.  Every
stage is idempotent and resumable; the labeling gate pauses the
pipeline rather than blocking on a prompt, since review happens over
hours or days in the browser UI.

Exit codes: 0 success (including a pipeline paused at the gate),
2 configuration errors, 3 data errors, 4 unexpected runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis, annotate, detection_eval, geometry, metrics, propagation
from .catalog import Catalog, CatalogError, LogicalClock, Marking, marking_id_for, utc_clock
from .config import ConfigError, PipelineConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def log_event(stage: str, **fields) -> None:
    record = {"stage": stage, **fields}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def open_catalog(config: PipelineConfig) -> Catalog:
    clock = LogicalClock() if config.logical_clock else utc_clock
    return Catalog(config.catalog_dir, clock=clock)


def require_seed(config: PipelineConfig) -> int:
    if config.seed is None:
        raise ConfigError("seed is required for sampling/training commands (--seed or config)")
    return config.seed


# -- stages -----------------------------------------------------------


def stage_ingest(config: PipelineConfig, catalog: Catalog) -> None:
    if not config.manifest:
        raise ConfigError("manifest path not configured")
    report = catalog.ingest_images(config.manifest)
    for line_no, message in report.errors:
        log_event("ingest", level="error", line=line_no, message=message)
    for warning in report.warnings:
        log_event("ingest", level="warning", message=warning)
    log_event("ingest", added=report.added, already_present=report.already_present)


def stage_postprocess(config: PipelineConfig, catalog: Catalog) -> None:
    if not config.detections:
        raise ConfigError("detections path not configured")
    by_image = geometry.read_detections(config.detections)
    unknown = sorted(set(by_image) - set(catalog.images))
    if unknown:
        raise CatalogError(f"detections reference unknown images: {unknown}")
    t = config.thresholds
    totals = {"input": 0, "duplicates": 0, "exteriors": 0, "merged_members": 0,
              "merged_groups": 0, "output": 0, "new_markings": 0}
    new_markings: list[Marking] = []
    for image_id in sorted(by_image):
        record = catalog.images[image_id]
        result = geometry.postprocess(
            by_image[image_id],
            image_size=(record.width_px, record.height_px),
            dedup_iou=t.dedup_iou,
            exterior_coverage=t.exterior_coverage,
            merge_thresholds=t.merge_thresholds(),
        )
        totals["input"] += result.input_count
        totals["duplicates"] += result.duplicates_removed
        totals["exteriors"] += result.exteriors_removed
        totals["merged_members"] += result.merged_members
        totals["merged_groups"] += result.merged_groups
        totals["output"] += len(result.markings)
        for det in result.markings:
            marking_id = marking_id_for(image_id, det.bbox)
            if marking_id in catalog.markings:
                continue  # stage is additive on re-runs; annotations survive
            new_markings.append(
                Marking(marking_id=marking_id, image_id=image_id, bbox=det.bbox)
            )
    if new_markings:
        catalog.upsert_markings(new_markings)
    totals["new_markings"] = len(new_markings)
    log_event("postprocess", **totals)


def stage_sample(config: PipelineConfig, catalog: Catalog) -> int:
    if not catalog.markings:
        raise CatalogError("missing prerequisite stage: no markings in catalog (run ingest and postprocess)")
    seed = require_seed(config)
    t = config.thresholds
    total_open = 0
    for seizure in catalog.seizures():
        sampled = catalog.sample_for_review(
            seizure,
            fraction=t.sample_fraction,
            minimum=t.sample_minimum,
            rng_seed=seed + seizure,
        )
        created = catalog.create_tasks("initial_labeling", sampled, skip_if_ever_tasked=True)
        log_event("sample", seizure=seizure, sampled=len(sampled), tasks_created=len(created))
    total_open = len(catalog.open_tasks("initial_labeling"))
    return total_open


def apply_labels_file(config: PipelineConfig, catalog: Catalog) -> int:
    """Complete open labeling tasks from a pre-recorded labels file."""
    labels: dict[str, str] = {}
    for raw in Path(config.human_labels).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        marking_id, _, label = line.partition("\t")
        if label:
            labels[marking_id] = label
    applied = 0
    for task in list(catalog.open_tasks("initial_labeling")):
        label = labels.get(task.marking_id)
        if label is None:
            continue
        catalog.complete_task(task.task_id, reviewer="labels-file", label=label)
        applied += 1
    log_event("apply_labels", applied=applied)
    return applied


def _human_labeled(catalog: Catalog) -> list[tuple[str, str]]:
    pairs = []
    for marking_id in sorted(catalog.markings):
        for assignment in catalog.markings[marking_id].labels:
            if assignment.source == "human":
                pairs.append((marking_id, assignment.label))
    return pairs


def stage_propagate(config: PipelineConfig, catalog: Catalog, corpus_wide: bool = False) -> None:
    if not config.embeddings:
        raise ConfigError("embeddings path not configured")
    seed = require_seed(config)
    human_pairs = _human_labeled(catalog)
    if not human_pairs:
        raise CatalogError(
            "missing prerequisite stage: no human labels in catalog (run `sample` and label "
            "the queue via `serve`, or provide human_labels in the config)"
        )
    embeddings = propagation.read_embeddings(config.embeddings)
    known = [m for m in embeddings.marking_ids if m in catalog.markings]
    embeddings = embeddings.subset(known)
    t = config.thresholds
    projection = propagation.fit_projection(embeddings, variance_target=t.variance_target)
    projected = propagation.project(projection, embeddings.matrix)
    row_of = {marking_id: i for i, marking_id in enumerate(embeddings.marking_ids)}

    scopes: list[tuple[str, list[str]]] = []
    if corpus_wide:
        scopes.append(("corpus", list(embeddings.marking_ids)))
    else:
        for seizure in catalog.seizures():
            ids = [
                m.marking_id
                for m in catalog.markings_in_seizure(seizure)
                if m.marking_id in row_of
            ]
            scopes.append((f"seizure-{seizure}", ids))

    model_records: dict[str, dict] = {}
    total_assigned = 0
    labeled = {m for m, _ in human_pairs}
    for scope_name, scope_ids in scopes:
        scope_members = set(scope_ids)
        scope_review = [(m, label) for m, label in human_pairs if m in scope_members]
        if not scope_review:
            log_event("propagate", scope=scope_name, skipped="no human labels in scope")
            continue
        review_ids = sorted({m for m, _ in scope_review})
        review_rows = projected[[row_of[m] for m in review_ids]]
        models, warnings = propagation.train_label_models(
            review_rows,
            review_ids,
            scope_review,
            min_fraction=t.label_eligibility,
            c=t.svm_c,
            gamma=t.svm_gamma,
            tol=t.smo_tolerance,
            seed=seed,
        )
        for warning in warnings:
            log_event("propagate", scope=scope_name, level="warning", message=warning)
        unlabeled = [m for m in scope_ids if m not in labeled]
        assigned = propagation.propagate(
            models,
            projected[[row_of[m] for m in unlabeled]],
            unlabeled,
            threshold=t.assignment_probability,
        )
        for item in assigned:
            catalog.add_label(
                item.marking_id, item.label, source="propagated", probability=item.probability
            )
        model_records[scope_name] = propagation.models_to_records(models)
        total_assigned += len(assigned)
        log_event(
            "propagate",
            scope=scope_name,
            models=len(models),
            unlabeled=len(unlabeled),
            assigned=len(assigned),
        )
    models_file = config.resolved_models_file()
    models_file.parent.mkdir(parents=True, exist_ok=True)
    models_file.write_text(
        json.dumps({"schema_version": 1, "scopes": model_records}, sort_keys=True, indent=1),
        encoding="utf-8",
    )
    log_event("propagate", assigned_total=total_assigned, models_file=str(models_file))


def build_backend(config: PipelineConfig):
    if config.backend.kind == "mock":
        if not config.backend.transcript:
            raise ConfigError("mock backend requires backend.transcript")
        return annotate.ScriptedBackend.from_file(config.backend.transcript)
    if not config.backend.url:
        raise ConfigError("http backend requires backend.url")
    return annotate.HttpBackend(config.backend.url)


def stage_annotate(config: PipelineConfig, catalog: Catalog, force: bool = False) -> None:
    if not catalog.markings:
        raise CatalogError("missing prerequisite stage: no markings in catalog (run postprocess)")
    backend = build_backend(config)
    templates = (
        annotate.load_templates(config.backend.templates_dir)
        if config.backend.templates_dir
        else None
    )
    annotator = annotate.Annotator(
        backend=backend,
        crop_loader=annotate.pil_crop_loader(catalog, config.image_root),
        audit_sink=lambda record: catalog.append_log("annotation_audit.ndjson", record),
        templates=templates,
        retries=config.backend.retries,
        backoff_seconds=config.backend.backoff_seconds,
    )
    summary = annotate.annotate_batch(
        catalog,
        sorted(catalog.markings),
        annotator,
        force=force,
        concurrency=config.backend.concurrency,
    )
    log_event("annotate", **summary.as_dict())


def stage_analyze(
    config: PipelineConfig, catalog: Catalog, frequency_category: str = "initial_pair"
) -> dict[str, Path]:
    t = config.thresholds
    reports_dir = config.resolved_reports_dir()
    reports_dir.mkdir(parents=True, exist_ok=True)
    header = "\n".join(config.header_lines())

    index = analysis.build_signature_index(
        catalog, recurrence_threshold=t.signature_recurrence
    )
    links = analysis.cross_seizure_links(index)
    xo = analysis.find_xo_sequences(catalog)
    links += analysis.lambda_variant_links(catalog, xo)
    freq = analysis.frequency_stats(
        index, category=frequency_category, threshold=t.frequency_threshold
    )

    out: dict[str, Path] = {}

    def write(name: str, text: str) -> None:
        path = reports_dir / name
        path.write_text(text, encoding="utf-8")
        out[name] = path

    write(
        "signatures.txt",
        header
        + "\n\n"
        + analysis.format_occurrence_matrix(index, seizures=catalog.seizures())
        + "\n",
    )
    write(
        "signatures.ndjson",
        "".join(
            json.dumps(
                {
                    "key": g.key,
                    "category": g.category,
                    "occurrences": {str(s): n for s, n in sorted(g.occurrences.items())},
                    "total": g.total,
                    "recurring": g.recurring,
                },
                sort_keys=True,
            )
            + "\n"
            for g in index
        ),
    )
    write("links.txt", header + "\n\n" + analysis.format_link_table(links) + "\n")
    write(
        "links.ndjson",
        "".join(
            json.dumps(
                {
                    "seizures": list(link.seizure_set),
                    "shared_signatures": link.shared_signatures,
                    "evidence_kind": link.evidence_kind,
                },
                sort_keys=True,
            )
            + "\n"
            for link in links
        ),
    )
    write(
        "frequency.json",
        json.dumps(
            {
                "category": freq.category,
                "unique_keys": freq.unique_keys,
                "total_occurrences": freq.total_occurrences,
                "high_frequency_threshold": freq.high_frequency_threshold,
                "high_frequency_keys": freq.high_frequency_keys,
                "high_frequency_occurrences": freq.high_frequency_occurrences,
                "high_frequency_key_share": freq.high_frequency_key_share,
                "high_frequency_occurrence_share": freq.high_frequency_occurrence_share,
                "top": freq.top,
            },
            sort_keys=True,
            indent=1,
        )
        + "\n",
    )
    write(
        "xo.ndjson",
        "".join(
            json.dumps(
                {
                    "marking_id": m.marking_id,
                    "sequence": m.sequence,
                    "pure_x": m.pure_x,
                    "xo_sequence": m.xo_sequence,
                    "lambda_terminated": m.lambda_terminated,
                    "partial": m.partial,
                },
                sort_keys=True,
            )
            + "\n"
            for m in xo
        ),
    )
    log_event("analyze", reports=sorted(out), links=len(links), signatures=len(index))
    return out


def stage_evaluate(config: PipelineConfig, report_path: Path | None = None) -> None:
    if not (config.ground_truth and config.predictions):
        raise ConfigError("evaluate requires ground_truth and predictions paths")
    gt = geometry.read_detections(config.ground_truth)
    preds = geometry.read_detections(config.predictions)
    result = detection_eval.evaluate_corpus(gt, preds, threshold=config.thresholds.eval_coverage)
    text = "\n".join(config.header_lines()) + "\n\n" + detection_eval.format_report(result) + "\n"
    print(text)
    if report_path is None:
        report_path = config.resolved_reports_dir() / "detector_eval.txt"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(text, encoding="utf-8")
    records_path = report_path.with_suffix(".ndjson")
    with open(records_path, "w", encoding="utf-8") as fh:
        for image_id, image_result in sorted(result.per_image.items()):
            for item in image_result.per_item:
                fh.write(
                    json.dumps(
                        {
                            "image_id": image_id,
                            "kind": item.kind,
                            "index": item.index,
                            "verdict": item.verdict,
                            "coverage": item.coverage,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
    totals = result.totals
    log_event(
        "evaluate",
        tp=totals.true_positives,
        fn=totals.false_negatives,
        fp=totals.false_positives,
        precision=totals.precision,
        recall=totals.recall,
        report=str(report_path),
    )


# -- command wiring ---------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tuskmark",
        description="Marking catalog, labeling, and cross-seizure link analysis",
    )
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--catalog-dir", help="catalog directory override")
    parser.add_argument("--image-root", help="image root override")
    parser.add_argument("--seed", type=int, help="seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest an image manifest")
    p.add_argument("--manifest")

    p = sub.add_parser("postprocess", help="post-process raw detections into markings")
    p.add_argument("--detections")
    p.add_argument("--dedup-iou", type=float)
    p.add_argument("--exterior-coverage", type=float)

    p = sub.add_parser("evaluate", help="score detector output against ground truth")
    p.add_argument("--gt")
    p.add_argument("--pred")
    p.add_argument("--threshold", type=float)
    p.add_argument("--report")

    p = sub.add_parser("sample", help="sample markings for human review")

    p = sub.add_parser("propagate", help="train label models and propagate")
    p.add_argument("--embeddings")
    p.add_argument("--threshold", type=float, help="assignment probability threshold")
    p.add_argument("--corpus-wide", action="store_true")

    p = sub.add_parser("annotate", help="run the backend annotation protocol")
    p.add_argument("--transcript", help="mock backend transcript file")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("analyze", help="signature/link/frequency/xo reports")
    p.add_argument("what", choices=["signatures", "links", "freq", "xo"])
    p.add_argument("--category", default="initial_pair")
    p.add_argument("--threshold", type=int)

    p = sub.add_parser("search", help="search marking text and descriptions")
    p.add_argument("--query", required=True)

    p = sub.add_parser("metrics", help="transcription/agreement metrics")
    metrics_sub = p.add_subparsers(dest="metric", required=True)
    q = metrics_sub.add_parser("cer")
    q.add_argument("--pairs", required=True, help="TSV reference<TAB>hypothesis")
    q = metrics_sub.add_parser("alpha")
    q.add_argument("--ratings", required=True, help="TSV item<TAB>rater<TAB>category")

    p = sub.add_parser("serve", help="run the review service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--ui-dir")

    p = sub.add_parser("pipeline", help="run all stages in order")
    return parser


def _configure(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    if args.catalog_dir:
        config.catalog_dir = args.catalog_dir
    if args.image_root:
        config.image_root = args.image_root
    if args.seed is not None:
        config.seed = args.seed
    # Per-command flag overrides.
    for flag, target in (
        ("manifest", "manifest"),
        ("detections", "detections"),
        ("embeddings", "embeddings"),
        ("gt", "ground_truth"),
        ("pred", "predictions"),
    ):
        if getattr(args, flag, None):
            setattr(config, target, getattr(args, flag))
    if getattr(args, "transcript", None):
        config.backend.transcript = args.transcript
    if getattr(args, "dedup_iou", None) is not None:
        config.thresholds.dedup_iou = args.dedup_iou
    if getattr(args, "exterior_coverage", None) is not None:
        config.thresholds.exterior_coverage = args.exterior_coverage
    if args.command == "evaluate" and getattr(args, "threshold", None) is not None:
        config.thresholds.eval_coverage = args.threshold
    if args.command == "propagate" and getattr(args, "threshold", None) is not None:
        config.thresholds.assignment_probability = args.threshold
    if getattr(args, "host", None):
        config.service_host = args.host
    if getattr(args, "port", None):
        config.service_port = args.port
    if getattr(args, "ui_dir", None):
        config.ui_dir = args.ui_dir
    config.validate()
    return config


def run_pipeline(config: PipelineConfig) -> int:
    catalog = open_catalog(config)
    stage_ingest(config, catalog)
    stage_postprocess(config, catalog)
    open_count = stage_sample(config, catalog)
    if open_count and config.human_labels:
        apply_labels_file(config, catalog)
        open_count = len(catalog.open_tasks("initial_labeling"))
    if open_count:
        print(
            f"Human labeling gate: {open_count} open review tasks.\n"
            f"Run `tuskmark --config <config> serve` to label the queue in the browser,\n"
            f"then re-run `tuskmark --config <config> pipeline` to resume.",
        )
        log_event("pipeline", gate="labeling", open_tasks=open_count)
        return EXIT_OK
    stage_propagate(config, catalog)
    stage_annotate(config, catalog)
    stage_analyze(config, catalog)
    if config.ground_truth and config.predictions:
        stage_evaluate(config)
    log_event("pipeline", status="complete")
    return EXIT_OK


def dispatch(args: argparse.Namespace, config: PipelineConfig) -> int:
    command = args.command
    if command == "ingest":
        stage_ingest(config, open_catalog(config))
        return EXIT_OK
    if command == "postprocess":
        stage_postprocess(config, open_catalog(config))
        return EXIT_OK
    if command == "evaluate":
        stage_evaluate(config, Path(args.report) if args.report else None)
        return EXIT_OK
    if command == "sample":
        open_count = stage_sample(config, open_catalog(config))
        print(f"open initial_labeling tasks: {open_count}")
        return EXIT_OK
    if command == "propagate":
        stage_propagate(config, open_catalog(config), corpus_wide=args.corpus_wide)
        return EXIT_OK
    if command == "annotate":
        stage_annotate(config, open_catalog(config), force=args.force)
        return EXIT_OK
    if command == "analyze":
        catalog = open_catalog(config)
        if args.threshold is not None:
            if args.what == "freq":
                config.thresholds.frequency_threshold = args.threshold
            else:
                config.thresholds.signature_recurrence = args.threshold
        reports = stage_analyze(config, catalog, frequency_category=args.category)
        chosen = {
            "signatures": "signatures.txt",
            "links": "links.txt",
            "freq": "frequency.json",
            "xo": "xo.ndjson",
        }[args.what]
        print(reports[chosen].read_text(encoding="utf-8"))
        return EXIT_OK
    if command == "search":
        catalog = open_catalog(config)
        hits = analysis.search_descriptions(catalog, args.query)
        for hit in hits:
            m = hit.marking
            print(f"{m.marking_id}\tscore={hit.score}\ttext={m.text or ''}\t{m.description or ''}")
        log_event("search", query=args.query, hits=len(hits))
        return EXIT_OK
    if command == "metrics":
        return run_metrics(args)
    if command == "serve":
        from .service import run_service

        catalog = Catalog(config.catalog_dir)  # wall-clock timestamps for live review
        run_service(
            catalog,
            host=config.service_host,
            port=config.service_port,
            image_root=config.image_root,
            ui_dir=config.ui_dir,
        )
        return EXIT_OK
    if command == "pipeline":
        return run_pipeline(config)
    raise ConfigError(f"unknown command {command!r}")


def run_metrics(args: argparse.Namespace) -> int:
    if args.metric == "cer":
        pairs = []
        for raw in Path(args.pairs).read_text(encoding="utf-8").splitlines():
            if not raw.strip():
                continue
            reference, _, hypothesis = raw.partition("\t")
            pairs.append((reference, hypothesis))
        result = metrics.corpus_cer(pairs)

        def fmt(v):
            return f"{v:.4f}" if v is not None else "undefined"

        print(f"pairs: {result.pair_count}")
        print(f"overall CER:     {fmt(result.overall)}")
        print(f"single-char CER: {fmt(result.single_char)}")
        print(f"multi-char CER:  {fmt(result.multi_char)}")
        return EXIT_OK
    matrix = metrics.RatingMatrix()
    for raw in Path(args.ratings).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        item, rater, category = raw.split("\t")
        matrix.add(item, rater, category)
    result = metrics.krippendorff_alpha(matrix)
    if result.undefined_perfect:
        print("alpha: undefined (perfect agreement within a single category)")
    else:
        print(f"alpha: {result.value:.4f}")
    print(f"pairable values: {result.pairable_values}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _configure(args)
        return dispatch(args, config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CatalogError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
