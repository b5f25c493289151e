"""Run the whole pipeline on the bundled synthetic corpus.

Builds a miniature corpus (photos, detections, embeddings, a scripted
backend transcript, pre-recorded review labels), then drives the CLI:
ingest -> postprocess -> sample -> labeling -> propagate -> annotate ->
analyze -> evaluate. Re-running is byte-identical for a fixed seed.
"""

import tempfile
from pathlib import Path

from tuskmark.catalog import Catalog
from tuskmark.cli import main
from tuskmark.fixtures import build_pipeline_corpus

with tempfile.TemporaryDirectory() as tmp:
    corpus = build_pipeline_corpus(Path(tmp) / "corpus")
    print(f"corpus: {len(corpus.planned)} planned markings, config at {corpus.config.name}\n")

    code = main(["--config", str(corpus.config), "pipeline"])
    assert code == 0

    catalog = Catalog(corpus.catalog_dir)
    print(f"\ncatalog: {len(catalog.images)} images, {len(catalog.markings)} markings")
    human = sum(
        1 for m in catalog.markings.values() for a in m.labels if a.source == "human"
    )
    propagated = sum(
        1 for m in catalog.markings.values() for a in m.labels if a.source == "propagated"
    )
    print(f"labels: {human} human, {propagated} propagated (all >= 0.90 probability)")

    print("\n--- links report ---")
    report = (corpus.catalog_dir / "reports" / "links.txt").read_text()
    print(report[report.index("Seizures"):])
