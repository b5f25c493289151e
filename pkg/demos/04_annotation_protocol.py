"""Trace the backend annotation protocol on three scripted crops.

The orchestrator asks at most: presence, legibility, an orientation
vote over four rotations, how many distinct markings, then one
content-and-style query per sub-marking. Negative verdicts
short-circuit: a false-positive crop costs one call, an illegible one
two.
"""

from tuskmark.annotate import Annotator, ScriptedBackend
from tuskmark.catalog import Catalog, ImageRecord, LogicalClock, Marking, marking_id_for
from tuskmark.geometry import BoundingBox
import tempfile

transcripts = {
    "false positive": {"presence": "no"},
    "illegible": {"presence": "yes", "legibility": "illegible"},
    "xo with lambda": {
        "presence": "yes",
        "legibility": "legible",
        "orientation": "90",
        "multiplicity": "2",
        "submarking_1": "textual|XOXO|alternating tall crosses and rings",
        "submarking_2": "symbolic|lambda|angular symbol resembling a lambda",
    },
}

with tempfile.TemporaryDirectory() as tmp:
    catalog = Catalog(f"{tmp}/catalog", clock=LogicalClock())
    catalog.add_images([ImageRecord("photo", 2, "photo.png", 400, 400)])
    markings = {}
    for i, name in enumerate(transcripts):
        bbox = BoundingBox(i * 60, 0, i * 60 + 50, 40)
        marking = Marking(
            marking_id=marking_id_for("photo", bbox), image_id="photo", bbox=bbox
        )
        markings[name] = marking
    catalog.upsert_markings(list(markings.values()))

    for name, script in transcripts.items():
        backend = ScriptedBackend({markings[name].marking_id: script})
        audit = []
        annotator = Annotator(
            backend=backend, crop_loader=lambda m, r: b"", audit_sink=audit.append
        )
        result = annotator.annotate(markings[name])
        print(f"{name}:")
        print(f"  status: {result.status}, backend calls: {backend.calls}")
        for entry in audit:
            print(f"    [{entry['step']}] -> {entry['response']}")
        for sub in result.sub_markings:
            content = sub.text if sub.kind == "textual" else sub.symbol_name
            print(f"  sub-marking: {sub.kind} {content!r} ({sub.description})")
        print()
