"""Signature indexing, cross-seizure links, frequency and sequence search.

A signature key is the normalized content of a marking; markings made
after seizure and illegible markings carry no key, which keeps
cataloging noise out of the forensic analysis.  Links between seizures
are reported per exact seizure set, never transitively.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .catalog import Catalog, Marking

# Off by default; folds glyphs commonly confused in handwriting.
CONFUSABLE_MAP = str.maketrans({"0": "O", "1": "I", "8": "B", "5": "S"})

LAMBDA_CHARS = ("λ", "Λ")  # lambda / Lambda
LAMBDA_TOKEN = "lambda"

INITIAL_PAIR_LENGTH = 2


def normalize_key(marking: Marking, fold_confusables: bool = False) -> str | None:
    """Canonical signature key, or None for markings excluded from analysis.

    Textual content is uppercased with all whitespace removed; symbol
    names are lowercased with whitespace collapsed.  Post-seizure and
    illegible markings return None.
    """
    if marking.stage == "post_seizure" or marking.legibility == "illegible":
        return None
    if marking.kind == "textual" and marking.text:
        key = "".join(marking.text.split()).upper()
        if fold_confusables:
            key = key.translate(CONFUSABLE_MAP)
        return key or None
    if marking.kind == "symbolic" and marking.symbol_name:
        key = " ".join(marking.symbol_name.split()).lower()
        return key or None
    return None


def _category(key: str, kind: str) -> str:
    if kind == "symbolic":
        return "symbol"
    if len(key) == INITIAL_PAIR_LENGTH and key.isalpha():
        return "initial_pair"
    return "longer_text"


@dataclass
class SignatureGroup:
    key: str
    category: str
    occurrences: dict[int, int] = field(default_factory=dict)
    example_marking_ids: list[str] = field(default_factory=list)
    recurring: bool = False

    @property
    def total(self) -> int:
        return sum(self.occurrences.values())

    @property
    def seizure_set(self) -> tuple[int, ...]:
        return tuple(sorted(self.occurrences))


def build_signature_index(
    catalog: Catalog,
    fold_confusables: bool = False,
    recurrence_threshold: int = 2,
    max_examples: int = 5,
) -> list[SignatureGroup]:
    """Group markings by normalized key with per-seizure occurrence counts.

    Counts are photo-level: a tusk photographed twice contributes twice.
    Singleton keys stay in the index flagged non-recurring.
    """
    groups: dict[str, SignatureGroup] = {}
    for marking_id in sorted(catalog.markings):
        marking = catalog.markings[marking_id]
        key = normalize_key(marking, fold_confusables)
        if key is None:
            continue
        group = groups.get(key)
        if group is None:
            group = SignatureGroup(key=key, category=_category(key, marking.kind))
            groups[key] = group
        seizure = catalog.seizure_of(marking)
        group.occurrences[seizure] = group.occurrences.get(seizure, 0) + 1
        if len(group.example_marking_ids) < max_examples:
            group.example_marking_ids.append(marking_id)
    out = sorted(groups.values(), key=lambda g: (-g.total, g.key))
    for group in out:
        group.recurring = group.total >= recurrence_threshold
    return out


@dataclass
class LinkReport:
    seizure_set: tuple[int, ...]
    shared_signatures: list[str]
    evidence_kind: str = "signature_match"


def cross_seizure_links(index: Sequence[SignatureGroup]) -> list[LinkReport]:
    """One report per exact seizure set sharing signatures.

    A signature present in seizures {2, 5, 8} contributes only to the
    (2, 5, 8) report, not to its pairwise subsets; higher-order
    combinations are separate evidence, not transitive closures.
    """
    by_set: dict[tuple[int, ...], list[str]] = {}
    for group in index:
        seizures = group.seizure_set
        if len(seizures) < 2:
            continue
        by_set.setdefault(seizures, []).append(group.key)
    return [
        LinkReport(seizure_set=s, shared_signatures=sorted(keys))
        for s, keys in sorted(by_set.items(), key=lambda kv: (len(kv[0]), kv[0]))
    ]


@dataclass
class FrequencyStats:
    category: str
    unique_keys: int
    total_occurrences: int
    high_frequency_threshold: int
    high_frequency_keys: int
    high_frequency_occurrences: int
    top: list[tuple[str, int]]

    @property
    def high_frequency_key_share(self) -> float:
        return self.high_frequency_keys / self.unique_keys if self.unique_keys else 0.0

    @property
    def high_frequency_occurrence_share(self) -> float:
        if not self.total_occurrences:
            return 0.0
        return self.high_frequency_occurrences / self.total_occurrences


def frequency_stats(
    index: Sequence[SignatureGroup],
    category: str = "initial_pair",
    threshold: int = 10,
    top_k: int = 10,
) -> FrequencyStats:
    """Distribution of occurrence counts within one signature category."""
    groups = [g for g in index if g.category == category]
    counts = sorted(((g.key, g.total) for g in groups), key=lambda kv: (-kv[1], kv[0]))
    high = [(k, n) for k, n in counts if n >= threshold]
    return FrequencyStats(
        category=category,
        unique_keys=len(groups),
        total_occurrences=sum(n for _, n in counts),
        high_frequency_threshold=threshold,
        high_frequency_keys=len(high),
        high_frequency_occurrences=sum(n for _, n in high),
        top=counts[:top_k],
    )


@dataclass
class XoMatch:
    marking_id: str
    sequence: str
    pure_x: bool
    xo_sequence: bool
    lambda_terminated: bool
    partial: bool


def find_xo_sequences(catalog: Catalog, fold_confusables: bool = False) -> list[XoMatch]:
    """Find X/O character runs in normalized marking text.

    A run is a maximal substring over {X, O} containing at least one X.
    Lambda termination is detected from a lambda glyph directly after
    the run, with the marking description searched for a lambda token
    as fallback.  Runs on crops touching the photo edge are flagged
    partial: they may continue beyond the frame.
    """
    out: list[XoMatch] = []
    for marking_id in sorted(catalog.markings):
        marking = catalog.markings[marking_id]
        key = normalize_key(marking, fold_confusables)
        if key is None or marking.kind != "textual":
            continue
        image = catalog.images[marking.image_id]
        b = marking.bbox
        partial = (
            b.x_min <= 0 or b.y_min <= 0 or b.x_max >= image.width_px or b.y_max >= image.height_px
        )
        description = (marking.description or "").lower()
        for match in re.finditer(r"[XO]+", key):
            run = match.group(0)
            if "X" not in run:
                continue
            follow = key[match.end() : match.end() + 1]
            lambda_terminated = follow in LAMBDA_CHARS or (
                match.end() == len(key) and LAMBDA_TOKEN in description
            )
            out.append(
                XoMatch(
                    marking_id=marking_id,
                    sequence=run,
                    pure_x=set(run) == {"X"},
                    xo_sequence={"X", "O"} <= set(run),
                    lambda_terminated=lambda_terminated,
                    partial=partial,
                )
            )
    return out


def lambda_variant_links(catalog: Catalog, matches: Sequence[XoMatch]) -> list[LinkReport]:
    """Seizure sets sharing the lambda-terminated X/O variant."""
    seizures = sorted(
        {
            catalog.seizure_of(catalog.get_marking(m.marking_id))
            for m in matches
            if m.lambda_terminated
        }
    )
    if len(seizures) < 2:
        return []
    return [
        LinkReport(
            seizure_set=tuple(seizures),
            shared_signatures=["lambda-terminated X/O sequence"],
            evidence_kind="xo_variant",
        )
    ]


@dataclass
class SearchHit:
    marking: Marking
    score: int


def search_descriptions(catalog: Catalog, query: str) -> list[SearchHit]:
    """Token search over text and description fields.

    Every query token must appear (case-insensitive substring); hits are
    ranked by total token occurrences, then marking id.
    """
    tokens = [t for t in query.lower().split() if t]
    if not tokens:
        return []
    hits: list[SearchHit] = []
    for marking_id in sorted(catalog.markings):
        marking = catalog.markings[marking_id]
        haystack = " ".join(
            part for part in (marking.text, marking.description, marking.symbol_name) if part
        ).lower()
        if not haystack:
            continue
        per_token = [haystack.count(token) for token in tokens]
        if all(count > 0 for count in per_token):
            hits.append(SearchHit(marking=marking, score=sum(per_token)))
    hits.sort(key=lambda h: (-h.score, h.marking.marking_id))
    return hits


def format_link_table(
    links: Sequence[LinkReport], counts: Counter | None = None
) -> str:
    """Plain-text table in the published layout: seizure set + evidence."""
    lines = ["Seizures   Handwriting Evidence", "-" * 44]
    for link in links:
        seizures = "+".join(str(s) for s in link.seizure_set)
        if link.evidence_kind == "xo_variant":
            evidence = link.shared_signatures[0]
        else:
            n = len(link.shared_signatures)
            evidence = f"{n} shared signature marking" + ("s" if n != 1 else "")
        lines.append(f"{seizures:<10} {evidence}")
    return "\n".join(lines)


def format_occurrence_matrix(index: Sequence[SignatureGroup], seizures: Sequence[int]) -> str:
    """Occurrence counts per seizure for multi-seizure signatures."""
    multi = [g for g in index if len(g.seizure_set) >= 2]
    multi.sort(key=lambda g: (-g.total, g.key))
    header = f"{'Marking':<24}" + "".join(f"{s:>6}" for s in seizures)
    lines = [header, "-" * len(header)]
    for g in multi:
        row = f"{g.key:<24}" + "".join(f"{g.occurrences.get(s, 0):>6}" for s in seizures)
        lines.append(row)
    return "\n".join(lines)
