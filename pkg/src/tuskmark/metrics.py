"""Transcription and agreement metrics for label audits.

Character error rate grades backend transcriptions against reviewer
ground truth; Krippendorff's alpha measures chance-corrected agreement
between reviewers; sampled precision audits label assignments.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(reference: str, hypothesis: str, case_sensitive: bool = False) -> float:
    """Edit distance divided by reference length.

    Case-folded by default: tusk handwriting carries no reliable case
    semantics.
    """
    if not reference:
        raise ValueError("reference must be non-empty")
    if not case_sensitive:
        reference, hypothesis = reference.casefold(), hypothesis.casefold()
    return edit_distance(reference, hypothesis) / len(reference)


@dataclass
class CorpusCer:
    """Length-weighted CER, overall and split by reference length 1 vs >1.

    The per-pair mean (`macro_average`) is reported alongside for
    comparison; the headline rate is the length-weighted one.
    """

    overall: float | None
    single_char: float | None
    multi_char: float | None
    macro_average: float | None
    pair_count: int
    total_edits: int
    total_reference_length: int


def corpus_cer(
    pairs: Sequence[tuple[str, str]], case_sensitive: bool = False
) -> CorpusCer:
    """Aggregate CER as total edits over total reference length.

    Strata with no pairs report None rather than a silent 0.
    """
    if not pairs:
        raise ValueError("no pairs to score")
    edits = {"all": 0, "single": 0, "multi": 0}
    lengths = {"all": 0, "single": 0, "multi": 0}
    per_pair_rates = []
    for reference, hypothesis in pairs:
        if not reference:
            raise ValueError("reference must be non-empty")
        if not case_sensitive:
            reference, hypothesis = reference.casefold(), hypothesis.casefold()
        d = edit_distance(reference, hypothesis)
        per_pair_rates.append(d / len(reference))
        stratum = "single" if len(reference) == 1 else "multi"
        for key in ("all", stratum):
            edits[key] += d
            lengths[key] += len(reference)

    def rate(key: str) -> float | None:
        return edits[key] / lengths[key] if lengths[key] else None

    return CorpusCer(
        overall=rate("all"),
        single_char=rate("single"),
        multi_char=rate("multi"),
        macro_average=sum(per_pair_rates) / len(per_pair_rates),
        pair_count=len(pairs),
        total_edits=edits["all"],
        total_reference_length=lengths["all"],
    )


@dataclass
class RatingMatrix:
    """Sparse (item, rater) -> category ratings."""

    ratings: dict[tuple[Hashable, Hashable], Hashable] = field(default_factory=dict)

    def add(self, item: Hashable, rater: Hashable, category: Hashable) -> None:
        self.ratings[(item, rater)] = category

    @property
    def raters(self) -> set[Hashable]:
        return {rater for _, rater in self.ratings}

    def by_item(self) -> dict[Hashable, list[Hashable]]:
        units: dict[Hashable, list[Hashable]] = {}
        for (item, _), category in sorted(self.ratings.items(), key=lambda kv: repr(kv[0])):
            units.setdefault(item, []).append(category)
        return units

    def validate(self) -> None:
        if len(self.raters) < 2:
            raise ValueError("need at least 2 raters")
        if not any(len(v) >= 2 for v in self.by_item().values()):
            raise ValueError("need at least one item rated by 2+ raters")


@dataclass
class AlphaResult:
    value: float | None
    undefined_perfect: bool = False
    pairable_values: int = 0


def krippendorff_alpha(matrix: RatingMatrix) -> AlphaResult:
    """Nominal-metric Krippendorff's alpha via the coincidence matrix.

    Items with fewer than two ratings are excluded (missing ratings are
    simply absent pairs).  When every pairable rating falls in one
    category the expected disagreement is zero and alpha is reported as
    undefined-perfect instead of a fabricated 1.0 or 0.0.
    """
    matrix.validate()
    units = {item: vals for item, vals in matrix.by_item().items() if len(vals) >= 2}

    coincidence: dict[tuple[Hashable, Hashable], float] = {}
    for values in units.values():
        m = len(values)
        for i, a in enumerate(values):
            for j, b in enumerate(values):
                if i != j:
                    coincidence[(a, b)] = coincidence.get((a, b), 0.0) + 1.0 / (m - 1)

    marginals: Counter = Counter()
    for (a, _), weight in coincidence.items():
        marginals[a] += weight
    n = sum(marginals.values())

    observed = sum(w for (a, b), w in coincidence.items() if a != b)
    expected = sum(
        marginals[a] * marginals[b]
        for a in marginals
        for b in marginals
        if a != b
    ) / (n - 1)

    if expected == 0.0:
        return AlphaResult(value=None, undefined_perfect=True, pairable_values=int(round(n)))
    return AlphaResult(
        value=1.0 - observed / expected, pairable_values=int(round(n))
    )


@dataclass
class PrecisionAudit:
    per_label: dict[str, dict[str, float]]
    sample_size: int
    overall_precision: float | None


def sample_precision(assignments: Iterable[tuple[str, str]]) -> PrecisionAudit:
    """Precision per assigned label from a manually adjudicated sample.

    `assignments` yields (assigned_label, true_label) pairs; a pair is
    correct when the two agree.
    """
    assigned: Counter = Counter()
    correct: Counter = Counter()
    total = 0
    for assigned_label, true_label in assignments:
        assigned[assigned_label] += 1
        if assigned_label == true_label:
            correct[assigned_label] += 1
        total += 1
    if total == 0:
        raise ValueError("empty sample")
    per_label = {
        label: {
            "assigned": float(assigned[label]),
            "correct": float(correct[label]),
            "precision": correct[label] / assigned[label],
        }
        for label in sorted(assigned)
    }
    return PrecisionAudit(
        per_label=per_label,
        sample_size=total,
        overall_precision=sum(correct.values()) / total,
    )
