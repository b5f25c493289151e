"""Build the signature index and link report on the bundled matrix fixture.

The fixture catalog reproduces the structure of the published
cross-seizure results: 20 signature markings spanning five seizures,
lambda-terminated X/O sequences in seizures 2 and 3, and post-seizure
noise the index must exclude.
"""

import tempfile

from tuskmark.analysis import (
    build_signature_index,
    cross_seizure_links,
    find_xo_sequences,
    format_link_table,
    format_occurrence_matrix,
    frequency_stats,
    lambda_variant_links,
    search_descriptions,
)
from tuskmark.fixtures import build_frequency_catalog, build_signature_matrix_catalog

with tempfile.TemporaryDirectory() as tmp:
    catalog = build_signature_matrix_catalog(f"{tmp}/matrix")
    index = build_signature_index(catalog)
    print(f"signature groups: {len(index)} "
          f"({sum(1 for g in index if g.recurring)} recurring)\n")

    print(format_occurrence_matrix(index, seizures=catalog.seizures())[:600])
    print("  ...\n")

    links = cross_seizure_links(index)
    xo = find_xo_sequences(catalog)
    links += lambda_variant_links(catalog, xo)
    print(format_link_table(links))

    print("\nsearch 'BB' ->",
          [h.marking.text for h in search_descriptions(catalog, "BB")][:5], "...")

    freq_catalog = build_frequency_catalog(f"{tmp}/freq")
    stats = frequency_stats(build_signature_index(freq_catalog), threshold=10)
    print(
        f"\ninitial pairs: {stats.unique_keys} keys, {stats.total_occurrences} occurrences; "
        f"{stats.high_frequency_keys} keys at >= {stats.high_frequency_threshold} "
        f"({stats.high_frequency_key_share:.1%} of keys) account for "
        f"{stats.high_frequency_occurrences} occurrences "
        f"({stats.high_frequency_occurrence_share:.1%})"
    )
    print(f"two most common: {stats.top[0][1]} and {stats.top[1][1]} occurrences")
