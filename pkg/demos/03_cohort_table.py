"""Per-partition cohort statistics for the stored NBPDB-shaped fixture.

The fixture lists subjects with their demographics, mean labels and segment
counts per partition; this expands it and prints the summary block for each.

    python demos/03_cohort_table.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from conftest import nbpdb_partitions  # noqa: E402
from ppgbench.curation import summarize_cohort  # noqa: E402

total = 0
for name, part in nbpdb_partitions().items():
    s = summarize_cohort(part)
    total += s.n_segments
    print(f"== {name}")
    print(s.to_text())
print(f"segments over all partitions: {total}")
