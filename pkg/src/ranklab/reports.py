"""Delimited output helpers.

Every CSV written by the toolkit starts with one comment line holding the
full parameterization as JSON, so files are self-describing.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

__all__ = ["write_csv", "read_csv"]


def write_csv(
    path: str | Path,
    fieldnames: Sequence[str],
    rows: Sequence[Mapping[str, object]],
    metadata: Mapping[str, object],
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write("# " + json.dumps(dict(metadata), sort_keys=True) + "\n")
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path: str | Path) -> tuple[dict, list[dict[str, str]]]:
    """Read back a toolkit CSV: (metadata, rows as string dicts)."""
    with open(path, "r", newline="", encoding="utf-8") as handle:
        first = handle.readline()
        metadata = json.loads(first[1:].strip()) if first.startswith("#") else {}
        if not first.startswith("#"):
            handle.seek(0)
        return metadata, list(csv.DictReader(handle))
