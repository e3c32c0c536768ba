"""CSV output with a provenance comment line.

Files are written to ``<path>.partial`` and renamed on success, so a
crashed or interrupted run never leaves a file that looks complete.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__

__all__ = ["config_hash", "csv_writer", "write_csv", "file_sha256", "read_csv"]


def config_hash(config: dict) -> str:
    """Short SHA-256 of a canonical JSON dump of ``config``."""
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@contextmanager
def csv_writer(path, header: Sequence[str], config: dict, seed):
    """Yield a ``csv.writer``; the file appears under ``path`` only if the
    block finishes without raising."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    with open(partial, "w", newline="") as fh:
        fh.write(f"# wfeff {__version__} config={config_hash(config)} seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        yield w
    os.replace(partial, path)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], config: dict, seed) -> Path:
    with csv_writer(path, header, config, seed) as w:
        for r in rows:
            w.writerow(r)
    return Path(path)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]
