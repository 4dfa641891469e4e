"""Result files: CSV rows, JSON summaries, atomic writes and seed derivation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

SCHEMA_VERSION = 1


def derive_seed(seed: int, purpose: str, index: int = 0) -> int:
    """Stable 64-bit seed for the stream named (seed, purpose, index)."""
    digest = hashlib.sha256(f"{int(seed)}\x00{purpose}\x00{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    if hasattr(value, "item"):  # numpy scalar
        return format_cell(value.item())
    return str(value)


def atomic_write(path, data: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OSError(f"writing {path}: {exc.strerror or exc}") from exc


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    if not rows:
        raise ValueError("no rows to write")
    if columns is None:
        columns = list(rows[0])
        for row in rows[1:]:
            columns += [c for c in row if c not in columns]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def emit_csv(rows: list[dict], path, columns: list[str] | None = None) -> None:
    atomic_write(path, rows_to_csv(rows, columns))


def read_csv(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def emit_json(summary: dict, path) -> None:
    atomic_write(path, json.dumps(_jsonable(summary), sort_keys=True, indent=2) + "\n")
