"""Shared helpers for the plain-text artifact formats."""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


class FormatError(ValueError):
    """A text artifact could not be parsed."""


def fmt(x: float) -> str:
    # 17 significant digits round-trip every float64 exactly
    return format(float(x), ".17g")


def fmt_row(values: Iterable[float]) -> str:
    return " ".join(fmt(v) for v in values)


def data_lines(text: str) -> Iterator[str]:
    """Yield non-empty lines that are not ``#`` comments."""
    for line in text.splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            yield s


def parse_floats(line: str, expected: int | None = None) -> np.ndarray:
    try:
        vals = np.array([float(tok) for tok in line.split()], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"non-numeric token in line: {line[:60]!r}") from exc
    if expected is not None and vals.size != expected:
        raise FormatError(f"expected {expected} values, got {vals.size}")
    return vals


def atomic_write(path: str | os.PathLike, text: str) -> Path:
    """Write ``text`` to a temporary sibling file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def header_fields(text: str) -> dict[str, str]:
    """``# key value`` comment lines as a dict; other comments are ignored."""
    out = {}
    for line in text.splitlines():
        if line.startswith("#"):
            parts = line[1:].split(None, 1)
            if len(parts) == 2:
                out.setdefault(parts[0], parts[1].strip())
    return out
