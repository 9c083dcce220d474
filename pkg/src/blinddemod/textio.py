"""Plain-text serialization for matrices and key-value blocks.

Matrix files look like::

    # key: value          (optional metadata lines)
    # 3 4 complex
    1.5,0 0,-2 ...

Every entry is written as a ``re,im`` pair with 17 significant digits so a
write/read cycle reproduces the float64 values exactly.
"""

from __future__ import annotations

import io
import os
import re
from typing import Any, Mapping

import numpy as np

_DIMS = re.compile(r"^#\s*(\d+)\s+(\d+)\s+complex\s*$")


def _fmt(x: float) -> str:
    return "%.17g" % x


def format_value(value: Any) -> str:
    """Render a scalar or a short sequence as a single deterministic token."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _fmt(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(format_value(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def write_matrix(path_or_file, matrix, meta: Mapping[str, Any] | None = None) -> None:
    """Write a (complex) matrix; 1-D input is stored as a single column."""
    arr = np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got shape {arr.shape}")
    arr = arr.astype(complex)
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {format_value(value)}\n")
    buf.write(f"# {arr.shape[0]} {arr.shape[1]} complex\n")
    for row in arr:
        buf.write(" ".join(f"{_fmt(v.real)},{_fmt(v.imag)}" for v in row))
        buf.write("\n")
    _write_text(path_or_file, buf.getvalue())


def read_matrix(path_or_file) -> tuple[np.ndarray, dict[str, str]]:
    """Read a matrix written by :func:`write_matrix`.

    Returns the complex array and the metadata as raw strings.
    """
    text = _read_text(path_or_file)
    meta: dict[str, str] = {}
    dims = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _DIMS.match(line)
            if m:
                dims = (int(m.group(1)), int(m.group(2)))
            elif ":" in line:
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            continue
        if dims is None:
            raise ValueError(f"line {lineno}: data before the '# rows cols complex' header")
        try:
            row = [complex(float(re_), float(im)) for re_, im in
                   (tok.split(",") for tok in line.split())]
        except ValueError as exc:
            raise ValueError(f"line {lineno}: malformed entry ({exc})") from None
        rows.append(row)
    if dims is None:
        raise ValueError("missing '# rows cols complex' header")
    if dims[0] == 0 or dims[1] == 0:
        return np.zeros(dims, dtype=complex), meta
    arr = np.array(rows, dtype=complex)
    if arr.shape != dims:
        raise ValueError(f"header says {dims} but found {arr.shape}")
    return arr, meta


def write_kv(path_or_file, items: Mapping[str, Any], comments: list[str] | None = None) -> None:
    """Write a flat ``key = value`` block."""
    buf = io.StringIO()
    for c in comments or []:
        buf.write(f"# {c}\n")
    for key, value in items.items():
        buf.write(f"{key} = {format_value(value)}\n")
    _write_text(path_or_file, buf.getvalue())


def read_kv(path_or_file) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in _read_text(path_or_file).splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"not a key = value line: {line!r}")
        out[key.strip()] = value.strip()
    return out


def parse_float_list(value: str) -> list[float]:
    return [float(v) for v in value.split()] if value and value != "none" else []


def parse_int_list(value: str) -> list[int]:
    return [int(v) for v in value.split()] if value and value != "none" else []


def _write_text(path_or_file, text: str) -> None:
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
        return
    with open(os.fspath(path_or_file), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_text(path_or_file) -> str:
    if hasattr(path_or_file, "read"):
        return path_or_file.read()
    with open(os.fspath(path_or_file), encoding="utf-8") as fh:
        return fh.read()
