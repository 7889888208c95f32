"""Flat key=value files and sectioned polynomial files."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .poly import Polynomial


def fmt_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(fmt_value(a) for a in np.asarray(v).ravel().tolist())
    return str(v)


def floats(s: str) -> tuple:
    return tuple(float(a) for a in s.split(",") if a.strip())


def parse_keyvalue_lines(lines: Iterable[str], source: str = "<text>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_keyvalue(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_keyvalue_lines(fh, str(path))


def write_keyvalue(path, values: dict, comments: dict | None = None) -> None:
    comments = comments or {}
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in values.items():
            if k in comments:
                fh.write(f"# {comments[k]}\n")
            fh.write(f"{k}={fmt_value(v)}\n")


def write_sections(path, header: dict, polys: dict[str, Polynomial], footer: dict | None = None) -> None:
    """Header key=value lines, then ``[name]`` sections of polynomial text, then a footer."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in header.items():
            fh.write(f"{k}={fmt_value(v)}\n")
        for name, p in polys.items():
            fh.write(f"[{name}]\n")
            text = p.to_text()
            if text:
                fh.write(text + "\n")
        if footer:
            fh.write("[footer]\n")
            for k, v in footer.items():
                fh.write(f"{k}={fmt_value(v)}\n")


def read_sections(path) -> tuple[dict, dict[str, Polynomial], dict]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header_lines, sections, current = [], {}, None
    for line in lines:
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1]
            sections[current] = []
        elif current is None:
            header_lines.append(line)
        else:
            sections[current].append(line)
    header = parse_keyvalue_lines(header_lines, str(path))
    nvars = int(header["nvars"])
    footer = parse_keyvalue_lines(sections.pop("footer", []), str(path))
    polys = {k: Polynomial.from_text("\n".join(v), nvars) for k, v in sections.items()}
    return header, polys, footer
