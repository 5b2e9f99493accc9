"""Unicode confusables (homoglyph) table.

Reads the UTS #39 data-file layout used by ``intentional.txt`` and
``confusables.txt``::

    0430 ;	0061 ;	MA	# ( а → a ) CYRILLIC SMALL LETTER A → LATIN SMALL LETTER A

Only single-codepoint to single-codepoint pairs are kept, and every pair is
stored in both directions.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from os import PathLike
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ParseError

_HEX = re.compile(r"[0-9A-Fa-f]{4,6}")

BUNDLED_NAME = "confusables.txt"


@dataclass(frozen=True)
class ConfusablesTable:
    map: Mapping[str, tuple[str, ...]]
    source_line_count: int
    skipped_line_count: int

    def __len__(self) -> int:
        return len(self.map)

    def pairs(self) -> set[tuple[str, str]]:
        return {(a, b) for a, alts in self.map.items() for b in alts}


def bundled_path() -> Path:
    """Path of the Unicode confusables file shipped with the package."""
    return Path(str(resources.files("textrobust") / "data" / BUNDLED_NAME))


def _codepoints(field: str, path, lineno: int) -> list[int]:
    parts = field.split()
    if not parts:
        raise ParseError("empty codepoint field", path, lineno)
    out = []
    for p in parts:
        if not _HEX.fullmatch(p):
            raise ParseError(f"malformed hex codepoint {p!r}", path, lineno)
        out.append(int(p, 16))
    return out


def load_confusables(path: str | PathLike | None = None, exclude: Iterable[str] = ()) -> ConfusablesTable:
    """Load a confusables file (the bundled Unicode table when ``path`` is None).

    Characters in ``exclude`` never appear as keys or replacements.
    """
    path = bundled_path() if path is None else Path(path)
    excluded = set(exclude)
    pairs: dict[str, set[str]] = {}
    source_lines = 0
    skipped = 0
    with open(path, encoding="utf-8-sig") as fh:
        for lineno, line in enumerate(fh, start=1):
            data = line.split("#", 1)[0].strip()
            if not data:
                continue
            source_lines += 1
            fields = data.split(";")
            if len(fields) < 2:
                raise ParseError("expected at least two ';'-separated fields", path, lineno)
            src = _codepoints(fields[0], path, lineno)
            dst = _codepoints(fields[1], path, lineno)
            if len(src) != 1 or len(dst) != 1:
                skipped += 1
                continue
            a, b = chr(src[0]), chr(dst[0])
            if a == b or a in excluded or b in excluded:
                continue
            pairs.setdefault(a, set()).add(b)
            pairs.setdefault(b, set()).add(a)
    if not pairs:
        raise ParseError("no single-codepoint confusable pairs retained", path)
    table = {c: tuple(sorted(alts, key=ord)) for c, alts in sorted(pairs.items(), key=lambda kv: ord(kv[0]))}
    return ConfusablesTable(map=table, source_line_count=source_lines, skipped_line_count=skipped)


def load_exclusions(path: str | PathLike) -> set[str]:
    """Exclusion list: one character or hex codepoint per line, ``#`` comments allowed."""
    out = set()
    with open(path, encoding="utf-8-sig") as fh:
        for lineno, line in enumerate(fh, start=1):
            item = line.split("#", 1)[0].strip()
            if not item:
                continue
            if len(item) == 1:
                out.add(item)
            elif _HEX.fullmatch(item.removeprefix("U+").removeprefix("u+")):
                out.add(chr(int(item.removeprefix("U+").removeprefix("u+"), 16)))
            else:
                raise ParseError(f"expected a single character or hex codepoint, got {item!r}", path, lineno)
    return out


def alternatives(table: ConfusablesTable, c: str) -> tuple[str, ...]:
    """Confusable replacements for ``c`` in ascending codepoint order (empty if none)."""
    return table.map.get(c, ())
