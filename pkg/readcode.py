#!/usr/bin/env python3
"""
Readcode model for hierarchical clinical event codes
Levels, level-3 rollup, chapters and the code -> term dictionary
"""

import csv
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional, TextIO, Union

from loguru import logger

from errors import (
    DuplicateCode, InputFileError, MalformedCode, MalformedDictionaryRow, UndecodableInput,
)

CODE_LENGTH = 7
HIERARCHY_LENGTH = 5
ROLLUP_LEVEL = 3
PAD = "."
ROLLUP_SUFFIX = "00"
UNKNOWN_TERM = "<unknown>"
DICTIONARY_HEADER = ("readcode", "term")

_HIERARCHY_CHARS = re.compile(r"[A-Za-z0-9.]{5}")


def _violation(text: str) -> Optional[str]:
    """Return why text is not a Readcode, or None when it is one"""
    if len(text) != CODE_LENGTH:
        return f"expected {CODE_LENGTH} characters, got {len(text)}"
    hierarchy = text[:HIERARCHY_LENGTH]
    if not _HIERARCHY_CHARS.fullmatch(hierarchy):
        return "positions 1-5 must be letters, digits or '.'"
    if hierarchy[0] == PAD:
        return "position 1 cannot be '.'"
    if PAD in hierarchy.rstrip(PAD):
        return "'.' may only pad positions 1-5 on the right"
    return None


@dataclass(frozen=True, order=True)
class ReadCode:
    """A validated 7-character Readcode; positions 1-5 hierarchy, 6-7 term suffix"""
    text: str

    def __post_init__(self):
        reason = _violation(self.text)
        if reason is not None:
            raise MalformedCode(self.text, reason)

    def __str__(self) -> str:
        return self.text

    @property
    def hierarchy(self) -> str:
        return self.text[:HIERARCHY_LENGTH]

    @property
    def suffix(self) -> str:
        return self.text[HIERARCHY_LENGTH:]

    @property
    def level(self) -> int:
        return level(self)

    @property
    def chapter(self) -> str:
        return chapter(self)

    def rollup3(self) -> "ReadCode":
        return rollup3(self)

    def is_ancestor_of(self, other: "ReadCode") -> bool:
        """True when other sits at or below this code in the hierarchy"""
        stem = self.hierarchy.rstrip(PAD)
        return other.hierarchy.rstrip(PAD).startswith(stem)


# =============================================================================
# CODE OPERATIONS
# =============================================================================

@lru_cache(maxsize=1 << 16)
def _parse_stripped(text: str) -> ReadCode:
    return ReadCode(text)


def parse(raw: str) -> ReadCode:
    """Parse a Readcode; surrounding whitespace is ignored, case is significant"""
    return _parse_stripped(raw.strip())


def is_valid(raw: str) -> bool:
    return _violation(raw.strip()) is None


def level(code: ReadCode) -> int:
    """Number of non-pad characters in positions 1-5"""
    return HIERARCHY_LENGTH - code.hierarchy.count(PAD)


def rollup3(code: ReadCode) -> ReadCode:
    """Truncate a code to its level-3 ancestor (itself when already at level <= 3)"""
    head = code.text[:ROLLUP_LEVEL]
    return _parse_stripped(head + PAD * (HIERARCHY_LENGTH - ROLLUP_LEVEL) + ROLLUP_SUFFIX)


def chapter(code: ReadCode) -> str:
    return code.text[0]


# =============================================================================
# TERM DICTIONARY
# =============================================================================

class TermDictionary(Mapping[str, str]):
    """
    Immutable code -> term lookup.

    Membership and iteration reflect the loaded rows only; looking up an
    absent code yields UNKNOWN_TERM instead of raising.
    """

    def __init__(self, terms: Optional[Mapping[str, str]] = None):
        self._terms: Dict[str, str] = dict(terms or {})

    def __getitem__(self, code) -> str:
        return self._terms.get(str(code), UNKNOWN_TERM)

    def __contains__(self, code) -> bool:
        return str(code) in self._terms

    def __iter__(self) -> Iterator[str]:
        return iter(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def term(self, code) -> str:
        return self[code]

    def __repr__(self) -> str:
        return f"TermDictionary({len(self)} codes)"


def load_dictionary(stream: Union[TextIO, str, Path]) -> TermDictionary:
    """
    Load a `readcode,term` CSV dictionary.

    Accepts an open text stream or a path. Rows are keyed by the full
    7-character code; a code appearing twice is an error.
    """
    if isinstance(stream, (str, Path)):
        path = Path(stream)
        if not path.is_file():
            raise InputFileError(path)
        try:
            with open(path, "r", encoding="utf-8", newline="") as f:
                return _read_dictionary(f, str(path))
        except UnicodeDecodeError as e:
            raise UndecodableInput.locate(path) from e
    return _read_dictionary(stream, getattr(stream, "name", None))


def _read_dictionary(stream: TextIO, source: Optional[str]) -> TermDictionary:
    reader = csv.reader(stream)
    terms: Dict[str, str] = {}
    first_line: Dict[str, int] = {}

    header = next(reader, None)
    if header is None:
        return TermDictionary()
    if tuple(h.strip() for h in header) != DICTIONARY_HEADER:
        raise MalformedDictionaryRow(
            f"expected header {','.join(DICTIONARY_HEADER)!r}, got {','.join(header)!r}",
            source, reader.line_num,
        )

    for row in reader:
        line = reader.line_num
        if len(row) != 2:
            raise MalformedDictionaryRow(f"expected 2 fields, got {len(row)}", source, line)
        raw_code, term = row
        try:
            code = parse(raw_code).text
        except MalformedCode as e:
            raise MalformedDictionaryRow(e.reason, source, line) from e
        if code in terms:
            raise DuplicateCode(
                f"code {code} already defined on line {first_line[code]}", source, line
            )
        terms[code] = term
        first_line[code] = line

    logger.debug(f"Loaded {len(terms)} dictionary terms from {source or '<stream>'}")
    return TermDictionary(terms)


def write_dictionary(terms: Mapping[str, str], sink: TextIO) -> None:
    """Write terms in dictionary-file format, codes in ascending order"""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(DICTIONARY_HEADER)
    for code in sorted(terms):
        writer.writerow((code, terms[code]))

