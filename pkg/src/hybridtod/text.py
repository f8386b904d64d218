"""Canonical text normalization and boundary-aligned value matching.

Graph construction, slot metrics and retrieval all share this module so a
value is "the same value" everywhere in the toolkit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_WS = re.compile(r"\s+")
_TERMINAL_PUNCT = ".,;:!?"

DEFAULT_STOP_VALUES = ("yes", "no")
DEFAULT_MIN_LENGTH = 3


def normalize(text: str) -> str:
    """Lowercase, trim, collapse whitespace and strip terminal punctuation."""
    text = _WS.sub(" ", text.lower()).strip()
    return text.rstrip(_TERMINAL_PUNCT + " ")


def tokenize(text: str) -> list[str]:
    """Whitespace tokens of the canonical form, each token normalized again."""
    out = []
    for tok in normalize(text).split():
        tok = normalize(tok)
        if tok:
            out.append(tok)
    return out


def _is_boundary(text: str, pos: int) -> bool:
    # A match may not split a run of alphanumerics.
    if pos <= 0 or pos >= len(text):
        return True
    return not (text[pos - 1].isalnum() and text[pos].isalnum())


def find_all(text: str, value: str) -> list[tuple[int, int]]:
    """All token-boundary-aligned occurrences of ``value`` in ``text``."""
    spans = []
    if not value:
        return spans
    start = text.find(value)
    while start != -1:
        end = start + len(value)
        if _is_boundary(text, start) and _is_boundary(text, end):
            spans.append((start, end))
        start = text.find(value, start + 1)
    return spans


@dataclass
class ValueMatcher:
    """Finds canonical values inside canonical utterances.

    Values are indexed by their first three characters, which is also the
    default minimum match length, so lookups touch only a handful of
    candidates per boundary position.
    """

    values: list[str]
    min_length: int = DEFAULT_MIN_LENGTH
    stop_values: tuple[str, ...] = DEFAULT_STOP_VALUES
    aliases: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        stop = {normalize(v) for v in self.stop_values}
        # surface string -> ids of values it stands for
        self._surface: dict[str, list[int]] = {}
        for idx, value in enumerate(self.values):
            forms = [value] + [normalize(a) for a in self.aliases.get(value, [])]
            for form in forms:
                if len(form) < self.min_length or form in stop:
                    continue
                self._surface.setdefault(form, [])
                if idx not in self._surface[form]:
                    self._surface[form].append(idx)
        self._prefix_len = max(1, self.min_length)
        self._by_prefix: dict[str, list[str]] = {}
        for form in sorted(self._surface):
            self._by_prefix.setdefault(form[: self._prefix_len], []).append(form)

    def find(self, text: str) -> list[tuple[int, tuple[int, int]]]:
        """Return ``(value id, span)`` pairs, ordered by span then value id."""
        found = []
        n = len(text)
        k = self._prefix_len
        for pos in range(n - k + 1):
            if not _is_boundary(text, pos):
                continue
            for form in self._by_prefix.get(text[pos : pos + k], ()):
                end = pos + len(form)
                if text.startswith(form, pos) and _is_boundary(text, end):
                    for idx in self._surface[form]:
                        found.append((idx, (pos, end)))
        found.sort(key=lambda m: (m[1], m[0]))
        # one span per (value, span) pair even if aliases collide
        out = []
        seen = set()
        for m in found:
            if m not in seen:
                seen.add(m)
                out.append(m)
        return out
