"""Parsing and rule-based filtering of raw LLM caption responses.

Responses arrive as free text with one candidate caption per line, usually
carrying an enumeration marker. Candidates then pass through a fixed rule
order so that reject reasons are deterministic: failure marker, banned word,
too long, too short, empty after normalization, duplicate of an earlier
accepted caption, overflow past the accepted budget.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum

DEFAULT_MAX_WORDS = 20
DEFAULT_MIN_WORDS = 3
DEFAULT_BANNED_WORDS = ("heard",)
DEFAULT_FAILURE_TOKEN = "Failure"
DEFAULT_MAX_ACCEPTED = 4

# circled digits 1-20, "1.", "1)", "(1)", bullets and dashes
_MARKER_RE = re.compile(r"^\s*(?:[①-⑳]|\(\d{1,3}\)|\d{1,3}[.)]|[-•–—])\s*")


class RejectReason(str, Enum):
    DUPLICATE = "Duplicate"
    FAILURE = "Failure"
    BANNED_WORD = "BannedWord"
    TOO_LONG = "TooLong"
    TOO_SHORT = "TooShort"
    EMPTY = "Empty"
    OVERFLOW = "Overflow"


@dataclass(frozen=True)
class FilterRules:
    max_words: int = DEFAULT_MAX_WORDS
    min_words: int = DEFAULT_MIN_WORDS
    banned_words: tuple[str, ...] = DEFAULT_BANNED_WORDS
    failure_token: str = DEFAULT_FAILURE_TOKEN
    max_accepted: int = DEFAULT_MAX_ACCEPTED

    def __post_init__(self):
        if self.min_words < 1 or self.max_words < 1:
            raise ValueError("word limits must be positive")
        if self.min_words > self.max_words:
            raise ValueError("min_words must not exceed max_words")
        if self.max_accepted < 1:
            raise ValueError("max_accepted must be >= 1")
        object.__setattr__(self, "banned_words", tuple(self.banned_words))

    def to_dict(self) -> dict:
        return {
            "max_words": self.max_words,
            "min_words": self.min_words,
            "banned_words": list(self.banned_words),
            "failure_token": self.failure_token,
            "max_accepted": self.max_accepted,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FilterRules":
        known = {f: doc[f] for f in
                 ("max_words", "min_words", "banned_words", "failure_token", "max_accepted")
                 if f in doc}
        if "banned_words" in known:
            known["banned_words"] = tuple(known["banned_words"])
        return cls(**known)

    @classmethod
    def from_json_file(cls, path) -> "FilterRules":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class FilterReport:
    accepted: list[str] = field(default_factory=list)
    rejected: list[tuple[str, RejectReason]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accepted": list(self.accepted),
            "rejected": [{"caption": c, "reason": r.value} for c, r in self.rejected],
        }

    def reject_histogram(self) -> dict[str, int]:
        hist: dict[str, int] = {}
        for _, reason in self.rejected:
            hist[reason.value] = hist.get(reason.value, 0) + 1
        return hist


def parse_numbered(text: str) -> list[str]:
    """Split a raw response into candidate captions, stripping list markers.

    Lines without a recognized marker are kept as-is (a plain-prose fallback);
    lines that are empty after stripping are dropped.
    """
    candidates = []
    for line in text.splitlines():
        stripped = _MARKER_RE.sub("", line, count=1).strip()
        if stripped:
            candidates.append(stripped)
    return candidates


def normalize(caption: str) -> str:
    """Dedup key: lowercase, drop punctuation, collapse whitespace."""
    lowered = caption.lower()
    no_punct = "".join(ch for ch in lowered if not unicodedata.category(ch).startswith("P"))
    return " ".join(no_punct.split())


def _has_banned_token(caption: str, banned: set[str]) -> bool:
    for token in caption.split():
        if normalize(token) in banned:
            return True
    return False


def filter_captions(candidates: list[str], rules: FilterRules | None = None) -> FilterReport:
    """Apply the filtering rules to candidates in input order.

    Every candidate lands in exactly one of ``accepted`` or ``rejected``.
    """
    rules = rules or FilterRules()
    banned = {normalize(w) for w in rules.banned_words}
    failure_key = normalize(rules.failure_token)
    report = FilterReport()
    accepted_keys: set[str] = set()

    for caption in candidates:
        key = normalize(caption)
        words = len(caption.split())
        if failure_key and (key == failure_key or key.startswith(failure_key)):
            report.rejected.append((caption, RejectReason.FAILURE))
        elif _has_banned_token(caption, banned):
            report.rejected.append((caption, RejectReason.BANNED_WORD))
        elif words > rules.max_words:
            report.rejected.append((caption, RejectReason.TOO_LONG))
        elif words < rules.min_words:
            report.rejected.append((caption, RejectReason.TOO_SHORT))
        elif not key:
            report.rejected.append((caption, RejectReason.EMPTY))
        elif key in accepted_keys:
            report.rejected.append((caption, RejectReason.DUPLICATE))
        elif len(report.accepted) >= rules.max_accepted:
            report.rejected.append((caption, RejectReason.OVERFLOW))
        else:
            report.accepted.append(caption)
            accepted_keys.add(key)
    return report
