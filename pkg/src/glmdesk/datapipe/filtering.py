from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

from .documents import Document


@dataclass(frozen=True)
class FilterRules:
    """Rule set for :func:`rule_filter`; every field is optional.

    ``url_blacklist`` entries are glob patterns; an entry without glob
    characters matches as a URL prefix.  Keywords match case-insensitively
    as substrings.  The symbol ratio counts characters that are neither
    alphanumeric nor whitespace.
    """

    url_blacklist: Sequence[str] = ()
    keyword_blocklist: Sequence[str] = ()
    min_length: int = 0
    max_symbol_ratio: float | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "FilterRules":
        known = {"url_blacklist", "keyword_blocklist", "min_length", "max_symbol_ratio"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown filter rule(s): {sorted(unknown)}")
        return cls(
            url_blacklist=tuple(data.get("url_blacklist", ())),
            keyword_blocklist=tuple(data.get("keyword_blocklist", ())),
            min_length=int(data.get("min_length", 0)),
            max_symbol_ratio=data.get("max_symbol_ratio"),
        )


class Verdict(NamedTuple):
    keep: bool
    reason: str | None = None


KEEP = Verdict(True)


def _url_blocked(url: str, patterns) -> bool:
    for pat in patterns:
        if any(c in pat for c in "*?["):
            if fnmatch.fnmatchcase(url, pat):
                return True
        elif url.startswith(pat):
            return True
    return False


def symbol_ratio(text: str) -> float:
    if not text:
        return 0.0
    symbols = sum(1 for c in text if not (c.isalnum() or c.isspace()))
    return symbols / len(text)


def rule_filter(
    doc: Document,
    rules: FilterRules,
    classifier: Callable[[Document], bool] | None = None,
) -> Verdict:
    """Check ``doc`` against the rules in order url, keyword, length, symbol ratio.

    ``classifier`` is the seam for a learned quality model: it runs last and
    a False answer drops the document with reason ``"classifier"``.
    """
    if doc.url and rules.url_blacklist and _url_blocked(doc.url, rules.url_blacklist):
        return Verdict(False, "url")
    if rules.keyword_blocklist:
        low = doc.text.lower()
        if any(k.lower() in low for k in rules.keyword_blocklist):
            return Verdict(False, "keyword")
    if len(doc.text) < rules.min_length:
        return Verdict(False, "length")
    if rules.max_symbol_ratio is not None and symbol_ratio(doc.text) > rules.max_symbol_ratio:
        return Verdict(False, "symbol_ratio")
    if classifier is not None and not classifier(doc):
        return Verdict(False, "classifier")
    return KEEP


def filter_corpus(docs, rules: FilterRules, classifier=None):
    """Split ``docs`` into kept documents and ``(doc, reason)`` drops, order preserved."""
    kept, dropped = [], []
    for doc in docs:
        verdict = rule_filter(doc, rules, classifier)
        if verdict.keep:
            kept.append(doc)
        else:
            dropped.append((doc, verdict.reason))
    return kept, dropped
