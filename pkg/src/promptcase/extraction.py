"""Legal fact and legal issue extraction.

Common-law cases: facts come from a 50-word summary of the background (an
LLM behind the summarizer protocol, with a deterministic lead-50-token
fallback) and issues are the sentences carrying the citation placeholder
token. Civil-law cases: facts are the marker-delimited trial-findings
section and issues are matched criminal-charge names from a lexicon.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol

from promptcase.corpus import CaseDocument
from promptcase.errors import ExtractionError

log = logging.getLogger(__name__)

PLACEHOLDER_TOKEN = "FRAGMENT_SUPPRESSED"
SUMMARY_INSTRUCTION = "Summarise in 50 words: "
CIVIL_FACT_MARKER = "经审理查明"
CIVIL_FACT_END_MARKERS = ("本院认为", "上述事实", "综上")
LEAD_FALLBACK_TOKENS = 50  # common law: whitespace tokens
LEAD_FALLBACK_CHARS = 100  # civil law: characters

FACT_PROVENANCES = ("summarizer", "marker_section", "lead_fallback")
ISSUE_PROVENANCES = ("placeholder_sentences", "charge_match", "empty")

# Sentence terminators that do not end a sentence when they close one of
# these tokens (citation and honorific abbreviations common in case law).
_ABBREVIATIONS = ("v.", "No.", "Mr.", "Inc.", "U.S.")
_ZH_TERMINATORS = "。！？；"


@dataclass(frozen=True)
class LegalFeatures:
    """Extracted fact and issue text for one case, with provenance flags."""

    case_id: str
    fact_text: str
    issue_text: str
    fact_provenance: str
    issue_provenance: str

    def __post_init__(self) -> None:
        if self.fact_provenance not in FACT_PROVENANCES:
            raise ExtractionError(f"unknown fact provenance {self.fact_provenance!r}")
        if self.issue_provenance not in ISSUE_PROVENANCES:
            raise ExtractionError(f"unknown issue provenance {self.issue_provenance!r}")
        if not self.fact_text and not self.issue_text:
            raise ExtractionError(f"case {self.case_id!r}: both features empty")

    def to_json_dict(self) -> dict[str, str]:
        return {
            "case_id": self.case_id,
            "fact_text": self.fact_text,
            "issue_text": self.issue_text,
            "fact_provenance": self.fact_provenance,
            "issue_provenance": self.issue_provenance,
        }

    @classmethod
    def from_json_dict(cls, record: dict) -> "LegalFeatures":
        return cls(
            case_id=record["case_id"],
            fact_text=record["fact_text"],
            issue_text=record["issue_text"],
            fact_provenance=record["fact_provenance"],
            issue_provenance=record["issue_provenance"],
        )


class Summarizer(Protocol):
    def summarize(self, text: str, instruction: str) -> str: ...


class RemoteSummarizer:
    """HTTP client for the summarizer protocol: POST /summarize.

    Any transport problem or non-200 response marks the service unavailable;
    callers fall back to the extractive summary.
    """

    def __init__(self, base_url: str, timeout_s: float = 30.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def summarize(self, text: str, instruction: str) -> str:
        import requests

        try:
            response = requests.post(
                self.base_url + "/summarize",
                json={"instruction": instruction, "text": text},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise ExtractionError(f"summarizer unreachable: {exc}") from exc
        if response.status_code != 200:
            raise ExtractionError(f"summarizer returned HTTP {response.status_code}")
        try:
            summary = response.json()["summary"]
        except (ValueError, KeyError) as exc:
            raise ExtractionError(f"malformed summarizer response: {exc}") from exc
        if not isinstance(summary, str):
            raise ExtractionError("malformed summarizer response: summary is not a string")
        return summary


@dataclass(frozen=True)
class ChargeLexicon:
    """Ordered list of Chinese criminal-charge names used for issue matching."""

    charges: tuple[str, ...]

    def __post_init__(self) -> None:
        seen = set()
        for charge in self.charges:
            if not charge:
                raise ExtractionError("empty lexicon entry")
            if charge in seen:
                raise ExtractionError(f"duplicate lexicon entry {charge!r}")
            seen.add(charge)

    def __len__(self) -> int:
        return len(self.charges)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "ChargeLexicon":
        charges = []
        for line in lines:
            entry = line.strip()
            if entry and not entry.startswith("#"):
                charges.append(entry)
        return cls(tuple(charges))

    @classmethod
    def from_file(cls, path: str | Path) -> "ChargeLexicon":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())

    @classmethod
    def default(cls) -> "ChargeLexicon":
        text = resources.files("promptcase.assets").joinpath("charges_zh.txt").read_text("utf-8")
        return cls.from_lines(text.splitlines())


def _ends_with_abbreviation(text: str, end: int) -> bool:
    head = text[:end]
    for abbr in _ABBREVIATIONS:
        if head.endswith(abbr):
            prev = end - len(abbr) - 1
            if prev < 0 or not text[prev].isalpha():
                return True
    return False


def split_sentences_en(text: str) -> list[str]:
    """Terminator-based English sentence split with an abbreviation stoplist.

    A run of [.!?] ends a sentence when followed by whitespace and an
    uppercase letter, or by end of text, unless it closes a known
    abbreviation.
    """
    sentences: list[str] = []
    start = i = 0
    n = len(text)
    while i < n:
        if text[i] not in ".!?":
            i += 1
            continue
        j = i + 1
        while j < n and text[j] in ".!?":
            j += 1
        k = j
        while k < n and text[k].isspace():
            k += 1
        at_end = j >= n
        upper_follows = k > j and k < n and text[k].isupper()
        if (at_end or upper_follows) and not _ends_with_abbreviation(text, j):
            sentence = text[start:j].strip()
            if sentence:
                sentences.append(sentence)
            start = i = k
        else:
            i = j
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def split_sentences_zh(text: str) -> list[str]:
    """Split on 。！？； keeping the terminator attached to its sentence."""
    sentences = []
    start = 0
    for i, ch in enumerate(text):
        if ch in _ZH_TERMINATORS:
            sentence = text[start : i + 1].strip()
            if sentence:
                sentences.append(sentence)
            start = i + 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def split_sentences(text: str, language: str) -> list[str]:
    if language == "zh":
        return split_sentences_zh(text)
    return split_sentences_en(text)


def extract_facts_common_law(doc: CaseDocument, summarizer: Summarizer | None = None) -> tuple[str, str]:
    """Summarize the background (whole text when unsectioned); lead-50 fallback."""
    if doc.jurisdiction != "common_law":
        raise ExtractionError(f"case {doc.id!r} is not a common-law document")
    source = doc.section_text("background") or doc.raw_text
    if not source.strip():
        raise ExtractionError(f"case {doc.id!r}: empty document")
    if summarizer is not None:
        try:
            summary = summarizer.summarize(source, SUMMARY_INSTRUCTION).strip()
            if summary:
                return summary, "summarizer"
            log.warning("case %s: summarizer returned empty summary, using fallback", doc.id)
        except ExtractionError as exc:
            log.warning("case %s: summarizer unavailable (%s), using fallback", doc.id, exc)
    return " ".join(source.split()[:LEAD_FALLBACK_TOKENS]), "lead_fallback"


def extract_facts_civil_law(doc: CaseDocument) -> tuple[str, str]:
    """Slice from the first trial-findings marker to the analysis opener.

    The section ends at the earliest of the end markers after the slice
    start, else at the end of the background section (when one is marked),
    else at the end of the document.  Missing or empty section falls back to
    the first 100 characters.
    """
    if doc.jurisdiction != "civil_law":
        raise ExtractionError(f"case {doc.id!r} is not a civil-law document")
    text = doc.raw_text
    if not text.strip():
        raise ExtractionError(f"case {doc.id!r}: empty document")
    marker_at = text.find(CIVIL_FACT_MARKER)
    if marker_at < 0:
        return text[:LEAD_FALLBACK_CHARS], "lead_fallback"
    start = marker_at + len(CIVIL_FACT_MARKER)
    if start < len(text) and text[start] in "：:，,":
        start += 1
    ends = [pos for m in CIVIL_FACT_END_MARKERS if (pos := text.find(m, start)) >= 0]
    if ends:
        end = min(ends)
    else:
        background = doc.sections.get("background")
        end = background[1] if background is not None and background[1] > start else len(text)
    section = text[start:end].strip()
    if not section:
        return text[:LEAD_FALLBACK_CHARS], "lead_fallback"
    return section, "marker_section"


def extract_issues_common_law(doc: CaseDocument) -> tuple[str, str]:
    """Collect placeholder-bearing sentences in document order, deduplicated."""
    if doc.jurisdiction != "common_law":
        raise ExtractionError(f"case {doc.id!r} is not a common-law document")
    picked: list[str] = []
    seen: set[str] = set()
    for sentence in split_sentences_en(doc.raw_text):
        if PLACEHOLDER_TOKEN in sentence and sentence not in seen:
            seen.add(sentence)
            picked.append(sentence)
    if not picked:
        return "", "empty"
    return " ".join(picked), "placeholder_sentences"


def extract_issues_civil_law(doc: CaseDocument, lexicon: ChargeLexicon) -> tuple[str, str]:
    """Match lexicon charges as substrings, longest match wins on overlap.

    An occurrence is shadowed when it lies entirely inside a strictly longer
    occurrence of another entry.  Each surviving charge is reported once, at
    its earliest unshadowed position, joined by the enumeration comma.
    """
    if doc.jurisdiction != "civil_law":
        raise ExtractionError(f"case {doc.id!r} is not a civil-law document")
    if not lexicon.charges:
        raise ExtractionError("empty charge lexicon")
    text = doc.raw_text
    occurrences: list[tuple[int, int, str]] = []
    for charge in lexicon.charges:
        at = text.find(charge)
        while at >= 0:
            occurrences.append((at, at + len(charge), charge))
            at = text.find(charge, at + 1)
    first_seen: dict[str, int] = {}
    for start, end, charge in occurrences:
        shadowed = any(
            s <= start and end <= e and (e - s) > (end - start) for s, e, _ in occurrences
        )
        if shadowed:
            continue
        if charge not in first_seen or start < first_seen[charge]:
            first_seen[charge] = start
    if not first_seen:
        return "", "empty"
    ordered = sorted(first_seen, key=lambda c: (first_seen[c], c))
    return "、".join(ordered), "charge_match"


def extract_features(
    doc: CaseDocument,
    lexicon: ChargeLexicon | None = None,
    summarizer: Summarizer | None = None,
) -> LegalFeatures:
    """Dispatch to the jurisdiction-specific fact and issue extractors."""
    if doc.jurisdiction == "common_law":
        fact_text, fact_prov = extract_facts_common_law(doc, summarizer)
        issue_text, issue_prov = extract_issues_common_law(doc)
    else:
        fact_text, fact_prov = extract_facts_civil_law(doc)
        issue_text, issue_prov = extract_issues_civil_law(doc, lexicon or ChargeLexicon.default())
    return LegalFeatures(doc.id, fact_text, issue_text, fact_prov, issue_prov)


def save_features_jsonl(features: Iterable[LegalFeatures], path: str | Path) -> None:
    lines = [
        json.dumps(f.to_json_dict(), ensure_ascii=False, sort_keys=True)
        for f in sorted(features, key=lambda f: f.case_id)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features_jsonl(path: str | Path) -> dict[str, LegalFeatures]:
    features: dict[str, LegalFeatures] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            feature = LegalFeatures.from_json_dict(json.loads(line))
            features[feature.case_id] = feature
    return features
