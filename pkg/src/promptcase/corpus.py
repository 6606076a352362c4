"""Corpus loading and normalization for the two supported case layouts.

COLIEE-style: a directory of per-case ``*.txt`` files (English, common law)
plus a ``queries.manifest`` naming which file stems are queries; every query
retrieves against the entire corpus.  LeCaRD-style: a queries JSONL, one
candidate subdirectory per query, and a golden-label JSON (Chinese, civil
law).
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from promptcase.errors import CorpusError

log = logging.getLogger(__name__)

SECTION_KINDS = ("name", "background", "analysis", "order")

# Fixed 50-word stopword lists backing the per-paragraph language classifier.
# A paragraph counts as French when its French-stopword ratio reaches
# FRENCH_RATIO_THRESHOLD and exceeds its English-stopword ratio.
FRENCH_STOPWORDS = frozenset(
    """le la les de des du une et est dans pour par sur avec que qui ne pas au
    aux ce cette ces il elle ils elles nous vous je son sa ses leur lui mais
    où donc si plus sans sous être été avoir fait comme tout aussi ainsi
    """.split()
)
ENGLISH_STOPWORDS = frozenset(
    """the of and to in that is was for it with as his on be at by this had
    not are but from or have an they which one you were her all she there
    would their we him been has when who will more no if out so said
    """.split()
)
FRENCH_RATIO_THRESHOLD = 0.18

_WORD_RE = re.compile(r"\w+", re.UNICODE)
_PARAGRAPH_SPLIT_RE = re.compile(r"\n\s*\n")


def normalize_text(text: str) -> str:
    """Normalize raw case text: NFC, collapsed whitespace, blank-line paragraphs.

    Paragraph boundaries (runs of blank lines) are preserved as a single
    blank line; all other whitespace runs collapse to one space.
    """
    text = unicodedata.normalize("NFC", text)
    paragraphs = []
    for para in _PARAGRAPH_SPLIT_RE.split(text):
        para = " ".join(para.split())
        if para:
            paragraphs.append(para)
    return "\n\n".join(paragraphs)


def _stopword_ratio(tokens: list[str], stopwords: frozenset[str]) -> float:
    if not tokens:
        return 0.0
    return sum(1 for t in tokens if t in stopwords) / len(tokens)


def is_french_paragraph(paragraph: str) -> bool:
    tokens = [t.lower() for t in _WORD_RE.findall(paragraph)]
    fr = _stopword_ratio(tokens, FRENCH_STOPWORDS)
    en = _stopword_ratio(tokens, ENGLISH_STOPWORDS)
    return fr >= FRENCH_RATIO_THRESHOLD and fr > en


def remove_french_paragraphs(text: str) -> str:
    """Drop paragraphs classified as French. Idempotent on its own output."""
    kept = [p for p in text.split("\n\n") if p and not is_french_paragraph(p)]
    return "\n\n".join(kept)


@dataclass(frozen=True)
class CaseDocument:
    """One legal case: identity, jurisdiction, normalized text, optional sections.

    ``sections`` maps a section kind (name, background, analysis, order) to a
    half-open character span within ``raw_text``.  Spans must lie in bounds
    and must not overlap.
    """

    id: str
    jurisdiction: str  # "common_law" | "civil_law"
    language: str  # "en" | "zh"
    raw_text: str
    sections: Mapping[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("document id must be non-empty")
        if self.jurisdiction not in ("common_law", "civil_law"):
            raise CorpusError(f"unknown jurisdiction {self.jurisdiction!r}")
        if self.language not in ("en", "zh"):
            raise CorpusError(f"unknown language {self.language!r}")
        if not self.raw_text:
            raise CorpusError(f"document {self.id!r}: empty text after normalization")
        spans = []
        for kind, (start, end) in self.sections.items():
            if kind not in SECTION_KINDS:
                raise CorpusError(f"document {self.id!r}: unknown section kind {kind!r}")
            if not (0 <= start < end <= len(self.raw_text)):
                raise CorpusError(f"document {self.id!r}: section {kind!r} span out of bounds")
            spans.append((start, end, kind))
        spans.sort()
        for (s1, e1, k1), (s2, _e2, k2) in zip(spans, spans[1:]):
            if s2 < e1:
                raise CorpusError(f"document {self.id!r}: sections {k1!r} and {k2!r} overlap")

    def section_text(self, kind: str) -> str | None:
        span = self.sections.get(kind)
        if span is None:
            return None
        return self.raw_text[span[0] : span[1]]


@dataclass
class Corpus:
    """Immutable-after-load document collection with per-query candidate pools.

    A pool value of ``None`` is the "entire corpus" sentinel: the query
    retrieves against every other document.
    """

    documents: dict[str, CaseDocument]
    candidate_pools: dict[str, list[str] | None] = field(default_factory=dict)
    issues: list[str] = field(default_factory=list)  # per-file load diagnostics

    def __post_init__(self) -> None:
        for qid, pool in self.candidate_pools.items():
            if qid not in self.documents:
                raise CorpusError(f"query {qid!r} has no document")
            if pool is not None:
                missing = [c for c in pool if c not in self.documents]
                if missing:
                    raise CorpusError(f"query {qid!r}: pooled candidates missing from corpus: {missing}")

    @property
    def query_ids(self) -> list[str]:
        return sorted(self.candidate_pools)

    def pool_for(self, query_id: str) -> list[str]:
        """Resolve a query's candidate pool; the sentinel excludes the query itself."""
        if query_id not in self.candidate_pools:
            raise CorpusError(f"unknown query {query_id!r}")
        pool = self.candidate_pools[query_id]
        if pool is None:
            return sorted(d for d in self.documents if d != query_id)
        return list(pool)


@dataclass
class RelevanceJudgments:
    """Binary golden labels: query id -> set of relevant case ids."""

    judgments: dict[str, set[str]]

    def __post_init__(self) -> None:
        for qid, rel in self.judgments.items():
            if not rel:
                raise CorpusError(f"query {qid!r} has an empty relevant set")

    def relevant(self, query_id: str) -> set[str]:
        return self.judgments[query_id]

    def avg_relevant_per_query(self) -> float:
        return sum(len(r) for r in self.judgments.values()) / len(self.judgments)

    def to_json_dict(self) -> dict[str, list[str]]:
        return {q: sorted(rel) for q, rel in sorted(self.judgments.items())}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Iterable[str]]) -> "RelevanceJudgments":
        return cls({q: set(rel) for q, rel in data.items()})


@dataclass(frozen=True)
class CorpusStats:
    num_docs: int
    avg_length: float
    max_length: int
    avg_relevant_per_query: float | None = None

    def __post_init__(self) -> None:
        if self.num_docs < 0 or self.max_length < 0 or self.avg_length < 0:
            raise CorpusError("counts must be non-negative")
        if self.avg_length > self.max_length:
            raise CorpusError("avg_length cannot exceed max_length")


def load_coliee_corpus(root_path: str | Path) -> Corpus:
    """Load a COLIEE-style directory of per-case text files.

    Every ``*.txt`` becomes an English common-law CaseDocument keyed by file
    stem, with French paragraphs removed.  ``queries.manifest`` (one query id
    per line) flags which documents are queries; each query's candidate pool
    is the entire corpus.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise CorpusError(f"not a directory: {root}")
    files = sorted(root.glob("*.txt"))
    if not files:
        raise CorpusError(f"no case files found in {root}")

    issues: list[str] = []
    documents: dict[str, CaseDocument] = {}
    for path in files:
        try:
            raw = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            issues.append(f"unreadable file {path.name}: {exc}")
            log.warning("skipping unreadable file %s: %s", path, exc)
            continue
        text = remove_french_paragraphs(normalize_text(raw))
        if not text:
            issues.append(f"empty after normalization: {path.name}")
            continue
        doc_id = path.stem
        documents[doc_id] = CaseDocument(doc_id, "common_law", "en", text)
    if not documents:
        raise CorpusError(f"no loadable case files in {root}")

    manifest = root / "queries.manifest"
    if not manifest.is_file():
        raise CorpusError(f"missing queries.manifest in {root}")
    pools: dict[str, list[str] | None] = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        qid = line.strip()
        if not qid or qid.startswith("#"):
            continue
        if qid not in documents:
            raise CorpusError(f"queries.manifest names unknown case {qid!r}")
        pools[qid] = None
    return Corpus(documents, pools, issues)


def load_lecard_corpus(
    query_file: str | Path,
    candidates_root: str | Path,
    labels_file: str | Path,
) -> tuple[Corpus, RelevanceJudgments]:
    """Load a LeCaRD-style corpus: queries JSONL, per-query candidate dirs, labels JSON.

    Candidate pools hold exactly the ids found on disk under each query's
    subdirectory.  Labels referencing a candidate absent on disk are fatal; a
    pool size other than 100 is only a warning.  Queries whose relevant set
    is empty are dropped from the judgments with a warning record.
    """
    query_path = Path(query_file)
    root = Path(candidates_root)
    issues: list[str] = []
    documents: dict[str, CaseDocument] = {}
    pools: dict[str, list[str] | None] = {}

    query_ids: list[str] = []
    for lineno, line in enumerate(query_path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            qid, qtext = str(record["id"]), record["text"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorpusError(f"{query_path}:{lineno}: bad query record: {exc}") from exc
        text = normalize_text(qtext)
        if not text:
            issues.append(f"query {qid}: empty text")
            continue
        documents[qid] = CaseDocument(qid, "civil_law", "zh", text)
        query_ids.append(qid)
    if not query_ids:
        raise CorpusError(f"no queries found in {query_path}")

    for qid in query_ids:
        qdir = root / qid
        if not qdir.is_dir():
            raise CorpusError(f"missing candidate directory for query {qid!r}: {qdir}")
        pool: list[str] = []
        for path in sorted(qdir.glob("*.txt")):
            cid = path.stem
            try:
                raw = path.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                issues.append(f"unreadable candidate {qid}/{path.name}: {exc}")
                continue
            text = normalize_text(raw)
            if not text:
                issues.append(f"empty candidate {qid}/{path.name}")
                continue
            if cid in documents:
                if documents[cid].raw_text != text:
                    raise CorpusError(f"candidate id {cid!r} appears twice with different content")
            else:
                documents[cid] = CaseDocument(cid, "civil_law", "zh", text)
            pool.append(cid)
        if len(pool) != 100:
            issues.append(f"query {qid}: pool size {len(pool)} != 100")
        pools[qid] = pool

    labels = json.loads(Path(labels_file).read_text(encoding="utf-8"))
    judgments: dict[str, set[str]] = {}
    for qid, rel_ids in labels.items():
        qid = str(qid)
        if qid not in pools:
            raise CorpusError(f"labels reference unknown query {qid!r}")
        pool_set = set(pools[qid] or ())
        rel = {str(r) for r in rel_ids}
        missing = sorted(rel - pool_set)
        if missing:
            raise CorpusError(f"labels for query {qid!r} reference candidates missing on disk: {missing}")
        if not rel:
            issues.append(f"query {qid}: empty relevant set, dropped from judgments")
            continue
        judgments[qid] = rel
    return Corpus(documents, pools, issues), RelevanceJudgments(judgments)


def corpus_stats(corpus, judgments=None, tokenizer=None) -> CorpusStats:
    """Token-count statistics over all documents, Table-style.

    ``tokenizer`` is a text -> terms callable; length is defined by the
    retrieval tokenizer so the whole engine shares one notion of "length".
    """
    if not corpus.documents:
        raise CorpusError("empty corpus")
    if tokenizer is None:
        from promptcase.retrieval import english_simple

        tokenizer = english_simple
    lengths = [len(tokenizer(doc.raw_text)) for _, doc in sorted(corpus.documents.items())]
    avg_rel = judgments.avg_relevant_per_query() if judgments is not None else None
    return CorpusStats(
        num_docs=len(lengths),
        avg_length=sum(lengths) / len(lengths),
        max_length=max(lengths),
        avg_relevant_per_query=avg_rel,
    )


def _pools_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".pools.json")


def save_corpus_jsonl(corpus: Corpus, path: str | Path) -> None:
    """Write the normalized corpus: one JSON object per case, plus a pools sidecar."""
    path = Path(path)
    lines = []
    for doc_id in sorted(corpus.documents):
        doc = corpus.documents[doc_id]
        record = {
            "id": doc.id,
            "jurisdiction": doc.jurisdiction,
            "language": doc.language,
            "text": doc.raw_text,
            "sections": {k: [s, e] for k, (s, e) in sorted(doc.sections.items())},
        }
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    pools = {q: (sorted(p) if p is not None else None) for q, p in sorted(corpus.candidate_pools.items())}
    _pools_sidecar(path).write_text(
        json.dumps({"pools": pools}, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def load_corpus_jsonl(path: str | Path) -> Corpus:
    """Reload a corpus written by save_corpus_jsonl (documents byte-equal)."""
    path = Path(path)
    documents: dict[str, CaseDocument] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        record = json.loads(line)
        try:
            doc = CaseDocument(
                id=record["id"],
                jurisdiction=record["jurisdiction"],
                language=record["language"],
                raw_text=record["text"],
                sections={k: (int(s), int(e)) for k, (s, e) in record.get("sections", {}).items()},
            )
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc}") from exc
        documents[doc.id] = doc
    pools: dict[str, list[str] | None] = {}
    sidecar = _pools_sidecar(path)
    if sidecar.is_file():
        data = json.loads(sidecar.read_text(encoding="utf-8"))
        pools = {q: (list(p) if p is not None else None) for q, p in data.get("pools", {}).items()}
    return Corpus(documents, pools)
