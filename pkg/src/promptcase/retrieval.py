"""Lexical (BM25), dense, and two-stage ranking.

BM25 uses Lucene-style non-negative IDF with k1=1.2, b=0.75 by default;
Chinese text is indexed as overlapping character bigrams, English as
lowercased alphanumeric words. Dense retrieval scores candidates by the dot
product of stored case representations; the two-stage pipeline reranks the
BM25 top-k (10 per the evaluation protocol) densely.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from promptcase.backend import is_cjk_char
from promptcase.encoding import CaseRepresentation, join_prompt
from promptcase.errors import RetrievalError

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_STAGE1_DEPTH = 10

STAGES = ("bm25", "dense", "two_stage")
TOKENIZERS = ("english_simple", "chinese_bigram")

INDEX_MAGIC = b"PCBM"
INDEX_VERSION = 1

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


def english_simple(text: str) -> list[str]:
    """Lowercased alphanumeric runs; everything else is a separator."""
    return _WORD_RE.findall(text.lower())


def chinese_bigram(text: str) -> list[str]:
    """Overlapping bigrams over CJK runs (a lone character stays a unigram);
    non-CJK stretches fall back to english_simple."""
    terms: list[str] = []
    run: list[str] = []
    other: list[str] = []

    def flush_run() -> None:
        if not run:
            return
        if len(run) == 1:
            terms.append(run[0])
        else:
            terms.extend(run[i] + run[i + 1] for i in range(len(run) - 1))
        run.clear()

    def flush_other() -> None:
        if other:
            terms.extend(english_simple("".join(other)))
            other.clear()

    for ch in text:
        if is_cjk_char(ch):
            flush_other()
            run.append(ch)
        else:
            flush_run()
            other.append(ch)
    flush_run()
    flush_other()
    return terms


def get_tokenizer(name: str) -> Callable[[str], list[str]]:
    if name == "english_simple":
        return english_simple
    if name == "chinese_bigram":
        return chinese_bigram
    raise RetrievalError(f"unknown tokenizer {name!r} (expected one of {', '.join(TOKENIZERS)})")


@dataclass(frozen=True)
class Bm25Params:
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __post_init__(self) -> None:
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise RetrievalError(f"bad BM25 parameters k1={self.k1}, b={self.b}")


@dataclass
class Bm25Index:
    doc_ids: list[str]
    doc_len: dict[str, int]
    avgdl: float
    df: dict[str, int]
    tf: dict[str, dict[str, int]]  # term -> {doc id -> count}
    params: Bm25Params
    tokenizer_name: str = "english_simple"

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def build_bm25_index(
    texts: Mapping[str, str],
    tokenizer: Callable[[str], list[str]] | str = english_simple,
    params: Bm25Params | None = None,
) -> Bm25Index:
    """Index a {doc id: text} mapping. Zero-token documents are allowed."""
    if not texts:
        raise RetrievalError("cannot index an empty collection")
    tokenizer_name = tokenizer if isinstance(tokenizer, str) else tokenizer.__name__
    tokenize = get_tokenizer(tokenizer) if isinstance(tokenizer, str) else tokenizer
    params = params or Bm25Params()
    doc_ids = sorted(texts)
    doc_len: dict[str, int] = {}
    df: dict[str, int] = {}
    tf: dict[str, dict[str, int]] = {}
    for doc_id in doc_ids:
        terms = tokenize(texts[doc_id])
        doc_len[doc_id] = len(terms)
        counts: dict[str, int] = {}
        for term in terms:
            counts[term] = counts.get(term, 0) + 1
        for term, count in counts.items():
            df[term] = df.get(term, 0) + 1
            tf.setdefault(term, {})[doc_id] = count
    avgdl = sum(doc_len.values()) / len(doc_ids)
    return Bm25Index(doc_ids, doc_len, avgdl, df, tf, params, tokenizer_name)


def bm25_score(index: Bm25Index, query_terms: Sequence[str], candidate_id: str) -> float:
    """Sum the per-term contributions over the query term list.

    The query is a multiset: a term appearing twice in the list contributes
    twice.
    """
    if candidate_id not in index.doc_len:
        raise RetrievalError(f"candidate {candidate_id!r} not in index")
    k1, b = index.params.k1, index.params.b
    dl = index.doc_len[candidate_id]
    norm = 1.0 - b + b * (dl / index.avgdl if index.avgdl > 0 else 0.0)
    score = 0.0
    for term in query_terms:
        tf = index.tf.get(term, {}).get(candidate_id, 0)
        if tf == 0:
            continue
        score += index.idf(term) * (tf * (k1 + 1.0)) / (tf + k1 * norm)
    return score


@dataclass(frozen=True)
class RankedList:
    """Per-query ranking: scores non-increasing, ids unique, ties by id."""

    query_id: str
    entries: tuple[tuple[str, float], ...]
    stage: str

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise RetrievalError(f"unknown stage {self.stage!r}")
        seen: set[str] = set()
        previous = math.inf
        for candidate_id, score in self.entries:
            if candidate_id in seen:
                raise RetrievalError(f"query {self.query_id!r}: duplicate candidate {candidate_id!r}")
            seen.add(candidate_id)
            if score > previous:
                raise RetrievalError(f"query {self.query_id!r}: scores increase at {candidate_id!r}")
            previous = score

    def ids(self) -> list[str]:
        return [candidate_id for candidate_id, _ in self.entries]


def _rank(query_id: str, scored: Iterable[tuple[str, float]], k: int, stage: str) -> RankedList:
    ordered = sorted(scored, key=lambda item: (-item[1], item[0]))
    return RankedList(query_id, tuple(ordered[:k]), stage)


def bm25_retrieve(
    index: Bm25Index,
    query_terms: Sequence[str],
    pool: Sequence[str],
    k: int,
    query_id: str = "",
) -> RankedList:
    if not pool:
        raise RetrievalError(f"query {query_id!r}: empty candidate pool")
    if k < 1:
        raise RetrievalError(f"k must be positive, got {k}")
    scored = [(cid, bm25_score(index, query_terms, cid)) for cid in pool]
    return _rank(query_id, scored, k, "bm25")


def _concat_vector(rep: CaseRepresentation | np.ndarray) -> np.ndarray:
    if isinstance(rep, CaseRepresentation):
        return rep.e_concat
    return rep


def dense_retrieve(
    query_rep: CaseRepresentation | np.ndarray,
    candidate_reps: Mapping[str, CaseRepresentation | np.ndarray],
    k: int,
    query_id: str = "",
) -> RankedList:
    """Top-k candidates by dot product with the query representation."""
    if not candidate_reps:
        raise RetrievalError(f"query {query_id!r}: empty candidate pool")
    if k < 1:
        raise RetrievalError(f"k must be positive, got {k}")
    query = _concat_vector(query_rep).astype(np.float64)
    scored = []
    for candidate_id in sorted(candidate_reps):
        vector = _concat_vector(candidate_reps[candidate_id])
        if vector.shape != query.shape:
            raise RetrievalError(
                f"query {query_id!r}: candidate {candidate_id!r} dim {vector.shape[0]} != query dim {query.shape[0]}"
            )
        scored.append((candidate_id, float(np.dot(query, vector.astype(np.float64)))))
    return _rank(query_id, scored, k, "dense")


def two_stage_retrieve(
    index: Bm25Index,
    query_terms: Sequence[str],
    query_rep: CaseRepresentation | np.ndarray,
    candidate_reps: Mapping[str, CaseRepresentation | np.ndarray],
    pool: Sequence[str],
    k_final: int,
    k_first: int = DEFAULT_STAGE1_DEPTH,
    query_id: str = "",
) -> RankedList:
    """BM25 top-k_first, then dense rerank of the survivors, cut to k_final.

    Survivors without a representation (extraction failed upstream) keep
    their BM25 order after every scored candidate, with synthetic scores
    stepping down from the scored minimum so the ordering invariant holds.
    """
    if k_final > k_first:
        raise RetrievalError(f"k_final ({k_final}) must not exceed k_first ({k_first})")
    stage1 = bm25_retrieve(index, query_terms, pool, k_first, query_id)
    survivors = stage1.ids()
    with_reps = {cid: candidate_reps[cid] for cid in survivors if cid in candidate_reps}
    missing = [cid for cid in survivors if cid not in candidate_reps]
    if with_reps:
        reranked = dense_retrieve(query_rep, with_reps, len(with_reps), query_id)
        entries = list(reranked.entries)
    else:
        entries = []
    floor = min((score for _, score in entries), default=0.0)
    for i, cid in enumerate(missing):
        entries.append((cid, floor - 1.0 - i))
    return RankedList(query_id, tuple(entries[:k_final]), "two_stage")


def bm25_promptcase_text(raw_text, features, template) -> str:
    """Document text for the lexical run that folds in features and prompts:
    original text, prompted facts, prompted issues, in that order."""
    parts = [
        raw_text,
        join_prompt(template.fact_prefix, features.fact_text, template.language),
        join_prompt(template.issue_prefix, features.issue_text, template.language),
    ]
    keep = [p for p in parts if p]
    separator = "" if template.language == "zh" else " "
    return separator.join(keep)


def write_run(runs: Mapping[str, RankedList], path: str | Path, tag: str = "promptcase") -> None:
    """TREC run format: qid Q0 docid rank score tag, scores at 6 decimals."""
    lines = []
    for query_id in sorted(runs):
        for rank, (candidate_id, score) in enumerate(runs[query_id].entries, 1):
            lines.append(f"{query_id} Q0 {candidate_id} {rank} {score:.6f} {tag}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_run(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    """Parse a TREC run file back to {query id: [(doc id, score), ...]}."""
    runs: dict[str, list[tuple[str, float]]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise RetrievalError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        query_id, _q0, candidate_id, _rank, score, _tag = fields
        runs.setdefault(query_id, []).append((candidate_id, float(score)))
    return runs


def save_bm25_index(index: Bm25Index, path: str | Path) -> None:
    """Binary snapshot: header, document table, then per-term postings."""

    def encode_str(value: str) -> bytes:
        data = value.encode("utf-8")
        return struct.pack("<H", len(data)) + data

    with open(Path(path), "wb") as fh:
        fh.write(struct.pack("<4sI", INDEX_MAGIC, INDEX_VERSION))
        fh.write(struct.pack("<ddd", index.params.k1, index.params.b, index.avgdl))
        fh.write(encode_str(index.tokenizer_name))
        fh.write(struct.pack("<Q", index.n_docs))
        positions = {doc_id: i for i, doc_id in enumerate(index.doc_ids)}
        for doc_id in index.doc_ids:
            fh.write(encode_str(doc_id))
            fh.write(struct.pack("<I", index.doc_len[doc_id]))
        fh.write(struct.pack("<Q", len(index.df)))
        for term in sorted(index.df):
            fh.write(encode_str(term))
            postings = index.tf.get(term, {})
            fh.write(struct.pack("<II", index.df[term], len(postings)))
            for doc_id in sorted(postings):
                fh.write(struct.pack("<II", positions[doc_id], postings[doc_id]))


def load_bm25_index(path: str | Path) -> Bm25Index:
    blob = Path(path).read_bytes()
    offset = 0

    def take(fmt: str):
        nonlocal offset
        values = struct.unpack_from(fmt, blob, offset)
        offset += struct.calcsize(fmt)
        return values

    def take_str() -> str:
        nonlocal offset
        (length,) = take("<H")
        value = blob[offset : offset + length].decode("utf-8")
        offset += length
        return value

    magic, version = take("<4sI")
    if magic != INDEX_MAGIC:
        raise RetrievalError(f"not an index snapshot: {path}")
    if version != INDEX_VERSION:
        raise RetrievalError(f"unsupported index version {version} in {path}")
    k1, b, avgdl = take("<ddd")
    tokenizer_name = take_str()
    (n_docs,) = take("<Q")
    doc_ids: list[str] = []
    doc_len: dict[str, int] = {}
    for _ in range(n_docs):
        doc_id = take_str()
        (length,) = take("<I")
        doc_ids.append(doc_id)
        doc_len[doc_id] = length
    (n_terms,) = take("<Q")
    df: dict[str, int] = {}
    tf: dict[str, dict[str, int]] = {}
    for _ in range(n_terms):
        term = take_str()
        term_df, n_postings = take("<II")
        df[term] = term_df
        postings: dict[str, int] = {}
        for _ in range(n_postings):
            doc_index, count = take("<II")
            postings[doc_ids[doc_index]] = count
        tf[term] = postings
    return Bm25Index(doc_ids, doc_len, avgdl, df, tf, Bm25Params(k1, b), tokenizer_name)


def dump_bm25_json(index: Bm25Index, path: str | Path) -> None:
    """Readable debug dump of the whole index."""
    body = {
        "params": {"k1": index.params.k1, "b": index.params.b},
        "tokenizer": index.tokenizer_name,
        "avgdl": index.avgdl,
        "doc_len": {d: index.doc_len[d] for d in index.doc_ids},
        "df": dict(sorted(index.df.items())),
        "tf": {term: dict(sorted(postings.items())) for term, postings in sorted(index.tf.items())},
    }
    Path(path).write_text(json.dumps(body, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8")
