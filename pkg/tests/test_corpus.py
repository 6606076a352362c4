"""Corpus loading, normalization, and the two dataset layouts."""

import json

import pytest

from promptcase.corpus import (
    CaseDocument,
    Corpus,
    CorpusStats,
    RelevanceJudgments,
    corpus_stats,
    is_french_paragraph,
    load_coliee_corpus,
    load_corpus_jsonl,
    load_lecard_corpus,
    normalize_text,
    remove_french_paragraphs,
    save_corpus_jsonl,
)
from promptcase.errors import CorpusError
from conftest import COLIEE_TEXTS, write_coliee_dir, write_lecard_dirs


def test_normalize_collapses_whitespace():
    assert normalize_text("a  b\tc\n d") == "a b c d"


def test_normalize_keeps_paragraph_breaks():
    text = "first  paragraph\n\n\n  second\nparagraph"
    assert normalize_text(text) == "first paragraph\n\nsecond paragraph"


def test_normalize_applies_nfc():
    decomposed = "décision"  # e + combining acute
    assert normalize_text(decomposed) == "décision"


def test_normalize_drops_empty_paragraphs():
    assert normalize_text("\n\n  \n\nonly one\n\n \n") == "only one"


def test_french_paragraph_detected():
    para = "Les motifs du jugement sont les suivants et la cour est pour le demandeur"
    assert is_french_paragraph(para)


def test_english_paragraph_not_french():
    para = "The court considered the motion and dismissed it with costs to the respondent"
    assert not is_french_paragraph(para)


def test_french_filter_needs_ratio():
    # "le" alone in a long English sentence stays below the threshold.
    para = "The le word appears once in this otherwise plainly English sentence about appeals"
    assert not is_french_paragraph(para)


def test_remove_french_paragraphs_keeps_english():
    text = normalize_text(COLIEE_TEXTS["003"])
    cleaned = remove_french_paragraphs(text)
    assert "Les motifs" not in cleaned
    assert "question of standing" in cleaned
    assert remove_french_paragraphs(cleaned) == cleaned


def test_document_validation():
    with pytest.raises(CorpusError):
        CaseDocument(id="", jurisdiction="common_law", language="en", raw_text="x")
    with pytest.raises(CorpusError):
        CaseDocument(id="a", jurisdiction="maritime", language="en", raw_text="x")
    with pytest.raises(CorpusError):
        CaseDocument(id="a", jurisdiction="common_law", language="fr", raw_text="x")
    with pytest.raises(CorpusError):
        CaseDocument(id="a", jurisdiction="common_law", language="en", raw_text="")


def test_document_section_spans():
    doc = CaseDocument(
        id="a",
        jurisdiction="common_law",
        language="en",
        raw_text="0123456789",
        sections={"name": (0, 3), "background": (3, 7)},
    )
    assert doc.section_text("name") == "012"
    assert doc.section_text("background") == "3456"
    assert doc.section_text("order") is None


def test_document_rejects_bad_sections():
    with pytest.raises(CorpusError):
        CaseDocument("a", "common_law", "en", "0123", sections={"name": (0, 9)})
    with pytest.raises(CorpusError):
        CaseDocument("a", "common_law", "en", "0123", sections={"footnotes": (0, 2)})
    with pytest.raises(CorpusError):
        CaseDocument(
            "a", "common_law", "en", "0123456789",
            sections={"name": (0, 5), "background": (4, 8)},
        )


def _tiny_corpus():
    docs = {
        cid: CaseDocument(cid, "common_law", "en", f"text of {cid}")
        for cid in ("a", "b", "c")
    }
    return Corpus(docs, {"a": None, "b": ["a", "c"]})


def test_pool_sentinel_excludes_query():
    corpus = _tiny_corpus()
    assert corpus.pool_for("a") == ["b", "c"]
    assert corpus.pool_for("b") == ["a", "c"]
    assert corpus.query_ids == ["a", "b"]


def test_pool_unknown_query():
    with pytest.raises(CorpusError):
        _tiny_corpus().pool_for("nope")


def test_corpus_rejects_dangling_references():
    docs = {"a": CaseDocument("a", "common_law", "en", "x")}
    with pytest.raises(CorpusError):
        Corpus(docs, {"z": None})
    with pytest.raises(CorpusError):
        Corpus(docs, {"a": ["ghost"]})


def test_judgments_reject_empty_set():
    with pytest.raises(CorpusError):
        RelevanceJudgments({"q": set()})


def test_judgments_roundtrip_and_avg():
    j = RelevanceJudgments({"q1": {"a", "b"}, "q2": {"c"}})
    assert j.avg_relevant_per_query() == pytest.approx(1.5)
    restored = RelevanceJudgments.from_json_dict(j.to_json_dict())
    assert restored.judgments == j.judgments


def test_corpus_stats_values():
    corpus = Corpus(
        {
            "a": CaseDocument("a", "common_law", "en", "one two three"),
            "b": CaseDocument("b", "common_law", "en", "one"),
        }
    )
    stats = corpus_stats(corpus)
    assert stats.num_docs == 2
    assert stats.avg_length == pytest.approx(2.0)
    assert stats.max_length == 3
    assert stats.avg_relevant_per_query is None


def test_corpus_stats_invariant():
    with pytest.raises(CorpusError):
        CorpusStats(num_docs=1, avg_length=5.0, max_length=3)


def test_load_coliee(coliee_dir):
    corpus = load_coliee_corpus(coliee_dir)
    assert set(corpus.documents) == set(COLIEE_TEXTS)
    assert corpus.query_ids == ["001", "002"]
    assert corpus.pool_for("001") == ["002", "003", "004", "005"]
    doc = corpus.documents["003"]
    assert doc.jurisdiction == "common_law" and doc.language == "en"
    assert "Les motifs" not in doc.raw_text  # French paragraph stripped


def test_load_coliee_missing_manifest(tmp_path):
    root = tmp_path / "cases"
    root.mkdir()
    (root / "001.txt").write_text("Some case text.", encoding="utf-8")
    with pytest.raises(CorpusError, match="queries.manifest"):
        load_coliee_corpus(root)


def test_load_coliee_unknown_query(tmp_path):
    root = write_coliee_dir(tmp_path / "cases", queries=("001", "999"))
    with pytest.raises(CorpusError, match="999"):
        load_coliee_corpus(root)


def test_load_coliee_empty_dir(tmp_path):
    root = tmp_path / "empty"
    root.mkdir()
    with pytest.raises(CorpusError, match="no case files"):
        load_coliee_corpus(root)


def test_load_coliee_records_unreadable_files(tmp_path):
    root = write_coliee_dir(tmp_path / "cases")
    # A directory matching *.txt cannot be read as a file; it must be
    # reported in issues, not crash the load.
    (root / "broken.txt").mkdir()
    corpus = load_coliee_corpus(root)
    assert any("broken.txt" in issue for issue in corpus.issues)
    assert "broken" not in corpus.documents


def test_load_lecard(lecard_dirs):
    queries, candidates, labels = lecard_dirs
    corpus, judgments = load_lecard_corpus(queries, candidates, labels)
    assert corpus.query_ids == ["q1", "q2", "q3"]
    assert len(corpus.pool_for("q1")) == 8
    assert corpus.documents["q1"].language == "zh"
    assert judgments.relevant("q1") == {"c101", "c102"}
    # non-100 pools are diagnostics, not errors
    assert any("!= 100" in issue for issue in corpus.issues)


def test_load_lecard_duplicate_candidate_content(tmp_path):
    queries, candidates, labels = write_lecard_dirs(tmp_path / "lecard")
    # same candidate id under two queries with identical bytes: fine
    shared = candidates / "q1" / "c201.txt"
    shared.write_text((candidates / "q2" / "c201.txt").read_text(encoding="utf-8"), encoding="utf-8")
    corpus, _ = load_lecard_corpus(queries, candidates, labels)
    assert "c201" in corpus.pool_for("q1")
    # now diverge the content: fatal
    shared.write_text("某某法院判决书。经审理查明：不同的内容。", encoding="utf-8")
    with pytest.raises(CorpusError, match="c201"):
        load_lecard_corpus(queries, candidates, labels)


def test_load_lecard_label_missing_candidate(tmp_path):
    queries, candidates, labels = write_lecard_dirs(tmp_path / "lecard")
    data = json.loads(labels.read_text(encoding="utf-8"))
    data["q1"].append("c999")
    labels.write_text(json.dumps(data, ensure_ascii=False), encoding="utf-8")
    with pytest.raises(CorpusError, match="c999"):
        load_lecard_corpus(queries, candidates, labels)


def test_load_lecard_drops_empty_relevant_set(tmp_path):
    queries, candidates, labels = write_lecard_dirs(tmp_path / "lecard")
    data = json.loads(labels.read_text(encoding="utf-8"))
    data["q3"] = []
    labels.write_text(json.dumps(data, ensure_ascii=False), encoding="utf-8")
    corpus, judgments = load_lecard_corpus(queries, candidates, labels)
    assert "q3" not in judgments.judgments
    assert any("q3" in issue and "empty relevant" in issue for issue in corpus.issues)


def test_corpus_jsonl_roundtrip(tmp_path, lecard_dirs):
    queries, candidates, labels = lecard_dirs
    corpus, _ = load_lecard_corpus(queries, candidates, labels)
    path = tmp_path / "corpus.jsonl"
    save_corpus_jsonl(corpus, path)
    restored = load_corpus_jsonl(path)
    assert set(restored.documents) == set(corpus.documents)
    for cid, doc in corpus.documents.items():
        assert restored.documents[cid].raw_text == doc.raw_text
        assert restored.documents[cid].jurisdiction == doc.jurisdiction
    assert {q: sorted(p) for q, p in restored.candidate_pools.items()} == {
        q: sorted(p) for q, p in corpus.candidate_pools.items()
    }


def test_corpus_jsonl_roundtrip_sentinel_and_sections(tmp_path):
    doc = CaseDocument(
        "a", "common_law", "en", "0123456789", sections={"background": (2, 8)}
    )
    corpus = Corpus({"a": doc, "b": CaseDocument("b", "common_law", "en", "xy")}, {"a": None})
    path = tmp_path / "c.jsonl"
    save_corpus_jsonl(corpus, path)
    restored = load_corpus_jsonl(path)
    assert restored.candidate_pools == {"a": None}
    assert restored.documents["a"].section_text("background") == "234567"
