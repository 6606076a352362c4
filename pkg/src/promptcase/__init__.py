"""Legal case retrieval engine.

Pipeline: load a case corpus, extract legal facts and legal issues, encode
them with prompt-prefixed dual and cross inputs through a pluggable
embedding backend, rank candidates by dot-product similarity (optionally
two-stage on top of BM25), and evaluate the rankings.
"""

__version__ = "0.1.0"

from promptcase.corpus import CaseDocument, Corpus, CorpusStats, RelevanceJudgments
from promptcase.extraction import ChargeLexicon, LegalFeatures, extract_features
from promptcase.encoding import CaseRepresentation, PromptTemplate, ReformulationVariant, encode_case, similarity
from promptcase.backend import EmbeddingBackend, EncoderInput, MockBackend, RemoteBackend
from promptcase.retrieval import Bm25Index, RankedList, build_bm25_index, bm25_retrieve, dense_retrieve, two_stage_retrieve
from promptcase.evaluation import MetricsReport, evaluate_run

__all__ = [
    "CaseDocument",
    "Corpus",
    "CorpusStats",
    "RelevanceJudgments",
    "ChargeLexicon",
    "LegalFeatures",
    "extract_features",
    "CaseRepresentation",
    "PromptTemplate",
    "ReformulationVariant",
    "encode_case",
    "similarity",
    "EmbeddingBackend",
    "EncoderInput",
    "MockBackend",
    "RemoteBackend",
    "Bm25Index",
    "RankedList",
    "build_bm25_index",
    "bm25_retrieve",
    "dense_retrieve",
    "two_stage_retrieve",
    "MetricsReport",
    "evaluate_run",
]
