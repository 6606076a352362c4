"""Command-line pipeline: ingest, extract, encode, retrieve, evaluate, ablate.

Every command reads one JSON config, writes its outputs atomically under the
run directory, and drops a manifest capturing the resolved configuration and
input hashes so a rerun reproduces the same bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from promptcase import __version__
from promptcase.backend import EmbeddingBackend, EmbeddingCache, make_backend
from promptcase.corpus import (
    Corpus,
    RelevanceJudgments,
    corpus_stats,
    load_coliee_corpus,
    load_corpus_jsonl,
    load_lecard_corpus,
    save_corpus_jsonl,
)
from promptcase.encoding import (
    PromptTemplate,
    ReformulationVariant,
    encode_case,
    encoder_inputs_for,
    instantiate_for_case,
    issue_sample_pool,
    load_representation_store,
    load_template_file,
    load_template_preset,
    save_representation_store,
)
from promptcase.errors import ConfigError, ExtractionError, PromptCaseError, RetrievalError
from promptcase.evaluation import (
    MetricsReport,
    evaluate_run,
    format_metrics_table,
    metrics_csv,
)
from promptcase.extraction import (
    ChargeLexicon,
    LegalFeatures,
    RemoteSummarizer,
    extract_features,
    load_features_jsonl,
    save_features_jsonl,
)
from promptcase.retrieval import (
    Bm25Params,
    RankedList,
    TOKENIZERS,
    bm25_promptcase_text,
    bm25_retrieve,
    build_bm25_index,
    dense_retrieve,
    get_tokenizer,
    read_run,
    two_stage_retrieve,
    write_run,
)

log = logging.getLogger(__name__)

RETRIEVE_MODES = ("bm25", "bm25_promptcase", "dense", "two_stage")
EXTRACT_FAILURE_BUDGET = 0.10

_CONFIG_KEYS = {
    "dataset",
    "out",
    "seed",
    "jobs",
    "tokenizer",
    "bm25",
    "template",
    "variant",
    "backend",
    "mode",
    "stage1_depth",
    "topk",
    "eval_k",
    "summarizer_url",
    "cache",
}


@dataclass
class RunConfig:
    """Resolved run configuration; the manifest serializes it verbatim."""

    dataset: dict
    out: Path
    seed: int
    jobs: int
    tokenizer: str
    bm25: Bm25Params
    template_ref: dict
    variant: ReformulationVariant
    backend_spec: str
    backend_dim: int
    backend_seed: int
    mode: str
    stage1_depth: int
    topk: int
    eval_k: int
    summarizer_url: str | None
    use_cache: bool

    @property
    def language(self) -> str:
        return "zh" if self.dataset["kind"] == "lecard" else "en"

    def load_template(self) -> PromptTemplate:
        if "file" in self.template_ref:
            return load_template_file(self.template_ref["file"])
        return load_template_preset(self.template_ref.get("preset", "a"), self.language)

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "out": str(self.out),
            "seed": self.seed,
            "jobs": self.jobs,
            "tokenizer": self.tokenizer,
            "bm25": {"k1": self.bm25.k1, "b": self.bm25.b},
            "template": self.template_ref,
            "variant": {"feature_mode": self.variant.feature_mode, "use_prompt": self.variant.use_prompt},
            "backend": {"spec": self.backend_spec, "dim": self.backend_dim, "seed": self.backend_seed},
            "mode": self.mode,
            "stage1_depth": self.stage1_depth,
            "topk": self.topk,
            "eval_k": self.eval_k,
            "summarizer_url": self.summarizer_url,
            "cache": self.use_cache,
        }


def _resolve_path(value: str, base: Path) -> str:
    path = Path(value)
    return str(path if path.is_absolute() else base / path)


def load_config(args: argparse.Namespace) -> RunConfig:
    config_path = Path(args.config)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {config_path} must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base = config_path.parent

    dataset = raw.get("dataset")
    if not isinstance(dataset, dict) or "kind" not in dataset:
        raise ConfigError("config needs a dataset object with a 'kind'")
    kind = dataset["kind"]
    if kind == "coliee":
        required = {"root"}
        allowed = {"kind", "root", "labels"}
    elif kind == "lecard":
        required = {"queries", "candidates", "labels"}
        allowed = {"kind", "queries", "candidates", "labels"}
    else:
        raise ConfigError(f"unknown dataset kind {kind!r} (expected 'coliee' or 'lecard')")
    missing = required - set(dataset)
    if missing:
        raise ConfigError(f"dataset kind {kind!r} needs keys: {', '.join(sorted(missing))}")
    extra = set(dataset) - allowed
    if extra:
        raise ConfigError(f"unknown dataset keys: {', '.join(sorted(extra))}")
    dataset = dict(dataset)
    for key in dataset:
        if key != "kind" and dataset[key] is not None:
            dataset[key] = _resolve_path(dataset[key], base)

    out = Path(getattr(args, "out", None) or raw.get("out") or "runs/default")
    if not out.is_absolute():
        out = base / out
    seed = getattr(args, "seed", None)
    seed = int(raw.get("seed", 0)) if seed is None else seed
    jobs = getattr(args, "jobs", None)
    jobs = int(raw.get("jobs", 1)) if jobs is None else jobs
    if jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {jobs}")

    tokenizer = getattr(args, "tokenizer", None) or raw.get("tokenizer")
    if tokenizer is None:
        tokenizer = "chinese_bigram" if kind == "lecard" else "english_simple"
    if tokenizer not in TOKENIZERS:
        raise ConfigError(f"unknown tokenizer {tokenizer!r}")

    bm25_raw = raw.get("bm25", {})
    k1 = getattr(args, "k1", None)
    b = getattr(args, "b", None)
    try:
        bm25 = Bm25Params(
            k1=float(bm25_raw.get("k1", 1.2)) if k1 is None else k1,
            b=float(bm25_raw.get("b", 0.75)) if b is None else b,
        )
    except RetrievalError as exc:
        raise ConfigError(str(exc)) from exc

    template_ref = raw.get("template", {"preset": "a"})
    if not isinstance(template_ref, dict) or not ({"preset", "file"} & set(template_ref)):
        raise ConfigError("template must be {\"preset\": letter} or {\"file\": path}")
    if "file" in template_ref:
        template_ref = {"file": _resolve_path(template_ref["file"], base)}

    variant_raw = raw.get("variant", {})
    variant = ReformulationVariant(
        feature_mode=variant_raw.get("feature_mode", "fact_and_issue"),
        use_prompt=bool(variant_raw.get("use_prompt", True)),
    )

    backend_raw = raw.get("backend", {})
    if isinstance(backend_raw, str):
        backend_raw = {"spec": backend_raw}
    backend_spec = getattr(args, "backend", None) or backend_raw.get("spec", "mock")
    if backend_spec.startswith("file:"):
        backend_spec = "file:" + _resolve_path(backend_spec[len("file:") :], base)
    backend_dim = int(backend_raw.get("dim", 64))
    backend_seed = backend_raw.get("seed")
    backend_seed = seed if backend_seed is None else int(backend_seed)

    mode = getattr(args, "mode", None) or raw.get("mode", "dense")
    if mode not in RETRIEVE_MODES:
        raise ConfigError(f"unknown retrieve mode {mode!r} (expected one of {', '.join(RETRIEVE_MODES)})")
    stage1_depth = getattr(args, "stage1_depth", None)
    stage1_depth = int(raw.get("stage1_depth", 10)) if stage1_depth is None else stage1_depth
    topk = getattr(args, "topk", None)
    topk = int(raw.get("topk", 0)) if topk is None else topk
    if stage1_depth < 1 or topk < 0:
        raise ConfigError("stage1_depth must be positive and topk non-negative")
    eval_k = getattr(args, "k", None)
    eval_k = int(raw.get("eval_k", 5)) if eval_k is None else eval_k
    if eval_k < 1:
        raise ConfigError("eval_k must be positive")

    summarizer_url = raw.get("summarizer_url")
    return RunConfig(
        dataset=dataset,
        out=out,
        seed=seed,
        jobs=jobs,
        tokenizer=tokenizer,
        bm25=bm25,
        template_ref=template_ref,
        variant=variant,
        backend_spec=backend_spec,
        backend_dim=backend_dim,
        backend_seed=backend_seed,
        mode=mode,
        stage1_depth=stage1_depth,
        topk=topk,
        eval_k=eval_k,
        summarizer_url=summarizer_url,
        use_cache=bool(raw.get("cache", True)),
    )


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_manifest(
    config: RunConfig,
    command: str,
    inputs: list[Path],
    outputs: list[str],
    extra: dict | None = None,
) -> None:
    manifest = {
        "command": command,
        "config": config.to_json_dict(),
        "engine_version": __version__,
        "inputs": {str(p): _sha256(p) for p in sorted(inputs)},
        "outputs": sorted(outputs),
    }
    if extra:
        manifest.update(extra)
    _atomic_write_text(
        config.out / f"{command}.manifest.json",
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
    )


def _require(path: Path, hint: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"missing {path.name} in {path.parent} ({hint})")
    return path


def _load_pipeline_corpus(config: RunConfig) -> Corpus:
    return load_corpus_jsonl(_require(config.out / "corpus.jsonl", "run the ingest command first"))


def _load_pipeline_features(config: RunConfig) -> dict[str, LegalFeatures]:
    return load_features_jsonl(_require(config.out / "features.jsonl", "run the extract command first"))


def _load_pipeline_judgments(config: RunConfig, override: str | None = None) -> RelevanceJudgments:
    path = Path(override) if override else config.out / "judgments.json"
    _require(path, "ingest a labeled dataset or pass --judgments")
    return RelevanceJudgments.from_json_dict(json.loads(path.read_text(encoding="utf-8")))


def _map_jobs(fn: Callable, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_ingest(args: argparse.Namespace) -> int:
    config = load_config(args)
    dataset = config.dataset
    judgments: RelevanceJudgments | None = None
    input_files: list[Path] = []
    if dataset["kind"] == "coliee":
        root = Path(dataset["root"])
        corpus = load_coliee_corpus(root)
        input_files = sorted(root.glob("*.txt")) + [root / "queries.manifest"]
        if dataset.get("labels"):
            labels_path = Path(dataset["labels"])
            judgments = RelevanceJudgments.from_json_dict(
                json.loads(labels_path.read_text(encoding="utf-8"))
            )
            input_files.append(labels_path)
    else:
        corpus, judgments = load_lecard_corpus(dataset["queries"], dataset["candidates"], dataset["labels"])
        input_files = [Path(dataset["queries"]), Path(dataset["labels"])]
        input_files += sorted(Path(dataset["candidates"]).glob("*/*.txt"))

    config.out.mkdir(parents=True, exist_ok=True)
    corpus_path = config.out / "corpus.jsonl"
    tmp = config.out / "corpus.jsonl.tmp"
    save_corpus_jsonl(corpus, tmp)
    os.replace(tmp, corpus_path)
    os.replace(
        config.out / "corpus.jsonl.tmp.pools.json",
        config.out / "corpus.jsonl.pools.json",
    )
    outputs = ["corpus.jsonl", "corpus.jsonl.pools.json", "stats.json", "stats.txt"]
    if judgments is not None:
        _atomic_write_text(
            config.out / "judgments.json",
            json.dumps(judgments.to_json_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        )
        outputs.append("judgments.json")

    stats = corpus_stats(corpus, judgments, get_tokenizer(config.tokenizer))
    stats_dict = {
        "num_docs": stats.num_docs,
        "avg_length": stats.avg_length,
        "max_length": stats.max_length,
        "avg_relevant_per_query": stats.avg_relevant_per_query,
        "num_queries": len(corpus.candidate_pools),
        "tokenizer": config.tokenizer,
    }
    _atomic_write_text(
        config.out / "stats.json", json.dumps(stats_dict, sort_keys=True, indent=2) + "\n"
    )
    avg_rel = "-" if stats.avg_relevant_per_query is None else f"{stats.avg_relevant_per_query:.2f}"
    stats_txt = (
        f"{'docs':>8}  {'queries':>8}  {'avg tokens':>11}  {'max tokens':>11}  {'avg rel/query':>14}\n"
        f"{stats.num_docs:>8}  {len(corpus.candidate_pools):>8}  {stats.avg_length:>11.2f}"
        f"  {stats.max_length:>11}  {avg_rel:>14}\n"
    )
    _atomic_write_text(config.out / "stats.txt", stats_txt)
    for issue in corpus.issues:
        log.warning("ingest: %s", issue)
    _write_manifest(config, "ingest", input_files, outputs, {"load_issues": corpus.issues})
    print(f"ingested {stats.num_docs} documents, {len(corpus.candidate_pools)} queries -> {config.out}")
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    config = load_config(args)
    corpus = _load_pipeline_corpus(config)
    summarizer = RemoteSummarizer(config.summarizer_url) if config.summarizer_url else None
    lexicon = ChargeLexicon.default() if config.language == "zh" else None

    failures: list[str] = []

    def extract_one(doc_id: str) -> LegalFeatures | None:
        try:
            return extract_features(corpus.documents[doc_id], lexicon=lexicon, summarizer=summarizer)
        except ExtractionError as exc:
            log.error("extract: %s: %s", doc_id, exc)
            failures.append(f"{doc_id}: {exc}")
            return None

    doc_ids = sorted(corpus.documents)
    results = _map_jobs(extract_one, doc_ids, config.jobs)
    features = [f for f in results if f is not None]
    if not features:
        raise PromptCaseError("extraction produced no features")
    config.out.mkdir(parents=True, exist_ok=True)
    tmp = config.out / "features.jsonl.tmp"
    save_features_jsonl(features, tmp)
    os.replace(tmp, config.out / "features.jsonl")

    counts: dict[str, int] = {}
    for feature in features:
        counts[f"fact:{feature.fact_provenance}"] = counts.get(f"fact:{feature.fact_provenance}", 0) + 1
        counts[f"issue:{feature.issue_provenance}"] = counts.get(f"issue:{feature.issue_provenance}", 0) + 1
    _write_manifest(
        config,
        "extract",
        [config.out / "corpus.jsonl"],
        ["features.jsonl"],
        {"provenance_counts": dict(sorted(counts.items())), "failures": sorted(failures)},
    )
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"extracted {len(features)}/{len(doc_ids)} cases ({summary})")
    failure_rate = len(failures) / len(doc_ids)
    if failure_rate > EXTRACT_FAILURE_BUDGET:
        log.error("extract: %.0f%% of documents failed", failure_rate * 100)
        return 1
    return 0


def _build_backend(config: RunConfig) -> EmbeddingBackend:
    return make_backend(config.backend_spec, mock_dim=config.backend_dim, mock_seed=config.backend_seed)


def _encode_all(
    config: RunConfig,
    corpus: Corpus,
    features: Mapping[str, LegalFeatures],
    template: PromptTemplate,
    variant: ReformulationVariant,
    backend: EmbeddingBackend,
    cache: EmbeddingCache | None,
) -> dict[str, np.ndarray]:
    issue_pool = issue_sample_pool(features, config.language) if template.has_placeholder else []

    def encode_one(case_id: str) -> tuple[str, np.ndarray]:
        case_template = instantiate_for_case(template, case_id, issue_pool, config.seed)
        rep = encode_case(
            features[case_id],
            case_template,
            variant,
            backend,
            raw_text=corpus.documents[case_id].raw_text,
            cache=cache,
        )
        return case_id, rep.e_concat

    case_ids = sorted(set(corpus.documents) & set(features))
    missing = sorted(set(corpus.documents) - set(features))
    if missing:
        log.warning("encode: %d documents lack features and are skipped (first: %s)", len(missing), missing[0])
    if not case_ids:
        raise PromptCaseError("no documents with features to encode")
    return dict(_map_jobs(encode_one, case_ids, config.jobs))


def cmd_encode(args: argparse.Namespace) -> int:
    config = load_config(args)
    corpus = _load_pipeline_corpus(config)
    features = _load_pipeline_features(config)
    backend = _build_backend(config)
    cache = EmbeddingCache(config.out / "cache", backend.descriptor) if config.use_cache else None
    template = config.load_template()
    reps = _encode_all(config, corpus, features, template, config.variant, backend, cache)

    meta = {
        "backend_name": backend.descriptor.name,
        "backend_version": backend.descriptor.version,
        "variant": {"feature_mode": config.variant.feature_mode, "use_prompt": config.variant.use_prompt},
        "template": template.to_json_dict(),
        "seed": config.seed,
    }
    store_path = config.out / "store.bin"
    tmp = config.out / "store.bin.tmp"
    save_representation_store(reps, tmp, meta)
    os.replace(tmp, store_path)
    os.replace(config.out / "store.bin.tmp.ids.json", config.out / "store.bin.ids.json")
    _write_manifest(
        config,
        "encode",
        [config.out / "corpus.jsonl", config.out / "features.jsonl"],
        ["store.bin", "store.bin.ids.json"],
        {"backend_version": backend.descriptor.version, "dim": int(next(iter(reps.values())).shape[0])},
    )
    print(f"encoded {len(reps)} cases with {backend.descriptor.version} -> {store_path}")
    return 0


def _pool_reps(
    reps: Mapping[str, np.ndarray], pool: list[str], query_id: str
) -> dict[str, np.ndarray]:
    missing = [cid for cid in pool if cid not in reps]
    if missing:
        raise RetrievalError(
            f"query {query_id!r}: {len(missing)} pool candidates lack representations "
            f"(first: {missing[0]}); re-run the encode command"
        )
    return {cid: reps[cid] for cid in pool}


def cmd_retrieve(args: argparse.Namespace) -> int:
    config = load_config(args)
    corpus = _load_pipeline_corpus(config)
    query_ids = corpus.query_ids
    if not query_ids:
        raise ConfigError("corpus defines no queries")
    tokenize = get_tokenizer(config.tokenizer)
    runs: dict[str, RankedList] = {}

    needs_store = config.mode in ("dense", "two_stage")
    reps: dict[str, np.ndarray] = {}
    if needs_store:
        store_path = _require(config.out / "store.bin", "run the encode command first")
        reps, _meta = load_representation_store(store_path)

    if config.mode == "bm25_promptcase":
        features = _load_pipeline_features(config)
        template = config.load_template()
        if not config.variant.use_prompt:
            template = load_template_preset("na", config.language)
        issue_pool = issue_sample_pool(features, config.language) if template.has_placeholder else []
        texts = {}
        for doc_id, doc in corpus.documents.items():
            if doc_id not in features:
                raise RetrievalError(f"document {doc_id!r} has no features; re-run the extract command")
            case_template = instantiate_for_case(template, doc_id, issue_pool, config.seed)
            texts[doc_id] = bm25_promptcase_text(doc.raw_text, features[doc_id], case_template)
    else:
        texts = {doc_id: doc.raw_text for doc_id, doc in corpus.documents.items()}

    index_cache: dict[tuple[str, ...], object] = {}

    def index_for(pool: list[str]):
        key = tuple(pool)
        if key not in index_cache:
            index_cache[key] = build_bm25_index({cid: texts[cid] for cid in pool}, tokenize, config.bm25)
        return index_cache[key]

    for query_id in query_ids:
        pool = corpus.pool_for(query_id)
        k = config.topk or len(pool)
        if config.mode in ("bm25", "bm25_promptcase"):
            query_terms = tokenize(texts[query_id])
            runs[query_id] = bm25_retrieve(index_for(pool), query_terms, pool, k, query_id)
        elif config.mode == "dense":
            if query_id not in reps:
                raise RetrievalError(f"query {query_id!r} has no representation; re-run the encode command")
            runs[query_id] = dense_retrieve(reps[query_id], _pool_reps(reps, pool, query_id), k, query_id)
        else:
            if query_id not in reps:
                raise RetrievalError(f"query {query_id!r} has no representation; re-run the encode command")
            k_final = min(config.topk, config.stage1_depth) if config.topk else config.stage1_depth
            runs[query_id] = two_stage_retrieve(
                index_for(pool),
                tokenize(texts[query_id]),
                reps[query_id],
                {cid: reps[cid] for cid in pool if cid in reps},
                pool,
                k_final=k_final,
                k_first=config.stage1_depth,
                query_id=query_id,
            )

    config.out.mkdir(parents=True, exist_ok=True)
    run_path = config.out / "run.trec"
    tmp = config.out / "run.trec.tmp"
    write_run(runs, tmp, tag=config.mode)
    os.replace(tmp, run_path)
    manifest_inputs = [config.out / "corpus.jsonl"]
    if needs_store:
        manifest_inputs.append(config.out / "store.bin")
    if config.mode == "bm25_promptcase":
        manifest_inputs.append(config.out / "features.jsonl")
    _write_manifest(config, "retrieve", manifest_inputs, ["run.trec"], {"n_queries": len(runs)})
    print(f"retrieved {len(runs)} queries ({config.mode}) -> {run_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args)
    run_path = Path(args.run) if args.run else config.out / "run.trec"
    _require(run_path, "run the retrieve command first or pass --run")
    judgments = _load_pipeline_judgments(config, args.judgments)
    run = read_run(run_path)
    report = evaluate_run(run, judgments, k=config.eval_k)
    label = config.mode
    table = format_metrics_table([(label, report)])
    config.out.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(
        config.out / "report.json",
        json.dumps(report.to_json_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
    )
    _atomic_write_text(config.out / "report.csv", metrics_csv([(label, report)]))
    _atomic_write_text(config.out / "report.txt", table)
    inputs = [run_path]
    judgments_path = Path(args.judgments) if args.judgments else config.out / "judgments.json"
    inputs.append(judgments_path)
    _write_manifest(config, "evaluate", inputs, ["report.json", "report.csv", "report.txt"])
    sys.stdout.write(table)
    if not report.within_bound:
        log.warning(
            "mean R@%d %.4f exceeds the k/m bound %.4f (non-uniform relevant-set sizes)",
            report.k,
            report.recall,
            report.recall_bound,
        )
    return 0


def _grid_row(
    label: str,
    config: RunConfig,
    corpus: Corpus,
    features: Mapping[str, LegalFeatures],
    judgments: RelevanceJudgments,
    template: PromptTemplate,
    variant: ReformulationVariant,
    backend: EmbeddingBackend,
    cache: EmbeddingCache | None,
) -> tuple[dict, MetricsReport | None]:
    try:
        reps = _encode_all(config, corpus, features, template, variant, backend, cache)
        runs: dict[str, RankedList] = {}
        for query_id in corpus.query_ids:
            pool = corpus.pool_for(query_id)
            runs[query_id] = dense_retrieve(
                reps[query_id], _pool_reps(reps, pool, query_id), len(pool), query_id
            )
        report = evaluate_run(runs, judgments, k=config.eval_k)
        return {"label": label, "status": "ok", "metrics": report.aggregates()}, report
    except PromptCaseError as exc:
        log.error("ablate: row %s failed: %s", label, exc)
        return {"label": label, "status": "FAILED", "error": str(exc), "metrics": None}, None


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args)
    corpus = _load_pipeline_corpus(config)
    features = _load_pipeline_features(config)
    judgments = _load_pipeline_judgments(config)
    backend = _build_backend(config)
    cache = EmbeddingCache(config.out / "cache", backend.descriptor) if config.use_cache else None
    base_template = load_template_preset("a", config.language)

    variant_rows: list[dict] = []
    table_rows: list[tuple[str, MetricsReport]] = []
    for use_prompt in (False, True):
        for feature_mode in ("whole_text", "fact_and_issue"):
            label = f"prompt={'on' if use_prompt else 'off'} leg_feat={'on' if feature_mode == 'fact_and_issue' else 'off'}"
            variant = ReformulationVariant(feature_mode=feature_mode, use_prompt=use_prompt)
            row, report = _grid_row(
                label, config, corpus, features, judgments, base_template, variant, backend, cache
            )
            row.update({"use_prompt": use_prompt, "feature_mode": feature_mode})
            variant_rows.append(row)
            if report is not None:
                table_rows.append((label, report))

    template_rows: list[dict] = []
    full = ReformulationVariant(feature_mode="fact_and_issue", use_prompt=True)
    for preset in ("a", "b", "c", "d", "e", "f", "g"):
        template = load_template_preset(preset, config.language)
        label = f"template={preset.upper()}"
        row, report = _grid_row(
            label, config, corpus, features, judgments, template, full, backend, cache
        )
        row.update({"preset": preset.upper(), "category": template.category})
        template_rows.append(row)
        if report is not None:
            table_rows.append((label, report))

    # The no-prompt template must reduce to the prompt-off variant exactly:
    # identical encoder inputs for every case, not merely equal metrics.
    na_template = load_template_preset("na", config.language)
    prompt_off = ReformulationVariant(feature_mode="fact_and_issue", use_prompt=False)
    na_identity = all(
        encoder_inputs_for(features[cid], na_template, full, corpus.documents[cid].raw_text)
        == encoder_inputs_for(features[cid], base_template, prompt_off, corpus.documents[cid].raw_text)
        for cid in sorted(set(corpus.documents) & set(features))
    )

    grid = {
        "seed": config.seed,
        "eval_k": config.eval_k,
        "na_input_identity": na_identity,
        "variant_rows": variant_rows,
        "template_rows": template_rows,
    }
    config.out.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(
        config.out / "grid.json", json.dumps(grid, ensure_ascii=False, sort_keys=True, indent=2) + "\n"
    )
    lines = []
    if table_rows:
        lines.append(format_metrics_table(table_rows).rstrip("\n"))
    failed = [row["label"] for row in variant_rows + template_rows if row["status"] == "FAILED"]
    for label in failed:
        lines.append(f"{label}  FAILED")
    lines.append(f"na_input_identity: {'yes' if na_identity else 'NO'}")
    grid_txt = "\n".join(lines) + "\n"
    _atomic_write_text(config.out / "grid.txt", grid_txt)
    if table_rows:
        _atomic_write_text(config.out / "grid.csv", metrics_csv(table_rows))
    _write_manifest(
        config,
        "ablate",
        [config.out / "corpus.jsonl", config.out / "features.jsonl", config.out / "judgments.json"],
        ["grid.json", "grid.txt"] + (["grid.csv"] if table_rows else []),
        {"backend_version": backend.descriptor.version},
    )
    sys.stdout.write(grid_txt)
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptcase",
        description="Legal case retrieval: feature extraction, prompt-based encoding, ranking, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", required=True, help="JSON run configuration file")
        sub.add_argument("--out", default=None, help="output directory (overrides config)")
        sub.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
        sub.add_argument("--jobs", type=int, default=None, help="parallel workers (overrides config)")

    p = subparsers.add_parser("ingest", help="load and normalize a dataset")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = subparsers.add_parser("extract", help="extract legal facts and issues")
    common(p)
    p.set_defaults(func=cmd_extract)

    p = subparsers.add_parser("encode", help="encode cases into representations")
    common(p)
    p.add_argument("--backend", default=None, help="backend spec: mock, file:<dir>, or service URL")
    p.set_defaults(func=cmd_encode)

    p = subparsers.add_parser("retrieve", help="rank candidates per query")
    common(p)
    p.add_argument("--mode", choices=RETRIEVE_MODES, default=None)
    p.add_argument("--tokenizer", choices=TOKENIZERS, default=None)
    p.add_argument("--k1", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--stage1-depth", dest="stage1_depth", type=int, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.set_defaults(func=cmd_retrieve)

    p = subparsers.add_parser("evaluate", help="score a run against judgments")
    common(p)
    p.add_argument("--run", default=None, help="run file (default: <out>/run.trec)")
    p.add_argument("--judgments", default=None, help="judgments JSON (default: <out>/judgments.json)")
    p.add_argument("--k", type=int, default=None, help="cutoff (default 5)")
    p.set_defaults(func=cmd_evaluate)

    p = subparsers.add_parser("ablate", help="run the variant and template grids")
    common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PromptCaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
