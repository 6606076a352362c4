"""Prompt-prefixed input building, case encoding, and similarity.

A case is encoded from its extracted features three ways: the fact text and
issue text separately (dual), and both together as a two-segment input
(cross). The case representation concatenates the three vectors; reduced
variants (fact only, issue only, whole text) keep a single vector instead.
Similarity between cases is the dot product of their representations.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from promptcase.backend import (
    EmbeddingBackend,
    EmbeddingCache,
    EncoderInput,
    cache_get_or_embed,
    embed_batch,
    fnv1a64,
)
from promptcase.errors import ConfigError, DimensionMismatchError, PromptCaseError
from promptcase.extraction import LegalFeatures, split_sentences_en

TEMPLATE_CATEGORIES = ("none", "instructive", "misleading", "irrelevant")
FEATURE_MODES = ("whole_text", "fact_only", "issue_only", "fact_and_issue")
TEMPLATE_PRESETS = ("a", "b", "c", "d", "e", "f", "g", "na")

ISSUE_PLACEHOLDER = "$<issue>"
MERGED_PROMPT = {"en": "Legal facts and legal issues:", "zh": "法律事实和法律纠纷："}

STORE_MAGIC = b"PCRS"
STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, count


@dataclass(frozen=True)
class PromptTemplate:
    """Prefix pair prepended to fact and issue text before encoding."""

    fact_prefix: str
    issue_prefix: str
    language: str
    category: str

    def __post_init__(self) -> None:
        if self.category not in TEMPLATE_CATEGORIES:
            raise ConfigError(f"unknown template category {self.category!r}")
        if self.language not in ("en", "zh"):
            raise ConfigError(f"unknown template language {self.language!r}")
        if self.category != "none" and not (self.fact_prefix and self.issue_prefix):
            raise ConfigError("prefixes may be empty only for the no-prompt template")

    @property
    def has_placeholder(self) -> bool:
        return ISSUE_PLACEHOLDER in self.fact_prefix or ISSUE_PLACEHOLDER in self.issue_prefix

    def instantiate(self, issue_sample: str) -> "PromptTemplate":
        """Fill the sampled-issue placeholder of a misleading template."""
        if not self.has_placeholder:
            return self
        return PromptTemplate(
            fact_prefix=self.fact_prefix.replace(ISSUE_PLACEHOLDER, issue_sample),
            issue_prefix=self.issue_prefix.replace(ISSUE_PLACEHOLDER, issue_sample),
            language=self.language,
            category=self.category,
        )

    def to_json_dict(self) -> dict[str, str]:
        return {
            "category": self.category,
            "language": self.language,
            "fact_prefix": self.fact_prefix,
            "issue_prefix": self.issue_prefix,
        }


def _template_from_dict(record: Mapping[str, str], source: str) -> PromptTemplate:
    try:
        return PromptTemplate(
            fact_prefix=record["fact_prefix"],
            issue_prefix=record["issue_prefix"],
            language=record["language"],
            category=record["category"],
        )
    except KeyError as exc:
        raise ConfigError(f"template {source}: missing field {exc}") from exc


def load_template_preset(name: str, language: str) -> PromptTemplate:
    """Load one of the shipped presets a-g (prompt texts) or na (no prompt)."""
    key = name.lower()
    if key not in TEMPLATE_PRESETS:
        raise ConfigError(f"unknown template preset {name!r} (expected one of {', '.join(TEMPLATE_PRESETS)})")
    resource = resources.files("promptcase.assets").joinpath(f"templates/{key}_{language}.json")
    try:
        text = resource.read_text("utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"no preset {name!r} for language {language!r}") from exc
    return _template_from_dict(json.loads(text), f"preset {name}/{language}")


def load_template_file(path: str | Path) -> PromptTemplate:
    return _template_from_dict(json.loads(Path(path).read_text(encoding="utf-8")), str(path))


@dataclass(frozen=True)
class ReformulationVariant:
    """Which features feed the encoder, and whether prompts are prepended."""

    feature_mode: str
    use_prompt: bool

    def __post_init__(self) -> None:
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"unknown feature mode {self.feature_mode!r}")


def join_prompt(prefix: str, text: str, language: str) -> str:
    """Prefix joining: single space in English, none in Chinese (the prefix
    already ends with a full-width colon). Degenerate parts pass through."""
    if not prefix:
        return text
    if not text:
        return prefix
    if language == "zh":
        return prefix + text
    return prefix + " " + text


def build_dual_inputs(features: LegalFeatures, template: PromptTemplate) -> tuple[EncoderInput, EncoderInput]:
    fact = join_prompt(template.fact_prefix, features.fact_text, template.language)
    issue = join_prompt(template.issue_prefix, features.issue_text, template.language)
    return EncoderInput.single(fact), EncoderInput.single(issue)


def build_cross_input(features: LegalFeatures, template: PromptTemplate) -> EncoderInput:
    fact = join_prompt(template.fact_prefix, features.fact_text, template.language)
    issue = join_prompt(template.issue_prefix, features.issue_text, template.language)
    return EncoderInput.pair(fact, issue)


def build_whole_text_input(raw_text: str, language: str, use_prompt: bool) -> EncoderInput:
    if use_prompt:
        return EncoderInput.single(join_prompt(MERGED_PROMPT[language], raw_text, language))
    return EncoderInput.single(raw_text)


NO_PROMPT_EN = PromptTemplate("", "", "en", "none")
NO_PROMPT_ZH = PromptTemplate("", "", "zh", "none")


def effective_template(template: PromptTemplate, variant: ReformulationVariant) -> PromptTemplate:
    """Resolve the template actually applied under a variant (prompt off
    replaces any template with the empty one)."""
    if variant.use_prompt:
        return template
    return NO_PROMPT_EN if template.language == "en" else NO_PROMPT_ZH


def encoder_inputs_for(
    features: LegalFeatures,
    template: PromptTemplate,
    variant: ReformulationVariant,
    raw_text: str | None = None,
) -> list[EncoderInput]:
    """The exact encoder inputs a variant produces for one case, in the order
    encode_case consumes them. Exposed so input-identity can be asserted
    without touching a backend."""
    template = effective_template(template, variant)
    if variant.feature_mode == "whole_text":
        if raw_text is None:
            raise ConfigError("whole_text variant needs the document text")
        return [build_whole_text_input(raw_text, template.language, variant.use_prompt)]
    fact_input, issue_input = build_dual_inputs(features, template)
    if variant.feature_mode == "fact_only":
        return [fact_input]
    if variant.feature_mode == "issue_only":
        return [issue_input]
    return [fact_input, issue_input, build_cross_input(features, template)]


@dataclass(frozen=True)
class CaseRepresentation:
    """Encoded case: concatenated vector plus the parts that produced it.

    For the full variant e_concat = [e_fact ; e_issue ; e_cross]. Reduced
    variants keep the single vector in e_concat with the part slots unset.
    """

    case_id: str
    e_concat: np.ndarray
    mode: str = "fact_and_issue"
    e_fact: np.ndarray | None = None
    e_issue: np.ndarray | None = None
    e_cross: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.mode not in FEATURE_MODES:
            raise PromptCaseError(f"unknown representation mode {self.mode!r}")
        if not np.isfinite(self.e_concat).all():
            raise PromptCaseError(f"case {self.case_id!r}: non-finite representation")
        parts = [p for p in (self.e_fact, self.e_issue, self.e_cross) if p is not None]
        if self.mode == "fact_and_issue":
            if len(parts) != 3:
                raise PromptCaseError(f"case {self.case_id!r}: full representation needs all three parts")
            dims = {p.shape[0] for p in parts}
            if len(dims) != 1:
                raise DimensionMismatchError(f"case {self.case_id!r}: sub-vector dims differ: {sorted(dims)}")
        if parts and not np.array_equal(self.e_concat, np.concatenate(parts)):
            raise PromptCaseError(f"case {self.case_id!r}: e_concat does not match its parts")

    @property
    def dim(self) -> int:
        return int(self.e_concat.shape[0])


@dataclass(frozen=True)
class SimilarityScore:
    query_id: str
    candidate_id: str
    score: float


def similarity(rep_q: CaseRepresentation, rep_d: CaseRepresentation) -> SimilarityScore:
    """Dot product of the concatenated representations, in double precision."""
    if rep_q.dim != rep_d.dim:
        raise DimensionMismatchError(f"query dim {rep_q.dim} != candidate dim {rep_d.dim}")
    score = float(np.dot(rep_q.e_concat.astype(np.float64), rep_d.e_concat.astype(np.float64)))
    return SimilarityScore(rep_q.case_id, rep_d.case_id, score)


def encode_case(
    features: LegalFeatures,
    template: PromptTemplate,
    variant: ReformulationVariant,
    backend: EmbeddingBackend,
    raw_text: str | None = None,
    cache: EmbeddingCache | None = None,
) -> CaseRepresentation:
    """Encode one case under a variant; the full variant embeds dual + cross."""
    inputs = encoder_inputs_for(features, template, variant, raw_text)
    if cache is not None:
        vectors = cache_get_or_embed(cache, backend, inputs)
    else:
        vectors = embed_batch(backend, inputs)
    case_id = features.case_id
    if variant.feature_mode == "fact_and_issue":
        e_fact, e_issue, e_cross = vectors
        return CaseRepresentation(
            case_id=case_id,
            e_concat=np.concatenate([e_fact, e_issue, e_cross]),
            mode=variant.feature_mode,
            e_fact=e_fact,
            e_issue=e_issue,
            e_cross=e_cross,
        )
    (vector,) = vectors
    slots: dict[str, np.ndarray] = {}
    if variant.feature_mode == "fact_only":
        slots["e_fact"] = vector
    elif variant.feature_mode == "issue_only":
        slots["e_issue"] = vector
    return CaseRepresentation(case_id=case_id, e_concat=vector, mode=variant.feature_mode, **slots)


def issue_sample_pool(features_by_id: Mapping[str, LegalFeatures], language: str) -> list[str]:
    """Distinct issue units across the corpus, sorted: the sampling pool for
    misleading prompts. Chinese issue lists split on the enumeration comma;
    English issue text splits into sentences."""
    units: set[str] = set()
    for feature in features_by_id.values():
        if not feature.issue_text:
            continue
        if language == "zh":
            units.update(u for u in feature.issue_text.split("、") if u)
        else:
            units.update(split_sentences_en(feature.issue_text))
    return sorted(units)


def instantiate_for_case(
    template: PromptTemplate,
    case_id: str,
    issue_pool: Sequence[str],
    seed: int,
) -> PromptTemplate:
    """Resolve a misleading template for one case: the sampled issue is chosen
    by hashing (seed, case_id) over the pool, so a fixed seed reproduces the
    whole grid. Templates without a placeholder pass through unchanged."""
    if not template.has_placeholder:
        return template
    if not issue_pool:
        return template.instantiate("")
    sample = issue_pool[fnv1a64(case_id, seed) % len(issue_pool)]
    return template.instantiate(sample)


def _ids_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".ids.json")


def save_representation_store(
    reps: Mapping[str, np.ndarray],
    path: str | Path,
    meta: Mapping | None = None,
) -> None:
    """Write vectors as fixed-width binary records plus a JSON id sidecar.

    Records are ordered by case id; each is the FNV-1a hash of the id
    followed by the little-endian float32 vector.
    """
    if not reps:
        raise PromptCaseError("refusing to write an empty representation store")
    path = Path(path)
    ids = sorted(reps)
    dims = {int(reps[i].shape[0]) for i in ids}
    if len(dims) != 1:
        raise DimensionMismatchError(f"mixed vector dims in store: {sorted(dims)}")
    dim = dims.pop()
    with open(path, "wb") as fh:
        fh.write(_STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, dim, len(ids)))
        for case_id in ids:
            fh.write(struct.pack("<Q", fnv1a64(case_id)))
            fh.write(np.ascontiguousarray(reps[case_id], dtype="<f4").tobytes())
    sidecar = {
        "dim": dim,
        "ids": {case_id: f"{fnv1a64(case_id):016x}" for case_id in ids},
        "meta": dict(meta or {}),
        "version": STORE_VERSION,
    }
    _ids_sidecar(path).write_text(
        json.dumps(sidecar, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_representation_store(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a store back as {case_id: vector} plus the sidecar meta dict."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _STORE_HEADER.size:
        raise PromptCaseError(f"not a representation store: {path}")
    magic, version, dim, count = _STORE_HEADER.unpack_from(blob, 0)
    if magic != STORE_MAGIC:
        raise PromptCaseError(f"not a representation store: {path}")
    if version != STORE_VERSION:
        raise PromptCaseError(f"unsupported store version {version} in {path}")
    record_size = 8 + 4 * dim
    if len(blob) != _STORE_HEADER.size + count * record_size:
        raise PromptCaseError(f"store {path} is truncated or padded")
    sidecar_path = _ids_sidecar(path)
    if not sidecar_path.is_file():
        raise PromptCaseError(f"missing id sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    by_hash = {int(h, 16): case_id for case_id, h in sidecar["ids"].items()}
    if len(by_hash) != count:
        raise PromptCaseError(f"sidecar lists {len(by_hash)} ids, store holds {count}")
    reps: dict[str, np.ndarray] = {}
    offset = _STORE_HEADER.size
    for _ in range(count):
        (id_hash,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        case_id = by_hash.get(id_hash)
        if case_id is None:
            raise PromptCaseError(f"store record hash {id_hash:016x} not in sidecar")
        reps[case_id] = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
    return reps, sidecar.get("meta", {})


def export_representations_jsonl(reps: Mapping[str, np.ndarray], path: str | Path) -> None:
    lines = [
        json.dumps({"id": case_id, "vector": [float(x) for x in reps[case_id]]}, ensure_ascii=False)
        for case_id in sorted(reps)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
