"""Embedding backends behind one contract, plus a content-addressed cache.

Backends turn EncoderInputs (one segment for dual encoding, two for cross
encoding) into fixed-dimension float32 vectors. Shipped implementations: a
deterministic hashed bag-of-words mock, an HTTP client for a remote encoder
service, and a file backend serving previously cached vectors offline.
"""

from __future__ import annotations

import abc
import json
import logging
import math
import os
import struct
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from promptcase.errors import BackendError, ConfigError, DimensionMismatchError

log = logging.getLogger(__name__)

ENV_EMBED_URL = "PROMPTCASE_EMBED_URL"
ENV_EMBED_TIMEOUT_MS = "PROMPTCASE_EMBED_TIMEOUT_MS"

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF

# Joins the two segments of a cross input in the mock tokenizer, standing in
# for the [SEP] boundary a real encoder would see.
SEGMENT_MARKER = "\x1e[SEG]\x1e"


def fnv1a64(text: str, seed: int = 0) -> int:
    """FNV-1a 64-bit over the seed (8 little-endian bytes) then UTF-8 text."""
    h = FNV64_OFFSET
    data = (seed & _U64_MASK).to_bytes(8, "little") + text.encode("utf-8")
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _U64_MASK
    return h


def is_cjk_char(ch: str) -> bool:
    code = ord(ch)
    return (
        0x4E00 <= code <= 0x9FFF
        or 0x3400 <= code <= 0x4DBF
        or 0xF900 <= code <= 0xFAFF
    )


def mock_tokenize(text: str) -> list[str]:
    """Whitespace tokens, except each CJK character stands alone."""
    tokens: list[str] = []
    buf: list[str] = []
    for ch in text:
        if is_cjk_char(ch):
            if buf:
                tokens.append("".join(buf))
                buf = []
            tokens.append(ch)
        elif ch.isspace():
            if buf:
                tokens.append("".join(buf))
                buf = []
        else:
            buf.append(ch)
    if buf:
        tokens.append("".join(buf))
    return tokens


@dataclass(frozen=True)
class EncoderInput:
    """One or two text segments; two segments form a cross-encoding pair."""

    segments: tuple[str, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.segments) <= 2:
            raise BackendError(f"encoder input needs 1 or 2 segments, got {len(self.segments)}")
        if any(not isinstance(s, str) for s in self.segments):
            raise BackendError("encoder input segments must be strings")

    @classmethod
    def single(cls, text: str) -> "EncoderInput":
        return cls((text,))

    @classmethod
    def pair(cls, first: str, second: str) -> "EncoderInput":
        return cls((first, second))

    def canonical(self) -> str:
        return json.dumps(list(self.segments), ensure_ascii=False)


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    version: str
    dim: int
    max_tokens: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise BackendError("descriptor dim must be positive")
        if self.max_tokens < 4:
            raise BackendError("descriptor max_tokens must leave room for special tokens")


def truncation_budgets(n_segments: int, max_tokens: int) -> tuple[int, ...]:
    """Per-segment token budgets: 2 special slots for one segment, 3 for two,
    remaining budget split half and half (first segment takes the odd token)."""
    if n_segments == 1:
        return (max_tokens - 2,)
    budget = max_tokens - 3
    return (budget - budget // 2, budget // 2)


class EmbeddingBackend(abc.ABC):
    """Contract: deterministic, order-aligned, fixed-dim float32 vectors."""

    @property
    @abc.abstractmethod
    def descriptor(self) -> BackendDescriptor: ...

    @abc.abstractmethod
    def embed(self, inputs: Sequence[EncoderInput]) -> list[np.ndarray]: ...


def embed_batch(backend: EmbeddingBackend, inputs: Sequence[EncoderInput]) -> list[np.ndarray]:
    """Run a batch through a backend and enforce the output contract."""
    if not inputs:
        raise BackendError("embed_batch requires a non-empty input list")
    vectors = backend.embed(inputs)
    desc = backend.descriptor
    if len(vectors) != len(inputs):
        raise BackendError(
            f"malformed response: count mismatch ({len(vectors)} vectors for {len(inputs)} inputs)"
        )
    for i, vec in enumerate(vectors):
        if vec.shape != (desc.dim,):
            raise DimensionMismatchError(
                f"input {i}: expected dim {desc.dim}, got shape {tuple(vec.shape)}"
            )
        if not np.isfinite(vec).all():
            raise BackendError(f"input {i}: non-finite components in embedding")
    return vectors


class MockBackend(EmbeddingBackend):
    """Deterministic hashed bag-of-words embedder for tests and dry runs.

    Each token adds unit weight at fnv1a64(token, seed) mod dim; the vector
    is scaled by 1/sqrt(1 + token_count). Cross inputs insert SEGMENT_MARKER
    between the segments so ("a b") and ("a", "b") embed differently.
    """

    def __init__(self, dim: int = 64, seed: int = 0, max_tokens: int = 8192) -> None:
        self._descriptor = BackendDescriptor("mock", f"mock-bow-1/dim={dim}/seed={seed}", dim, max_tokens)
        self.dim = dim
        self.seed = seed

    @property
    def descriptor(self) -> BackendDescriptor:
        return self._descriptor

    def embed(self, inputs: Sequence[EncoderInput]) -> list[np.ndarray]:
        return [self._embed_one(inp) for inp in inputs]

    def _embed_one(self, inp: EncoderInput) -> np.ndarray:
        budgets = truncation_budgets(len(inp.segments), self._descriptor.max_tokens)
        tokens: list[str] = []
        for i, (segment, budget) in enumerate(zip(inp.segments, budgets)):
            if i:
                tokens.append(SEGMENT_MARKER)
            tokens.extend(mock_tokenize(segment)[:budget])
        accum = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            accum[fnv1a64(token, self.seed) % self.dim] += 1.0
        accum *= 1.0 / math.sqrt(1 + len(tokens))
        return accum.astype(np.float32)


class RemoteBackend(EmbeddingBackend):
    """HTTP client for an embedding service speaking the /embed protocol.

    Transport failures (connection errors, HTTP 5xx) are retried up to 3
    attempts with exponential backoff; malformed payloads and 4xx fail
    immediately.
    """

    ATTEMPTS = 3
    BACKOFF_FACTOR = 4.0

    def __init__(
        self,
        base_url: str | None = None,
        timeout_s: float | None = None,
        retry_base_s: float = 0.2,
    ) -> None:
        url = base_url or os.environ.get(ENV_EMBED_URL)
        if not url:
            raise ConfigError(f"no embedding service URL (set {ENV_EMBED_URL} or pass base_url)")
        self.base_url = url.rstrip("/")
        if timeout_s is None:
            timeout_ms = os.environ.get(ENV_EMBED_TIMEOUT_MS, "30000")
            try:
                timeout_s = int(timeout_ms) / 1000.0
            except ValueError as exc:
                raise ConfigError(f"bad {ENV_EMBED_TIMEOUT_MS} value {timeout_ms!r}") from exc
        self.timeout_s = timeout_s
        self.retry_base_s = retry_base_s
        self._descriptor: BackendDescriptor | None = None

    @property
    def descriptor(self) -> BackendDescriptor:
        if self._descriptor is None:
            payload = self._request("GET", "/health", None)
            try:
                self._descriptor = BackendDescriptor(
                    name=payload["name"],
                    version=payload["model_version"],
                    dim=int(payload["dim"]),
                    max_tokens=int(payload["max_tokens"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise BackendError(f"malformed health response: {exc}") from exc
        return self._descriptor

    def embed(self, inputs: Sequence[EncoderInput]) -> list[np.ndarray]:
        desc = self.descriptor
        body = {
            "model": desc.name,
            "inputs": [{"segments": list(inp.segments)} for inp in inputs],
            "max_tokens": desc.max_tokens,
        }
        payload = self._request("POST", "/embed", body)
        try:
            vectors = payload["vectors"]
            dim = int(payload["dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed response: {exc}") from exc
        if dim != desc.dim:
            raise DimensionMismatchError(f"service reports dim {dim}, descriptor says {desc.dim}")
        if not isinstance(vectors, list) or len(vectors) != len(inputs):
            got = len(vectors) if isinstance(vectors, list) else "non-list"
            raise BackendError(f"malformed response: count mismatch ({got} vectors for {len(inputs)} inputs)")
        return [np.asarray(v, dtype=np.float32) for v in vectors]

    def _request(self, method: str, path: str, body: dict | None) -> dict:
        import requests

        url = self.base_url + path
        last_transport: Exception | None = None
        for attempt in range(self.ATTEMPTS):
            if attempt:
                time.sleep(self.retry_base_s * self.BACKOFF_FACTOR ** (attempt - 1))
            try:
                response = requests.request(method, url, json=body, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_transport = exc
                log.warning("embed service %s attempt %d failed: %s", url, attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_transport = BackendError(f"HTTP {response.status_code} from {url}")
                log.warning("embed service %s attempt %d: HTTP %d", url, attempt + 1, response.status_code)
                continue
            if response.status_code != 200:
                raise BackendError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
            try:
                payload = response.json()
            except ValueError as exc:
                raise BackendError(f"malformed response: not JSON ({exc})") from exc
            if not isinstance(payload, dict):
                raise BackendError("malformed response: not a JSON object")
            return payload
        raise BackendError(f"embed service unreachable after {self.ATTEMPTS} attempts: {last_transport}")


_CACHE_RECORD_HEAD = struct.Struct("<QII")  # key, crc32 of payload, dim
_DESCRIPTOR_FILE = "descriptor.json"


class EmbeddingCache:
    """Append-only sharded vector cache, keyed by backend identity + input.

    Shard files are named by the top byte of the key in hex; records carry a
    CRC so a torn write degrades to a cache miss instead of bad data.
    """

    def __init__(self, directory: str | Path, descriptor: BackendDescriptor) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.descriptor = descriptor
        self._shards: dict[str, dict[int, np.ndarray]] = {}
        desc_path = self.directory / _DESCRIPTOR_FILE
        record = {
            "name": descriptor.name,
            "version": descriptor.version,
            "dim": descriptor.dim,
            "max_tokens": descriptor.max_tokens,
        }
        if desc_path.is_file():
            existing = json.loads(desc_path.read_text(encoding="utf-8"))
            if existing != record:
                raise ConfigError(
                    f"cache at {self.directory} belongs to backend {existing.get('version')!r}, "
                    f"not {descriptor.version!r}"
                )
        else:
            desc_path.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    def key_for(self, inp: EncoderInput) -> int:
        identity = json.dumps(
            {
                "name": self.descriptor.name,
                "version": self.descriptor.version,
                "segments": list(inp.segments),
            },
            ensure_ascii=False,
            sort_keys=True,
        )
        return fnv1a64(identity)

    def _shard_name(self, key: int) -> str:
        return f"{key >> 56:02x}"

    def _load_shard(self, name: str) -> dict[int, np.ndarray]:
        if name in self._shards:
            return self._shards[name]
        table: dict[int, np.ndarray] = {}
        path = self.directory / f"{name}.bin"
        if path.is_file():
            blob = path.read_bytes()
            offset = 0
            while offset + _CACHE_RECORD_HEAD.size <= len(blob):
                key, crc, dim = _CACHE_RECORD_HEAD.unpack_from(blob, offset)
                offset += _CACHE_RECORD_HEAD.size
                payload = blob[offset : offset + 4 * dim]
                offset += 4 * dim
                if len(payload) < 4 * dim:
                    log.warning("cache shard %s: truncated tail record, ignoring", path)
                    break
                if zlib.crc32(payload) != crc:
                    log.warning("cache shard %s: checksum mismatch for key %x, ignoring record", path, key)
                    continue
                table[key] = np.frombuffer(payload, dtype="<f4").copy()
        self._shards[name] = table
        return table

    def get(self, inp: EncoderInput) -> np.ndarray | None:
        key = self.key_for(inp)
        vector = self._load_shard(self._shard_name(key)).get(key)
        if vector is not None and vector.shape != (self.descriptor.dim,):
            log.warning("cache key %x: stored dim %d != descriptor dim %d, ignoring", key, vector.shape[0], self.descriptor.dim)
            return None
        return vector

    def put(self, inp: EncoderInput, vector: np.ndarray) -> None:
        key = self.key_for(inp)
        payload = np.ascontiguousarray(vector, dtype="<f4").tobytes()
        record = _CACHE_RECORD_HEAD.pack(key, zlib.crc32(payload), vector.shape[0]) + payload
        name = self._shard_name(key)
        with open(self.directory / f"{name}.bin", "ab") as fh:
            fh.write(record)
        self._load_shard(name)[key] = np.frombuffer(payload, dtype="<f4").copy()


def cache_get_or_embed(
    cache: EmbeddingCache,
    backend: EmbeddingBackend,
    inputs: Sequence[EncoderInput],
) -> list[np.ndarray]:
    """Serve hits from the cache, embed the misses, keep batch order."""
    if not inputs:
        raise BackendError("embed_batch requires a non-empty input list")
    results: list[np.ndarray | None] = [cache.get(inp) for inp in inputs]
    miss_indices = [i for i, vec in enumerate(results) if vec is None]
    if miss_indices:
        fresh = embed_batch(backend, [inputs[i] for i in miss_indices])
        for i, vector in zip(miss_indices, fresh):
            cache.put(inputs[i], vector)
            results[i] = vector
    return [vec for vec in results]  # type: ignore[misc]


class FileBackend(EmbeddingBackend):
    """Serves vectors from a cache directory written by an earlier run.

    Useful for repeating retrieval and evaluation offline; any input absent
    from the store is an error rather than a silent recompute.
    """

    def __init__(self, directory: str | Path) -> None:
        desc_path = Path(directory) / _DESCRIPTOR_FILE
        if not desc_path.is_file():
            raise ConfigError(f"not an embedding store (missing {_DESCRIPTOR_FILE}): {directory}")
        record = json.loads(desc_path.read_text(encoding="utf-8"))
        self._descriptor = BackendDescriptor(
            name=record["name"],
            version=record["version"],
            dim=int(record["dim"]),
            max_tokens=int(record["max_tokens"]),
        )
        self._cache = EmbeddingCache(directory, self._descriptor)

    @property
    def descriptor(self) -> BackendDescriptor:
        return self._descriptor

    def embed(self, inputs: Sequence[EncoderInput]) -> list[np.ndarray]:
        vectors = []
        missing = []
        for i, inp in enumerate(inputs):
            vec = self._cache.get(inp)
            if vec is None:
                missing.append(i)
            else:
                vectors.append(vec)
        if missing:
            raise BackendError(f"file backend has no vectors for input indices {missing}")
        return vectors


def check_backend_contract(backend: EmbeddingBackend, sample_texts: Iterable[str] | None = None) -> None:
    """Assert the embedding contract against any backend, local or remote.

    Checks count alignment, fixed dimension, finiteness, determinism,
    two-segment support, and truncation safety on a 100k-character input.
    Raises BackendError on the first violation.
    """
    desc = backend.descriptor
    texts = list(sample_texts or ())
    if len(texts) < 2:
        texts += ["The court dismissed the appeal.", "费用由被告承担。", ""][len(texts) :]
    inputs = [EncoderInput.single(t) for t in texts]
    inputs.append(EncoderInput.pair(texts[0], texts[1]))

    first = embed_batch(backend, inputs)
    second = embed_batch(backend, inputs)
    for i, (a, b) in enumerate(zip(first, second)):
        if a.dtype != np.float32:
            raise BackendError(f"input {i}: expected float32 vectors, got {a.dtype}")
        if not np.array_equal(a, b):
            raise BackendError(f"input {i}: backend is not deterministic")

    health_dim = backend.descriptor.dim
    if first[0].shape != (health_dim,):
        raise BackendError(f"descriptor dim {health_dim} != embedding dim {first[0].shape[0]}")

    long_text = "jurisdiction appeal evidence verdict " * 2800  # past 100k characters
    overlong = embed_batch(backend, [EncoderInput.single(long_text), EncoderInput.pair(long_text, long_text)])
    for i, vec in enumerate(overlong):
        if vec.shape != (desc.dim,) or not np.isfinite(vec).all():
            raise BackendError(f"overlength input {i}: bad vector after truncation")


def make_backend(spec: str, mock_dim: int = 64, mock_seed: int = 0) -> EmbeddingBackend:
    """Build a backend from a config string: 'mock', 'file:<dir>', or a URL."""
    if spec == "mock":
        return MockBackend(dim=mock_dim, seed=mock_seed)
    if spec.startswith("file:"):
        return FileBackend(spec[len("file:") :])
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteBackend(base_url=spec)
    raise ConfigError(f"unknown backend spec {spec!r} (expected 'mock', 'file:<dir>', or an http(s) URL)")
