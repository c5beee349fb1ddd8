"""
Embedders
Map text to unit vectors: a seeded hashed character-3-gram embedder that runs
offline, and a client for OpenAI-compatible embedding endpoints.

The local-hash embedder is defined so any implementation can reproduce it:
every contiguous 3-character window of the text (no case folding; a text
shorter than 3 characters is one gram) is hashed with 64-bit FNV-1a over
seed.to_bytes(8, "little") followed by the gram's UTF-8 bytes. The hash modulo
dim picks a bucket, bucket counts form a term-frequency vector, and the vector
is L2-normalized.
"""

import functools
import logging
import os
import threading
from typing import Dict, List, Optional, Sequence

import numpy as np
import openai

from .errors import ConfigurationError, ProviderError
from .models import Embedding, EmbedderConfig, EmbedderKind
from .transport import call_with_backoff

logger = logging.getLogger(__name__)

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK_64 = 0xFFFFFFFFFFFFFFFF

NGRAM = 3
REMOTE_BATCH_SIZE = 64


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a"""
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK_64
    return h


def char_ngrams(text: str, n: int = NGRAM) -> List[str]:
    if len(text) < n:
        return [text]
    return [text[i:i + n] for i in range(len(text) - n + 1)]


def _require_text(text: str):
    if not isinstance(text, str) or not text.strip():
        raise ConfigurationError("cannot embed empty text")


def _to_embedding(vector: np.ndarray, fingerprint: str) -> Embedding:
    norm = float(np.linalg.norm(vector))
    if not np.all(np.isfinite(vector)) or norm == 0.0 or not np.isfinite(norm):
        raise ProviderError("embedder produced a zero or non-finite vector")
    unit = vector / norm
    return Embedding(values=tuple(float(x) for x in unit), dim=len(unit), fingerprint=fingerprint)


class Embedder:
    """Common embed_text/embed_batch surface with an optional in-memory memo"""

    def __init__(self, config: EmbedderConfig, memoize: bool = False):
        self.config = config
        self.fingerprint = config.fingerprint
        self._memo: Optional[Dict[str, Embedding]] = {} if memoize else None
        self._lock = threading.Lock()

    def embed_text(self, text: str) -> Embedding:
        _require_text(text)
        if self._memo is not None:
            with self._lock:
                cached = self._memo.get(text)
            if cached is not None:
                return cached
        embedding = self._embed_many([text])[0]
        self._remember([text], [embedding])
        return embedding

    def embed_batch(self, texts: Sequence[str]) -> List[Embedding]:
        for index, text in enumerate(texts):
            try:
                _require_text(text)
            except ConfigurationError as e:
                raise ConfigurationError(f"batch element {index}: {e}") from e
        if not texts:
            return []
        embeddings = self._embed_many(list(texts))
        self._remember(list(texts), embeddings)
        return embeddings

    def _remember(self, texts: List[str], embeddings: List[Embedding]):
        if self._memo is None:
            return
        with self._lock:
            for text, embedding in zip(texts, embeddings):
                self._memo[text] = embedding

    def _embed_many(self, texts: List[str]) -> List[Embedding]:
        raise NotImplementedError


class LocalHashEmbedder(Embedder):
    """Deterministic, offline, thread-safe; not semantic beyond shared character 3-grams"""

    def __init__(self, config: EmbedderConfig, memoize: bool = False):
        super().__init__(config, memoize)
        self.dim = config.dim
        self._seed_bytes = (config.seed & _MASK_64).to_bytes(8, "little")

    def bucket(self, gram: str) -> int:
        return fnv1a_64(self._seed_bytes + gram.encode("utf-8")) % self.dim

    def _embed_one(self, text: str) -> Embedding:
        counts = np.zeros(self.dim, dtype=np.float64)
        for gram in char_ngrams(text):
            counts[self.bucket(gram)] += 1.0
        return _to_embedding(counts, self.fingerprint)

    def _embed_many(self, texts: List[str]) -> List[Embedding]:
        return [self._embed_one(text) for text in texts]


class RemoteEmbedder(Embedder):
    """OpenAI-compatible embeddings endpoint; vectors are normalized on receipt"""

    def __init__(self, config: EmbedderConfig, api_key: Optional[str] = None,
                 base_url: Optional[str] = None, memoize: bool = True,
                 client: Optional[openai.OpenAI] = None):
        super().__init__(config, memoize)
        self.model_name = config.model_name
        if client is None:
            if not api_key:
                raise ConfigurationError("ENGINE_API_KEY is not set; the remote embedder needs it")
            client = openai.OpenAI(api_key=api_key, base_url=base_url, max_retries=0)
        self.client = client

    def _embed_many(self, texts: List[str]) -> List[Embedding]:
        embeddings: List[Embedding] = []
        for offset in range(0, len(texts), REMOTE_BATCH_SIZE):
            batch = texts[offset:offset + REMOTE_BATCH_SIZE]
            response = call_with_backoff(
                lambda: self.client.embeddings.create(model=self.model_name, input=batch),
                description=f"embeddings request ({len(batch)} texts)",
            )
            items = sorted(response.data, key=lambda item: item.index)
            if len(items) != len(batch):
                raise ProviderError(f"embeddings response has {len(items)} vectors for {len(batch)} texts")
            for position, item in enumerate(items):
                try:
                    embeddings.append(_to_embedding(np.asarray(item.embedding, dtype=np.float64),
                                                    self.fingerprint))
                except ProviderError as e:
                    raise ProviderError(f"batch element {offset + position}: {e}") from e
            logger.debug(f"Embedded {len(batch)} texts with {self.model_name}")
        return embeddings


def build_embedder(config: EmbedderConfig, api_key: Optional[str] = None,
                   base_url: Optional[str] = None, memoize: bool = False) -> Embedder:
    """Construct the embedder a config names"""
    if config.kind is EmbedderKind.LOCAL_HASH:
        return LocalHashEmbedder(config, memoize=memoize)
    return RemoteEmbedder(config, api_key=api_key or os.environ.get("ENGINE_API_KEY"),
                          base_url=base_url or os.environ.get("ENGINE_BASE_URL"), memoize=True)


def config_from_fingerprint(fingerprint: str) -> EmbedderConfig:
    """Inverse of EmbedderConfig.fingerprint"""
    kind, _, rest = fingerprint.partition(":")
    try:
        if kind == EmbedderKind.REMOTE.value:
            # model names may themselves contain ':'
            key, _, model_name = rest.partition("=")
            if key != "model" or not model_name:
                raise ValueError(rest)
            return EmbedderConfig(kind=EmbedderKind.REMOTE, model_name=model_name)
        if kind == EmbedderKind.LOCAL_HASH.value:
            fields = dict(part.split("=", 1) for part in rest.split(":"))
            return EmbedderConfig(kind=EmbedderKind.LOCAL_HASH, dim=int(fields["dim"]), seed=int(fields["seed"]))
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"malformed embedder fingerprint {fingerprint!r}") from e
    raise ConfigurationError(f"unknown embedder fingerprint {fingerprint!r}")


@functools.lru_cache(maxsize=8)
def get_embedder(config: EmbedderConfig) -> Embedder:
    return build_embedder(config)


def embed_text(text: str, config: EmbedderConfig) -> Embedding:
    return get_embedder(config).embed_text(text)


def embed_batch(texts: Sequence[str], config: EmbedderConfig) -> List[Embedding]:
    return get_embedder(config).embed_batch(texts)
