"""
Vector Store
Exact-scan in-memory index over document chunks with cosine top-k search,
context reranking and newline-delimited JSON persistence.
"""

import json
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError, DimensionError, DuplicateChunkError, EmptyStoreError,
    StoreFormatError, StoreVersionError,
)
from .models import DocumentChunk, Embedding, SearchHit

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_OVERFETCH = 4


class VectorStore:
    """Chunks and their unit embeddings; scores are dot products (= cosine)"""

    def __init__(self, dim: int, fingerprint: str, metadata: Optional[Dict[str, str]] = None):
        """
        Initialize an empty store

        Args:
            dim: Dimension every embedding must have
            fingerprint: Embedder fingerprint every embedding must carry
            metadata: Extra string metadata kept alongside the fingerprint
        """
        if dim <= 0:
            raise ConfigurationError(f"store dim must be positive, got {dim}")
        self.dim = dim
        self.metadata: Dict[str, str] = dict(metadata or {})
        self.metadata["embedder_fingerprint"] = fingerprint

        self._chunks: List[DocumentChunk] = []
        self._embeddings: List[Embedding] = []
        self._positions: Dict[str, int] = {}
        self._matrix = np.zeros((0, dim), dtype=np.float64)

    @property
    def fingerprint(self) -> str:
        return self.metadata["embedder_fingerprint"]

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def entries(self) -> List[tuple]:
        return list(zip(self._chunks, self._embeddings))

    def documents(self) -> List[str]:
        """doc_ids in first-seen order"""
        return list(dict.fromkeys(chunk.doc_id for chunk in self._chunks))

    def embedding_for(self, chunk_id: str) -> Embedding:
        return self._embeddings[self._positions[chunk_id]]

    def _check_embedding(self, embedding: Embedding, label: str):
        if embedding.dim != self.dim:
            raise DimensionError(f"{label}: dim {embedding.dim} does not match store dim {self.dim}")
        if embedding.fingerprint != self.fingerprint:
            raise DimensionError(f"{label}: embedder {embedding.fingerprint!r} does not match "
                                 f"store embedder {self.fingerprint!r}")

    def add_chunks(self, chunks: Sequence[DocumentChunk],
                   embeddings: Sequence[Embedding]) -> "VectorStore":
        """
        Append chunks in input order; all-or-nothing

        Returns:
            This store, updated
        """
        if len(chunks) != len(embeddings):
            raise ConfigurationError(f"{len(chunks)} chunks but {len(embeddings)} embeddings")

        batch_ids = set()
        for chunk, embedding in zip(chunks, embeddings):
            self._check_embedding(embedding, chunk.chunk_id)
            if chunk.chunk_id in self._positions or chunk.chunk_id in batch_ids:
                raise DuplicateChunkError(f"duplicate chunk_id {chunk.chunk_id}")
            batch_ids.add(chunk.chunk_id)

        if not chunks:
            return self

        for chunk, embedding in zip(chunks, embeddings):
            self._positions[chunk.chunk_id] = len(self._chunks)
            self._chunks.append(chunk)
            self._embeddings.append(embedding)

        block = np.array([e.values for e in embeddings], dtype=np.float64)
        self._matrix = np.vstack([self._matrix, block])

        logger.debug(f"Added {len(chunks)} chunks; store size {len(self)}")
        return self

    def _scores(self, query_emb: Embedding) -> np.ndarray:
        self._check_embedding(query_emb, "query")
        return self._matrix @ np.asarray(query_emb.values, dtype=np.float64)

    def search(self, query_emb: Embedding, k: int) -> List[SearchHit]:
        """
        Exact top-k by cosine similarity

        Ties keep insertion order, so a larger k only ever appends hits.
        """
        if k < 1:
            raise ConfigurationError(f"k must be >= 1, got {k}")
        if not self._chunks:
            raise EmptyStoreError()

        scores = self._scores(query_emb)
        order = np.argsort(-scores, kind="stable")[:k]
        return [
            SearchHit(chunk=self._chunks[i], score=float(scores[i]), rank=rank)
            for rank, i in enumerate(order, start=1)
        ]

    def rerank(self, hits: Sequence[SearchHit], context_emb: Embedding, k: int) -> List[SearchHit]:
        """
        Re-score hits against a context embedding, keep the best k

        Ties keep the incoming hit order. Scores come from the same full-store
        product as search, so reranking with the query embedding itself
        reproduces the search order exactly.
        """
        if k < 1:
            raise ConfigurationError(f"k must be >= 1, got {k}")
        if not hits:
            raise ConfigurationError("no hits to rerank")
        if k > len(hits):
            raise ConfigurationError(f"k={k} exceeds the {len(hits)} hits to rerank")

        scores = self._scores(context_emb)
        try:
            rescored = [float(scores[self._positions[hit.chunk.chunk_id]]) for hit in hits]
        except KeyError as e:
            raise ConfigurationError(f"hit {e.args[0]} is not in this store") from e

        order = sorted(range(len(hits)), key=lambda i: -rescored[i])[:k]
        return [
            SearchHit(chunk=hits[i].chunk, score=rescored[i], rank=rank)
            for rank, i in enumerate(order, start=1)
        ]


def retrieve(store: VectorStore, query_emb: Embedding, context_emb: Embedding,
             k: int, overfetch: int = DEFAULT_OVERFETCH) -> List[SearchHit]:
    """Search overfetch*k candidates for the query, rerank to k against the context"""
    candidates = store.search(query_emb, overfetch * k)
    return store.rerank(candidates, context_emb, min(k, len(candidates)))


def describe(store: VectorStore) -> Dict:
    return {
        "dim": store.dim,
        "embedder_fingerprint": store.fingerprint,
        "documents": len(store.documents()),
        "entries": len(store),
    }


def save_store(store: VectorStore, path: str):
    """
    Write the store as newline-delimited JSON

    Line 1 is the header; each further line is one entry. Floats are written
    with their shortest round-tripping repr, so a reload is bit-identical.
    """
    logger.info(f"Saving store ({len(store)} entries) to {path}")

    header = {
        "format_version": FORMAT_VERSION,
        "dim": store.dim,
        "embedder_fingerprint": store.fingerprint,
    }
    extra = {key: value for key, value in store.metadata.items() if key != "embedder_fingerprint"}
    if extra:
        header["metadata"] = extra

    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header) + "\n")
        for chunk, embedding in store.entries:
            record = {
                "chunk_id": chunk.chunk_id,
                "doc_id": chunk.doc_id,
                "ordinal": chunk.ordinal,
                "text": chunk.text,
                "char_span": list(chunk.char_span),
                "values": list(embedding.values),
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")

    logger.info(f"Store saved successfully: {os.path.getsize(path)} bytes")


def _parse_header(line: bytes) -> Dict:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise StoreFormatError(f"header is not JSON: {e}", line_number=1) from e
    if not isinstance(header, dict):
        raise StoreFormatError("header is not an object", line_number=1)
    if header.get("format_version") != FORMAT_VERSION:
        raise StoreVersionError(f"unsupported format_version {header.get('format_version')!r}, "
                                f"expected {FORMAT_VERSION}", line_number=1)
    if not isinstance(header.get("dim"), int) or not isinstance(header.get("embedder_fingerprint"), str):
        raise StoreFormatError("header needs integer dim and string embedder_fingerprint", line_number=1)
    metadata = header.get("metadata", {})
    if not isinstance(metadata, dict) or not all(isinstance(v, str) for v in metadata.values()):
        raise StoreFormatError("header metadata must map keys to strings", line_number=1)
    return header


def load_store(path: str) -> VectorStore:
    """Read a store written by save_store"""
    logger.info(f"Loading store from {path}")

    with open(path, "rb") as f:
        lines = f.read().split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if not lines:
        raise StoreFormatError("missing header", line_number=1)

    header = _parse_header(lines[0])
    dim, fingerprint = header["dim"], header["embedder_fingerprint"]
    store = VectorStore(dim, fingerprint, header.get("metadata"))

    chunks: List[DocumentChunk] = []
    embeddings: List[Embedding] = []
    seen = set()
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line.decode("utf-8"))
            chunk = DocumentChunk(
                chunk_id=record["chunk_id"],
                doc_id=record["doc_id"],
                ordinal=record["ordinal"],
                text=record["text"],
                char_span=tuple(record["char_span"]),
            )
            values = tuple(float(v) for v in record["values"])
            embedding = Embedding(values=values, dim=len(values), fingerprint=fingerprint)
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise StoreFormatError(f"corrupted record: {e}", line_number=line_number) from e
        if embedding.dim != dim:
            raise StoreFormatError(f"vector has dim {embedding.dim}, header says {dim}",
                                   line_number=line_number)
        if chunk.chunk_id in seen:
            raise StoreFormatError(f"duplicate chunk_id {chunk.chunk_id}", line_number=line_number)
        seen.add(chunk.chunk_id)
        chunks.append(chunk)
        embeddings.append(embedding)

    store.add_chunks(chunks, embeddings)
    logger.info(f"Store loaded successfully: {len(store)} entries, dim {dim}")
    return store
