"""
Unit tests for the vector store: search, rerank and persistence.
"""

import json
import os
import tempfile
import unittest

import numpy as np

from utils.errors import (
    ConfigurationError, DimensionError, DuplicateChunkError, EmptyStoreError, StoreFormatError,
    StoreVersionError,
)
from utils.models import DocumentChunk, Embedding
from utils.vector_store import VectorStore, describe, load_store, retrieve, save_store

FINGERPRINT = "test:random"


def unit(vector: np.ndarray, fingerprint: str = FINGERPRINT) -> Embedding:
    vector = vector / np.linalg.norm(vector)
    return Embedding(values=tuple(float(x) for x in vector), dim=len(vector), fingerprint=fingerprint)


def make_chunk(i: int, doc_id: str = "doc") -> DocumentChunk:
    text = f"chunk number {i}"
    return DocumentChunk(chunk_id=f"{doc_id}:{i}", doc_id=doc_id, ordinal=i, text=text, char_span=(0, len(text)))


def random_store(n: int, dim: int, seed: int):
    rng = np.random.default_rng(seed)
    vectors = [unit(rng.normal(size=dim)) for _ in range(n)]
    store = VectorStore(dim, FINGERPRINT).add_chunks([make_chunk(i) for i in range(n)], vectors)
    return store, vectors, rng


class TestSearch(unittest.TestCase):
    """Test exact top-k search against a brute-force oracle."""

    def setUp(self):
        self.store, self.vectors, self.rng = random_store(200, 16, seed=42)
        self.matrix = np.array([v.values for v in self.vectors])

    def oracle(self, query: Embedding, k: int):
        scores = self.matrix @ np.array(query.values)
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
        return [f"doc:{i}" for i in order]

    def test_search_matches_brute_force(self):
        """Test search(k=10) equals exhaustive top-10 for many random queries."""
        for _ in range(25):
            query = unit(self.rng.normal(size=16))
            hits = self.store.search(query, 10)
            self.assertEqual([h.chunk.chunk_id for h in hits], self.oracle(query, 10))
            self.assertEqual([h.rank for h in hits], list(range(1, 11)))
            scores = [h.score for h in hits]
            self.assertEqual(scores, sorted(scores, reverse=True))

    def test_k_larger_than_store(self):
        store, _, rng = random_store(3, 8, seed=1)
        self.assertEqual(len(store.search(unit(rng.normal(size=8)), 10)), 3)

    def test_larger_k_extends_prefix(self):
        """Test a larger k only appends hits."""
        query = unit(self.rng.normal(size=16))
        small = [h.chunk.chunk_id for h in self.store.search(query, 5)]
        large = [h.chunk.chunk_id for h in self.store.search(query, 20)]
        self.assertEqual(large[:5], small)

    def test_ties_keep_insertion_order(self):
        same = unit(np.ones(4))
        store = VectorStore(4, FINGERPRINT).add_chunks([make_chunk(i) for i in range(3)], [same] * 3)
        self.assertEqual([h.chunk.chunk_id for h in store.search(same, 3)], ["doc:0", "doc:1", "doc:2"])

    def test_invalid_k_and_empty_store(self):
        query = unit(self.rng.normal(size=16))
        with self.assertRaises(ConfigurationError):
            self.store.search(query, 0)
        with self.assertRaises(EmptyStoreError):
            VectorStore(16, FINGERPRINT).search(query, 5)

    def test_query_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            self.store.search(unit(self.rng.normal(size=8)), 5)
        with self.assertRaises(DimensionError):
            self.store.search(unit(self.rng.normal(size=16), fingerprint="other"), 5)


class TestRerank(unittest.TestCase):
    """Test context reranking."""

    def setUp(self):
        self.store, self.vectors, self.rng = random_store(200, 16, seed=7)
        self.by_id = {f"doc:{i}": np.array(v.values) for i, v in enumerate(self.vectors)}

    def test_rerank_matches_oracle(self):
        """Test rerank over 20 candidates equals a re-score-and-stable-sort oracle."""
        query = unit(self.rng.normal(size=16))
        context = unit(self.rng.normal(size=16))
        candidates = self.store.search(query, 20)

        rescored = [float(self.by_id[h.chunk.chunk_id] @ np.array(context.values)) for h in candidates]
        expected = sorted(range(20), key=lambda i: -rescored[i])[:5]

        reranked = self.store.rerank(candidates, context, 5)
        self.assertEqual([h.chunk.chunk_id for h in reranked],
                         [candidates[i].chunk.chunk_id for i in expected])
        for hit, i in zip(reranked, expected):
            self.assertAlmostEqual(hit.score, rescored[i], places=12)

    def test_rerank_with_query_reproduces_search(self):
        query = unit(self.rng.normal(size=16))
        candidates = self.store.search(query, 20)
        reranked = self.store.rerank(candidates, query, 20)
        self.assertEqual([h.chunk.chunk_id for h in reranked], [h.chunk.chunk_id for h in candidates])
        self.assertEqual([h.score for h in reranked], [h.score for h in candidates])

    def test_rerank_preconditions(self):
        query = unit(self.rng.normal(size=16))
        candidates = self.store.search(query, 4)
        with self.assertRaises(ConfigurationError):
            self.store.rerank(candidates, query, 5)
        with self.assertRaises(ConfigurationError):
            self.store.rerank([], query, 1)

    def test_retrieve_overfetches_then_reranks(self):
        query = unit(self.rng.normal(size=16))
        context = unit(self.rng.normal(size=16))
        hits = retrieve(self.store, query, context, k=5)
        pool = {h.chunk.chunk_id for h in self.store.search(query, 20)}
        self.assertEqual(len(hits), 5)
        self.assertTrue({h.chunk.chunk_id for h in hits} <= pool)


class TestAddChunks(unittest.TestCase):
    """Test insertion checks."""

    def setUp(self):
        self.store, _, self.rng = random_store(5, 8, seed=3)

    def test_duplicate_is_all_or_nothing(self):
        """Test a batch containing a duplicate changes nothing."""
        batch = [make_chunk(100), make_chunk(0)]
        vectors = [unit(self.rng.normal(size=8)) for _ in batch]
        with self.assertRaises(DuplicateChunkError):
            self.store.add_chunks(batch, vectors)
        self.assertEqual(len(self.store), 5)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            self.store.add_chunks([make_chunk(9)], [unit(self.rng.normal(size=4))])
        self.assertEqual(len(self.store), 5)

    def test_describe(self):
        summary = describe(self.store)
        self.assertEqual(summary, {"dim": 8, "embedder_fingerprint": FINGERPRINT, "documents": 1, "entries": 5})


class TestPersistence(unittest.TestCase):
    """Test save/load round trips and rejection of bad files."""

    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmpdir.name, "store.jsonl")
        self.store, _, self.rng = random_store(120, 12, seed=11)

    def tearDown(self):
        self.tmpdir.cleanup()

    def test_round_trip_search_identical(self):
        """Test a reloaded store answers 50 random queries identically."""
        save_store(self.store, self.path)
        loaded = load_store(self.path)
        self.assertEqual(len(loaded), len(self.store))
        self.assertEqual(loaded.fingerprint, FINGERPRINT)
        for _ in range(50):
            query = unit(self.rng.normal(size=12))
            original = [(h.chunk, h.score) for h in self.store.search(query, 10)]
            reloaded = [(h.chunk, h.score) for h in loaded.search(query, 10)]
            self.assertEqual(original, reloaded)

    def test_vectors_bit_identical(self):
        save_store(self.store, self.path)
        loaded = load_store(self.path)
        for chunk, embedding in self.store.entries:
            self.assertEqual(loaded.embedding_for(chunk.chunk_id).values, embedding.values)

    def rewrite(self, line_index: int, replacement: str):
        with open(self.path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        lines[line_index] = replacement
        with open(self.path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines))

    def test_wrong_version_rejected(self):
        save_store(self.store, self.path)
        self.rewrite(0, json.dumps({"format_version": 99, "dim": 12, "embedder_fingerprint": FINGERPRINT}))
        with self.assertRaises(StoreVersionError):
            load_store(self.path)

    def test_corrupted_record_names_line(self):
        save_store(self.store, self.path)
        self.rewrite(2, "{not json")
        with self.assertRaises(StoreFormatError) as ctx:
            load_store(self.path)
        self.assertEqual(ctx.exception.line_number, 3)
        self.assertIn("line 3", str(ctx.exception))

    def test_record_dimension_mismatch(self):
        save_store(self.store, self.path)
        record = {"chunk_id": "x:0", "doc_id": "x", "ordinal": 0, "text": "ab",
                  "char_span": [0, 2], "values": [1.0, 0.0]}
        self.rewrite(1, json.dumps(record))
        with self.assertRaises(StoreFormatError) as ctx:
            load_store(self.path)
        self.assertEqual(ctx.exception.line_number, 2)

    def test_invalid_utf8_names_line(self):
        """Test undecodable bytes in a record are a format error on that line."""
        save_store(self.store, self.path)
        with open(self.path, "ab") as f:
            f.write(b'{"chunk_id": "\xff\xfe"}\n')
        with self.assertRaises(StoreFormatError) as ctx:
            load_store(self.path)
        self.assertEqual(ctx.exception.line_number, len(self.store) + 2)

    def test_empty_store_round_trip(self):
        empty = VectorStore(12, FINGERPRINT)
        save_store(empty, self.path)
        loaded = load_store(self.path)
        self.assertEqual(len(loaded), 0)
        self.assertEqual(describe(loaded), describe(empty))
        with self.assertRaises(EmptyStoreError):
            loaded.search(unit(self.rng.normal(size=12)), 3)

    def test_metadata_round_trip(self):
        store = VectorStore(12, FINGERPRINT, {"corpus": "grid-notes"})
        save_store(store, self.path)
        loaded = load_store(self.path)
        self.assertEqual(loaded.metadata, {"corpus": "grid-notes", "embedder_fingerprint": FINGERPRINT})


if __name__ == "__main__":
    unittest.main()
