"""
Unit tests for the embedders.
"""

import math
import os
import unittest
from concurrent.futures import ThreadPoolExecutor
from types import SimpleNamespace
from unittest.mock import MagicMock, patch

from utils.embedding import (
    LocalHashEmbedder, RemoteEmbedder, build_embedder, char_ngrams, config_from_fingerprint, embed_batch,
    embed_text, fnv1a_64, get_embedder,
)
from utils.errors import ConfigurationError, ProviderError
from utils.models import EmbedderConfig, EmbedderKind


def norm(values) -> float:
    return math.sqrt(math.fsum(v * v for v in values))


class TestHashing(unittest.TestCase):
    """Test the portable hash and gram extraction."""

    def test_fnv1a_64_reference_values(self):
        """Test published FNV-1a 64-bit values."""
        self.assertEqual(fnv1a_64(b""), 0xCBF29CE484222325)
        self.assertEqual(fnv1a_64(b"a"), 0xAF63DC4C8601EC8C)
        self.assertEqual(fnv1a_64(b"foobar"), 0x85944171F73967E8)

    def test_char_ngrams(self):
        self.assertEqual(char_ngrams("abcd"), ["abc", "bcd"])
        self.assertEqual(char_ngrams("ab"), ["ab"])
        self.assertEqual(char_ngrams("Abc"), ["Abc"])


class TestLocalHashEmbedder(unittest.TestCase):
    """Test the seeded local-hash embedder."""

    def setUp(self):
        self.config = EmbedderConfig(dim=64, seed=7)
        self.embedder = LocalHashEmbedder(self.config)

    def test_unit_length_and_dim(self):
        """Test vectors are unit length with the configured dimension."""
        embedding = self.embedder.embed_text("solar panels convert sunlight")
        self.assertEqual(embedding.dim, 64)
        self.assertEqual(len(embedding.values), 64)
        self.assertAlmostEqual(norm(embedding.values), 1.0, places=12)

    def test_deterministic(self):
        """Test the same text and config always give the same vector."""
        first = self.embedder.embed_text("wind turbines")
        second = LocalHashEmbedder(EmbedderConfig(dim=64, seed=7)).embed_text("wind turbines")
        self.assertEqual(first.values, second.values)

    def test_seed_changes_buckets(self):
        """Test a different seed gives a different vector."""
        other = LocalHashEmbedder(EmbedderConfig(dim=64, seed=8))
        text = "grid batteries store surplus energy"
        self.assertNotEqual(self.embedder.embed_text(text).values, other.embed_text(text).values)

    def test_single_gram_text(self):
        """Test a text shorter than three characters lands in one bucket."""
        embedding = self.embedder.embed_text("ab")
        self.assertEqual(sorted(embedding.values)[-1], 1.0)
        self.assertEqual(sum(1 for v in embedding.values if v != 0.0), 1)

    def test_fingerprint(self):
        self.assertEqual(self.embedder.fingerprint, "local-hash:dim=64:seed=7")
        self.assertEqual(self.embedder.embed_text("abc").fingerprint, "local-hash:dim=64:seed=7")

    def test_empty_text_rejected(self):
        with self.assertRaises(ConfigurationError):
            self.embedder.embed_text("   ")

    def test_batch_error_names_index(self):
        """Test a bad batch element is reported with its index."""
        with self.assertRaises(ConfigurationError) as ctx:
            self.embedder.embed_batch(["fine", "", "also fine"])
        self.assertIn("batch element 1", str(ctx.exception))

    def test_batch_matches_single(self):
        texts = ["alpha beta", "gamma delta", "epsilon"]
        batch = self.embedder.embed_batch(texts)
        self.assertEqual([e.values for e in batch], [self.embedder.embed_text(t).values for t in texts])

    def test_permuted_batch_permutes_outputs(self):
        texts = ["solar", "wind turbines", "grid batteries", "dams", "geothermal heat"]
        order = [3, 0, 4, 2, 1]
        batch = self.embedder.embed_batch(texts)
        permuted = self.embedder.embed_batch([texts[i] for i in order])
        self.assertEqual([e.values for e in permuted], [batch[i].values for i in order])

    def test_disjoint_grams_are_orthogonal(self):
        """Test texts with no 3-gram in common score near zero when their buckets do not collide."""
        config = EmbedderConfig(dim=4096, seed=0)
        embedder = LocalHashEmbedder(config)
        pairs = [
            ("hydroelectric dam", "wind turbine"), ("geothermal heat", "offshore winds"),
            ("frequency", "sunlight panels"), ("storage", "kilowatt hours"),
            ("peak demand", "flow of rivers"), ("nuclear", "tidal swings"),
            ("coal", "biogas"), ("abcabc", "xyzxyz"),
        ]

        def buckets(text):
            return {embedder.bucket(gram) for gram in char_ngrams(text)}

        checked = 0
        for first, second in pairs:
            self.assertFalse(set(char_ngrams(first)) & set(char_ngrams(second)))
            if buckets(first) & buckets(second):
                continue
            similarity = math.fsum(a * b for a, b in zip(embedder.embed_text(first).values,
                                                         embedder.embed_text(second).values))
            self.assertLess(similarity, 0.05)
            checked += 1
        self.assertGreaterEqual(checked, 6)

    def test_concurrent_calls(self):
        """Test embedding from many threads gives identical results."""
        memoized = LocalHashEmbedder(self.config, memoize=True)
        expected = self.embedder.embed_text("shared text").values
        with ThreadPoolExecutor(max_workers=8) as executor:
            results = list(executor.map(lambda _: memoized.embed_text("shared text").values, range(32)))
        self.assertTrue(all(values == expected for values in results))


class TestModuleFunctions(unittest.TestCase):
    """Test the config-keyed embedding helpers."""

    def setUp(self):
        self.config = EmbedderConfig(dim=32, seed=5)
        self.embedder = LocalHashEmbedder(self.config)

    def test_get_embedder_is_cached(self):
        embedder = get_embedder(self.config)
        self.assertIsInstance(embedder, LocalHashEmbedder)
        self.assertIs(get_embedder(EmbedderConfig(dim=32, seed=5)), embedder)
        self.assertIsNot(get_embedder(EmbedderConfig(dim=32, seed=6)), embedder)

    def test_embed_text_matches_embedder(self):
        self.assertEqual(embed_text("tidal power", self.config), self.embedder.embed_text("tidal power"))

    def test_embed_batch_matches_embedder(self):
        texts = ["tidal power", "coal", "biogas"]
        self.assertEqual(embed_batch(texts, self.config), self.embedder.embed_batch(texts))


class TestRemoteEmbedder(unittest.TestCase):
    """Test the OpenAI-compatible embedder against a mocked client."""

    def setUp(self):
        self.config = EmbedderConfig(kind=EmbedderKind.REMOTE, model_name="text-embedding-3-small")
        self.client = MagicMock()

    def respond(self, vectors_by_index):
        data = [SimpleNamespace(index=i, embedding=v) for i, v in vectors_by_index]
        self.client.embeddings.create.return_value = SimpleNamespace(data=data)

    def test_reorders_and_normalizes(self):
        """Test vectors are put back in input order and normalized."""
        self.respond([(1, [0.0, 2.0]), (0, [3.0, 4.0])])
        embedder = RemoteEmbedder(self.config, client=self.client)
        first, second = embedder.embed_batch(["one", "two"])
        self.assertAlmostEqual(first.values[0], 0.6)
        self.assertAlmostEqual(first.values[1], 0.8)
        self.assertEqual(second.values, (0.0, 1.0))
        self.assertEqual(first.fingerprint, "remote:model=text-embedding-3-small")
        self.client.embeddings.create.assert_called_once_with(
            model="text-embedding-3-small", input=["one", "two"])

    def test_zero_vector_rejected(self):
        self.respond([(0, [0.0, 0.0])])
        embedder = RemoteEmbedder(self.config, client=self.client)
        with self.assertRaises(ProviderError):
            embedder.embed_text("nothing")

    def test_memoized(self):
        """Test repeated texts are not re-requested."""
        self.respond([(0, [1.0, 0.0])])
        embedder = RemoteEmbedder(self.config, client=self.client)
        embedder.embed_text("again")
        embedder.embed_text("again")
        self.assertEqual(self.client.embeddings.create.call_count, 1)

    def test_missing_api_key(self):
        """Test the remote embedder needs ENGINE_API_KEY."""
        with patch.dict(os.environ, {}, clear=True):
            with self.assertRaises(ConfigurationError):
                build_embedder(self.config)


class TestFingerprints(unittest.TestCase):
    """Test fingerprint parsing."""

    def test_round_trip(self):
        for config in (EmbedderConfig(dim=128, seed=3),
                       EmbedderConfig(kind="remote", model_name="org:model-v1")):
            self.assertEqual(config_from_fingerprint(config.fingerprint), config)

    def test_unknown_fingerprint(self):
        with self.assertRaises(ConfigurationError):
            config_from_fingerprint("bag-of-words:dim=3")
        with self.assertRaises(ConfigurationError):
            config_from_fingerprint("local-hash:dim=x:seed=0")


if __name__ == "__main__":
    unittest.main()
