"""
Data Models for the Retrieval Loop
Defines documents, embeddings, chat requests, usage records and loop state.
"""

import math
import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Dict, List, Optional, Tuple

from .errors import ConfigurationError


class RoleTag(Enum):
    """Which stage an LLM call belongs to"""
    BRAINSTORM_QUESTIONS = "brainstorm-questions"
    BRAINSTORM_NOTES = "brainstorm-notes"
    HYP_SAT = "hyp-sat"
    REFINE = "refine"
    BASELINE_HYPOTHESIZE = "baseline-hypothesize"
    BASELINE_SATISFY = "baseline-satisfy"


class EmbedderKind(Enum):
    """Embedding backends"""
    LOCAL_HASH = "local-hash"  # seeded hashed character 3-grams, offline
    REMOTE = "remote"          # OpenAI-compatible embeddings endpoint


class Method(Enum):
    """Benchmark arms"""
    BASELINE = "baseline"
    PROPOSED = "proposed"


@dataclass(frozen=True)
class RawDocument:
    """A text file as loaded from disk"""
    doc_id: str
    text: str
    source_path: str

    def __post_init__(self):
        if not self.text.strip():
            raise ConfigurationError(f"empty document: {self.doc_id}")


@dataclass(frozen=True)
class DocumentChunk:
    """A window of a RawDocument; char_span indexes into the document text"""
    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    char_span: Tuple[int, int]

    def __post_init__(self):
        start, end = self.char_span
        if self.ordinal < 0 or not 0 <= start < end:
            raise ConfigurationError(f"invalid chunk span {self.char_span} for {self.chunk_id}")
        if end - start != len(self.text):
            raise ConfigurationError(f"chunk {self.chunk_id} text does not match its span")


@dataclass(frozen=True)
class EmbedderConfig:
    """Which embedder to use; dim and seed apply to local-hash only"""
    kind: EmbedderKind = EmbedderKind.LOCAL_HASH
    dim: int = 256
    seed: int = 0
    model_name: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", EmbedderKind(self.kind))
        if self.kind is EmbedderKind.LOCAL_HASH and self.dim <= 0:
            raise ConfigurationError(f"embedder dim must be positive, got {self.dim}")
        if self.kind is EmbedderKind.REMOTE and not self.model_name:
            raise ConfigurationError("remote embedder requires model_name")

    @property
    def fingerprint(self) -> str:
        if self.kind is EmbedderKind.LOCAL_HASH:
            return f"local-hash:dim={self.dim}:seed={self.seed}"
        return f"remote:model={self.model_name}"


@dataclass(frozen=True)
class Embedding:
    """A unit-length vector tagged with the fingerprint of the embedder that made it"""
    values: Tuple[float, ...]
    dim: int
    fingerprint: str = ""

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise ConfigurationError(f"embedding has {len(self.values)} values, expected dim {self.dim}")
        if not all(math.isfinite(v) for v in self.values):
            raise ConfigurationError("embedding has non-finite components")
        norm = math.sqrt(math.fsum(v * v for v in self.values))
        if abs(norm - 1.0) > 1e-9:
            raise ConfigurationError(f"embedding is not normalized (norm={norm!r})")


@dataclass(frozen=True)
class SearchHit:
    """One retrieval result; score is cosine similarity"""
    chunk: DocumentChunk
    score: float
    rank: int


@dataclass(frozen=True)
class ChatRequest:
    """A single chat-completion call"""
    role_tag: RoleTag
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 2000
    json_mode: bool = True
    iteration: int = 0
    slot: int = 0  # proposal index inside a brainstorm fan-out
    seed: Optional[int] = None  # sampling seed, for endpoints that honour one

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigurationError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens <= 0:
            raise ConfigurationError(f"max_tokens must be > 0, got {self.max_tokens}")
        if not self.system_prompt.strip() or not self.user_prompt.strip():
            raise ConfigurationError(f"{self.role_tag.value}: prompts must be non-empty")


@dataclass(frozen=True)
class ChatSettings:
    """Sampling parameters shared by every call of a run"""
    temperature: float = 0.0
    max_tokens: int = 2000
    seed: Optional[int] = None


@dataclass(frozen=True)
class UsageRecord:
    """Token usage and timing of one gateway call, summed over its retries"""
    role_tag: RoleTag
    prompt_tokens: int
    completion_tokens: int
    wall_clock: float  # seconds
    retries: int = 0
    iteration: int = 0
    slot: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self, include_timings: bool = True) -> Dict:
        data = {
            "role_tag": self.role_tag.value,
            "iteration": self.iteration,
            "slot": self.slot,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "retries": self.retries,
        }
        if include_timings:
            data["wall_clock"] = self.wall_clock
        return data


@dataclass(frozen=True)
class PriceTable:
    """Dollar prices per 1000 tokens"""
    price_per_1k_prompt: Decimal = Decimal("0.001")
    price_per_1k_completion: Decimal = Decimal("0.002")

    def __post_init__(self):
        # accept floats/strings from config files without float noise
        for name in ("price_per_1k_prompt", "price_per_1k_completion"):
            value = getattr(self, name)
            if not isinstance(value, Decimal):
                object.__setattr__(self, name, Decimal(str(value)))
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class Notes:
    """Accumulated evidence; grows by brainstorm merges, replaced by refine"""
    text: str = ""

    @property
    def char_count(self) -> int:
        return len(self.text)

    def append_blocks(self, blocks: List[str]) -> "Notes":
        if not blocks:
            return self
        merged = "\n\n".join(blocks)
        if not self.text:
            return Notes(merged)
        return Notes(f"{self.text}\n\n{merged}")


_WHITESPACE = re.compile(r"\s+")
_TERMINAL_PUNCTUATION = ".?!;:,"


def normalize_query(text: str) -> str:
    """Dedup key for queries: lowercase, collapse whitespace, strip terminal punctuation"""
    collapsed = _WHITESPACE.sub(" ", text.lower()).strip()
    return collapsed.rstrip(_TERMINAL_PUNCTUATION).strip()


class QueryLog:
    """Queries issued so far, in proposal order; the user query is kept out of it"""

    def __init__(self, entries: Optional[List[str]] = None):
        self.entries: List[str] = []
        self._keys = set()
        for entry in entries or []:
            self.add(entry)

    def __contains__(self, query: str) -> bool:
        return normalize_query(query) in self._keys

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, query: str) -> bool:
        """Append unless a normalized duplicate exists; returns whether it was added"""
        key = normalize_query(query)
        if not key or key in self._keys:
            return False
        self._keys.add(key)
        self.entries.append(query)
        return True

    def extend(self, queries: List[str]):
        for query in queries:
            self.add(query)

    def copy(self) -> "QueryLog":
        return QueryLog(list(self.entries))

    def render(self) -> str:
        if not self.entries:
            return "(none)"
        return "\n".join(f"- {q}" for q in self.entries)


@dataclass(frozen=True)
class Verdict:
    """Outcome of a hypothesize-satisfy phase"""
    reasoning: str
    hypothesis: str
    satisfied: bool
    feedback: str

    def __post_init__(self):
        if self.satisfied and not self.hypothesis.strip():
            raise ConfigurationError("a satisfied verdict needs a hypothesis")
        if not self.satisfied and not self.feedback.strip():
            raise ConfigurationError("an unsatisfied verdict needs feedback")

    def to_dict(self) -> Dict:
        return {
            "reasoning": self.reasoning,
            "hypothesis": self.hypothesis,
            "satisfied": self.satisfied,
            "feedback": self.feedback,
        }


@dataclass
class EngineConfig:
    """Loop, retrieval and model parameters for one engine"""
    max_iterations: int = 5
    n_questions: int = 5
    k: int = 5
    parallelism: Optional[int] = None  # defaults to n_questions
    overfetch: int = 4
    chunk_context_cap: int = 6000
    final_refine: bool = False
    temperature: float = 0.0
    max_tokens: int = 2000
    provider: str = "mock"
    model: str = "gpt-3.5-turbo-1106"
    base_url: Optional[str] = None
    prices: PriceTable = field(default_factory=PriceTable)
    seed: int = 0

    def __post_init__(self):
        if self.parallelism is None:
            self.parallelism = self.n_questions
        checks = {
            "max_iterations": self.max_iterations,
            "n_questions": self.n_questions,
            "k": self.k,
            "parallelism": self.parallelism,
            "overfetch": self.overfetch,
            "chunk_context_cap": self.chunk_context_cap,
            "max_tokens": self.max_tokens,
        }
        for name, value in checks.items():
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if self.temperature < 0:
            raise ConfigurationError(f"temperature must be >= 0, got {self.temperature}")
        if self.provider not in ("mock", "http"):
            raise ConfigurationError(f"unknown provider {self.provider!r}")

    @property
    def chat_settings(self) -> ChatSettings:
        return ChatSettings(temperature=self.temperature, max_tokens=self.max_tokens, seed=self.seed)
