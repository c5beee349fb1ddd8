"""
Loop Stages
The three stages of one retrieval loop pass: concurrent brainstorming,
hypothesize-satisfy, and refine. Each is orchestration over the gateway and
the store; none of them mutates its inputs.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .embedding import Embedder
from .errors import ConfigurationError, EmptyStoreError, EngineError, StageError
from .llm_gateway import ChatProvider, chat_json, chat_text
from .models import (
    ChatRequest, ChatSettings, Notes, QueryLog, RoleTag, SearchHit, UsageRecord, Verdict,
    normalize_query,
)
from .prompts import PromptLibrary
from .vector_store import DEFAULT_OVERFETCH, VectorStore, retrieve

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_CONTEXT_CAP = 6000
NONE_MARKER = "(none)"


def format_chunks(hits: List[SearchHit], cap: int = DEFAULT_CHUNK_CONTEXT_CAP) -> str:
    """
    Render hits as '[rank] chunk_id' blocks for a prompt

    Lowest-ranked blocks are dropped first until the text fits in cap
    characters; a single block that is still too long is truncated.
    """
    if cap < 1:
        raise ConfigurationError(f"chunk context cap must be >= 1, got {cap}")
    blocks = [f"[{hit.rank}] {hit.chunk.chunk_id}\n{hit.chunk.text}" for hit in hits]
    if not blocks:
        return NONE_MARKER

    while len(blocks) > 1 and len("\n\n".join(blocks)) > cap:
        blocks.pop()
    text = "\n\n".join(blocks)
    return text[:cap]


def composite_context(user_query: str, notes: Notes) -> str:
    """Text the rerank step scores candidates against"""
    if not notes.text:
        return user_query
    return f"{user_query}\n{notes.text}"


# ---------------------------------------------------------------------------
# Response validators; a rejection makes the gateway re-prompt
# ---------------------------------------------------------------------------

def _require_object(parsed: Any) -> Dict:
    if not isinstance(parsed, dict):
        raise TypeError(f"expected a JSON object, got {type(parsed).__name__}")
    return parsed


def _string_field(data: Dict, name: str) -> str:
    value = data[name]
    if not isinstance(value, str):
        raise TypeError(f'"{name}" must be a string')
    return value


def _bool_field(data: Dict, name: str) -> bool:
    value = data[name]
    # strict: "true" or 1 are rejected
    if not isinstance(value, bool):
        raise TypeError(f'"{name}" must be a JSON boolean')
    return value


def parse_questions(parsed: Any) -> List[str]:
    data = _require_object(parsed)
    questions = data["questions"]
    if not isinstance(questions, list) or not all(isinstance(q, str) for q in questions):
        raise TypeError('"questions" must be a list of strings')
    return questions


def parse_notes(parsed: Any) -> str:
    return _string_field(_require_object(parsed), "notes")


def parse_verdict(parsed: Any) -> Verdict:
    data = _require_object(parsed)
    return Verdict(
        reasoning=_string_field(data, "reasoning"),
        hypothesis=_string_field(data, "hypothesis"),
        satisfied=_bool_field(data, "satisfied"),
        feedback=_string_field(data, "feedback"),
    )


def parse_hypothesis(parsed: Any) -> Tuple[str, str]:
    data = _require_object(parsed)
    reasoning = _string_field(data, "reasoning")
    hypothesis = _string_field(data, "hypothesis")
    if not hypothesis.strip():
        raise ValueError('"hypothesis" is empty')
    return reasoning, hypothesis


# ---------------------------------------------------------------------------
# Brainstorm
# ---------------------------------------------------------------------------

@dataclass
class BrainstormRequest:
    """Inputs of one brainstorm pass"""
    user_query: str
    notes: Notes
    query_log: QueryLog
    store: VectorStore
    embedder: Embedder
    prompts: PromptLibrary
    n_questions: int = 5
    k: int = 5
    parallelism: int = 5
    iteration: int = 1
    settings: ChatSettings = field(default_factory=ChatSettings)
    seed_chunks: str = NONE_MARKER
    overfetch: int = DEFAULT_OVERFETCH
    chunk_context_cap: int = DEFAULT_CHUNK_CONTEXT_CAP

    def __post_init__(self):
        if not self.user_query.strip():
            raise ConfigurationError("user query must be non-empty")
        if self.n_questions < 1:
            raise ConfigurationError(f"n_questions must be >= 1, got {self.n_questions}")
        if self.parallelism < 1:
            raise ConfigurationError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class NoteOutcome:
    """Result of one fan-out task"""
    query: str
    slot: int
    notes: str
    usage: UsageRecord
    chunk_ids: Tuple[str, ...]


@dataclass
class BrainstormResult:
    """
    new_queries: surviving proposals in proposal order
    notes: input notes with the non-empty note blocks appended in proposal order
    usage: the questions call first, then one record per query in proposal order
    """
    new_queries: List[str]
    notes: Notes
    usage: List[UsageRecord]
    outcomes: List[NoteOutcome] = field(default_factory=list)
    fanout_seconds: float = 0.0


def dedupe_proposals(candidates: List[str], user_query: str, query_log: QueryLog,
                     n_questions: int) -> List[str]:
    """Truncate to n_questions, then drop blanks and normalized duplicates"""
    seen = {normalize_query(user_query)}
    survivors = []
    for candidate in candidates[:n_questions]:
        query = candidate.strip()
        key = normalize_query(query)
        if not key:
            continue
        if key in seen or query in query_log:
            logger.warning(f"Dropping duplicate query: {query!r}")
            continue
        seen.add(key)
        survivors.append(query)
    return survivors


def _extract_notes(request: BrainstormRequest, query: str, slot: int,
                   context_emb, provider: ChatProvider) -> NoteOutcome:
    query_emb = request.embedder.embed_text(query)
    hits = retrieve(request.store, query_emb, context_emb, request.k, request.overfetch)

    system, user = request.prompts.render(
        RoleTag.BRAINSTORM_NOTES,
        user_query=request.user_query,
        query=query,
        chunks=format_chunks(hits, request.chunk_context_cap),
    )
    chat_request = ChatRequest(
        role_tag=RoleTag.BRAINSTORM_NOTES,
        system_prompt=system,
        user_prompt=user,
        temperature=request.settings.temperature,
        max_tokens=request.settings.max_tokens,
        json_mode=True,
        iteration=request.iteration,
        slot=slot,
        seed=request.settings.seed,
    )
    notes, usage = chat_json(chat_request, provider, validator=parse_notes)
    return NoteOutcome(query, slot, notes.strip(), usage, tuple(hit.chunk.chunk_id for hit in hits))


def _stage_error(query: str, error: EngineError, iteration: int,
                 completed: List[UsageRecord]) -> StageError:
    stage_error = StageError(f"note extraction failed for query {query!r}: {error}",
                             query=query, iteration=iteration)
    stage_error.usage = error.usage
    stage_error.completed_usage = tuple(completed)
    return stage_error


def brainstorm_concurrent(request: BrainstormRequest, provider: ChatProvider) -> BrainstormResult:
    """
    Propose follow-up queries, then extract notes for each of them concurrently

    One brainstorm-questions call proposes up to n_questions queries. Each
    surviving query is embedded, searched (overfetch * k candidates),
    reranked to k against the user query plus current notes, and passed to
    one brainstorm-notes call; at most `parallelism` of these run at once.
    Note blocks are merged in proposal order regardless of completion order.

    Raises:
        EmptyStoreError: before any LLM call
        StageError: a note extraction failed; names the query
    """
    if len(request.store) == 0:
        raise EmptyStoreError()

    system, user = request.prompts.render(
        RoleTag.BRAINSTORM_QUESTIONS,
        user_query=request.user_query,
        notes=request.notes.text or NONE_MARKER,
        query_log=request.query_log.render(),
        chunks=request.seed_chunks,
        n_questions=request.n_questions,
    )
    questions_request = ChatRequest(
        role_tag=RoleTag.BRAINSTORM_QUESTIONS,
        system_prompt=system,
        user_prompt=user,
        temperature=request.settings.temperature,
        max_tokens=request.settings.max_tokens,
        json_mode=True,
        iteration=request.iteration,
        seed=request.settings.seed,
    )
    candidates, questions_usage = chat_json(questions_request, provider, validator=parse_questions)
    queries = dedupe_proposals(candidates, request.user_query, request.query_log, request.n_questions)
    logger.info(f"Iteration {request.iteration}: {len(queries)} new queries "
                f"({len(candidates)} proposed)")

    if not queries:
        return BrainstormResult(new_queries=[], notes=request.notes, usage=[questions_usage])

    # the rerank context is fixed for the whole fan-out
    context_emb = request.embedder.embed_text(composite_context(request.user_query, request.notes))

    started = time.perf_counter()
    if request.parallelism == 1:
        outcomes = _run_sequential(request, queries, context_emb, provider, questions_usage)
    else:
        outcomes = _run_concurrent(request, queries, context_emb, provider, questions_usage)
    fanout_seconds = time.perf_counter() - started

    notes = request.notes.append_blocks([o.notes for o in outcomes if o.notes])
    logger.info(f"Iteration {request.iteration}: note fan-out took {fanout_seconds:.2f}s, "
                f"notes now {notes.char_count} chars")
    return BrainstormResult(
        new_queries=queries,
        notes=notes,
        usage=[questions_usage] + [o.usage for o in outcomes],
        outcomes=outcomes,
        fanout_seconds=fanout_seconds,
    )


def _run_sequential(request: BrainstormRequest, queries: List[str], context_emb,
                    provider: ChatProvider, questions_usage: UsageRecord) -> List[NoteOutcome]:
    outcomes: List[NoteOutcome] = []
    for slot, query in enumerate(queries):
        try:
            outcomes.append(_extract_notes(request, query, slot, context_emb, provider))
        except EngineError as e:
            completed = [questions_usage] + [o.usage for o in outcomes]
            raise _stage_error(query, e, request.iteration, completed) from e
    return outcomes


def _run_concurrent(request: BrainstormRequest, queries: List[str], context_emb,
                    provider: ChatProvider, questions_usage: UsageRecord) -> List[NoteOutcome]:
    results: Dict[int, NoteOutcome] = {}
    failures: Dict[int, EngineError] = {}

    workers = min(request.parallelism, len(queries))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_slot = {
            executor.submit(_extract_notes, request, query, slot, context_emb, provider): slot
            for slot, query in enumerate(queries)
        }
        for future in as_completed(future_to_slot):
            slot = future_to_slot[future]
            try:
                results[slot] = future.result()
            except EngineError as e:
                failures[slot] = e

    if failures:
        # report the first failure in proposal order, keep every finished call's usage
        slot = min(failures)
        completed = [questions_usage] + [results[s].usage for s in sorted(results)]
        raise _stage_error(queries[slot], failures[slot], request.iteration, completed) from failures[slot]

    return [results[slot] for slot in range(len(queries))]


# ---------------------------------------------------------------------------
# Hypothesize-satisfy
# ---------------------------------------------------------------------------

@dataclass
class HypSatRequest:
    """Inputs of one hypothesize-satisfy phase"""
    user_query: str
    notes: Notes
    query_log: QueryLog
    prompts: PromptLibrary
    iteration: int = 1
    settings: ChatSettings = field(default_factory=ChatSettings)

    def __post_init__(self):
        if not self.user_query.strip():
            raise ConfigurationError("user query must be non-empty")


def _request(role_tag: RoleTag, prompts: PromptLibrary, settings: ChatSettings,
             iteration: int, json_mode: bool = True, **values) -> ChatRequest:
    system, user = prompts.render(role_tag, **values)
    return ChatRequest(
        role_tag=role_tag,
        system_prompt=system,
        user_prompt=user,
        temperature=settings.temperature,
        max_tokens=settings.max_tokens,
        json_mode=json_mode,
        iteration=iteration,
        seed=settings.seed,
    )


def hypothesize_satisfy(request: HypSatRequest, provider: ChatProvider) -> Tuple[Verdict, UsageRecord]:
    """
    Form a hypothesis and judge it in one JSON call

    The reply must be {reasoning, hypothesis, satisfied, feedback} with a
    strict boolean `satisfied`; anything else is re-prompted and finally
    raised as ProtocolError.
    """
    chat_request = _request(
        RoleTag.HYP_SAT, request.prompts, request.settings, request.iteration,
        user_query=request.user_query,
        notes=request.notes.text or NONE_MARKER,
        query_log=request.query_log.render(),
    )
    verdict, usage = chat_json(chat_request, provider, validator=parse_verdict)
    logger.info(f"Iteration {request.iteration}: satisfied={verdict.satisfied}")
    return verdict, usage


def hypothesize_then_satisfy(request: HypSatRequest,
                             provider: ChatProvider) -> Tuple[Verdict, List[UsageRecord]]:
    """Two-call variant: baseline-hypothesize, then baseline-satisfy on that hypothesis"""
    notes_text = request.notes.text or NONE_MARKER
    hypothesize_request = _request(
        RoleTag.BASELINE_HYPOTHESIZE, request.prompts, request.settings, request.iteration,
        user_query=request.user_query,
        notes=notes_text,
        query_log=request.query_log.render(),
    )
    (reasoning, hypothesis), hypothesize_usage = chat_json(hypothesize_request, provider,
                                                          validator=parse_hypothesis)

    def parse_judgement(parsed: Any) -> Verdict:
        data = _require_object(parsed)
        return Verdict(
            reasoning=reasoning,
            hypothesis=hypothesis,
            satisfied=_bool_field(data, "satisfied"),
            feedback=_string_field(data, "feedback"),
        )

    satisfy_request = _request(
        RoleTag.BASELINE_SATISFY, request.prompts, request.settings, request.iteration,
        user_query=request.user_query,
        notes=notes_text,
        hypothesis=hypothesis,
    )
    try:
        verdict, satisfy_usage = chat_json(satisfy_request, provider, validator=parse_judgement)
    except EngineError as e:
        e.completed_usage = (hypothesize_usage,)
        raise

    logger.info(f"Iteration {request.iteration}: satisfied={verdict.satisfied} (two-call)")
    return verdict, [hypothesize_usage, satisfy_usage]


# ---------------------------------------------------------------------------
# Refine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RefineResult:
    notes: Notes
    usage: UsageRecord
    compression_ratio: float  # output chars / input chars


def refine_notes(notes: Notes, user_query: str, provider: ChatProvider,
                 prompts: PromptLibrary, settings: Optional[ChatSettings] = None,
                 iteration: int = 1) -> RefineResult:
    """
    Distill notes into a terse, dense representation

    The reply replaces the notes wholesale. Nothing checks its format; the
    compression ratio is recorded instead.

    Raises:
        ConfigurationError: notes are empty
        EmptyCompletionError: the model returned nothing
    """
    if not notes.text.strip():
        raise ConfigurationError("cannot refine empty notes")

    chat_request = _request(
        RoleTag.REFINE, prompts, settings or ChatSettings(), iteration, json_mode=False,
        user_query=user_query,
        notes=notes.text,
    )
    text, usage = chat_text(chat_request, provider)
    refined = Notes(text.strip())
    ratio = refined.char_count / notes.char_count
    logger.info(f"Iteration {iteration}: refined notes {notes.char_count} -> "
                f"{refined.char_count} chars (ratio {ratio:.3f})")
    return RefineResult(notes=refined, usage=usage, compression_ratio=ratio)
