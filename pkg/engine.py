"""
Retrieval Loop Engine

Runs the iterate-until-satisfied loop over a vector store: seed retrieval,
concurrent brainstorming, a single hypothesize-satisfy call and refinement.
Also runs the sequential two-call baseline and benchmarks the two against
each other.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, List, Optional, Sequence, Union

from utils.cost_ledger import CostLedger
from utils.embedding import Embedder, build_embedder, config_from_fingerprint
from utils.errors import BenchError, ConfigurationError, EmptyStoreError, EngineError, LoopError
from utils.llm_gateway import ChatProvider
from utils.loop_stages import (
    NONE_MARKER, BrainstormRequest, BrainstormResult, HypSatRequest, brainstorm_concurrent,
    format_chunks, hypothesize_satisfy, hypothesize_then_satisfy, refine_notes,
)
from utils.models import (
    EngineConfig, Method, Notes, QueryLog, RoleTag, UsageRecord, Verdict,
)
from utils.prompts import PromptLibrary
from utils.vector_store import VectorStore, retrieve

logger = logging.getLogger(__name__)


@dataclass
class LoopState:
    """Mutable state of one run; owned by a single engine call"""
    iteration: int = 0
    notes: Notes = field(default_factory=Notes)
    query_log: QueryLog = field(default_factory=QueryLog)
    last_verdict: Optional[Verdict] = None
    satisfied: bool = False


@dataclass(frozen=True)
class StageEvent:
    """One transcript entry; LLM events carry the call's usage"""
    stage: str
    iteration: int
    role_tag: Optional[RoleTag] = None
    detail: Dict = field(default_factory=dict)
    usage: Optional[UsageRecord] = None
    wall_clock: float = 0.0

    def to_dict(self, include_timings: bool = True) -> Dict:
        data = {
            "stage": self.stage,
            "iteration": self.iteration,
            "role_tag": self.role_tag.value if self.role_tag else None,
            "detail": self.detail,
            "usage": self.usage.to_dict(include_timings) if self.usage else None,
        }
        if include_timings:
            data["wall_clock"] = self.wall_clock
        return data


@dataclass
class RunReport:
    """Outcome of one run of either method"""
    user_query: str
    method: Method
    final_hypothesis: str
    final_notes: str
    satisfied: bool
    iterations_used: int
    ledger: CostLedger
    total_wall_clock: float
    transcript: List[StageEvent] = field(default_factory=list)
    query_log: List[str] = field(default_factory=list)
    feedback: str = ""
    prompt_versions: Dict[str, int] = field(default_factory=dict)

    def llm_events(self) -> List[StageEvent]:
        return [event for event in self.transcript if event.usage is not None]

    def phase_seconds(self) -> Dict[str, float]:
        """Wall-clock summed per transcript stage"""
        phases: Dict[str, float] = {}
        for event in self.transcript:
            phases[event.stage] = phases.get(event.stage, 0.0) + event.wall_clock
        return phases

    def to_dict(self, include_timings: bool = True) -> Dict:
        data = {
            "method": self.method.value,
            "user_query": self.user_query,
            "final_hypothesis": self.final_hypothesis,
            "final_notes": self.final_notes,
            "satisfied": self.satisfied,
            "iterations_used": self.iterations_used,
            "feedback": self.feedback,
            "query_log": list(self.query_log),
            "prompt_versions": dict(self.prompt_versions),
            "totals": self.ledger.totals().to_dict(),
            "records": [record.to_dict(include_timings) for record in self.ledger.records],
            "transcript": [event.to_dict(include_timings) for event in self.transcript],
        }
        if include_timings:
            data["total_wall_clock"] = self.total_wall_clock
            data["phase_seconds"] = self.phase_seconds()
        return data

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, ensure_ascii=False)

    def save(self, path: str):
        _write_report(self.to_json(), path)


@dataclass(frozen=True)
class BenchRow:
    """One method's averaged results"""
    method: Method
    satisfied: bool
    cost: Decimal   # dollars per query
    delay: float    # seconds per query
    runs: int = 1

    @classmethod
    def from_reports(cls, method: Method, reports: Sequence[RunReport]) -> "BenchRow":
        if not reports:
            raise ConfigurationError("no runs to summarize")
        total_cost = sum((r.ledger.totals().total_cost for r in reports), Decimal(0))
        return cls(
            method=method,
            satisfied=all(r.satisfied for r in reports),
            cost=total_cost / len(reports),
            delay=sum(r.total_wall_clock for r in reports) / len(reports),
            runs=len(reports),
        )

    def to_dict(self) -> Dict:
        return {
            "method": self.method.value,
            "satisfied": self.satisfied,
            "cost": str(self.cost),
            "delay": self.delay,
            "runs": self.runs,
        }


def _reduction(baseline, proposed) -> float:
    if baseline == 0:
        return 0.0
    return float((baseline - proposed) / baseline)


@dataclass
class BenchReport:
    """Head-to-head comparison; reductions are fractions of the baseline"""
    baseline: BenchRow
    proposed: BenchRow
    relative_cost_reduction: float
    relative_delay_reduction: float
    queries: List[str] = field(default_factory=list)

    @classmethod
    def from_rows(cls, baseline: BenchRow, proposed: BenchRow,
                  queries: Optional[List[str]] = None) -> "BenchReport":
        return cls(
            baseline=baseline,
            proposed=proposed,
            relative_cost_reduction=_reduction(baseline.cost, proposed.cost),
            relative_delay_reduction=_reduction(baseline.delay, proposed.delay),
            queries=list(queries or []),
        )

    @property
    def rows(self) -> List[BenchRow]:
        return [self.baseline, self.proposed]

    def to_dict(self) -> Dict:
        return {
            "queries": self.queries,
            "rows": [row.to_dict() for row in self.rows],
            "relative_cost_reduction": self.relative_cost_reduction,
            "relative_delay_reduction": self.relative_delay_reduction,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path: str):
        _write_report(self.to_json(), path)

    def render_table(self) -> str:
        """Aligned plain-text table: Method, Information Need, Cost ($), Delay (seconds)"""
        header = ("Method", "Information Need", "Cost ($)", "Delay (seconds)")
        body = [
            (
                row.method.value.capitalize(),
                "Satisfied" if row.satisfied else "Not satisfied",
                f"{row.cost:.5f}",
                f"{row.delay:.2f}",
            )
            for row in self.rows
        ]
        widths = [max(len(line[col]) for line in [header] + body) for col in range(len(header))]

        def fmt(line) -> str:
            return " | ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()

        lines = [fmt(header), "-+-".join("-" * width for width in widths)]
        lines.extend(fmt(line) for line in body)
        lines.append("")
        lines.append(f"Relative cost reduction: {self.relative_cost_reduction * 100:.2f}%")
        lines.append(f"Relative delay reduction: {self.relative_delay_reduction * 100:.2f}%")
        return "\n".join(lines)


def _write_report(text: str, path: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")
    logger.info(f"Report written to {path} ({os.path.getsize(path)} bytes)")


class LoopEngine:
    """Runs the proposed loop, the baseline and the benchmark over one store"""

    def __init__(self, store: VectorStore, embedder: Optional[Embedder] = None,
                 config: Optional[EngineConfig] = None, prompts: Optional[PromptLibrary] = None):
        """
        Initialize the engine

        Args:
            store: Non-empty vector store; read-only during runs
            embedder: Must match the store's fingerprint; defaults to the
                local-hash embedder the fingerprint describes
            config: Loop parameters
            prompts: Prompt templates; defaults to the shipped prompts/
        """
        self.store = store
        self.config = config or EngineConfig()
        self.embedder = embedder or build_embedder(config_from_fingerprint(store.fingerprint))
        if self.embedder.fingerprint != store.fingerprint:
            raise ConfigurationError(f"embedder {self.embedder.fingerprint!r} does not match "
                                     f"store embedder {store.fingerprint!r}")
        self.prompts = prompts or PromptLibrary()

    def run_loop(self, user_query: str, provider: ChatProvider) -> RunReport:
        """Proposed method: seed retrieval, concurrent brainstorm, one-call hypothesize-satisfy"""
        return self._run(user_query, provider, Method.PROPOSED)

    def run_baseline(self, user_query: str, provider: ChatProvider) -> RunReport:
        """Baseline: no seed retrieval, sequential note extraction, two-call hypothesize/satisfy"""
        return self._run(user_query, provider, Method.BASELINE)

    def run_bench(self, queries: Union[str, Sequence[str]],
                  providers: Dict[Method, ChatProvider]) -> BenchReport:
        """
        Run the baseline, then the proposed method, over every query

        Args:
            queries: One query or a list; each arm's cost and delay are means
            providers: Provider per arm

        Raises:
            BenchError: an arm failed; names the arm
        """
        if isinstance(queries, str):
            queries = [queries]
        if not queries:
            raise ConfigurationError("bench needs at least one query")

        rows: Dict[Method, BenchRow] = {}
        for method, runner in ((Method.BASELINE, self.run_baseline), (Method.PROPOSED, self.run_loop)):
            reports = []
            for query in queries:
                try:
                    reports.append(runner(query, providers[method]))
                except EngineError as e:
                    raise BenchError(str(e), method.value) from e
            rows[method] = BenchRow.from_reports(method, reports)
            logger.info(f"Bench {method.value}: cost ${rows[method].cost:.5f}, "
                        f"delay {rows[method].delay:.2f}s over {len(reports)} queries")

        report = BenchReport.from_rows(rows[Method.BASELINE], rows[Method.PROPOSED], list(queries))
        logger.info(f"Bench: cost reduction {report.relative_cost_reduction * 100:.2f}%, "
                    f"delay reduction {report.relative_delay_reduction * 100:.2f}%")
        return report

    def _run(self, user_query: str, provider: ChatProvider, method: Method) -> RunReport:
        if not user_query or not user_query.strip():
            raise ConfigurationError("user query must be non-empty")
        if len(self.store) == 0:
            raise EmptyStoreError()

        config = self.config
        proposed = method is Method.PROPOSED
        provider.start_run()
        ledger = CostLedger(config.prices)
        transcript: List[StageEvent] = []
        state = LoopState()

        def record(event: StageEvent):
            transcript.append(event)
            if event.usage is not None:
                ledger.append(event.usage)

        logger.info(f"Starting {method.value} run: {user_query!r}")
        started = time.perf_counter()

        seed_chunks = NONE_MARKER
        if proposed:
            seed_chunks = self._seed_retrieval(user_query, record)

        while True:
            state.iteration += 1
            iteration = state.iteration
            logger.info(f"Iteration {iteration} ({method.value})")

            try:
                brainstorm = brainstorm_concurrent(BrainstormRequest(
                    user_query=user_query,
                    notes=state.notes,
                    query_log=state.query_log,
                    store=self.store,
                    embedder=self.embedder,
                    prompts=self.prompts,
                    n_questions=config.n_questions,
                    k=config.k,
                    parallelism=config.parallelism if proposed else 1,
                    iteration=iteration,
                    settings=config.chat_settings,
                    seed_chunks=seed_chunks if iteration == 1 else NONE_MARKER,
                    overfetch=config.overfetch,
                    chunk_context_cap=config.chunk_context_cap,
                ), provider)
            except EngineError as e:
                self._abort(e, ledger, iteration)
            self._record_brainstorm(brainstorm, iteration, record)
            state.notes = brainstorm.notes
            state.query_log.extend(brainstorm.new_queries)

            hyp_sat = HypSatRequest(
                user_query=user_query,
                notes=state.notes,
                query_log=state.query_log,
                prompts=self.prompts,
                iteration=iteration,
                settings=config.chat_settings,
            )
            try:
                if proposed:
                    verdict, usage = hypothesize_satisfy(hyp_sat, provider)
                    record(StageEvent("hyp-sat", iteration, RoleTag.HYP_SAT, verdict.to_dict(),
                                      usage, usage.wall_clock))
                else:
                    verdict, usages = hypothesize_then_satisfy(hyp_sat, provider)
                    record(StageEvent("baseline-hypothesize", iteration, RoleTag.BASELINE_HYPOTHESIZE,
                                      {"hypothesis": verdict.hypothesis}, usages[0], usages[0].wall_clock))
                    record(StageEvent("baseline-satisfy", iteration, RoleTag.BASELINE_SATISFY,
                                      verdict.to_dict(), usages[1], usages[1].wall_clock))
            except EngineError as e:
                self._abort(e, ledger, iteration)
            state.last_verdict = verdict

            if verdict.satisfied:
                state.satisfied = True
                break
            if iteration >= config.max_iterations:
                logger.warning(f"Iteration cap {config.max_iterations} reached without a satisfied verdict")
                break

            if not state.notes.text.strip():
                logger.warning(f"Iteration {iteration}: no notes to refine")
                continue
            try:
                refined = refine_notes(state.notes, user_query, provider, self.prompts,
                                       config.chat_settings, iteration)
            except EngineError as e:
                self._abort(e, ledger, iteration)
            record(StageEvent("refine", iteration, RoleTag.REFINE, _refine_detail(state.notes, refined),
                              refined.usage, refined.usage.wall_clock))
            state.notes = refined.notes

        final_hypothesis = state.last_verdict.hypothesis
        if state.satisfied and config.final_refine:
            try:
                refined = refine_notes(Notes(final_hypothesis), user_query, provider, self.prompts,
                                       config.chat_settings, state.iteration)
            except EngineError as e:
                self._abort(e, ledger, state.iteration)
            record(StageEvent("final-refine", state.iteration, RoleTag.REFINE,
                              _refine_detail(Notes(final_hypothesis), refined),
                              refined.usage, refined.usage.wall_clock))
            final_hypothesis = refined.notes.text

        total_wall_clock = time.perf_counter() - started
        totals = ledger.totals()
        logger.info(f"Finished {method.value} run: satisfied={state.satisfied}, "
                    f"iterations={state.iteration}, calls={totals.calls}, "
                    f"tokens={totals.total_tokens}, cost=${totals.total_cost}, "
                    f"{total_wall_clock:.2f}s")

        return RunReport(
            user_query=user_query,
            method=method,
            final_hypothesis=final_hypothesis,
            final_notes=state.notes.text,
            satisfied=state.satisfied,
            iterations_used=state.iteration,
            ledger=ledger,
            total_wall_clock=total_wall_clock,
            transcript=transcript,
            query_log=list(state.query_log.entries),
            feedback=state.last_verdict.feedback,
            prompt_versions=self.prompts.versions(),
        )

    def _seed_retrieval(self, user_query: str, record) -> str:
        started = time.perf_counter()
        query_emb = self.embedder.embed_text(user_query)
        hits = retrieve(self.store, query_emb, query_emb, self.config.k, self.config.overfetch)
        record(StageEvent("seed-retrieval", 0, detail={"chunk_ids": [hit.chunk.chunk_id for hit in hits]},
                          wall_clock=time.perf_counter() - started))
        logger.debug(f"Seed retrieval: {[hit.chunk.chunk_id for hit in hits]}")
        return format_chunks(hits, self.config.chunk_context_cap)

    @staticmethod
    def _record_brainstorm(brainstorm: BrainstormResult, iteration: int, record):
        questions_usage = brainstorm.usage[0]
        record(StageEvent("brainstorm-questions", iteration, RoleTag.BRAINSTORM_QUESTIONS,
                          {"new_queries": list(brainstorm.new_queries)},
                          questions_usage, questions_usage.wall_clock))
        for outcome in brainstorm.outcomes:
            record(StageEvent("brainstorm-notes", iteration, RoleTag.BRAINSTORM_NOTES,
                              {"query": outcome.query, "chunk_ids": list(outcome.chunk_ids)},
                              outcome.usage, outcome.usage.wall_clock))
        if brainstorm.outcomes:
            record(StageEvent("brainstorm-fanout", iteration, detail={"tasks": len(brainstorm.outcomes)},
                              wall_clock=brainstorm.fanout_seconds))

    @staticmethod
    def _abort(error: EngineError, ledger: CostLedger, iteration: int):
        ledger.extend(error.completed_usage)
        if error.usage is not None:
            ledger.append(error.usage)
        logger.error(f"Run aborted in iteration {iteration}: {error}")
        raise LoopError(str(error), iteration, ledger=ledger) from error


def _refine_detail(before: Notes, refined) -> Dict:
    return {
        "chars_in": before.char_count,
        "chars_out": refined.notes.char_count,
        "compression_ratio": refined.compression_ratio,
    }


def run_loop(user_query: str, store: VectorStore, config: EngineConfig, provider: ChatProvider,
             embedder: Optional[Embedder] = None, prompts: Optional[PromptLibrary] = None) -> RunReport:
    return LoopEngine(store, embedder, config, prompts).run_loop(user_query, provider)


def run_baseline(user_query: str, store: VectorStore, config: EngineConfig, provider: ChatProvider,
                 embedder: Optional[Embedder] = None, prompts: Optional[PromptLibrary] = None) -> RunReport:
    return LoopEngine(store, embedder, config, prompts).run_baseline(user_query, provider)


def run_bench(queries: Union[str, Sequence[str]], store: VectorStore, config: EngineConfig,
              providers: Dict[Method, ChatProvider], embedder: Optional[Embedder] = None,
              prompts: Optional[PromptLibrary] = None) -> BenchReport:
    return LoopEngine(store, embedder, config, prompts).run_bench(queries, providers)
