"""
Scripted Mock Provider
Deterministic chat provider for tests, offline runs and benchmarks.

Steps are matched on (role_tag, iteration, slot). Steps sharing a key form a
queue, so a retried request takes the next one. Simulated latency is slept in
the calling thread, so concurrent requests overlap.
"""

import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, List, Optional, Tuple

from .errors import ConfigurationError, ScriptError
from .llm_gateway import ChatProvider, Completion
from .models import ChatRequest, Method, RoleTag

logger = logging.getLogger(__name__)

MatchKey = Tuple[RoleTag, int, int]


@dataclass(frozen=True)
class MockStep:
    """One scripted reply"""
    role_tag: RoleTag
    iteration: int
    response_text: str
    simulated_latency: float = 0.0  # seconds
    prompt_tokens: int = 0
    completion_tokens: int = 0
    slot: int = 0

    @property
    def key(self) -> MatchKey:
        return (self.role_tag, self.iteration, self.slot)

    def to_dict(self) -> Dict:
        return {
            "match": {"role_tag": self.role_tag.value, "iteration": self.iteration, "slot": self.slot},
            "response_text": self.response_text,
            "simulated_latency_ms": round(self.simulated_latency * 1000, 3),
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "MockStep":
        match = data.get("match", data)
        response = data["response_text"]
        if not isinstance(response, str):
            # objects are accepted for convenience and sent as JSON text
            response = json.dumps(response)
        return cls(
            role_tag=RoleTag(match["role_tag"]),
            iteration=int(match["iteration"]),
            slot=int(match.get("slot", 0)),
            response_text=response,
            simulated_latency=float(data.get("simulated_latency_ms", 0)) / 1000.0,
            prompt_tokens=int(data.get("prompt_tokens", 0)),
            completion_tokens=int(data.get("completion_tokens", 0)),
        )


@dataclass(frozen=True)
class MockScript:
    """Ordered scripted replies for one run"""
    steps: Tuple[MockStep, ...]

    def to_dict(self) -> Dict:
        return {"steps": [step.to_dict() for step in self.steps]}

    @classmethod
    def from_dict(cls, data: Dict) -> "MockScript":
        try:
            return cls(steps=tuple(MockStep.from_dict(step) for step in data["steps"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"invalid mock script: {e}") from e


def load_script_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read mock script {path}: {e}") from e


def load_script(path: str) -> MockScript:
    return MockScript.from_dict(load_script_file(path))


def load_bench_scripts(path: str) -> Dict[Method, MockScript]:
    """A bench file holds one script per arm: {"baseline": {...}, "proposed": {...}}"""
    data = load_script_file(path)
    missing = [m.value for m in Method if m.value not in data]
    if missing:
        raise ConfigurationError(f"bench script {path} lacks arms: {', '.join(missing)}")
    return {method: MockScript.from_dict(data[method.value]) for method in Method}


class MockProvider(ChatProvider):
    """Replays a MockScript; unmatched requests raise ScriptError"""

    name = "mock"

    def __init__(self, script: MockScript):
        self.script = script
        self._lock = threading.Lock()
        self._queues: Dict[MatchKey, Deque[MockStep]] = {}
        self.served: List[MockStep] = []
        self.start_run()

    def start_run(self):
        """Rewind to the start of the script"""
        with self._lock:
            self._queues = {}
            for step in self.script.steps:
                self._queues.setdefault(step.key, deque()).append(step)
            self.served = []

    def unconsumed(self) -> List[MockStep]:
        with self._lock:
            return [step for queue in self._queues.values() for step in queue]

    def complete(self, request: ChatRequest) -> Completion:
        key = (request.role_tag, request.iteration, request.slot)
        with self._lock:
            queue = self._queues.get(key)
            if not queue:
                raise ScriptError(f"no scripted step for role_tag={request.role_tag.value} "
                                  f"iteration={request.iteration} slot={request.slot}")
            step = queue.popleft()
            self.served.append(step)

        if step.simulated_latency > 0:
            time.sleep(step.simulated_latency)
        return Completion(step.response_text, step.prompt_tokens, step.completion_tokens)


def scripted_loop(arm: Method = Method.PROPOSED, satisfied_at: Optional[int] = 1,
                  iterations: Optional[int] = None, n_questions: int = 5,
                  note_latency: float = 0.0, other_latency: float = 0.0,
                  prompt_tokens: int = 100, completion_tokens: int = 50,
                  final_refine: bool = False) -> MockScript:
    """
    Canonical script for one run of either arm

    Args:
        arm: Which topology to script (the baseline splits hyp-sat in two calls)
        satisfied_at: Iteration whose verdict is satisfied; None for never
        iterations: Passes to script; defaults to satisfied_at
        n_questions: Questions proposed (and notes extracted) per iteration
        note_latency: Simulated latency of every brainstorm-notes call
        other_latency: Simulated latency of every other call
        prompt_tokens / completion_tokens: Usage reported by every call
        final_refine: Also script the refine applied after a satisfied exit
    """
    if iterations is None:
        if satisfied_at is None:
            raise ConfigurationError("a never-satisfied script needs an iteration count")
        iterations = satisfied_at

    steps: List[MockStep] = []

    def add(role_tag: RoleTag, iteration: int, body: Any, latency: float, slot: int = 0):
        text = body if isinstance(body, str) else json.dumps(body)
        steps.append(MockStep(role_tag, iteration, text, latency, prompt_tokens, completion_tokens, slot))

    for i in range(1, iterations + 1):
        questions = [f"What does source {i}.{j} say about the topic?" for j in range(1, n_questions + 1)]
        add(RoleTag.BRAINSTORM_QUESTIONS, i, {"questions": questions}, other_latency)
        for slot in range(n_questions):
            add(RoleTag.BRAINSTORM_NOTES, i, {"notes": f"Note {i}.{slot + 1}: evidence for question {slot + 1}."},
                note_latency, slot)

        satisfied = satisfied_at == i
        hypothesis = f"Hypothesis after iteration {i}."
        feedback = "" if satisfied else f"Need more evidence after iteration {i}."
        if arm is Method.PROPOSED:
            add(RoleTag.HYP_SAT, i, {"reasoning": f"Step-by-step review of iteration {i} notes.",
                                     "hypothesis": hypothesis, "satisfied": satisfied,
                                     "feedback": feedback}, other_latency)
        else:
            add(RoleTag.BASELINE_HYPOTHESIZE, i, {"reasoning": f"Review of iteration {i} notes.",
                                                  "hypothesis": hypothesis}, other_latency)
            add(RoleTag.BASELINE_SATISFY, i, {"satisfied": satisfied, "feedback": feedback}, other_latency)

        if satisfied:
            if final_refine:
                add(RoleTag.REFINE, i, f"Refined: {hypothesis}", other_latency)
            break
        if i < iterations:
            add(RoleTag.REFINE, i, f"Refined notes after iteration {i}.", other_latency)

    return MockScript(steps=tuple(steps))
