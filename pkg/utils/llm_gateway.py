"""
LLM Gateway
Uniform chat-completion port: JSON-mode calls with corrective re-prompting,
text calls, and per-call usage/latency records.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional, Tuple

import openai

from .errors import ConfigurationError, EmptyCompletionError, EngineError, ProtocolError, ProviderError
from .models import ChatRequest, UsageRecord
from .transport import call_with_backoff

logger = logging.getLogger(__name__)

MAX_JSON_RETRIES = 2

CORRECTIVE_INSTRUCTION = (
    "Your previous reply could not be used ({problem}). "
    "Reply again with a single valid JSON object only, following the requested fields exactly. "
    "No prose, no markdown fences."
)


@dataclass(frozen=True)
class Completion:
    """What a provider returns for one attempt"""
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class ChatProvider:
    """A chat-completion backend; must accept concurrent complete() calls"""

    name = "provider"

    def start_run(self):
        """Called by the engine before each run"""

    def complete(self, request: ChatRequest) -> Completion:
        raise NotImplementedError


class OpenAIChatProvider(ChatProvider):
    """Chat completions against an OpenAI-compatible endpoint"""

    name = "http"

    def __init__(self, model: str, api_key: Optional[str] = None, base_url: Optional[str] = None,
                 timeout: float = 120.0, client: Optional[openai.OpenAI] = None):
        self.model = model
        if client is None:
            api_key = api_key or os.environ.get("ENGINE_API_KEY")
            if not api_key:
                raise ConfigurationError("ENGINE_API_KEY is not set; the http provider needs it")
            client = openai.OpenAI(api_key=api_key,
                                   base_url=base_url or os.environ.get("ENGINE_BASE_URL"),
                                   timeout=timeout, max_retries=0)
        self.client = client

    def complete(self, request: ChatRequest) -> Completion:
        kwargs = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.json_mode:
            kwargs["response_format"] = {"type": "json_object"}
        if request.seed is not None:
            kwargs["seed"] = request.seed

        response = call_with_backoff(
            lambda: self.client.chat.completions.create(**kwargs),
            description=f"{request.role_tag.value} chat request",
        )
        if not response.choices:
            raise ProviderError(f"{request.role_tag.value}: response has no choices")
        text = response.choices[0].message.content or ""
        usage = response.usage
        return Completion(
            text=text,
            prompt_tokens=usage.prompt_tokens if usage else 0,
            completion_tokens=usage.completion_tokens if usage else 0,
        )


def _usage(request: ChatRequest, prompt_tokens: int, completion_tokens: int,
           started: float, retries: int) -> UsageRecord:
    return UsageRecord(
        role_tag=request.role_tag,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        wall_clock=time.perf_counter() - started,
        retries=retries,
        iteration=request.iteration,
        slot=request.slot,
    )


def chat_json(request: ChatRequest, provider: ChatProvider,
              validator: Optional[Callable[[Any], Any]] = None) -> Tuple[Any, UsageRecord]:
    """
    Run a JSON-mode call and return the parsed (and validated) body

    A reply that is not JSON, or that the validator rejects with ValueError,
    TypeError or KeyError, is re-requested with a corrective instruction, at
    most MAX_JSON_RETRIES times. The UsageRecord sums tokens over all
    attempts; on failure it is attached to the raised error as `usage`.

    Raises:
        ProtocolError: still unusable after the retries; carries raw_text
        TransportError / ScriptError: from the provider
    """
    if not request.json_mode:
        raise ConfigurationError("chat_json needs a json_mode request")

    started = time.perf_counter()
    prompt_tokens = completion_tokens = 0
    retries = 0
    attempt_request = request

    while True:
        try:
            completion = provider.complete(attempt_request)
        except EngineError as e:
            e.usage = _usage(request, prompt_tokens, completion_tokens, started, retries)
            raise
        prompt_tokens += completion.prompt_tokens
        completion_tokens += completion.completion_tokens

        try:
            parsed = json.loads(completion.text)
            value = validator(parsed) if validator is not None else parsed
            break
        except (ValueError, TypeError, KeyError) as e:
            problem = str(e) or type(e).__name__

        if retries == MAX_JSON_RETRIES:
            usage = _usage(request, prompt_tokens, completion_tokens, started, retries)
            raise ProtocolError(
                f"{request.role_tag.value}: unusable JSON after {retries} retries: {problem}",
                raw_text=completion.text, usage=usage,
            )

        retries += 1
        logger.warning(f"{request.role_tag.value} (iteration {request.iteration}, slot {request.slot}): "
                       f"{problem}; re-prompting ({retries}/{MAX_JSON_RETRIES})")
        attempt_request = replace(
            request,
            user_prompt=f"{request.user_prompt}\n\n{CORRECTIVE_INSTRUCTION.format(problem=problem)}",
        )

    usage = _usage(request, prompt_tokens, completion_tokens, started, retries)
    logger.debug(f"{request.role_tag.value}: ok in {usage.wall_clock * 1000:.0f}ms, retries={retries}")
    return value, usage


def chat_text(request: ChatRequest, provider: ChatProvider) -> Tuple[str, UsageRecord]:
    """
    Run a text-mode call

    Raises:
        EmptyCompletionError: the model returned only whitespace
    """
    if request.json_mode:
        raise ConfigurationError("chat_text needs a request with json_mode off")

    started = time.perf_counter()
    try:
        completion = provider.complete(request)
    except EngineError as e:
        e.usage = _usage(request, 0, 0, started, 0)
        raise

    usage = _usage(request, completion.prompt_tokens, completion.completion_tokens, started, 0)
    if not completion.text.strip():
        raise EmptyCompletionError(raw_text=completion.text, usage=usage)
    return completion.text, usage
