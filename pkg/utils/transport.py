"""
Transport Backoff
Exponential backoff around calls to an OpenAI-compatible endpoint.
"""

import logging
import time
from typing import Callable, TypeVar

import openai

from .errors import TransportError

logger = logging.getLogger(__name__)

T = TypeVar("T")

MAX_ATTEMPTS = 3
BASE_DELAY = 0.5  # seconds, doubled per attempt

# Worth another try: connection drops, timeouts, 429 and 5xx
RETRYABLE_ERRORS = (
    openai.APIConnectionError,
    openai.RateLimitError,
    openai.InternalServerError,
)


def call_with_backoff(call: Callable[[], T], description: str,
                      attempts: int = MAX_ATTEMPTS, base_delay: float = BASE_DELAY,
                      sleep: Callable[[float], None] = time.sleep) -> T:
    """
    Run call, retrying transient API errors with delays base_delay * 2**n

    Raises:
        TransportError: after the last attempt fails, or at once for a
            non-retryable API error; `attempts` says how many were made
    """
    for attempt in range(1, attempts + 1):
        try:
            return call()
        except RETRYABLE_ERRORS as e:
            if attempt == attempts:
                raise TransportError(f"{description} failed after {attempt} attempts: {e}",
                                     attempts=attempt) from e
            delay = base_delay * (2 ** (attempt - 1))
            logger.warning(f"{description}: attempt {attempt} failed ({e}); retrying in {delay:.1f}s")
            sleep(delay)
        except openai.OpenAIError as e:
            raise TransportError(f"{description} failed: {e}", attempts=attempt) from e
    raise AssertionError("unreachable")
