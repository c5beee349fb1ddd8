"""
Engine Errors
Typed failures raised by ingestion, retrieval, the LLM gateway and the loop.
"""

from typing import Optional


class EngineError(Exception):
    """Base class for every error the engine raises on purpose"""

    # UsageRecord of the failed LLM call, attached by the gateway
    usage = None
    # records of calls in the same stage that finished before the failure
    completed_usage: tuple = ()


class ConfigurationError(EngineError, ValueError):
    """Invalid configuration or violated precondition on a parameter"""


class IngestError(EngineError):
    """A document could not be loaded"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class DimensionError(EngineError, ValueError):
    """Embedding dimension (or embedder fingerprint) does not match the store"""


class DuplicateChunkError(EngineError, ValueError):
    """A chunk_id is already present"""


class EmptyStoreError(EngineError):
    """Search or loop invoked against a store with no entries"""

    def __init__(self, message: str = "empty store"):
        super().__init__(message)


class StoreFormatError(EngineError):
    """A persisted store file is malformed"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class StoreVersionError(StoreFormatError):
    """A persisted store file has an unsupported format_version"""


class ProviderError(EngineError):
    """A provider call failed"""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class TransportError(ProviderError):
    """The provider could not be reached after backoff"""


class ProtocolError(EngineError):
    """The model kept answering with something that is not the expected JSON"""

    def __init__(self, message: str, raw_text: str = "", usage=None):
        super().__init__(message)
        self.raw_text = raw_text
        self.usage = usage


class EmptyCompletionError(ProtocolError):
    """The model returned no text"""

    def __init__(self, raw_text: str = "", usage=None):
        super().__init__("empty completion", raw_text=raw_text, usage=usage)


class ScriptError(EngineError):
    """The mock provider has no scripted step for a request"""


class StageError(EngineError):
    """A loop stage failed; names the brainstorm query when there is one"""

    def __init__(self, message: str, query: Optional[str] = None,
                 iteration: Optional[int] = None):
        super().__init__(message)
        self.query = query
        self.iteration = iteration


class LoopError(EngineError):
    """A run aborted; carries the iteration it failed in"""

    def __init__(self, message: str, iteration: int, ledger=None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        # CostLedger of the aborted run, failed call included
        self.ledger = ledger


class BenchError(EngineError):
    """One arm of a benchmark failed"""

    def __init__(self, message: str, arm: str):
        super().__init__(f"{arm} arm failed: {message}")
        self.arm = arm
