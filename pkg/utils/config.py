"""
Configuration
Reads the TOML config file into the engine, embedder, ingest and logging settings.
Keys missing from the file keep their dataclass defaults; command-line values
override both.
"""

import logging
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from decimal import InvalidOperation
from typing import Any, Dict, Optional

from .errors import ConfigurationError
from .ingest import DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP
from .models import EmbedderConfig, EngineConfig, PriceTable

logger = logging.getLogger(__name__)

# section -> allowed keys
KNOWN_KEYS = {
    "engine": {"max_iterations", "n_questions", "k", "parallelism", "overfetch",
               "chunk_context_cap", "final_refine", "seed", "prompts_dir"},
    "llm": {"provider", "model", "base_url", "temperature", "max_tokens"},
    "prices": {"price_per_1k_prompt", "price_per_1k_completion"},
    "embedder": {"kind", "dim", "seed", "model_name"},
    "ingest": {"chunk_size", "overlap"},
    "logging": {"log_dir", "verbose"},
}


@dataclass
class Settings:
    """Everything one CLI invocation needs"""
    engine: EngineConfig = field(default_factory=EngineConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    chunk_size: int = DEFAULT_CHUNK_SIZE
    overlap: int = DEFAULT_OVERLAP
    prompts_dir: Optional[str] = None
    log_dir: Optional[str] = None
    verbose: bool = False


def read_config_file(path: str) -> Dict[str, Dict[str, Any]]:
    """Parse and check a config file; unknown sections or keys are errors"""
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"invalid TOML in {path}: {e}") from e

    for section, values in data.items():
        if section not in KNOWN_KEYS:
            raise ConfigurationError(f"{path}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigurationError(f"{path}: [{section}] must be a table")
        unknown = sorted(set(values) - KNOWN_KEYS[section])
        if unknown:
            raise ConfigurationError(f"{path}: unknown keys in [{section}]: {', '.join(unknown)}")

    logger.debug(f"Read config from {path}")
    return data


def merge_overrides(data: Dict[str, Dict[str, Any]],
                    overrides: Optional[Dict[str, Dict[str, Any]]]) -> Dict[str, Dict[str, Any]]:
    """Overlay non-None override values onto file values"""
    merged = {section: dict(values) for section, values in data.items()}
    for section, values in (overrides or {}).items():
        if section not in KNOWN_KEYS:
            raise ConfigurationError(f"unknown section [{section}]")
        for key, value in values.items():
            if key not in KNOWN_KEYS[section]:
                raise ConfigurationError(f"unknown key {section}.{key}")
            if value is not None:
                merged.setdefault(section, {})[key] = value
    return merged


def build_settings(data: Dict[str, Dict[str, Any]]) -> Settings:
    engine_values = dict(data.get("engine", {}))
    prompts_dir = engine_values.pop("prompts_dir", None)
    llm_values = data.get("llm", {})
    ingest_values = data.get("ingest", {})
    logging_values = data.get("logging", {})

    try:
        prices = PriceTable(**data.get("prices", {}))
        engine = EngineConfig(prices=prices, **engine_values, **llm_values)
        embedder = EmbedderConfig(**data.get("embedder", {}))
        chunk_size = int(ingest_values.get("chunk_size", DEFAULT_CHUNK_SIZE))
        overlap = int(ingest_values.get("overlap", DEFAULT_OVERLAP))
    except ConfigurationError:
        raise
    except (TypeError, ValueError, InvalidOperation) as e:
        # bad enum names, prices and numbers surface here
        raise ConfigurationError(f"invalid configuration: {e}") from e

    settings = Settings(
        engine=engine,
        embedder=embedder,
        chunk_size=chunk_size,
        overlap=overlap,
        prompts_dir=prompts_dir,
        log_dir=logging_values.get("log_dir"),
        verbose=bool(logging_values.get("verbose", False)),
    )
    if settings.chunk_size < 1 or not 0 <= settings.overlap < settings.chunk_size:
        raise ConfigurationError(f"need chunk_size >= 1 and 0 <= overlap < chunk_size, "
                                 f"got {settings.chunk_size}/{settings.overlap}")
    return settings


def load_settings(path: Optional[str] = None,
                  overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Settings:
    """
    Load settings from an optional config file plus overrides

    Args:
        path: TOML file, or None for defaults only
        overrides: {section: {key: value}}; None values are ignored

    Returns:
        Settings
    """
    data = read_config_file(path) if path else {}
    return build_settings(merge_overrides(data, overrides))
