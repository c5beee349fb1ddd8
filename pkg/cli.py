"""
Command-line interface for the retrieval loop engine.

Subcommands:
    ingest   load, chunk and embed documents into a store file
    ask      run the loop for one question and print the answer
    bench    run baseline and proposed methods and print the comparison table
    inspect  summarize a store, optionally showing top-k hits for a query

Exit codes: 0 success (satisfied), 3 iteration cap reached, 1 usage or
configuration error, 2 runtime error. Only answers and tables go to stdout.
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from engine import LoopEngine
from utils.config import Settings, load_settings
from utils.embedding import Embedder, build_embedder, config_from_fingerprint
from utils.errors import ConfigurationError, EngineError, LoopError, ProtocolError
from utils.ingest import chunk_documents, common_base_dir, load_documents
from utils.llm_gateway import ChatProvider, OpenAIChatProvider
from utils.mock_provider import MockProvider, load_bench_scripts, load_script
from utils.models import EmbedderKind, Method
from utils.prompts import PromptLibrary
from utils.vector_store import VectorStore, describe, load_store, save_store

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_CAP = 3


def setup_logging(verbose: bool = False, log_dir: Optional[str] = None) -> Optional[Path]:
    """
    Send log records to stderr and, when log_dir is set, to a new timestamped file

    Returns:
        Path of the log file, or None
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    root.setLevel(logging.DEBUG)
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    console_handler.setFormatter(formatter)
    root.addHandler(console_handler)

    log_filename = None
    if log_dir:
        logs_dir = Path(log_dir)
        logs_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        log_filename = logs_dir / f'brainstorm_rag_{timestamp}.log'
        file_handler = logging.FileHandler(log_filename, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    return log_filename


class CliArgumentParser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this CLI reserves 2 for runtime errors"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    common = CliArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--verbose", action="store_true", default=None, help="debug logging on stderr")
    common.add_argument("--log-dir", help="also write a timestamped log file here")
    common.add_argument("--seed", type=int, help="engine and local-hash embedder seed")
    return common


def _engine_flags() -> argparse.ArgumentParser:
    flags = CliArgumentParser(add_help=False)
    flags.add_argument("--provider", choices=["mock", "http"], help="chat provider (default: mock)")
    flags.add_argument("--mock-script", help="JSON script for the mock provider")
    flags.add_argument("--model", help="chat model name for the http provider")
    flags.add_argument("--base-url", help="OpenAI-compatible endpoint")
    flags.add_argument("--temperature", type=float, help="sampling temperature (default: 0)")
    flags.add_argument("--max-tokens", type=int, help="completion token limit (default: 2000)")
    flags.add_argument("--k", type=int, help="chunks per retrieval (default: 5)")
    flags.add_argument("--n-questions", type=int, help="queries proposed per iteration (default: 5)")
    flags.add_argument("--parallelism", type=int, help="concurrent note extractions (default: n-questions)")
    flags.add_argument("--max-iters", type=int, help="iteration cap (default: 5)")
    flags.add_argument("--final-refine", action="store_true", default=None,
                       help="refine the hypothesis once after a satisfied exit")
    flags.add_argument("--report", help="write the JSON report here")
    return flags


def _embedder_flags() -> argparse.ArgumentParser:
    flags = CliArgumentParser(add_help=False)
    flags.add_argument("--embedder", choices=[kind.value for kind in EmbedderKind],
                       help="embedder kind (default: local-hash)")
    flags.add_argument("--dim", type=int, help="local-hash dimension (default: 256)")
    flags.add_argument("--embedding-model", help="model name for the remote embedder")
    return flags


def build_parser() -> argparse.ArgumentParser:
    common, engine, embedder = _common_flags(), _engine_flags(), _embedder_flags()

    parser = CliArgumentParser(prog="brainstorm-rag",
                               description="Iterative retrieval loop with concurrent brainstorming")
    subcommands = parser.add_subparsers(dest="command", required=True, parser_class=CliArgumentParser)

    ingest = subcommands.add_parser("ingest", parents=[common, embedder], help="build a store from documents")
    ingest.add_argument("paths", nargs="+", help="files or directories (.txt, .md)")
    ingest.add_argument("--store", required=True, help="store file to write")
    ingest.add_argument("--chunk-size", type=int, help="characters per chunk (default: 1000)")
    ingest.add_argument("--overlap", type=int, help="characters shared by neighbouring chunks (default: 200)")

    ask = subcommands.add_parser("ask", parents=[common, engine, embedder], help="answer one question")
    ask.add_argument("query", help="the question")
    ask.add_argument("--store", required=True, help="store file to read")

    bench = subcommands.add_parser("bench", parents=[common, engine, embedder],
                                   help="compare baseline and proposed methods")
    bench.add_argument("queries", nargs="+", help="one or more questions; results are averaged")
    bench.add_argument("--store", required=True, help="store file to read")

    inspect = subcommands.add_parser("inspect", parents=[common, embedder], help="summarize a store")
    inspect.add_argument("--store", required=True, help="store file to read")
    inspect.add_argument("--query", help="show the top-k hits for this query")
    inspect.add_argument("--k", type=int, default=5, help="hits to show (default: 5)")

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Dict]:
    """Flag values keyed like the config file; unset flags are None"""
    flags = vars(args)
    return {
        "engine": {
            "max_iterations": flags.get("max_iters"),
            "n_questions": flags.get("n_questions"),
            "k": flags.get("k") if args.command != "inspect" else None,
            "parallelism": flags.get("parallelism"),
            "final_refine": flags.get("final_refine"),
            "seed": flags.get("seed"),
        },
        "llm": {
            "provider": flags.get("provider"),
            "model": flags.get("model"),
            "base_url": flags.get("base_url"),
            "temperature": flags.get("temperature"),
            "max_tokens": flags.get("max_tokens"),
        },
        "embedder": {
            "kind": flags.get("embedder"),
            "dim": flags.get("dim"),
            "seed": flags.get("seed"),
            "model_name": flags.get("embedding_model"),
        },
        "ingest": {
            "chunk_size": flags.get("chunk_size"),
            "overlap": flags.get("overlap"),
        },
        "logging": {
            "log_dir": flags.get("log_dir"),
            "verbose": flags.get("verbose"),
        },
    }


def _embedder_for_store(store: VectorStore, settings: Settings) -> Embedder:
    """The embedder the store was built with, as recorded in its fingerprint"""
    config = config_from_fingerprint(store.fingerprint)
    return build_embedder(config, base_url=settings.engine.base_url, memoize=True)


def _load_store(path: str) -> VectorStore:
    if not Path(path).is_file():
        raise ConfigurationError(f"store file not found: {path}")
    return load_store(path)


def _http_provider(settings: Settings) -> ChatProvider:
    return OpenAIChatProvider(model=settings.engine.model, base_url=settings.engine.base_url)


def cmd_ingest(args: argparse.Namespace, settings: Settings) -> int:
    """Load, chunk and embed documents, then save the store"""
    documents = load_documents(args.paths, base_dir=common_base_dir(args.paths))
    chunks = chunk_documents(documents, settings.chunk_size, settings.overlap)

    embedder = build_embedder(settings.embedder, memoize=False)
    embeddings = embedder.embed_batch([chunk.text for chunk in chunks])
    dim = embeddings[0].dim if embeddings else settings.embedder.dim

    store = VectorStore(dim, embedder.fingerprint).add_chunks(chunks, embeddings)
    save_store(store, args.store)

    print(f"Ingested {len(documents)} documents, {len(chunks)} chunks into {args.store}")
    return EXIT_OK


def cmd_ask(args: argparse.Namespace, settings: Settings) -> int:
    """Run the loop for one query and print the final hypothesis"""
    store = _load_store(args.store)
    if settings.engine.provider == "mock":
        if not args.mock_script:
            raise ConfigurationError("--provider mock needs --mock-script")
        provider: ChatProvider = MockProvider(load_script(args.mock_script))
    else:
        provider = _http_provider(settings)

    engine = LoopEngine(store, _embedder_for_store(store, settings), settings.engine,
                        PromptLibrary(settings.prompts_dir))
    report = engine.run_loop(args.query, provider)

    if args.report:
        report.save(args.report)
    print(report.final_hypothesis)

    if not report.satisfied:
        logger.warning(f"Not satisfied after {report.iterations_used} iterations: {report.feedback}")
        return EXIT_CAP
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, settings: Settings) -> int:
    """Run both methods over the queries and print the comparison table"""
    store = _load_store(args.store)
    if settings.engine.provider == "mock":
        if not args.mock_script:
            raise ConfigurationError("--provider mock needs --mock-script with baseline and proposed scripts")
        scripts = load_bench_scripts(args.mock_script)
        providers = {method: MockProvider(script) for method, script in scripts.items()}
    else:
        provider = _http_provider(settings)
        providers = {method: provider for method in Method}

    engine = LoopEngine(store, _embedder_for_store(store, settings), settings.engine,
                        PromptLibrary(settings.prompts_dir))
    report = engine.run_bench(args.queries, providers)

    if args.report:
        report.save(args.report)
    print(report.render_table())
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace, settings: Settings) -> int:
    """Print the store summary and, with --query, its top-k hits"""
    store = _load_store(args.store)
    summary = describe(store)
    for key in ("dim", "embedder_fingerprint", "documents", "entries"):
        print(f"{key}: {summary[key]}")

    if args.query:
        if args.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {args.k}")
        embedder = _embedder_for_store(store, settings)
        for hit in store.search(embedder.embed_text(args.query), args.k):
            print(f"{hit.rank:>3}  {hit.score:.4f}  {hit.chunk.chunk_id}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "ask": cmd_ask,
    "bench": cmd_bench,
    "inspect": cmd_inspect,
}


def _log_failure(error: EngineError):
    cause = error
    while cause is not None:
        if isinstance(cause, ProtocolError) and cause.raw_text:
            logger.error(f"Last model reply: {cause.raw_text!r}")
            break
        cause = cause.__cause__
    if isinstance(error, LoopError) and error.ledger is not None:
        totals = error.ledger.totals()
        logger.error(f"Spent before the failure: {totals.calls} calls, ${totals.total_cost}")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        settings = load_settings(args.config, _overrides(args))
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    log_file = setup_logging(settings.verbose, settings.log_dir)
    if log_file:
        logger.info(f"Logging to file: {log_file}")

    try:
        return COMMANDS[args.command](args, settings)
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except EngineError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=settings.verbose)
        _log_failure(e)
        return EXIT_RUNTIME
    except OSError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=settings.verbose)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
