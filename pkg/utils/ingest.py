"""
Document Ingestion
Loads plain-text documents from disk and cuts them into fixed character windows.
"""

import logging
import os
from pathlib import Path
from typing import Iterable, List, Optional

from .errors import ConfigurationError, IngestError
from .models import DocumentChunk, RawDocument

logger = logging.getLogger(__name__)

SUPPORTED_SUFFIXES = (".txt", ".md")

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_OVERLAP = 200


def collect_paths(paths: Iterable[str]) -> List[Path]:
    """
    Expand directories into their text files

    Args:
        paths: Files and/or directories

    Returns:
        Files in input order; a directory contributes its .txt/.md files
        (recursively) in sorted path order
    """
    files: List[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            found = sorted(p for p in path.rglob("*")
                           if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES)
            logger.debug(f"Directory {path} expanded to {len(found)} files")
            files.extend(found)
        elif path.exists():
            files.append(path)
        else:
            raise IngestError(f"no such file or directory: {raw}", path=str(raw))
    return files


def common_base_dir(paths: Iterable[str]) -> str:
    """
    Deepest directory holding every input

    A directory input counts as itself and a file as its parent, so
    ingesting one directory gives doc_ids relative to that directory.
    """
    dirs = [str(Path(raw).resolve() if Path(raw).is_dir() else Path(raw).resolve().parent) for raw in paths]
    if not dirs:
        return os.getcwd()
    try:
        return os.path.commonpath(dirs)
    except ValueError:
        # different drives on Windows
        return os.getcwd()


def _doc_id_for(path: Path, base_dir: Path) -> str:
    try:
        relative = os.path.relpath(path.resolve(), base_dir.resolve())
    except ValueError:
        # different drive on Windows
        relative = str(path)
    return Path(os.path.normpath(relative)).as_posix()


def load_documents(paths: Iterable[str], base_dir: Optional[str] = None) -> List[RawDocument]:
    """
    Load text documents

    Args:
        paths: Files or directories (.txt and .md only)
        base_dir: doc_ids are paths relative to this directory (default: cwd)

    Returns:
        One RawDocument per file, in input order
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    documents: List[RawDocument] = []
    seen = set()

    for path in collect_paths(paths):
        if path.suffix.lower() not in SUPPORTED_SUFFIXES:
            raise IngestError(f"unsupported file type: {path}", path=str(path))
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise IngestError(f"cannot read {path}: {e}", path=str(path)) from e

        if not text.strip():
            raise IngestError(f"empty document: {path}", path=str(path))

        doc_id = _doc_id_for(path, base)
        if doc_id in seen:
            raise IngestError(f"duplicate doc_id {doc_id}", path=str(path))
        seen.add(doc_id)

        documents.append(RawDocument(doc_id=doc_id, text=text, source_path=str(path)))
        logger.debug(f"Loaded {doc_id}: {len(text)} chars")

    logger.info(f"Loaded {len(documents)} documents")
    return documents


def chunk_document(doc: RawDocument, chunk_size: int = DEFAULT_CHUNK_SIZE,
                   overlap: int = DEFAULT_OVERLAP) -> List[DocumentChunk]:
    """
    Greedy fixed-window chunking at exact character offsets

    Full windows start every (chunk_size - overlap) characters while they fit;
    then one trailing window starts at the next stride position and runs to
    the end of the text. A text no longer than chunk_size yields one chunk.
    """
    if chunk_size <= 0:
        raise ConfigurationError(f"chunk_size must be > 0, got {chunk_size}")
    if not 0 <= overlap < chunk_size:
        raise ConfigurationError(f"overlap must be in [0, chunk_size), got {overlap}")
    if not doc.text:
        raise ConfigurationError(f"empty document: {doc.doc_id}")

    stride = chunk_size - overlap
    length = len(doc.text)
    spans = []

    if length <= chunk_size:
        spans.append((0, length))
    else:
        start = 0
        while start + chunk_size <= length:
            spans.append((start, start + chunk_size))
            start += stride
        if start < length:
            spans.append((start, length))

    return [
        DocumentChunk(
            chunk_id=f"{doc.doc_id}:{ordinal}",
            doc_id=doc.doc_id,
            ordinal=ordinal,
            text=doc.text[start:end],
            char_span=(start, end),
        )
        for ordinal, (start, end) in enumerate(spans)
    ]


def chunk_documents(docs: Iterable[RawDocument], chunk_size: int = DEFAULT_CHUNK_SIZE,
                    overlap: int = DEFAULT_OVERLAP) -> List[DocumentChunk]:
    """Chunk a batch; chunk_ids must be unique across it"""
    chunks: List[DocumentChunk] = []
    seen = set()
    for doc in docs:
        for chunk in chunk_document(doc, chunk_size, overlap):
            if chunk.chunk_id in seen:
                raise IngestError(f"duplicate chunk_id {chunk.chunk_id}")
            seen.add(chunk.chunk_id)
            chunks.append(chunk)
    logger.info(f"Chunked into {len(chunks)} chunks (chunk_size={chunk_size}, overlap={overlap})")
    return chunks
