"""
Example usage of the retrieval loop engine.

This script demonstrates how to:
1. Ingest a few documents into a vector store
2. Save it to a file and load it back
3. Run the loop against a scripted mock provider
4. Benchmark the proposed method against the sequential baseline
"""

import os
import tempfile

from engine import LoopEngine
from utils.embedding import build_embedder
from utils.ingest import chunk_documents, load_documents
from utils.mock_provider import MockProvider, scripted_loop
from utils.models import EmbedderConfig, EngineConfig, Method
from utils.vector_store import VectorStore, load_store, save_store

DOCUMENTS = {
    "solar.md": "Solar panels convert sunlight into electricity. Output drops on cloudy days "
                "and panels lose roughly half a percent of efficiency per year.",
    "wind.md": "Wind turbines generate power when wind speed exceeds the cut-in speed. "
               "Offshore farms see steadier winds than onshore sites.",
    "storage.md": "Grid batteries store surplus renewable energy and release it at peak demand. "
                  "Lithium-ion dominates new installations.",
}


def main():
    print("=" * 60)
    print("Retrieval Loop Engine - Example Usage")
    print("=" * 60)

    workdir = tempfile.mkdtemp(prefix="brainstorm_rag_")
    docs_dir = os.path.join(workdir, "docs")
    os.makedirs(docs_dir)
    for name, text in DOCUMENTS.items():
        with open(os.path.join(docs_dir, name), "w", encoding="utf-8") as f:
            f.write(text)

    # Ingest
    print("\n1. Ingesting documents...")
    documents = load_documents([docs_dir], base_dir=workdir)
    chunks = chunk_documents(documents, chunk_size=120, overlap=20)
    embedder = build_embedder(EmbedderConfig(dim=256, seed=0))
    store = VectorStore(256, embedder.fingerprint).add_chunks(
        chunks, embedder.embed_batch([chunk.text for chunk in chunks]))
    print(f"   ✓ {len(documents)} documents, {len(store)} chunks")

    # Save and reload
    print("\n2. Saving and reloading the store...")
    store_path = os.path.join(workdir, "store.jsonl")
    save_store(store, store_path)
    store = load_store(store_path)
    print(f"   ✓ Reloaded {len(store)} chunks from {store_path}")

    # One run, satisfied on the second pass
    print("\n3. Running the loop with a scripted provider...")
    config = EngineConfig(n_questions=3, k=2)
    engine = LoopEngine(store, embedder, config)
    provider = MockProvider(scripted_loop(satisfied_at=2, n_questions=3))
    report = engine.run_loop("How do renewables keep the grid stable?", provider)

    totals = report.ledger.totals()
    print(f"   ✓ Satisfied: {report.satisfied} after {report.iterations_used} iterations")
    print(f"   ✓ Answer: {report.final_hypothesis}")
    print(f"   ✓ Calls: {totals.calls}, tokens: {totals.total_tokens}, cost: ${totals.total_cost}")
    for role, role_totals in totals.per_role.items():
        print(f"     - {role}: {role_totals.calls} calls")

    # Benchmark with simulated latencies
    print("\n4. Benchmarking baseline vs proposed...")
    providers = {
        method: MockProvider(scripted_loop(arm=method, satisfied_at=1, n_questions=3,
                                           note_latency=0.2, other_latency=0.1))
        for method in Method
    }
    bench = engine.run_bench("How do renewables keep the grid stable?", providers)
    print()
    print(bench.render_table())

    print("\n" + "=" * 60)
    print("Example completed successfully!")
    print("=" * 60)


if __name__ == "__main__":
    main()
