"""Content-based artwork recommendation from visual embeddings.

Loads per-item embedding matrices, replays purchase logs chronologically
to predict each transaction from the buyer's earlier purchases, and
optionally refines the embeddings with a weighted multitask head before
ranking. See the CLI in `embrec.cli` for the batch entry points.
"""

from .embedding_store import EmbeddingMatrix, cosine_similarity, load_embeddings, save_embeddings
from .metrics import MetricResult, score_transaction

__all__ = [
    "EmbeddingMatrix",
    "MetricResult",
    "cosine_similarity",
    "load_embeddings",
    "save_embeddings",
    "score_transaction",
]

__version__ = "0.1.0"
