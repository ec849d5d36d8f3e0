"""CNN visual-feature extraction and deep fine-tuning for the artwork
recommender, exporting EMB1 embedding files plus a status manifest."""

from .extract import ExtractorSpec, extract
from .finetune import FinetuneSpec, TaskDef, deep_fine_tune, split_items

__all__ = [
    "ExtractorSpec",
    "FinetuneSpec",
    "TaskDef",
    "deep_fine_tune",
    "extract",
    "split_items",
]

__version__ = "0.1.0"
