"""Dataset ingestion: budgets, image/text pipelines, synthetic corpora."""

from neunets.data.budget import BudgetTier, classify_budget
from neunets.data.images import (
    NNSD_MAGIC,
    TARGET_RESOLUTION,
    ImageDataset,
    assign_splits,
    augment,
    bilinear_resize,
    compute_feature_stats,
    load_image_csv,
    load_image_dataset,
    preprocess_images,
    save_image_dataset,
    standardize,
)
from neunets.data.synth import (
    random_label_dataset,
    separable_image_dataset,
    striped_image_dataset,
    synthetic_text_corpus,
)
from neunets.data.text import (
    STOP_WORDS,
    TextDataset,
    build_vocab,
    encode_text,
    load_embeddings,
    load_text_csv,
    tokenize,
    vectorize_text,
)

__all__ = [
    "BudgetTier",
    "classify_budget",
    "NNSD_MAGIC",
    "TARGET_RESOLUTION",
    "ImageDataset",
    "assign_splits",
    "augment",
    "bilinear_resize",
    "compute_feature_stats",
    "load_image_csv",
    "load_image_dataset",
    "preprocess_images",
    "save_image_dataset",
    "standardize",
    "random_label_dataset",
    "separable_image_dataset",
    "striped_image_dataset",
    "synthetic_text_corpus",
    "STOP_WORDS",
    "TextDataset",
    "build_vocab",
    "encode_text",
    "load_embeddings",
    "load_text_csv",
    "tokenize",
    "vectorize_text",
]
