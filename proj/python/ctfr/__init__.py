"""Cross-modal retrieval workbench.

A dual-path speech/image model with a shared scoring head, trained with a
masked bidirectional contrastive objective on deterministic synthetic
corpora, plus coarse, fine, and two-stage (shortlist-then-rescore) retrieval
with cost instrumentation. The heavy lifting lives in the compiled `_core`
extension; this package re-exports its surface.
"""

from ._core import (
    AudioEncoding,
    CoarseIndex,
    ConvLayerSpec,
    Corpus,
    CorpusConfig,
    ImageEncoding,
    LossWeights,
    Model,
    ModelConfig,
    RetrievalResult,
    TargetStore,
    TrainConfig,
    audio_store,
    build_index,
    coarse_retrieve,
    ctf_retrieve,
    evaluate,
    fine_retrieve,
    generate_corpus,
    image_store,
    read_corpus,
    train,
    write_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "AudioEncoding",
    "CoarseIndex",
    "ConvLayerSpec",
    "Corpus",
    "CorpusConfig",
    "ImageEncoding",
    "LossWeights",
    "Model",
    "ModelConfig",
    "RetrievalResult",
    "TargetStore",
    "TrainConfig",
    "audio_store",
    "build_index",
    "coarse_retrieve",
    "ctf_retrieve",
    "evaluate",
    "fine_retrieve",
    "generate_corpus",
    "image_store",
    "read_corpus",
    "train",
    "write_corpus",
    "__version__",
]
