"""actcache: error-bounded caching of frozen-layer activations.

A toolkit for training on cached feature maps: a lossy codec with a
guaranteed elementwise error bound, a chunked shuffle-friendly on-disk
dataset format, similarity-aware channel augmentation for CNN features,
token replacement augmentation for transformer features, and cost
accounting for freeze schedules.
"""

from .cache import (
    CachedSample,
    CacheHandle,
    CacheHeader,
    ChunkIndexEntry,
    build_cache,
    open_cache,
    read_all,
    read_chunk,
    shuffled_epoch_iter,
)
from .channel_aug import (
    ChannelAugData,
    ChannelSelection,
    apply_flip_augmentation,
    plan_channel_augmentation,
    score_channels,
    select_sensitive_channels,
    ssim,
)
from .codec import (
    CodecParams,
    EncodedChunk,
    compression_ratio,
    decode,
    decode_bytes,
    encode,
    quantization_step,
)
from .errors import (
    ActCacheError,
    AugmentationUnavailableError,
    CorruptionError,
    DecodeError,
    DegenerateVectorError,
    FormatError,
    InsufficientDataError,
    InvalidConfigError,
    InvalidShapeError,
    InvalidValueError,
    ShapeMismatchError,
)
from .policy import (
    CompressionPolicy,
    CostTotals,
    FreezeEvent,
    FreezeSchedule,
    ProfileRow,
    StageCost,
    cost_totals,
    expansion_ratio,
    profile_compressibility,
    tolerance_for,
)
from .refnet import (
    LinearProbe,
    RefNet,
    evaluate,
    forward,
    gen_synthetic_dataset,
    init_probe,
    loss_and_gradients,
    make_refnet,
    train_linear_probe,
)
from .tensors import (
    PerturbConfig,
    as_tensor,
    cosine_similarity,
    flip_h,
    round_half_away,
    seeded_perturb,
)
from .token_aug import (
    TokenAugData,
    TokenMatch,
    TokenSelection,
    apply_token_augmentation,
    match_tokens,
    plan_token_augmentation,
    plan_token_augmentation_batch,
    select_tokens,
)

__version__ = "0.1.0"
