"""Dual-tower multimodal time series forecasting.

A patch-based transformer encodes each channel's input window; frozen
per-channel text embeddings are pooled into a single query vector that
cross-attends over the patch representations; a feed-forward head maps the
fused vector to the forecast. A text-free baseline (flattened patch
encodings into a linear head) shares every other setting so ablations
isolate exactly the contribution of text.
"""

from .config import RunConfig, load_config, parse_config
from .data import (PatchConfig, RawDataset, WindowSample, denormalize,
                   instance_normalize, load_dataset, make_windows, patch_count,
                   patchify, split_chronological)
from .encoder import EncoderConfig, EncoderParams, encode_series, init_params
from .errors import (ConfigError, DataFormatError, DivergenceError,
                     EmbeddingFileError, MetricError, PoolingError, ShapeError,
                     TapeError, TextFusionError, ValidationError)
from .evaluation import (AblationSettings, MetricsReport, evaluate_model, mae,
                         mark_best, run_ablation, wape)
from .fusion import (WITH_TEXT, WITHOUT_TEXT, FusionConfig, FusionParams,
                     ModelParams, build_model, cross_attention, forecast_with_text,
                     forecast_without_text)
from .synthetic import SyntheticSpec, generate, oracle_mae
from .tensor import GradientTape, Tensor, backward
from .text import (PoolingStrategy, TokenEmbeddingSet, hash_embed_text, pool,
                   read_embedding_file, write_embedding_file)
from .training import (AdamMoments, Checkpoint, TrainConfig, adam_step,
                       compute_loss, load_checkpoint, save_checkpoint,
                       should_stop, train)

__version__ = "0.1.0"
