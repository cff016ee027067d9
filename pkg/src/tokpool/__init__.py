"""Clustering-based token downsampling for vision transformers.

Library surface: numeric kernels (:mod:`tokpool.numerics`), a forward-only
transformer block (:mod:`tokpool.transformer`), significance scoring
(:mod:`tokpool.scoring`), pooling algorithms (:mod:`tokpool.pooling`), an
analytic flop model (:mod:`tokpool.costmodel`), the attention-as-filter
verifier (:mod:`tokpool.filterlab`), file formats (:mod:`tokpool.io`), and
the CLI (:mod:`tokpool.cli`).
"""

from .costmodel import FlopReport, ModelConfig, block_flops, breakdown_fractions, model_flops
from .errors import DataError, TokpoolError, UsageError
from .filterlab import FilterProbe, attention_form, filter_form, verify_equivalence
from .numerics import Rng, matmul, pairwise_sq_dists, sample_without_replacement, softmax_rows
from .pipeline import run_forward
from .pooling import (
    ClusterResult,
    PoolSpec,
    chamfer_loss,
    grid_pool,
    importance_select,
    random_select,
    token_pool,
)
from .scoring import significance
from .transformer import (
    BlockWeights,
    TokenSet,
    attention_maps,
    block_forward,
    msa_forward,
    synth_weights,
)

__version__ = "0.1.0"

__all__ = [
    "BlockWeights",
    "ClusterResult",
    "DataError",
    "FilterProbe",
    "FlopReport",
    "ModelConfig",
    "PoolSpec",
    "Rng",
    "TokenSet",
    "TokpoolError",
    "UsageError",
    "attention_form",
    "attention_maps",
    "block_flops",
    "block_forward",
    "breakdown_fractions",
    "chamfer_loss",
    "filter_form",
    "grid_pool",
    "importance_select",
    "matmul",
    "model_flops",
    "msa_forward",
    "pairwise_sq_dists",
    "random_select",
    "run_forward",
    "sample_without_replacement",
    "significance",
    "softmax_rows",
    "synth_weights",
    "token_pool",
    "verify_equivalence",
]
