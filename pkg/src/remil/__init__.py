"""Bag classification with a regional-transformer re-embedding stage.

The pipeline: offline per-instance features are loaded from disk, re-embedded
by one or more transformer blocks that attend within square spatial regions
(and optionally across them through a small routing layer), then pooled by a
gated attention head into a single bag logit vector.

All forward/backward math lives in plain numpy with hand-written gradients;
``oracles`` holds slow, loop-based reference implementations used to pin the
fast paths down in tests.
"""

__version__ = "0.1.0"

from .numerics import ParamTensor, GradCheckReport, finite_diff_check
from .config import RunConfig, SynthConfig

__all__ = [
    "ParamTensor",
    "GradCheckReport",
    "finite_diff_check",
    "RunConfig",
    "SynthConfig",
    "__version__",
]
