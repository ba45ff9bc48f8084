"""Motion-emotion feature decoupling network for micro-expression recognition."""

__version__ = "0.1.0"

from .config import LossWeights, ModelConfig, OptimSchedule, RunConfig  # noqa: F401
from .data_model import (  # noqa: F401
    DatasetManifest,
    SampleRecord,
    SynthConfig,
    generate_synthetic,
    hard_sample_audit,
    load_manifest,
    loso_splits,
    map_emotion,
)
from .model import MEDN, build_model  # noqa: F401
