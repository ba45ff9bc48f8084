import pytest
import torch

from medn.config import RunConfig
from medn.data_model import SynthConfig, generate_synthetic

torch.set_num_threads(2)


def tiny_run_config(**optim_overrides) -> RunConfig:
    """Desk-scale config: 4x4 token grid, 32-dim features."""
    cfg = RunConfig()
    cfg.model.feature_dim = 32
    cfg.model.motion.channels = [8, 16, 32]
    cfg.model.sevit.rates = [1, 2, 4]
    cfg.model.sevit.patch = 3
    cfg.model.sevit.embed_dim = 32
    cfg.model.sevit.depth = 1
    cfg.optim.lr = 2e-3
    cfg.optim.epochs = 3
    cfg.optim.batch_size = 32
    for key, value in optim_overrides.items():
        setattr(cfg.optim, key, value)
    return cfg


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 subjects x 8 samples of 12x12 flow; enough for smoke training."""
    out = tmp_path_factory.mktemp("tiny_data")
    cfg = SynthConfig(
        subjects=3,
        samples_per_subject=8,
        height=12,
        width=12,
        hard_proportion=0.75,
        shared_patterns=2,
        noise_sigma=0.05,
    )
    return generate_synthetic(cfg, seed=7, out_dir=out)


@pytest.fixture
def tiny_config() -> RunConfig:
    return tiny_run_config()
