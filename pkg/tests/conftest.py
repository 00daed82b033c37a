import numpy as np
import pytest
import torch

from zipmo import synthkin as sk
from zipmo.motiongen import GenConfig, LatentStats, VectorFieldModel
from zipmo.motionvae import VaeConfig, VaeModel
from zipmo.nnkit import AttentionConfig, FourierSpec

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def tiny_vae_cfg():
    return VaeConfig(horizon=16, t_c=16, grid_h=4, grid_w=4, latent_dim=4,
                     nn=AttentionConfig(d_model=64, n_heads=2, depth=2),
                     fourier=FourierSpec(n_freq=8), frame_dim=16, patch_size=8)


@pytest.fixture(scope="session")
def tiny_vae(tiny_vae_cfg):
    model = VaeModel(tiny_vae_cfg, seed=0)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_gen_cfg(tiny_vae_cfg):
    return GenConfig.from_vae(tiny_vae_cfg,
                              nn=AttentionConfig(d_model=64, n_heads=2, depth=2),
                              fourier=FourierSpec(n_freq=8, seed=1))


@pytest.fixture(scope="session")
def tiny_gen(tiny_gen_cfg):
    model = VectorFieldModel(tiny_gen_cfg, seed=0)
    model.eval()
    return model


@pytest.fixture(scope="session")
def unit_stats(tiny_vae_cfg):
    return LatentStats(mean=np.zeros(tiny_vae_cfg.latent_dim),
                       std=np.ones(tiny_vae_cfg.latent_dim))


@pytest.fixture()
def rotation_scene():
    return sk.generate("rotation-cw-ccw", seed=5, n_tracks=12, T=16, resolution=32)


def tiny_scenes(n, T=16, families=("rotation-cw-ccw", "linear-goal-choice")):
    return [sk.generate(families[i % len(families)], seed=100 + i, n_tracks=12, T=T,
                        resolution=32) for i in range(n)]
