import numpy as np
import pytest

from binaural_mwf.harness import ExperimentConfig, oracle_statistics
from binaural_mwf.scene import SceneConfig, build_scene
from binaural_mwf.stft import StftConfig


def random_psd(rng, m, rank=None, batch=None):
    """Random Hermitian PSD matrices (full rank unless ``rank`` is given)."""
    shape = () if batch is None else (batch,)
    r = m if rank is None else rank
    a = rng.standard_normal(shape + (m, r)) + 1j * rng.standard_normal(shape + (m, r))
    return a @ np.conj(np.swapaxes(a, -1, -2)) / r


def random_filters(rng, m, batch=None):
    shape = (m,) if batch is None else (batch, m)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape),
            rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_stats():
    """Oracle statistics of the default scene (M=6, 129 bins, -5 dB, seed 0)."""
    cfg = SceneConfig()
    return oracle_statistics(build_scene(cfg, seed=0), StftConfig())


# 9-bin chain for tests that run many solves
SMALL_STFT = StftConfig(frame_len=16, fft_bins=16, hop=8)


@pytest.fixture(scope="session")
def small_config():
    return ExperimentConfig(scene=SceneConfig(duration=0.5), stft=SMALL_STFT, seeds=(0,),
                            axis_start=0.0, axis_stop=10.0, axis_step=5.0)


@pytest.fixture(scope="session")
def small_stats(small_config):
    return oracle_statistics(build_scene(small_config.scene, seed=0), SMALL_STFT)
