import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from binaural_mwf.errors import DimensionError
from binaural_mwf.harness import oracle_statistics
from binaural_mwf.scene import SceneConfig, build_scene
from binaural_mwf.stats import (CoherenceStack, estimate_coherence, estimate_power_profile,
                                estimate_speech_coherence, normalize_statistics)
from binaural_mwf.stft import SpectralFrameSet, StftConfig

from conftest import random_psd

TINY = StftConfig(frame_len=2, fft_bins=2, hop=1)  # 2 bins


def _frames(data):
    return SpectralFrameSet(np.asarray(data, dtype=complex), TINY)


def test_single_frame_outer_product(rng):
    v = rng.standard_normal((1, 2, 3)) + 1j * rng.standard_normal((1, 2, 3))
    phi = estimate_coherence(_frames(v)).matrices
    assert_allclose(phi[0], np.outer(v[0, 0], v[0, 0].conj()))
    assert np.linalg.matrix_rank(phi[1]) == 1


def test_white_noise_gives_identity():
    rng = np.random.default_rng(11)
    n = 100_000
    z = (rng.standard_normal((n, 2, 3)) + 1j * rng.standard_normal((n, 2, 3))) / np.sqrt(2)
    phi = estimate_coherence(_frames(z)).matrices
    for k in range(2):
        assert_allclose(np.diag(phi[k]).real, 1.0, atol=0.02)
        off = phi[k] - np.diag(np.diag(phi[k]))
        assert np.abs(off).max() < 0.02


@settings(max_examples=20, deadline=None)
@given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_coherence_is_quadratic(c, seed):
    rng = np.random.default_rng(seed)
    f = _frames(rng.standard_normal((7, 2, 3)) + 1j * rng.standard_normal((7, 2, 3)))
    a = estimate_coherence(f).matrices
    b = estimate_coherence(f.scaled(c)).matrices
    assert_allclose(b, c ** 2 * a, rtol=1e-12, atol=1e-300)


def test_speech_repair_cases(rng):
    phi_v = CoherenceStack(random_psd(rng, 3, batch=2))
    assert_allclose(estimate_speech_coherence(phi_v, phi_v).matrices, 0.0, atol=1e-14)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    rank1 = 2.5 * np.outer(h, h.conj())
    phi_y = CoherenceStack(phi_v.matrices + rank1)
    assert_allclose(estimate_speech_coherence(phi_y, phi_v).matrices[0], rank1, atol=1e-12)
    diff = np.diag([2.0, -0.1]).astype(complex)
    rep = estimate_speech_coherence(CoherenceStack(diff[None]), CoherenceStack(np.zeros((1, 2, 2))))
    assert_allclose(np.linalg.eigvalsh(rep.matrices[0]), [0.0, 2.0], atol=1e-15)
    with pytest.raises(DimensionError):
        estimate_speech_coherence(CoherenceStack(np.zeros((2, 3, 3))),
                                  CoherenceStack(np.zeros((3, 3, 3))))


def test_normalization(rng):
    phi = CoherenceStack(np.stack([4 * np.eye(2), np.zeros((2, 2))]).astype(complex))
    norm, power = normalize_statistics(phi)
    assert_allclose(norm.matrices[0], np.eye(2) / 2)
    assert power.tolist() == [8.0, 0.0]
    assert norm.degenerate.tolist() == [False, True]
    rand = CoherenceStack(random_psd(rng, 4, batch=5))
    n1, _ = normalize_statistics(rand)
    assert_allclose(n1.trace(), 1.0)
    n2, p2 = normalize_statistics(n1)
    assert_allclose(n2.matrices, n1.matrices)
    assert_allclose(p2, 1.0)


def test_power_profile_basic(rng):
    u = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    noise = _frames(np.broadcast_to(u, (6, 2, 3)))
    prof = estimate_power_profile(noise, noise)
    assert_allclose(prof.g_sq, np.broadcast_to(np.sum(np.abs(u) ** 2, axis=1), (6, 2)))
    assert prof.snr_bar_in == pytest.approx(1.0)
    rec = estimate_power_profile(noise, noise, mode="recursive", ff=0.9)
    assert_allclose(rec.g_sq, prof.g_sq)
    with pytest.raises(ValueError):
        estimate_power_profile(noise, noise, mode="recursive", ff=1.0)


def test_recursive_matches_batch_on_stationary_noise():
    rng = np.random.default_rng(2)
    n = 40000
    z = rng.standard_normal((n, 2, 2)) + 1j * rng.standard_normal((n, 2, 2))
    f = _frames(z)
    batch = estimate_power_profile(f, f)
    # memory of ~2000 frames; after 20 memory lengths the start is forgotten
    rec = estimate_power_profile(f, f, mode="recursive", ff=1 - 1 / 2000)
    assert_allclose(rec.g_sq[-1], batch.g_sq[-1], rtol=0.05)


def test_lombard_gain_scales_noise_power():
    cfg = SceneConfig(duration=0.5)
    a = oracle_statistics(build_scene(cfg, seed=0), StftConfig())
    b = oracle_statistics(build_scene(SceneConfig(duration=0.5, lombard_gain_sq=20.0), seed=0),
                          StftConfig())
    assert b.power.g_bar_sq / a.power.g_bar_sq == pytest.approx(100.0, rel=1e-6)
    assert b.power.snr_bar_in == pytest.approx(a.power.snr_bar_in, rel=1e-9)


def test_csv_round_trip(tmp_path, rng):
    phi = CoherenceStack(random_psd(rng, 3, batch=4))
    phi.to_csv(tmp_path / "phi.csv")
    back = CoherenceStack.from_csv(tmp_path / "phi.csv")
    assert np.array_equal(back.matrices, phi.matrices)
