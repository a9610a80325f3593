import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from binaural_mwf import metrics
from binaural_mwf.costs import FilterBank
from binaural_mwf.errors import MetricUndefined
from binaural_mwf.solver import MethodSpec, solve_scene

from conftest import random_psd

K, FS = 256, 16000.0
NB = K // 2 + 1
M = 4
Q_L = np.eye(M)[0]
Q_R = np.eye(M)[2]


def test_k_s():
    assert metrics.k_s(256, 16000) == 24
    assert metrics.k_s(512, 16000) == 48


@pytest.fixture
def stacks(rng):
    return random_psd(rng, M, rank=1, batch=NB), random_psd(rng, M, batch=NB)


def test_reference_filters_give_zero_errors(stacks):
    px, pv = stacks
    w = FilterBank.selection(Q_L, Q_R, NB)
    ks = metrics.k_s(K, FS)
    for phi in (px, pv):
        assert metrics.delta_ild(w, phi, Q_L, Q_R, ks) == pytest.approx(0, abs=1e-12)
        assert metrics.delta_itd(w, phi, Q_L, Q_R, ks) == pytest.approx(0, abs=1e-12)
    assert metrics.delta_snr(w, px, pv, Q_L, "L") == pytest.approx(0, abs=1e-12)


def test_phase_ramp_sign_convention(stacks):
    _, pv = stacks
    tau = 0.2e-3
    f = np.arange(NB) * FS / K
    w = FilterBank(np.exp(-2j * np.pi * f * tau)[:, None] * Q_L, np.tile(Q_R, (NB, 1)))
    assert metrics.delta_itd(w, pv, Q_L, Q_R, 24) == pytest.approx(-0.2, abs=1e-9)
    detail = metrics.delta_itd_detail(w, pv, Q_L, Q_R, 24, K, FS)
    assert_allclose(detail.per_bin_ms, -0.2, atol=1e-9)
    assert detail.angle_sum == pytest.approx(np.sum(2 * np.pi * f[1:25] * tau))


def test_ild_oracle(stacks):
    _, pv = stacks
    w = FilterBank(2.0 * np.tile(Q_L, (NB, 1)), np.tile(Q_R, (NB, 1)))
    assert metrics.delta_ild(w, pv, Q_L, Q_R, 24) == pytest.approx(20 * np.log10(2))


def test_delta_snr_oracle(stacks):
    px, pv = stacks
    rng = np.random.default_rng(0)
    wl = rng.standard_normal((NB, M)) + 1j * rng.standard_normal((NB, M))
    w = FilterBank(wl, wl)

    def power(a, phi):
        return np.real(np.einsum("ki,kij,kj->k", a.conj(), phi, a)).sum()

    ql = np.tile(Q_L, (NB, 1)).astype(complex)
    want = 10 * np.log10(power(wl, px) / power(wl, pv)) - 10 * np.log10(power(ql, px) / power(ql, pv))
    assert metrics.delta_snr(w, px, pv, Q_L, "L") == pytest.approx(want)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(1e-3, 1e3), s=st.floats(0.01, 100))
def test_scale_invariance(seed, c, s):
    rng = np.random.default_rng(seed)
    px, pv = random_psd(rng, M, rank=1, batch=NB), random_psd(rng, M, batch=NB)
    wl = rng.standard_normal((NB, M)) + 1j * rng.standard_normal((NB, M))
    wr = rng.standard_normal((NB, M)) + 1j * rng.standard_normal((NB, M))
    w, ws = FilterBank(wl, wr), FilterBank(s * wl, s * wr)
    for fn in (lambda w_, p: metrics.delta_ild(w_, p, Q_L, Q_R, 24),
               lambda w_, p: metrics.delta_itd(w_, p, Q_L, Q_R, 24)):
        assert fn(ws, c * pv) == pytest.approx(fn(w, pv), rel=1e-9, abs=1e-9)
    assert metrics.delta_snr(ws, c * px, c * pv, Q_R, "R") == pytest.approx(
        metrics.delta_snr(w, px, pv, Q_R, "R"), rel=1e-9, abs=1e-9)


def test_degenerate_itd_bins_are_excluded(stacks):
    _, pv = stacks
    wl = np.tile(Q_L, (NB, 1)).astype(complex)
    wr = np.tile(Q_R, (NB, 1)).astype(complex)
    wl[3] = 0.0
    detail = metrics.delta_itd_detail(FilterBank(wl, wr), pv, Q_L, Q_R, 24, K, FS)
    assert detail.excluded[2] and detail.excluded.sum() == 1
    wl[1:25] = 0.0
    with pytest.raises(MetricUndefined):
        metrics.delta_itd(FilterBank(wl, wr), pv, Q_L, Q_R, 24)


def test_eta_ratio():
    jm = np.array([1.0, 3.0])
    jp = np.array([0.5, 0.5])
    assert metrics.eta_ratio(jm, jp, 2.0) == pytest.approx(4.0 / 2.0)
    assert metrics.eta_ratio(jm, jp, 4.0) == pytest.approx(metrics.eta_ratio(jm, jp, 2.0) / 2)
    with pytest.raises(MetricUndefined):
        metrics.eta_ratio(jm, jp, 0.0)
    with pytest.raises(MetricUndefined):
        metrics.eta_ratio(jm, np.zeros(2), 1.0)


def test_evaluate_default_scene(default_stats):
    w, diag = solve_scene(default_stats, MethodSpec.mwf())
    rep = metrics.evaluate(w, default_stats)
    assert rep.delta_snr_l > 0 and rep.delta_snr_r > 0
    assert np.isnan(rep.eta)
    assert rep.k_s == 24
    assert rep.snr_bar_in == pytest.approx(-5.0, abs=0.05)
    row = rep.row()
    assert set(metrics.MetricReport.FIELDS) <= set(row)
