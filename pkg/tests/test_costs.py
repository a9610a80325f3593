import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from binaural_mwf.costs import (FilterBank, PenaltyKind, WeightSchedule, binaural_measure,
                                cost_and_grad, grad_j_total, j_mwf, j_penalty, j_total, pack,
                                unpack, wrap_angle)
from binaural_mwf.errors import DegenerateMeasureError
from binaural_mwf.solver import solve_mwf_closed_form

from conftest import random_filters, random_psd

KINDS = list(PenaltyKind)
M = 4
Q_L = np.eye(M)[0]
Q_R = np.eye(M)[2]


def test_j_mwf_oracle_values(rng):
    px, pv = random_psd(rng, M), random_psd(rng, M)
    at_q = j_mwf(Q_L, Q_R, px, pv, Q_L, Q_R)
    assert at_q == pytest.approx(np.real(pv[0, 0] + pv[2, 2]))
    at_zero = j_mwf(np.zeros(M), np.zeros(M), px, pv, Q_L, Q_R)
    assert at_zero == pytest.approx(np.real(px[0, 0] + px[2, 2]))
    w_l, w_r = random_filters(rng, M)
    assert j_mwf(w_l, w_r, 4 * px, 4 * pv, Q_L, Q_R) == pytest.approx(
        4 * j_mwf(w_l, w_r, px, pv, Q_L, Q_R), rel=1e-14)


def test_j_mwf_matches_sample_mse():
    """Cost equals the empirical error power of filtered sample vectors."""
    rng = np.random.default_rng(8)
    n = 20000
    xs = rng.standard_normal((n, M)) + 1j * rng.standard_normal((n, M))
    vs = rng.standard_normal((n, M)) + 1j * rng.standard_normal((n, M))
    px = xs.T @ xs.conj() / n
    pv = vs.T @ vs.conj() / n
    w_l, w_r = random_filters(rng, M)
    err_l = xs @ Q_L - xs @ w_l.conj()
    err_r = xs @ Q_R - xs @ w_r.conj()
    mse = (np.mean(np.abs(err_l) ** 2) + np.mean(np.abs(vs @ w_l.conj()) ** 2)
           + np.mean(np.abs(err_r) ** 2) + np.mean(np.abs(vs @ w_r.conj()) ** 2))
    assert j_mwf(w_l, w_r, px, pv, Q_L, Q_R) == pytest.approx(mse, rel=1e-10)


def test_measures_hand_values(rng):
    pv = random_psd(rng, 3)
    a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    assert binaural_measure("ITF", a, a, pv) == pytest.approx(1.0)
    assert binaural_measure("ILD", a, a, pv) == pytest.approx(1.0)
    assert binaural_measure("ITD", a, a, pv) == pytest.approx(0.0, abs=1e-15)
    assert binaural_measure("IC", a, a, pv) == pytest.approx(1.0)
    eye = np.eye(2)
    l, r = np.array([1.0, 0]), np.array([0, 1.0])
    assert binaural_measure("ITF", l, r, eye) == 0
    assert binaural_measure("ILD", l, r, eye) == 1
    assert binaural_measure("IC", l, r, eye) == 0


def test_degenerate_measure_raises():
    with pytest.raises(DegenerateMeasureError):
        binaural_measure("ITF", np.array([1.0, 0]), np.zeros(2), np.eye(2))


@pytest.mark.parametrize("kind", KINDS)
def test_penalty_vanishes_at_scaled_reference(kind, rng):
    pv = random_psd(rng, M)
    assert j_penalty(kind, Q_L, Q_R, Q_L, Q_R, pv) == pytest.approx(0, abs=1e-20)
    assert j_penalty(kind, 3.0 * Q_L, 3.0 * Q_R, Q_L, Q_R, pv) == pytest.approx(0, abs=1e-20)


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), log_c=st.floats(-2, 5), log_s=st.floats(-3, 3))
def test_penalty_homogeneity(kind, seed, log_c, log_s):
    rng = np.random.default_rng(seed)
    pv = random_psd(rng, M)
    w_l, w_r = random_filters(rng, M)
    base = j_penalty(kind, w_l, w_r, Q_L, Q_R, pv)
    c2 = 10.0 ** log_c
    assert j_penalty(kind, w_l, w_r, Q_L, Q_R, c2 * pv) == pytest.approx(base, rel=1e-9, abs=1e-14)
    s = 10.0 ** log_s
    assert j_penalty(kind, s * w_l, s * w_r, Q_L, Q_R, pv) == pytest.approx(base, rel=1e-9,
                                                                             abs=1e-14)


def test_j_total_rules(rng):
    px, pv = random_psd(rng, M), random_psd(rng, M)
    w_l, w_r = random_filters(rng, M)
    assert j_total(w_l, w_r, px, pv, Q_L, Q_R, [0.0, 0.0], ["ITF", "IC"]) == pytest.approx(
        j_mwf(w_l, w_r, px, pv, Q_L, Q_R))
    assert j_total(Q_L, Q_R, px, pv, Q_L, Q_R, [5.0], ["ITF"]) == pytest.approx(
        np.real(pv[0, 0] + pv[2, 2]))
    sched = WeightSchedule(0.3, dynamic=True)
    g = np.real(np.trace(pv))
    c2 = 1e3
    a = j_total(w_l, w_r, px, pv, Q_L, Q_R, sched.alpha(g), ["ITF"])
    b = j_total(w_l, w_r, c2 * px, c2 * pv, Q_L, Q_R, sched.alpha(c2 * g), ["ITF"])
    assert b == pytest.approx(c2 * a, rel=1e-12)
    with pytest.raises(ValueError):
        j_total(w_l, w_r, px, pv, Q_L, Q_R, [-1.0], ["ITF"])


def test_gradient_zero_at_closed_form(rng):
    px, pv = random_psd(rng, M, rank=1), random_psd(rng, M)
    w_l, w_r = solve_mwf_closed_form(px, pv, Q_L, Q_R)
    j, g_l, g_r = cost_and_grad(w_l, w_r, px, pv, Q_L, Q_R, [], [])
    assert np.linalg.norm(pack(g_l, g_r)) < 1e-9 * (1 + j)


@pytest.mark.parametrize("kind", [PenaltyKind.ITF, PenaltyKind.ILD, PenaltyKind.IC])
def test_penalty_gradient_zero_at_reference(kind, rng):
    pv = random_psd(rng, M)
    _, g_l, g_r = cost_and_grad(Q_L.astype(complex), Q_R.astype(complex), np.zeros((M, M)),
                                pv, Q_L, Q_R, [1.0], [kind])
    g_mwf = cost_and_grad(Q_L.astype(complex), Q_R.astype(complex), np.zeros((M, M)), pv,
                          Q_L, Q_R, [], [])
    assert_allclose(g_l, g_mwf[1], atol=1e-14)
    assert_allclose(g_r, g_mwf[2], atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_matches_finite_differences(kind, rng):
    px, pv = random_psd(rng, 3), random_psd(rng, 3)
    ql, qr = np.eye(3)[0], np.eye(3)[1]
    w_l, w_r = random_filters(rng, 3)
    x = pack(w_l, w_r)
    g = grad_j_total(w_l, w_r, px, pv, ql, qr, [0.7], [kind])
    h = 1e-6
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fp = j_total(*unpack(x + e), px, pv, ql, qr, [0.7], [kind])
        fm = j_total(*unpack(x - e), px, pv, ql, qr, [0.7], [kind])
        fd[i] = (fp - fm) / (2 * h)
    assert_allclose(g, fd, rtol=1e-5, atol=1e-7 * np.abs(fd).max())


def test_wrap_angle():
    assert_allclose(wrap_angle([np.pi, -np.pi, 3 * np.pi, 0.5]), [np.pi, np.pi, np.pi, 0.5])


def test_pack_unpack_and_filter_csv(tmp_path, rng):
    w_l, w_r = random_filters(rng, M, batch=5)
    a, b = unpack(pack(w_l, w_r))
    assert np.array_equal(a, w_l) and np.array_equal(b, w_r)
    bank = FilterBank(w_l, w_r)
    bank.to_csv(tmp_path / "w.csv")
    back = FilterBank.from_csv(tmp_path / "w.csv")
    assert np.array_equal(back.left, w_l) and np.array_equal(back.right, w_r)
    with pytest.raises(ValueError):
        FilterBank(np.full((2, 2), np.nan), np.zeros((2, 2)))
