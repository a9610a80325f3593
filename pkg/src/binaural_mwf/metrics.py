"""Objective scores for a filter bank: SNR gain, interaural cue errors, eta."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .costs import FilterBank, quad, wrap_angle
from .errors import MetricUndefined

ITD_CUTOFF_HZ = 1500.0


def k_s(fft_bins: int, sample_rate: float, cutoff: float = ITD_CUTOFF_HZ) -> int:
    """Last bin of the low (ITD) band: ``floor(cutoff * K / fs)``."""
    return int(math.floor(cutoff * fft_bins / sample_rate))


def _power(w, phi):
    return np.real(quad(w, phi, w))


def _db_ratio(num, den, what):
    if not (num > 0 and den > 0):
        raise MetricUndefined(f"{what}: zero power sum")
    return 10.0 * np.log10(num / den)


def delta_snr(w: FilterBank, phi_x, phi_v, q, side: str = "L") -> float:
    """Output minus input SNR at one ear (dB), powers summed over bins."""
    filt = w.left if side.upper() == "L" else w.right
    q = np.broadcast_to(np.asarray(q, dtype=complex), filt.shape)
    out = _db_ratio(_power(filt, phi_x).sum(), _power(filt, phi_v).sum(), "output SNR")
    inp = _db_ratio(_power(q, phi_x).sum(), _power(q, phi_v).sum(), "input SNR")
    return float(out - inp)


def delta_ild(w: FilterBank, phi, q_l, q_r, ks: int) -> float:
    """ILD error (dB) over bins ``ks+1`` up to the last stored bin."""
    hi = slice(ks + 1, None)
    ql = np.broadcast_to(np.asarray(q_l, dtype=complex), w.left.shape)[hi]
    qr = np.broadcast_to(np.asarray(q_r, dtype=complex), w.right.shape)[hi]
    p = phi[hi]
    out = _db_ratio(_power(w.left[hi], p).sum(), _power(w.right[hi], p).sum(), "output ILD")
    inp = _db_ratio(_power(ql, p).sum(), _power(qr, p).sum(), "input ILD")
    return float(out - inp)


@dataclass
class ItdResult:
    value_ms: float
    per_bin_ms: np.ndarray
    excluded: np.ndarray  # low bins dropped for a vanishing cross term
    angle_sum: float  # sum of wrapped phase differences (rad), debug only


def delta_itd_detail(w: FilterBank, phi, q_l, q_r, ks: int, fft_bins: int,
                     sample_rate: float) -> ItdResult:
    """Per-bin interaural delay change over bins ``1..ks``.

    ``d(k) = -wrap(phi_out - phi_in) / (2 pi f_k)``, where ``phi`` is the
    angle of the left/right cross term; positive values mean the output
    image arrives later at the left ear than the input did.
    """
    lo = slice(1, ks + 1)
    ql = np.broadcast_to(np.asarray(q_l, dtype=complex), w.left.shape)[lo]
    qr = np.broadcast_to(np.asarray(q_r, dtype=complex), w.right.shape)[lo]
    p = phi[lo]
    c_out = quad(w.left[lo], p, w.right[lo])
    c_in = quad(ql, p, qr)
    scale = np.real(np.einsum("kmm->k", p))
    tiny = 1e-14 * np.where(scale > 0, scale, 1.0)
    bad = (np.abs(c_out) <= tiny) | (np.abs(c_in) <= tiny)
    if bad.all():
        raise MetricUndefined("every low bin has a vanishing cross term")
    f_k = np.arange(1, ks + 1) * sample_rate / fft_bins
    dphi = wrap_angle(np.angle(c_out) - np.angle(c_in))
    d = -dphi / (2.0 * np.pi * f_k) * 1e3
    d[bad] = np.nan
    return ItdResult(float(np.nanmean(d)), d, bad, float(np.sum(dphi[~bad])))


def delta_itd(w: FilterBank, phi, q_l, q_r, ks: int, fft_bins: int = 256,
              sample_rate: float = 16000.0) -> float:
    """Mean interaural delay change (ms) over bins ``1..ks``."""
    return delta_itd_detail(w, phi, q_l, q_r, ks, fft_bins, sample_rate).value_ms


def eta_ratio(j_mwf, j_pen, alpha) -> float:
    """Balance between the MWF term and the weighted penalty, summed over bins.

    ``alpha`` is the weight actually applied per bin (``beta * g_sq`` for
    dynamic weights), so the ratio does not depend on the overall level.
    """
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), np.shape(j_pen))
    den = float(np.sum(alpha * np.asarray(j_pen)))
    if not np.any(alpha > 0):
        raise MetricUndefined("eta is undefined without a penalty weight")
    if not den > 0:
        raise MetricUndefined("weighted penalty sum is zero")
    return float(np.sum(j_mwf)) / den


@dataclass
class MetricReport:
    delta_snr_l: float
    delta_snr_r: float
    delta_ild_s: float
    delta_ild_n: float
    delta_itd_s: float
    delta_itd_n: float
    eta: float
    g_bar_sq: float
    snr_bar_in: float
    k_s: int
    flags: list = field(default_factory=list)

    FIELDS = ("delta_snr_l", "delta_snr_r", "delta_ild_s", "delta_ild_n", "delta_itd_s",
              "delta_itd_n", "eta", "g_bar_sq", "snr_bar_in", "k_s")

    def row(self) -> dict:
        d = asdict(self)
        d["flags"] = ";".join(self.flags)
        return d


def evaluate(w: FilterBank, stats, fft_bins: int = 256, sample_rate: float = 16000.0,
             diagnostics=None, alpha=None) -> MetricReport:
    """All scores for ``w`` on one scene's statistics.

    ``eta`` needs the per-bin costs at the solution (``diagnostics``) and the
    applied weights ``alpha``; it is NaN otherwise, and for plain MWF.
    """
    phi_x, phi_v = stats.phi_x.matrices, stats.phi_v.matrices
    q_l, q_r = stats.q_l, stats.q_r
    ks = k_s(fft_bins, sample_rate)
    flags = []
    itd_s = delta_itd_detail(w, phi_x, q_l, q_r, ks, fft_bins, sample_rate)
    itd_n = delta_itd_detail(w, phi_v, q_l, q_r, ks, fft_bins, sample_rate)
    for tag, r in (("S", itd_s), ("N", itd_n)):
        if r.excluded.any():
            flags.append(f"itd_{tag}_excluded={','.join(map(str, 1 + np.flatnonzero(r.excluded)))}")
    eta = float("nan")
    if diagnostics is not None and alpha is not None and diagnostics.penalties:
        j1 = next(iter(diagnostics.penalties.values()))
        try:
            eta = eta_ratio(diagnostics.j_mwf, j1, alpha)
        except MetricUndefined as exc:
            flags.append(f"eta: {exc}")
    power = stats.power
    return MetricReport(
        delta_snr_l=delta_snr(w, phi_x, phi_v, q_l, "L"),
        delta_snr_r=delta_snr(w, phi_x, phi_v, q_r, "R"),
        delta_ild_s=delta_ild(w, phi_x, q_l, q_r, ks),
        delta_ild_n=delta_ild(w, phi_v, q_l, q_r, ks),
        delta_itd_s=itd_s.value_ms,
        delta_itd_n=itd_n.value_ms,
        eta=eta,
        g_bar_sq=float(10.0 * np.log10(power.g_bar_sq)),
        snr_bar_in=float(10.0 * np.log10(power.snr_bar_in)),
        k_s=ks,
        flags=flags,
    )
