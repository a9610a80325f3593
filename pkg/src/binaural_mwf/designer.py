"""Choice of the penalty weight beta at the worst expected input SNR."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .costs import PenaltyKind, binaural_measure, wrap_angle
from .errors import ConfigError, DesignFailure
from .solver import MethodSpec, SolverOptions, solve_batch, solve_scene


@dataclass(frozen=True)
class DesignSpec:
    snr_worst: float = -5.0
    ild_max: float = 2.0  # dB
    itd_max: float = 2.0  # ms
    beta_min: float = 1e-3
    beta_step: float = 10.0 ** 0.1
    beta_max: float = 1e3
    mode: str = "scalar"  # or "per-bin"
    # allowed rise of a cue error from one grid step to the next before the
    # design is aborted as non-monotone
    monotone_tol_db: float = 0.25
    monotone_tol_ms: float = 0.05

    def __post_init__(self):
        if not np.isfinite(self.snr_worst):
            raise ConfigError("snr_worst must be finite")
        if self.ild_max < 0 or self.itd_max < 0:
            raise ConfigError("thresholds must be non-negative")
        if not 0 < self.beta_min < self.beta_max:
            raise ConfigError("need 0 < beta_min < beta_max")
        if not self.beta_step > 1:
            raise ConfigError("beta_step must exceed 1")
        if self.mode not in ("scalar", "per-bin"):
            raise ConfigError(f"unknown design mode {self.mode!r}")

    def grid(self) -> np.ndarray:
        """0 followed by beta_min * beta_step**n up to beta_max."""
        n = int(np.floor(np.log(self.beta_max / self.beta_min) / np.log(self.beta_step) + 1e-9))
        return np.concatenate([[0.0], self.beta_min * self.beta_step ** np.arange(n + 1)])


@dataclass
class BetaProfile:
    beta: np.ndarray
    dynamic: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        if not np.all(np.isfinite(self.beta)) or np.any(self.beta < 0):
            raise ValueError("beta must be finite and non-negative")

    @property
    def scalar(self) -> float | None:
        return float(self.beta[0]) if np.all(self.beta == self.beta[0]) else None

    def frozen(self, g_sq) -> "BetaProfile":
        """Fixed weights equal to the dynamic ones at noise power ``g_sq``."""
        meta = dict(self.meta, frozen_from="dynamic")
        return BetaProfile(self.beta * np.asarray(g_sq, dtype=float), dynamic=False, meta=meta)

    def to_dict(self) -> dict:
        return {"dynamic": self.dynamic, "beta": self.beta.tolist(), "meta": self.meta}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BetaProfile":
        with open(path) as fh:
            d = json.load(fh)
        return cls(np.array(d["beta"], dtype=float), bool(d.get("dynamic", True)),
                   d.get("meta", {}))


def resolve_alpha(profile: BetaProfile, g_sq) -> np.ndarray:
    """Per-bin (or per frame and bin) penalty weights for a profile."""
    g_sq = np.asarray(g_sq, dtype=float)
    if g_sq.shape[-1] != profile.beta.size:
        raise ValueError(f"profile has {profile.beta.size} bins, power has {g_sq.shape[-1]}")
    if profile.dynamic:
        return profile.beta * g_sq
    return np.broadcast_to(profile.beta, g_sq.shape).copy()


def _solve_rows(stats, beta, kinds, opts, rows):
    """Dynamic-weight solution on a subset of bins; ``beta`` is per bin."""
    alpha = beta[rows] * stats.power.per_bin()[rows]
    live = stats.phi_v.trace()[rows] > 0
    w_l = np.tile(np.asarray(stats.q_l, dtype=complex), (len(rows), 1))
    w_r = np.tile(np.asarray(stats.q_r, dtype=complex), (len(rows), 1))
    if live.any():
        r = rows[live]
        k = kinds if np.any(alpha[live] > 0) else ()
        wl, wr, _ = solve_batch(stats.phi_x.matrices[r], stats.phi_v.matrices[r],
                                stats.q_l, stats.q_r, alpha[live], k, opts)
        w_l[live], w_r[live] = wl, wr
    return w_l, w_r


def _global_errors(w: FilterBank, stats, fft_bins, fs):
    ks = metrics.k_s(fft_bins, fs)
    phi_v = stats.phi_v.matrices
    ild = metrics.delta_ild(w, phi_v, stats.q_l, stats.q_r, ks)
    itd = metrics.delta_itd(w, phi_v, stats.q_l, stats.q_r, ks, fft_bins, fs)
    return abs(ild), abs(itd)


def _bin_errors(w_l, w_r, phi_v, q_l, q_r, freqs, low):
    """Per-bin noise ITF errors: level (dB) above the ITD band, delay (ms) in it.

    Both come from the ITF itself, the quantity the penalty pins; the
    power-ratio ILD of one bin can stay off when the noise is not rank one.
    """
    ql = np.broadcast_to(np.asarray(q_l, dtype=complex), w_l.shape)
    qr = np.broadcast_to(np.asarray(q_r, dtype=complex), w_r.shape)
    out = binaural_measure(PenaltyKind.ITF, w_l, w_r, phi_v)
    inp = binaural_measure(PenaltyKind.ITF, ql, qr, phi_v)
    with np.errstate(divide="ignore", invalid="ignore"):
        ild = np.abs(20 * np.log10(np.abs(out) / np.abs(inp)))
        dphi = wrap_angle(np.angle(out) - np.angle(inp))
        itd = np.abs(dphi / (2 * np.pi * np.where(freqs > 0, freqs, np.inf))) * 1e3
    ild = np.where(low, 0.0, np.nan_to_num(ild, nan=np.inf))
    itd = np.where(low, np.nan_to_num(itd, nan=np.inf), 0.0)
    return ild, itd


def design_beta(stats, kinds=(PenaltyKind.ITF,), spec: DesignSpec = DesignSpec(),
                opts: SolverOptions = SolverOptions(), fft_bins: int = 256,
                sample_rate: float = 16000.0) -> BetaProfile:
    """Smallest grid value of beta meeting both noise-cue thresholds.

    ``stats`` must describe the scene at ``spec.snr_worst``.  The weights are
    dynamic (``alpha = beta * g_sq``).  Scalar mode judges the global noise
    ILD/ITD errors (absolute values); per-bin mode raises each bin's beta
    until the level and delay errors of that bin's noise ITF are within the
    thresholds.
    """
    if spec.mode == "per-bin":
        return _design_per_bin(stats, kinds, spec, opts, fft_bins, sample_rate)
    history = []
    prev = None
    for beta in spec.grid():
        method = MethodSpec.mwf() if beta == 0 else MethodSpec.mwf_itf_r(beta, kinds)
        w, _ = solve_scene(stats, method, opts)
        ild, itd = _global_errors(w, stats, fft_bins, sample_rate)
        history.append((float(beta), ild, itd))
        if prev is not None and (ild > prev[0] + spec.monotone_tol_db
                                 or itd > prev[1] + spec.monotone_tol_ms):
            raise DesignFailure(
                f"cue error grew with beta at beta={beta:.4g} "
                f"(ILD {prev[0]:.3f} -> {ild:.3f} dB, ITD {prev[1]:.4f} -> {itd:.4f} ms)",
                best_beta=_best(history)[0], best_ild=_best(history)[1],
                best_itd=_best(history)[2])
        prev = (ild, itd)
        if ild < spec.ild_max and itd < spec.itd_max:
            meta = {"snr_worst": spec.snr_worst, "ild_max": spec.ild_max,
                    "itd_max": spec.itd_max, "mode": spec.mode,
                    "kinds": [PenaltyKind.parse(k).value for k in kinds],
                    "achieved_ild_db": ild, "achieved_itd_ms": itd,
                    "grid_steps": len(history)}
            return BetaProfile(np.full(stats.num_bins, beta), dynamic=True, meta=meta)
    b = _best(history)
    raise DesignFailure(f"thresholds not met up to beta_max={spec.beta_max:g}",
                        best_beta=b[0], best_ild=b[1], best_itd=b[2])


def _best(history):
    return min(history, key=lambda h: max(h[1], h[2]))


def _design_per_bin(stats, kinds, spec, opts, fft_bins, fs):
    grid = spec.grid()
    nb = stats.num_bins
    step = np.zeros(nb, dtype=int)
    freqs = np.arange(nb) * fs / fft_bins
    ks = metrics.k_s(fft_bins, fs)
    low = (np.arange(nb) >= 1) & (np.arange(nb) <= ks)
    # DC carries no usable delay and is outside the ILD band
    skip = np.arange(nb) == 0
    pending = np.flatnonzero(~skip)
    phi_v = stats.phi_v.matrices
    ild = np.zeros(nb)
    itd = np.zeros(nb)
    while pending.size:
        beta = grid[step]
        w_l, w_r = _solve_rows(stats, beta, kinds, opts, pending)
        e_ild, e_itd = _bin_errors(w_l, w_r, phi_v[pending], stats.q_l, stats.q_r,
                                   freqs[pending], low[pending])
        ild[pending], itd[pending] = e_ild, e_itd
        bad = (e_ild >= spec.ild_max) | (e_itd >= spec.itd_max)
        pending = pending[bad]
        if pending.size and np.any(step[pending] == len(grid) - 1):
            worst = pending[step[pending] == len(grid) - 1]
            raise DesignFailure(
                f"bins {worst.tolist()} miss the thresholds at beta_max={spec.beta_max:g}",
                best_beta=spec.beta_max, best_ild=float(ild[worst].max()),
                best_itd=float(itd[worst].max()))
        step[pending] += 1
    beta = grid[step]
    meta = {"snr_worst": spec.snr_worst, "ild_max": spec.ild_max, "itd_max": spec.itd_max,
            "mode": spec.mode, "kinds": [PenaltyKind.parse(k).value for k in kinds],
            "achieved_ild_db": float(ild.max()), "achieved_itd_ms": float(itd.max())}
    return BetaProfile(beta, dynamic=True, meta=meta)
