"""Weighted overlap-add STFT used throughout the processing chain.

Frames are stored as ``(num_frames, num_bins, num_mics)`` complex arrays with
only the non-negative frequencies ``0..K/2`` kept.  Forward DFT is
unnormalised; the inverse carries the ``1/K`` factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 128
    fft_bins: int = 256
    hop: int = 64
    sample_rate: float = 16000.0

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len % 2:
            raise ConfigError(f"frame_len must be positive and even, got {self.frame_len}")
        if self.hop * 2 != self.frame_len:
            raise ConfigError("hop must be frame_len / 2")
        if self.fft_bins < self.frame_len:
            raise ConfigError("fft_bins must be >= frame_len")
        if not self.sample_rate > 0:
            raise ConfigError("sample_rate must be positive")

    @property
    def num_bins(self) -> int:
        return self.fft_bins // 2 + 1

    @property
    def frame_duration(self) -> float:
        """Frame length in seconds."""
        return self.frame_len / self.sample_rate

    @property
    def window(self) -> np.ndarray:
        return sqrt_hann(self.frame_len)

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.sample_rate / self.fft_bins


def sqrt_hann(n: int) -> np.ndarray:
    """Periodic square-root Hann window of length ``n``."""
    k = np.arange(n)
    return np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * k / n)))


@dataclass
class SpectralFrameSet:
    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 3:
            raise DimensionError("frame data must be (frames, bins, mics)")
        if self.data.shape[1] != self.config.num_bins:
            raise DimensionError(
                f"expected {self.config.num_bins} bins, got {self.data.shape[1]}"
            )

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_mics(self) -> int:
        return self.data.shape[2]

    def scaled(self, c: float) -> "SpectralFrameSet":
        return SpectralFrameSet(self.data * c, self.config)


def _as_channels(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionError("signal must be (samples,) or (samples, channels)")
    return x


def stft_analyze(signal, config: StftConfig | None = None) -> SpectralFrameSet:
    """Windowed, zero-padded K-point DFT of every hop-spaced frame.

    ``signal`` is ``(samples,)`` or ``(samples, channels)``.
    """
    config = config or StftConfig()
    x = _as_channels(signal)
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    n = x.shape[0]
    if n < config.frame_len:
        raise ValueError(f"signal of {n} samples is shorter than one frame")
    num_frames = (n - config.frame_len) // config.hop + 1
    idx = np.arange(num_frames)[:, None] * config.hop + np.arange(config.frame_len)
    frames = x[idx] * config.window[None, :, None]  # (frames, frame_len, ch)
    spec = np.fft.rfft(frames, n=config.fft_bins, axis=1)
    return SpectralFrameSet(spec, config)


def stft_synthesize(frames: SpectralFrameSet) -> np.ndarray:
    """Weighted overlap-add resynthesis; returns ``(samples, channels)``.

    The first and last ``frame_len`` samples are not normalised for the
    missing neighbouring frames.
    """
    cfg = frames.config
    if cfg.fft_bins < cfg.frame_len or frames.num_bins != cfg.num_bins:
        raise DimensionError("frame set inconsistent with its StftConfig")
    seg = np.fft.irfft(frames.data, n=cfg.fft_bins, axis=1)[:, : cfg.frame_len, :]
    seg *= cfg.window[None, :, None]
    out = np.zeros(((frames.num_frames - 1) * cfg.hop + cfg.frame_len, frames.num_mics))
    # 50% overlap: even and odd frames never overlap among themselves, so two
    # vectorised passes give a fixed accumulation order per sample.
    for parity in (0, 1):
        sel = seg[parity::2]
        if not len(sel):
            continue
        starts = (np.arange(len(sel)) * 2 + parity) * cfg.hop
        idx = starts[:, None] + np.arange(cfg.frame_len)
        out[idx.ravel()] += sel.reshape(-1, frames.num_mics)
    return out


def apply_filters(y: SpectralFrameSet, w) -> SpectralFrameSet:
    """Left/right outputs ``w_l^H y`` for every frame and bin.

    ``w`` is a :class:`~binaural_mwf.costs.FilterBank`.
    """
    if w.left.shape != (y.num_bins, y.num_mics):
        raise DimensionError(
            f"filter bank is {w.left.shape}, frames have {y.num_bins} bins x {y.num_mics} mics"
        )
    out_l = np.einsum("km,fkm->fk", w.left.conj(), y.data)
    out_r = np.einsum("km,fkm->fk", w.right.conj(), y.data)
    return SpectralFrameSet(np.stack([out_l, out_r], axis=-1), y.config)
