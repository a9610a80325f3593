"""Second-order statistics: coherence matrices and noise/speech power estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .stft import SpectralFrameSet


@dataclass
class CoherenceStack:
    """Per-bin Hermitian ``M x M`` matrices, shape ``(bins, M, M)``."""

    matrices: np.ndarray
    kind: str = "noise"
    degenerate: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=complex)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise DimensionError("coherence stack must be (bins, M, M)")

    @property
    def num_bins(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_mics(self) -> int:
        return self.matrices.shape[1]

    def trace(self) -> np.ndarray:
        return np.real(np.einsum("kmm->k", self.matrices))

    def scaled(self, c2: float) -> "CoherenceStack":
        return CoherenceStack(self.matrices * c2, self.kind)

    def to_csv(self, path) -> None:
        """Write ``bin,row,col,re,im`` rows, one per matrix entry."""
        k, r, c = np.indices(self.matrices.shape)
        table = np.column_stack([k.ravel(), r.ravel(), c.ravel(),
                                 self.matrices.real.ravel(), self.matrices.imag.ravel()])
        np.savetxt(path, table, delimiter=",", header="bin,row,col,re,im", comments="",
                   fmt=["%d", "%d", "%d", "%.17g", "%.17g"])

    @classmethod
    def from_csv(cls, path, kind: str = "noise") -> "CoherenceStack":
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        idx = table[:, :3].astype(int)
        shape = (idx[:, 0].max() + 1, idx[:, 1].max() + 1, idx[:, 2].max() + 1)
        mats = np.zeros(shape, dtype=complex)
        mats[idx[:, 0], idx[:, 1], idx[:, 2]] = table[:, 3] + 1j * table[:, 4]
        return cls(mats, kind)


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def estimate_coherence(frames: SpectralFrameSet, kind: str = "noise") -> CoherenceStack:
    """Frame-averaged outer products ``(1/L) sum_l s s^H`` per bin."""
    if frames.num_frames == 0:
        raise ValueError("no frames to average")
    s = frames.data
    phi = np.einsum("fkm,fkn->kmn", s, s.conj()) / frames.num_frames
    return CoherenceStack(hermitian_part(phi), kind)


def estimate_speech_coherence(phi_y: CoherenceStack, phi_v: CoherenceStack) -> CoherenceStack:
    """``phi_y - phi_v`` with negative eigenvalues clamped to zero."""
    if phi_y.matrices.shape != phi_v.matrices.shape:
        raise DimensionError(
            f"noisy stack {phi_y.matrices.shape} vs noise stack {phi_v.matrices.shape}"
        )
    diff = hermitian_part(phi_y.matrices - phi_v.matrices)
    evals, evecs = np.linalg.eigh(diff)
    evals = np.clip(evals, 0.0, None)
    repaired = np.einsum("kmi,ki,kni->kmn", evecs, evals, evecs.conj())
    return CoherenceStack(hermitian_part(repaired), "speech")


def normalize_statistics(phi: CoherenceStack) -> tuple[CoherenceStack, np.ndarray]:
    """Divide each bin by its trace.

    Zero-trace bins come back as zero matrices with power 0 and are marked in
    ``.degenerate`` of the returned stack.
    """
    power = phi.trace()
    bad = ~(power > 0)
    safe = np.where(bad, 1.0, power)
    out = phi.matrices / safe[:, None, None]
    out[bad] = 0.0
    return CoherenceStack(out, phi.kind, degenerate=bad), np.where(bad, 0.0, power)


@dataclass
class PowerProfile:
    """Per-frame, per-bin power estimates; ``(frames, bins)`` arrays."""

    g_sq: np.ndarray
    sigma_x_sq: np.ndarray
    sigma_v_sq: np.ndarray

    @property
    def snr_in(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.sigma_v_sq > 0, self.sigma_x_sq / self.sigma_v_sq, np.nan)

    @property
    def g_bar_sq(self) -> float:
        """Frame-averaged noise power summed over bins (linear)."""
        return float(np.sum(self.g_sq) / self.g_sq.shape[0])

    @property
    def snr_bar_in(self) -> float:
        return float(np.sum(self.sigma_x_sq) / np.sum(self.sigma_v_sq))

    def per_bin(self) -> np.ndarray:
        """``g_sq`` averaged over frames, one value per bin."""
        return self.g_sq.mean(axis=0)


def _frame_power(frames: SpectralFrameSet) -> np.ndarray:
    return np.sum(np.abs(frames.data) ** 2, axis=2)


def _recursive(p: np.ndarray, ff: float) -> np.ndarray:
    out = np.empty_like(p)
    out[0] = p[0]
    for i in range(1, len(p)):
        out[i] = ff * out[i - 1] + (1.0 - ff) * p[i]
    return out


def estimate_power_profile(noise_frames: SpectralFrameSet, speech_frames: SpectralFrameSet,
                           mode: str = "batch", ff: float = 0.95) -> PowerProfile:
    """Noise power (squared Lombard gain) and speech power per frame and bin.

    ``mode="batch"`` averages over all frames (same value for every frame);
    ``mode="recursive"`` uses first-order smoothing with forgetting factor
    ``ff``.
    """
    if noise_frames.num_frames == 0 or speech_frames.num_frames == 0:
        raise ValueError("empty frame set")
    if noise_frames.data.shape != speech_frames.data.shape:
        raise DimensionError("speech and noise frame sets are not aligned")
    pv = _frame_power(noise_frames)
    px = _frame_power(speech_frames)
    if mode == "batch":
        sv = np.broadcast_to(pv.mean(axis=0), pv.shape).copy()
        sx = np.broadcast_to(px.mean(axis=0), px.shape).copy()
    elif mode == "recursive":
        if not 0.0 < ff < 1.0:
            raise ValueError(f"forgetting factor must lie in (0, 1), got {ff}")
        sv = _recursive(pv, ff)
        sx = _recursive(px, ff)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return PowerProfile(g_sq=sv, sigma_x_sq=sx, sigma_v_sq=sv)


@dataclass
class SceneStats:
    """Everything the solver and metrics need about one scene."""

    phi_y: CoherenceStack
    phi_v: CoherenceStack
    phi_x: CoherenceStack
    power: PowerProfile
    q_l: np.ndarray
    q_r: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.phi_v.num_bins


def scene_statistics(y_frames: SpectralFrameSet, v_frames: SpectralFrameSet,
                     x_frames: SpectralFrameSet, q_l, q_r, mode: str = "batch",
                     ff: float = 0.95) -> SceneStats:
    """Noise stack from the noise-only frames, speech stack as the repaired
    difference ``phi_y - phi_v``, powers from the separated components."""
    phi_y = estimate_coherence(y_frames, "noisy")
    phi_v = estimate_coherence(v_frames, "noise")
    phi_x = estimate_speech_coherence(phi_y, phi_v)
    power = estimate_power_profile(v_frames, x_frames, mode=mode, ff=ff)
    return SceneStats(phi_y, phi_v, phi_x, power, np.asarray(q_l, dtype=float),
                      np.asarray(q_r, dtype=float))
