"""RIFF WAV reading and writing (16-bit PCM or 32-bit float)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return ``(samples x channels float array, sample_rate)``.

    16-bit PCM is mapped to [-1, 1).
    """
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        data = data.astype(float)
    else:
        raise ValueError(f"unsupported WAV encoding {data.dtype} in {path}")
    if data.ndim == 1:
        data = data[:, None]
    return data, int(rate)


def write_wav(path, data, sample_rate, encoding: str = "float32") -> None:
    x = np.asarray(data, dtype=float)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if encoding == "float32":
        wavfile.write(str(path), int(sample_rate), x.astype(np.float32))
    elif encoding == "pcm16":
        pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(str(path), int(sample_rate), pcm)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
