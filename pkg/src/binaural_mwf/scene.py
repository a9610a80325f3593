"""Binaural scene synthesis: HRIRs, source rendering, SNR and Lombard gain."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, DimensionError
from .wavio import read_wav


@dataclass(frozen=True)
class HeadModel:
    """Parameters of the spherical-head HRIR model.

    ``mic_offsets`` are front-to-back positions (m, positive towards the
    front) of the microphones on each hearing aid; index 0 is the frontal
    reference microphone.
    """

    radius: float = 0.0875
    speed_of_sound: float = 343.0
    sample_rate: float = 16000.0
    length: int = 64
    bulk_delay: float = 24.0
    mic_offsets: tuple = (0.0, -0.0076, -0.0152)
    shadow_front_hz: float = 8000.0
    shadow_side_hz: float = 1000.0

    def __post_init__(self):
        if not self.radius > 0 or not self.speed_of_sound > 0:
            raise ConfigError("head radius and speed of sound must be positive")


@dataclass
class HrirSet:
    responses: np.ndarray  # (mics, taps)
    azimuth: float | None = None
    distance: float | None = None

    def __post_init__(self):
        self.responses = np.atleast_2d(np.asarray(self.responses, dtype=float))
        if not np.all(np.isfinite(self.responses)):
            raise ValueError("HRIRs must be finite")

    @property
    def num_mics(self) -> int:
        return self.responses.shape[0]

    @property
    def length(self) -> int:
        return self.responses.shape[1]


@dataclass
class SceneConfig:
    speech_azimuth: float = 0.0
    speech_distance: float = 0.8
    noise_azimuth: float = -60.0
    noise_distance: float = 3.0
    num_mics_left: int = 3
    num_mics_right: int = 3
    sample_rate: float = 16000.0
    snr_in: float = -5.0
    lombard_gain_sq: float = 0.0
    duration: float = 2.0
    # None selects the synthetic head model; otherwise
    # {"speech": path, "noise": path} to M-channel WAV files
    hrir_source: dict | None = None
    head: HeadModel = field(default_factory=HeadModel)
    # spatially white microphone noise, dB re. the rendered point-noise power
    sensor_noise_db: float = -30.0
    ref_mic_left: int = 0
    ref_mic_right: int | None = None

    def __post_init__(self):
        if isinstance(self.head, dict):
            head = dict(self.head)
            if "mic_offsets" in head:
                head["mic_offsets"] = tuple(head["mic_offsets"])
            self.head = HeadModel(**head)
        if self.ref_mic_right is None:
            self.ref_mic_right = self.num_mics_left
        if self.num_mics < 2 or self.num_mics_left < 1 or self.num_mics_right < 1:
            raise ConfigError("need at least one microphone per side")
        for az in (self.speech_azimuth, self.noise_azimuth):
            if abs(az) > 90:
                raise ConfigError(f"azimuth {az} outside [-90, 90]")
        if self.speech_distance <= 0 or self.noise_distance <= 0:
            raise ConfigError("source distances must be positive")
        if not 0 <= self.ref_mic_left < self.num_mics_left:
            raise ConfigError("left reference mic must be on the left device")
        if not self.num_mics_left <= self.ref_mic_right < self.num_mics:
            raise ConfigError("right reference mic must be on the right device")

    @property
    def num_mics(self) -> int:
        return self.num_mics_left + self.num_mics_right

    def selection_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        q_l = np.zeros(self.num_mics)
        q_r = np.zeros(self.num_mics)
        q_l[self.ref_mic_left] = 1.0
        q_r[self.ref_mic_right] = 1.0
        return q_l, q_r

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head"]["mic_offsets"] = list(d["head"]["mic_offsets"])
        return d


def woodworth_delay(azimuth_deg: float, radius: float, c: float) -> float:
    """Woodworth interaural delay: left arrival minus right arrival, seconds."""
    th = np.deg2rad(azimuth_deg)
    return radius / c * (th + np.sin(th))


def _fractional_delay(delay: float, length: int, half_width: int = 16) -> np.ndarray:
    """Kaiser-windowed sinc interpolator centred at ``delay`` samples."""
    t = np.arange(length) - delay
    win = np.zeros(length)
    inside = np.abs(t) < half_width
    win[inside] = np.i0(8.0 * np.sqrt(1.0 - (t[inside] / half_width) ** 2)) / np.i0(8.0)
    return np.sinc(t) * win


def _shadow_cutoff(azimuth_deg: float, model: HeadModel) -> float:
    ratio = model.shadow_side_hz / model.shadow_front_hz
    return model.shadow_front_hz * ratio ** (abs(azimuth_deg) / 90.0)


def synth_hrir(azimuth: float, mic_positions=None, model: HeadModel | None = None,
               distance: float = 1.0) -> HrirSet:
    """Spherical-head HRIRs for one source position.

    Ear delays follow Woodworth's formula split symmetrically between the ears;
    each microphone adds a plane-wave delay from its front/back offset, and the
    ear facing away from the source gets a one-pole low-pass whose cutoff falls
    with |azimuth|.  Left-device mics come first, then right-device mics.
    """
    model = model or HeadModel()
    if abs(azimuth) > 90:
        raise ConfigError(f"azimuth {azimuth} outside [-90, 90]")
    offsets = model.mic_offsets if mic_positions is None else tuple(mic_positions)
    fs = model.sample_rate
    itd = woodworth_delay(azimuth, model.radius, model.speed_of_sound)
    ear_delay = {"L": 0.5 * itd, "R": -0.5 * itd}
    far = None if azimuth == 0 else ("R" if azimuth < 0 else "L")
    if far is not None:
        p = np.exp(-2.0 * np.pi * _shadow_cutoff(azimuth, model) / fs)
    th = np.deg2rad(azimuth)

    rows = []
    for side in ("L", "R"):
        for x in offsets:
            t = ear_delay[side] - x * np.cos(th) / model.speed_of_sound
            h = _fractional_delay(model.bulk_delay + t * fs, model.length)
            if side == far:
                h = sps.lfilter([1.0 - p], [1.0, -p], h)
            rows.append(h / distance)
    return HrirSet(np.array(rows), azimuth=azimuth, distance=distance)


def load_hrir(path, num_mics: int) -> HrirSet:
    data, _ = read_wav(path)
    if data.shape[1] != num_mics:
        raise DimensionError(
            f"channel count mismatch: {path} has {data.shape[1]} channels, expected {num_mics}"
        )
    return HrirSet(data.T.copy())


def render_source(dry, hrirs: HrirSet) -> np.ndarray:
    """Full linear convolution of ``dry`` with every response; ``(samples, mics)``."""
    dry = np.asarray(dry, dtype=float).ravel()
    if dry.size == 0 or hrirs.length == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(dry)):
        raise ValueError("dry signal must be finite")
    return np.stack([sps.convolve(dry, h, method="direct") for h in hrirs.responses], axis=1)


def speech_scale(x, v, snr_in: float) -> float:
    """Factor on ``x`` giving ``snr_in`` dB against ``v`` (powers summed over mics)."""
    p_x = np.sum(np.mean(np.asarray(x, dtype=float) ** 2, axis=0))
    p_v = np.sum(np.mean(np.asarray(v, dtype=float) ** 2, axis=0))
    if p_v == 0:
        raise ValueError("zero noise power")
    if p_x == 0:
        raise ValueError("zero speech power")
    return float(np.sqrt(10.0 ** (snr_in / 10.0) * p_v / p_x))


def mix_scene(x, v, snr_in: float, g_sq: float):
    """Scale speech to ``snr_in`` (noise held fixed), then apply the common gain.

    Returns ``(y, x_scaled, v_scaled)`` with ``y = g (gamma x + v)``.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape:
        raise DimensionError(f"speech {x.shape} and noise {v.shape} differ")
    gamma = speech_scale(x, v, snr_in)
    g = 10.0 ** (g_sq / 20.0)
    x_scaled = g * (gamma * x)
    v_scaled = g * v
    return x_scaled + v_scaled, x_scaled, v_scaled


def _third_octave_smooth(freqs, psd):
    out = np.empty_like(psd)
    lo, hi = freqs * 2 ** (-1 / 6), freqs * 2 ** (1 / 6)
    csum = np.concatenate([[0.0], np.cumsum(psd)])
    a = np.searchsorted(freqs, lo, side="left")
    b = np.searchsorted(freqs, hi, side="right")
    b = np.maximum(b, a + 1)
    out[:] = (csum[b] - csum[a]) / (b - a)
    return out


def gen_speech_shaped_noise(envelope_source, length: int, seed=None,
                            nperseg: int = 1024) -> np.ndarray:
    """Gaussian noise with the third-octave-smoothed spectrum of ``envelope_source``.

    Output has unit variance.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    src = np.asarray(envelope_source, dtype=float).ravel()
    if src.size < nperseg:
        raise ValueError(f"envelope source needs at least {nperseg} samples")
    freqs, psd = sps.welch(src, nperseg=nperseg)
    smooth = _third_octave_smooth(freqs, psd)
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(length)
    spec = np.fft.rfft(white)
    grid = np.fft.rfftfreq(length)
    shaped = np.fft.irfft(spec * np.sqrt(np.interp(grid, freqs, smooth)), n=length)
    shaped -= shaped.mean()
    return shaped / shaped.std()


def ltass_reference(length: int, sample_rate: float = 16000.0, seed=None) -> np.ndarray:
    """Noise with a long-term speech-like spectrum.

    Flat between 100 Hz and 500 Hz, second-order roll-off below and about
    -9 dB/octave above.
    """
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(length))
    f = np.fft.rfftfreq(length, d=1.0 / sample_rate)
    f_safe = np.maximum(f, 1e-3)
    hp = (f_safe / 100.0) ** 2 / (1.0 + (f_safe / 100.0) ** 2)
    lp = np.where(f_safe > 500.0, (f_safe / 500.0) ** -1.5, 1.0)
    return np.fft.irfft(spec * hp * lp, n=length)


def gen_speech_proxy(length: int, sample_rate: float = 16000.0, seed=None,
                     mod_hz: float = 4.0, depth: float = 0.8) -> np.ndarray:
    """Speech stand-in: speech-shaped noise with a 4 Hz amplitude modulation."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    ref_seed, noise_seed = ss.spawn(2)
    ref = ltass_reference(max(length, 16384), sample_rate, ref_seed)
    carrier = gen_speech_shaped_noise(ref, length, noise_seed)
    t = np.arange(length) / sample_rate
    env = 1.0 + depth * np.sin(2.0 * np.pi * mod_hz * t)
    out = carrier * env
    return out / out.std()


@dataclass
class Scene:
    config: SceneConfig
    y: np.ndarray
    x: np.ndarray
    v: np.ndarray
    gamma: float
    gain: float

    @property
    def measured_snr(self) -> float:
        return 10.0 * np.log10(np.sum(self.x ** 2) / np.sum(self.v ** 2))

    @property
    def mean_noise_power(self) -> float:
        return float(np.mean(np.mean(self.v ** 2, axis=0)))


def scene_hrirs(config: SceneConfig) -> tuple[HrirSet, HrirSet]:
    if config.hrir_source:
        return (load_hrir(config.hrir_source["speech"], config.num_mics),
                load_hrir(config.hrir_source["noise"], config.num_mics))
    if config.num_mics_left != config.num_mics_right or \
            config.num_mics_left != len(config.head.mic_offsets):
        raise ConfigError("synthetic HRIRs need one head-model mic offset per mic on each side")
    head = HeadModel(**{**asdict(config.head), "sample_rate": config.sample_rate})
    return (synth_hrir(config.speech_azimuth, model=head, distance=config.speech_distance),
            synth_hrir(config.noise_azimuth, model=head, distance=config.noise_distance))


def build_scene(config: SceneConfig, seed=0, speech=None, noise=None) -> Scene:
    """Render speech and noise, normalise the noise to unit mean mic power, mix.

    ``speech``/``noise`` override the built-in dry generators.  The same seed
    gives the same unscaled signals, so scenes differing only in
    ``lombard_gain_sq`` are exact multiples of each other.
    """
    n = int(round(config.duration * config.sample_rate))
    streams = np.random.SeedSequence(seed).spawn(3)
    if speech is None:
        speech = gen_speech_proxy(n, config.sample_rate, streams[0])
    if noise is None:
        ref = ltass_reference(max(n, 16384), config.sample_rate, streams[1])
        noise = gen_speech_shaped_noise(ref, n, streams[1].spawn(1)[0])
    h_s, h_n = scene_hrirs(config)
    x = render_source(speech, h_s)
    v = render_source(noise, h_n)
    m = min(len(x), len(v))
    x, v = x[:m], v[:m]
    if np.isfinite(config.sensor_noise_db):
        p_point = np.mean(v ** 2)
        rng = np.random.default_rng(streams[2])
        v = v + np.sqrt(p_point * 10 ** (config.sensor_noise_db / 10)) * rng.standard_normal(v.shape)
    v = v / np.sqrt(np.mean(np.mean(v ** 2, axis=0)))
    y, xs, vs = mix_scene(x, v, config.snr_in, config.lombard_gain_sq)
    return Scene(config, y, xs, vs, speech_scale(x, v, config.snr_in),
                 float(10 ** (config.lombard_gain_sq / 20)))
