"""Experiment orchestration and the command-line interface.

Subcommands: ``synth``, ``design``, ``process``, ``metrics``, ``sweep``.
Exit codes: 0 success, 1 bad configuration or usage, 2 design failure,
3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .costs import FilterBank, PenaltyKind
from .designer import BetaProfile, DesignSpec, design_beta
from .errors import ConfigError, DesignFailure, SolverError
from .scene import SceneConfig, build_scene
from .solver import MethodSpec, SolverOptions, solve_scene
from .stats import PowerProfile, SceneStats, estimate_coherence, estimate_speech_coherence, \
    scene_statistics
from .stft import StftConfig, apply_filters, stft_analyze, stft_synthesize
from .wavio import read_wav, write_wav

log = logging.getLogger("binaural_mwf")

METHODS = ("MWF", "MWF-ITF", "MWF-ITF-R")
AXES = ("lombard", "snr")
EXIT_OK, EXIT_CONFIG, EXIT_DESIGN, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4

# sweep CSV layout; new columns go at the end
CSV_COLUMNS = ("axis", "value", "method", "beta", "seeds", "delta_snr_l", "delta_snr_r",
               "delta_ild_s", "delta_ild_n", "delta_itd_s", "delta_itd_n", "eta",
               "g_bar_sq", "snr_bar_in", "k_s", "unconverged_bins", "flags")


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    methods: tuple = METHODS
    kinds: tuple = ("ITF",)
    design: DesignSpec = field(default_factory=DesignSpec)
    axis: str = "lombard"
    axis_start: float = 0.0
    axis_stop: float = 30.0
    axis_step: float = 5.0
    seeds: tuple = (0, 1, 2, 3)
    output_dir: str = "out"
    solver: dict = field(default_factory=dict)  # SolverOptions overrides
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.kinds = tuple(PenaltyKind.parse(k).value for k in self.kinds)
        self.seeds = tuple(int(s) for s in self.seeds)
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}")
        if not self.axis_step > 0:
            raise ConfigError("axis_step must be positive")
        if self.axis_stop < self.axis_start:
            raise ConfigError("empty sweep range")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.solver_options()

    def solver_options(self) -> SolverOptions:
        try:
            return SolverOptions(**self.solver)
        except TypeError as exc:
            raise ConfigError(f"bad solver options: {exc}") from None

    def axis_points(self) -> np.ndarray:
        n = int(math.floor((self.axis_stop - self.axis_start) / self.axis_step + 1e-9))
        return self.axis_start + self.axis_step * np.arange(n + 1)

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.to_dict(),
            "stft": dataclasses.asdict(self.stft),
            "methods": list(self.methods),
            "kinds": list(self.kinds),
            "design": dataclasses.asdict(self.design),
            "axis": self.axis,
            "axis_start": self.axis_start,
            "axis_stop": self.axis_stop,
            "axis_step": self.axis_step,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "solver": dict(self.solver),
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        try:
            if "scene" in d:
                d["scene"] = SceneConfig(**d["scene"])
            if "stft" in d:
                d["stft"] = StftConfig(**d["stft"])
            if "design" in d:
                d["design"] = DesignSpec(**d["design"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None

    def digest(self) -> str:
        """Hash of everything that affects results (not paths or pool size)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# -- scenes and statistics ----------------------------------------------------

def scene_at(config: ExperimentConfig, axis: str, value: float) -> SceneConfig:
    """Scene configuration at one sweep point.

    The Lombard axis sets the common gain at the configured SNR.  The SNR
    axis holds the speech level of the design point and lowers the noise:
    the gain drops by the SNR increase relative to ``design.snr_worst``.
    """
    base = config.scene
    if axis == "lombard":
        return dataclasses.replace(base, lombard_gain_sq=float(value))
    shift = float(value) - config.design.snr_worst
    return dataclasses.replace(base, snr_in=float(value),
                               lombard_gain_sq=base.lombard_gain_sq - shift)


def oracle_statistics(scene, stft: StftConfig) -> SceneStats:
    """Statistics from the separately available speech and noise images."""
    q_l, q_r = scene.config.selection_vectors()
    y, v, x = (stft_analyze(a, stft) for a in (scene.y, scene.v, scene.x))
    return scene_statistics(y, v, x, q_l, q_r)


def stats_for(config: ExperimentConfig, scene_cfg: SceneConfig, seed) -> SceneStats:
    return oracle_statistics(build_scene(scene_cfg, seed=seed), config.stft)


def design_scene(config: ExperimentConfig) -> SceneConfig:
    return dataclasses.replace(config.scene, snr_in=config.design.snr_worst)


def design_profile(config: ExperimentConfig, seed=None) -> BetaProfile:
    """Design beta on the worst-SNR scene; records the reference noise power."""
    seed = config.seeds[0] if seed is None else seed
    stats = stats_for(config, design_scene(config), seed)
    profile = design_beta(stats, config.kinds, config.design, config.solver_options(),
                          config.stft.fft_bins, config.stft.sample_rate)
    profile.meta["g_sq_ref"] = stats.power.per_bin().tolist()
    profile.meta["seed"] = int(seed)
    profile.meta["lombard_gain_sq"] = config.scene.lombard_gain_sq
    return profile


def reference_power(config: ExperimentConfig, profile: BetaProfile) -> np.ndarray:
    if "g_sq_ref" in profile.meta:
        return np.asarray(profile.meta["g_sq_ref"], dtype=float)
    return stats_for(config, design_scene(config), config.seeds[0]).power.per_bin()


def method_spec(name: str, profile: BetaProfile | None, kinds, g_sq_ref=None) -> MethodSpec:
    """``MWF-ITF`` uses fixed weights equal to the dynamic ones at ``g_sq_ref``."""
    if name == "MWF":
        return MethodSpec.mwf()
    if profile is None:
        raise ConfigError(f"{name} needs a beta profile")
    kinds = tuple(profile.meta.get("kinds", kinds))
    if name == "MWF-ITF-R":
        if not profile.dynamic:
            raise ConfigError("MWF-ITF-R needs a dynamic beta profile")
        return MethodSpec.mwf_itf_r(profile.beta, kinds)
    if name == "MWF-ITF":
        beta = profile.beta
        if profile.dynamic:
            if g_sq_ref is None:
                raise ConfigError("MWF-ITF from a dynamic profile needs a reference power")
            beta = profile.frozen(g_sq_ref).beta
        return MethodSpec.mwf_itf(beta, kinds)
    raise ConfigError(f"unknown method {name!r}")


def run_method(stats: SceneStats, spec: MethodSpec, opts: SolverOptions,
               stft: StftConfig = StftConfig()):
    """Solve and score one method; returns ``(FilterBank, Diagnostics, MetricReport)``."""
    w, diag = solve_scene(stats, spec, opts)
    alpha = spec.alpha(stats.power.per_bin())
    report = metrics.evaluate(w, stats, stft.fft_bins, stft.sample_rate, diag, alpha)
    bad = np.flatnonzero(~diag.converged)
    if bad.size:
        report.flags.append(f"unconverged={','.join(map(str, bad))}")
    return w, diag, report


# -- sweep ----------------------------------------------------------------------

@dataclass
class SweepResult:
    rows: list
    provenance: dict

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(CSV_COLUMNS)
            for row in self.rows:
                wr.writerow([_fmt(row[c]) for c in CSV_COLUMNS])

    @staticmethod
    def read_csv(path) -> list:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _beta_label(profile):
    if profile is None:
        return "0"
    s = profile.scalar
    return repr(s) if s is not None else "per-bin"


def _sweep_point(task):
    """All method rows for one axis point, metrics averaged over seeds."""
    cfg_dict, profile_dict, g_sq_ref, value = task
    config = ExperimentConfig.from_dict(cfg_dict)
    profile = None
    if profile_dict is not None:
        profile = BetaProfile(np.array(profile_dict["beta"]), profile_dict["dynamic"],
                              profile_dict["meta"])
    opts = config.solver_options()
    scene_cfg = scene_at(config, config.axis, value)
    reports = {m: [] for m in config.methods}
    notes = {m: [] for m in config.methods}
    unconverged = {m: 0 for m in config.methods}
    for seed in config.seeds:
        stats = stats_for(config, scene_cfg, seed)
        for m in config.methods:
            try:
                spec = method_spec(m, profile if m != "MWF" else None, config.kinds, g_sq_ref)
                _, diag, rep = run_method(stats, spec, opts, config.stft)
            except (SolverError, ArithmeticError, ConfigError) as exc:
                notes[m].append(f"seed {seed}: {type(exc).__name__}: {exc}")
                continue
            reports[m].append(rep)
            unconverged[m] += int(np.sum(~diag.converged))
            notes[m].extend(f"seed {seed}: {f}" for f in rep.flags
                            if not f.startswith("unconverged"))
    rows = []
    for m in config.methods:
        row = {"axis": config.axis, "value": float(value), "method": m,
               "beta": "0" if m == "MWF" else _beta_label(profile),
               "seeds": len(reports[m]), "unconverged_bins": unconverged[m],
               "flags": " | ".join(notes[m])}
        for f in metrics.MetricReport.FIELDS:
            vals = [getattr(r, f) for r in reports[m]]
            if f == "k_s":
                row[f] = vals[0] if vals else ""
            else:
                row[f] = float(np.mean(vals)) if vals else float("nan")
        rows.append(row)
    return rows


def run_sweep(config: ExperimentConfig, profile: BetaProfile | None = None,
              workers: int | None = None) -> SweepResult:
    """Rows for every axis point and method.

    Without ``profile`` one is designed first (only if a penalised method
    is requested).  Points are independent and may run in a process pool;
    row contents do not depend on the pool size.
    """
    workers = config.workers if workers is None else workers
    if profile is None and any(m != "MWF" for m in config.methods):
        profile = design_profile(config)
    g_sq_ref = reference_power(config, profile) if profile is not None else None
    cfg_dict = config.to_dict()
    prof_dict = profile.to_dict() if profile is not None else None
    tasks = [(cfg_dict, prof_dict, g_sq_ref, float(v)) for v in config.axis_points()]
    if workers == 1:
        chunks = [_sweep_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_point, tasks))
    rows = [r for chunk in chunks for r in chunk]
    provenance = {"config_hash": config.digest(), "seeds": list(config.seeds),
                  "axis": config.axis, "beta": prof_dict}
    return SweepResult(rows, provenance)


# -- commands -------------------------------------------------------------------

def cmd_synth(config: ExperimentConfig, seed: int, out: Path, speech_wav=None,
              noise_wav=None) -> dict:
    """Write x/v/y WAVs, coherence dumps and a JSON sidecar."""
    speech = _mono(speech_wav) if speech_wav else None
    noise = _mono(noise_wav) if noise_wav else None
    scene = build_scene(config.scene, seed=seed, speech=speech, noise=noise)
    out.mkdir(parents=True, exist_ok=True)
    fs = config.scene.sample_rate
    for name in ("x", "v", "y"):
        write_wav(out / f"{name}.wav", getattr(scene, name), fs)
    stats = oracle_statistics(scene, config.stft)
    stats.phi_y.to_csv(out / "phi_y.csv")
    stats.phi_v.to_csv(out / "phi_v.csv")
    stats.phi_x.to_csv(out / "phi_x.csv")
    side = {"seed": seed, "gamma": scene.gamma, "gain": scene.gain,
            "lombard_gain_sq_db": config.scene.lombard_gain_sq,
            "snr_in_db": config.scene.snr_in, "measured_snr_db": scene.measured_snr,
            "config": config.to_dict()}
    with open(out / "scene.json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return side


def _mono(path):
    data, _ = read_wav(path)
    return data.mean(axis=1)


def statistics_from_wavs(y, v, x, q_l, q_r, stft: StftConfig) -> SceneStats:
    """Statistics from a noisy recording and a noise-only epoch.

    ``x`` (the clean speech image) is optional; without it the speech power
    is taken from the traces of the repaired speech coherence.
    """
    if x is not None:
        yf, vf, xf = (stft_analyze(a, stft) for a in (y, v, x))
        return scene_statistics(yf, vf, xf, q_l, q_r)
    yf, vf = stft_analyze(y, stft), stft_analyze(v, stft)
    phi_y = estimate_coherence(yf, "noisy")
    phi_v = estimate_coherence(vf, "noise")
    phi_x = estimate_speech_coherence(phi_y, phi_v)
    g_sq = np.broadcast_to(phi_v.trace(), (yf.num_frames, phi_v.num_bins)).copy()
    sx = np.broadcast_to(phi_x.trace(), g_sq.shape).copy()
    return SceneStats(phi_y, phi_v, phi_x, PowerProfile(g_sq, sx, g_sq),
                      np.asarray(q_l, dtype=float), np.asarray(q_r, dtype=float))


def _load_inputs(src: Path, need_x=False):
    y, fs = read_wav(src / "y.wav")
    v, _ = read_wav(src / "v.wav")
    x = None
    if (src / "x.wav").exists():
        x, _ = read_wav(src / "x.wav")
    elif need_x:
        raise FileNotFoundError(src / "x.wav")
    return y, v, x, fs


def cmd_process(config: ExperimentConfig, method: str, profile: BetaProfile | None,
                src: Path, out: Path, passthrough: bool = False):
    """Filter ``y.wav`` from ``src``; writes ``out.wav`` (L, R) and ``filters.csv``."""
    y, v, x, fs = _load_inputs(src)
    if fs != config.stft.sample_rate:
        raise ConfigError(f"input rate {fs} differs from the STFT rate {config.stft.sample_rate}")
    q_l, q_r = config.scene.selection_vectors()
    stats = statistics_from_wavs(y, v, x, q_l, q_r, config.stft)
    if passthrough:
        w = FilterBank.selection(q_l, q_r, stats.num_bins)
        report = metrics.evaluate(w, stats, config.stft.fft_bins, config.stft.sample_rate)
    else:
        g_ref = reference_power(config, profile) if method == "MWF-ITF" else None
        spec = method_spec(method, profile, config.kinds, g_ref)
        w, _, report = run_method(stats, spec, config.solver_options(), config.stft)
    out_frames = apply_filters(stft_analyze(y, config.stft), w)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "out.wav", stft_synthesize(out_frames), fs)
    w.to_csv(out / "filters.csv")
    _write_report(out / "report.csv", report)
    return w, report


def cmd_metrics(config: ExperimentConfig, src: Path, filters: Path, out: Path):
    y, v, x, _ = _load_inputs(src, need_x=True)
    q_l, q_r = config.scene.selection_vectors()
    stats = statistics_from_wavs(y, v, x, q_l, q_r, config.stft)
    w = FilterBank.from_csv(filters)
    report = metrics.evaluate(w, stats, config.stft.fft_bins, config.stft.sample_rate)
    _write_report(out, report)
    return report


def _write_report(path, report):
    row = report.row()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(list(row))
        wr.writerow([_fmt(v) for v in row.values()])


# -- CLI ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="binaural-mwf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="experiment config (JSON)")
        sp.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
        sp.add_argument("--seed", type=int, help="scene seed (default: first config seed)")

    sp = sub.add_parser("synth", help="render a scene to WAV files")
    common(sp)
    sp.add_argument("--speech-wav", type=Path, help="dry mono speech instead of the generator")
    sp.add_argument("--noise-wav", type=Path, help="dry mono noise instead of the generator")

    sp = sub.add_parser("design", help="choose beta at the worst-case SNR")
    common(sp)

    sp = sub.add_parser("process", help="filter a noisy recording")
    common(sp)
    sp.add_argument("--input", type=Path, help="directory with y.wav, v.wav (and x.wav)")
    sp.add_argument("--method", choices=METHODS, default="MWF-ITF-R")
    sp.add_argument("--beta-profile", type=Path)
    sp.add_argument("--passthrough", action="store_true",
                    help="use the reference microphones unfiltered (W = Q)")

    sp = sub.add_parser("metrics", help="score a filter dump on a synthesized scene")
    common(sp)
    sp.add_argument("--input", type=Path, help="directory with x.wav, v.wav and y.wav")
    sp.add_argument("--filters", type=Path, required=True)

    sp = sub.add_parser("sweep", help="Lombard-gain or input-SNR sweep to CSV")
    common(sp)
    sp.add_argument("--beta-profile", type=Path)
    sp.add_argument("--axis", choices=AXES)
    sp.add_argument("--workers", type=int)
    return p


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "axis", None):
        config = dataclasses.replace(config, axis=args.axis)
    if getattr(args, "workers", None):
        config = dataclasses.replace(config, workers=args.workers)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = _load_config(args)
        out = args.out or Path(config.output_dir)
        seed = config.seeds[0] if args.seed is None else args.seed
        if args.command == "synth":
            side = cmd_synth(config, seed, out, args.speech_wav, args.noise_wav)
            print(f"wrote {out}: measured SNR {side['measured_snr_db']:.2f} dB")
        elif args.command == "design":
            profile = design_profile(config, seed)
            out.mkdir(parents=True, exist_ok=True)
            profile.save(out / "beta_profile.json")
            m = profile.meta
            print(f"beta={_beta_label(profile)} dILD_N={m['achieved_ild_db']:.3f} dB "
                  f"dITD_N={m['achieved_itd_ms']:.4f} ms")
        elif args.command == "process":
            profile = BetaProfile.load(args.beta_profile) if args.beta_profile else None
            _, rep = cmd_process(config, args.method, profile, args.input or out, out,
                                 args.passthrough)
            print(f"dSNR L/R {rep.delta_snr_l:.2f}/{rep.delta_snr_r:.2f} dB, "
                  f"dILD_N {rep.delta_ild_n:.3f} dB, dITD_N {rep.delta_itd_n:.4f} ms")
        elif args.command == "metrics":
            cmd_metrics(config, args.input or out, args.filters, out / "metrics.csv")
            print(f"wrote {out / 'metrics.csv'}")
        elif args.command == "sweep":
            profile = BetaProfile.load(args.beta_profile) if args.beta_profile else None
            result = run_sweep(config, profile)
            result.write_csv(out / "sweep.csv")
            with open(out / "sweep.json", "w") as fh:
                json.dump(result.provenance, fh, indent=2, sort_keys=True)
                fh.write("\n")
            print(f"wrote {len(result.rows)} rows to {out / 'sweep.csv'}")
    except DesignFailure as exc:
        print(f"design failed: {exc}; best beta {exc.best_beta}, "
              f"dILD_N {exc.best_ild}, dITD_N {exc.best_itd}", file=sys.stderr)
        return EXIT_DESIGN
    except SolverError as exc:
        print(f"solver failed (bin {exc.bin_index}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
