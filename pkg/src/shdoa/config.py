"""Experiment configuration: TOML parsing, defaults and cross-field validation.

Every section maps to a dataclass. Scalar fields marked as sweepable accept
either a value or a list of values; lists become sweep axes of the run.
Angles in files are in degrees.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
import math
from pathlib import Path
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import sh
from .errors import ConfigurationError
from .spectral import STFTParams

PRESETS = ("fig_c1a", "fig_c1b", "fig_c2", "fig_e2_e3", "fig_e6", "fig_e7", "fig_e8")
GEOMETRIES = ("near_uniform", "equiangular_13", "custom", "file")
ESTIMATOR_METHODS = ("none", "compensated", "enhanced")


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass
class ArrayConfig:
    geometry: str = "near_uniform"
    mics: int = 24
    radius: float = 0.06
    mics_deg: list = field(default_factory=list)
    geometry_file: str = ""
    steering_file: str = ""


@dataclass
class STFTConfig:
    fs: float = 10000.0
    frame_length: int = 256
    hop: int = 128
    window: str = "hamming"

    def params(self) -> STFTParams:
        return STFTParams(self.frame_length, self.hop, self.window, self.fs)


@dataclass
class MotionConfig:
    mode: str = "rotate_z"
    angular_velocity: list = field(default_factory=lambda: [0.0])
    filter_update_interval: float = 1e-3
    trajectory_file: str = ""


@dataclass
class SourceConfig:
    kind: list = field(default_factory=lambda: ["wideband"])
    frequency: float = 3100.0
    am_level: list = field(default_factory=lambda: [0.0])
    fm_deviation: list = field(default_factory=lambda: [0.0])
    mod_rate: float = 3.0
    amplitude: float = 1.0
    band: list = field(default_factory=lambda: [300.0, 3400.0])
    directions: object = field(default_factory=lambda: [[90.0, 0.0]])


@dataclass
class NoiseConfig:
    snr: list = field(default_factory=lambda: [10.0])
    bandwidth: str = "wideband"


@dataclass
class EstimatorConfig:
    methods: list = field(default_factory=lambda: ["none", "compensated"])
    order: int = 3
    frames: int = 60
    combined_frames: list = field(default_factory=lambda: [1])
    sv_threshold: float = 1.0 / 3.0
    freq_range: list = field(default_factory=lambda: [1800.0, 2700.0])
    analysis_frequency: float = 0.0
    align: str = "source"
    sources: int = 1
    grid_resolution: float = 2.0
    whitening: bool = False
    speed_of_sound: float = 343.0


@dataclass
class ErankConfig:
    order: int = 6
    frequencies: list = field(default_factory=lambda: [2000.0])
    frames: int = 2
    rotation: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    translation: list = field(default_factory=lambda: [0.0, 90.0, 90.0])
    sweep: str = "alpha"
    values: list = field(default_factory=list)
    modes: list = field(default_factory=lambda: ["configured"])
    sv_threshold: float = 1.0 / 3.0
    speed_of_sound: float = 343.0


@dataclass
class OutputConfig:
    directory: str = "results"
    spectra: bool = True


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    study: str = "doa"
    seed: int = 0
    trials: int = 1
    array: ArrayConfig = field(default_factory=ArrayConfig)
    stft: STFTConfig = field(default_factory=STFTConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    erank: ErankConfig = field(default_factory=ErankConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: str = field(default=".", repr=False, compare=False)
    warnings: list = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("base_dir")
        out.pop("warnings")
        return out

    def resolve_path(self, value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def analysis_bins(self) -> list[int]:
        p = self.stft.params()
        est = self.estimator
        if "enhanced" in est.methods or est.analysis_frequency:
            return [p.nearest_bin(est.analysis_frequency or self.source.frequency)]
        return p.bins_in_range(*est.freq_range)


_SECTIONS = {
    "array": ArrayConfig, "stft": STFTConfig, "motion": MotionConfig, "source": SourceConfig,
    "noise": NoiseConfig, "estimator": EstimatorConfig, "erank": ErankConfig,
    "output": OutputConfig,
}
_LIST_FIELDS = {"angular_velocity", "kind", "am_level", "fm_deviation", "snr", "methods",
                "combined_frames", "frequencies", "modes"}


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError("expected true or false", path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"expected an integer, got {value!r}", path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"expected a string, got {value!r}", path)
        return value
    return value


def _section(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigurationError("expected a table", path)
    obj = cls()
    names = {f.name for f in fields(cls)}
    for key, value in data.items():
        sub = f"{path}.{key}"
        if key not in names:
            raise ConfigurationError("unknown key", sub)
        default = getattr(obj, key)
        if key in _LIST_FIELDS:
            items = _as_list(value)
            if not items:
                raise ConfigurationError("list must not be empty", sub)
            proto = default[0] if default else value
            value = [_coerce(v, proto, f"{sub}[{i}]") for i, v in enumerate(items)]
        else:
            value = _coerce(value, default, sub)
        setattr(obj, key, value)
    return obj


def config_from_dict(data: dict, base_dir=".") -> ExperimentConfig:
    cfg = ExperimentConfig(base_dir=str(base_dir))
    for key, value in data.items():
        if key in _SECTIONS:
            setattr(cfg, key, _section(_SECTIONS[key], value, key))
        elif key in ("name", "study"):
            setattr(cfg, key, _coerce(value, "", key))
        elif key in ("seed", "trials"):
            setattr(cfg, key, _coerce(value, 0, key))
        else:
            raise ConfigurationError("unknown key", key)
    validate(cfg)
    return cfg


def load_config(source) -> ExperimentConfig:
    """Load a config file, or a shipped preset by name."""
    path = Path(source)
    if not path.exists() and str(source) in PRESETS:
        text = resources.files("shdoa.presets").joinpath(f"{source}.toml").read_text()
        base = "."
    else:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc.strerror}", str(source)) from None
        base = path.parent
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML: {exc}", str(source)) from None
    return config_from_dict(data, base)


def dump_config(cfg: ExperimentConfig) -> str:
    import tomli_w
    return tomli_w.dumps(cfg.to_dict())


def with_overrides(cfg: ExperimentConfig, seed=None, trials=None, out=None) -> ExperimentConfig:
    cfg = replace(cfg, warnings=[])
    if seed is not None:
        cfg.seed = seed
    if trials is not None:
        cfg.trials = trials
    if out is not None:
        cfg.output = replace(cfg.output, directory=str(out))
    validate(cfg)
    return cfg


# ---------------------------------------------------------------------------
# validation

def _check(cond, message, path):
    if not cond:
        raise ConfigurationError(message, path)


def parse_directions(spec, path="source.directions") -> list:
    """Directions in degrees: a list of [theta, phi] pairs or ``"random:N"``."""
    if isinstance(spec, str):
        kind, _, count = spec.partition(":")
        _check(kind == "random" and count.isdigit() and int(count) > 0,
               "expected a list of [theta, phi] pairs or 'random:N'", path)
        return spec
    _check(isinstance(spec, list) and spec, "expected a non-empty list", path)
    for i, d in enumerate(spec):
        ok = (isinstance(d, list) and len(d) == 2
              and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in d))
        _check(ok, "expected [theta, phi] in degrees", f"{path}[{i}]")
        _check(0 <= d[0] <= 180, "polar angle must lie in [0, 180] degrees", f"{path}[{i}]")
    return spec


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Raise :class:`ConfigurationError` on the first problem; collect warnings."""
    cfg.warnings = []
    _check(cfg.study in ("doa", "erank"), "study must be 'doa' or 'erank'", "study")
    _check(cfg.trials >= 1, "at least one trial is required", "trials")
    _check(cfg.seed >= 0, "seed must be non-negative", "seed")

    a = cfg.array
    _check(a.geometry in GEOMETRIES, f"geometry must be one of {GEOMETRIES}", "array.geometry")
    _check(a.radius > 0, "radius must be positive", "array.radius")
    if a.geometry == "custom":
        _check(len(a.mics_deg) >= 1, "custom geometry needs mics_deg", "array.mics_deg")
    if a.geometry == "file":
        _check(bool(a.geometry_file), "file geometry needs geometry_file", "array.geometry_file")

    s = cfg.stft
    try:
        params = s.params()
    except ValueError as exc:
        raise ConfigurationError(str(exc), "stft") from None
    _check(s.frame_length >= 2, "frame_length must be at least 2", "stft.frame_length")
    cfg.warnings.extend(f"stft: {w}" for w in params.check_duration())
    if a.steering_file:
        from .steering import load_steering
        st = load_steering(cfg.resolve_path(a.steering_file))
        if st.fs and st.fs != s.fs:
            raise ConfigurationError(
                f"steering file sampled for fs={st.fs:g} Hz, config uses {s.fs:g} Hz",
                "array.steering_file")

    if cfg.study == "erank":
        return _validate_erank(cfg)

    m = cfg.motion
    _check(m.mode in ("static", "rotate_z", "trajectory"),
           "mode must be static, rotate_z or trajectory", "motion.mode")
    _check(m.filter_update_interval > 0, "must be positive", "motion.filter_update_interval")
    if m.mode == "trajectory":
        _check(bool(m.trajectory_file), "trajectory mode needs trajectory_file",
               "motion.trajectory_file")

    src = cfg.source
    for i, kind in enumerate(src.kind):
        _check(kind in ("tone", "am_tone", "fm_tone", "wideband"), "unknown source kind",
               f"source.kind[{i}]")
    nyq = s.fs / 2
    if any(k != "wideband" for k in src.kind):
        _check(0 < src.frequency < nyq, f"frequency must lie in (0, fs/2 = {nyq:g})",
               "source.frequency")
    if "fm_tone" in src.kind:
        _check(src.frequency + max(src.fm_deviation) < nyq, "FM peak frequency aliases",
               "source.fm_deviation")
    _check(min(src.am_level) >= 0, "AM level must be non-negative", "source.am_level")
    _check(src.mod_rate >= 0, "modulation rate must be non-negative", "source.mod_rate")
    _check(len(src.band) == 2 and 0 <= src.band[0] < src.band[1] < nyq,
           "band must be [low, high] below fs/2", "source.band")
    parse_directions(src.directions)

    n = cfg.noise
    _check(n.bandwidth in ("wideband", "narrowband"), "bandwidth must be wideband or narrowband",
           "noise.bandwidth")
    for i, snr in enumerate(n.snr):
        _check(not math.isnan(snr), "SNR must not be NaN", f"noise.snr[{i}]")

    e = cfg.estimator
    for i, meth in enumerate(e.methods):
        _check(meth in ESTIMATOR_METHODS, f"method must be one of {ESTIMATOR_METHODS}",
               f"estimator.methods[{i}]")
    _check(e.order >= 0, "order must be non-negative", "estimator.order")
    size = sh.num_coeffs(e.order)
    _check(1 <= e.sources < size, f"S must satisfy 1 <= S < (N+1)^2 = {size}",
           "estimator.sources")
    _check(e.frames >= 1, "at least one frame is required", "estimator.frames")
    for i, count in enumerate(e.combined_frames):
        _check(1 <= count <= e.frames,
               f"I={count} needs I*J <= {e.frames} available frames with J >= 1",
               f"estimator.combined_frames[{i}]")
    _check(0 <= e.sv_threshold < 1, "svThreshold must lie in [0, 1)", "estimator.sv_threshold")
    _check(e.align in ("source", "bin"), "align must be 'source' or 'bin'", "estimator.align")
    _check(0 < e.grid_resolution <= 90, "grid resolution must lie in (0, 90]",
           "estimator.grid_resolution")
    _check(e.speed_of_sound > 0, "must be positive", "estimator.speed_of_sound")
    if e.analysis_frequency:
        _check(0 < e.analysis_frequency < nyq, "must lie below fs/2",
               "estimator.analysis_frequency")
    else:
        _check(len(e.freq_range) == 2 and e.freq_range[0] <= e.freq_range[1],
               "freq_range must be [low, high]", "estimator.freq_range")
        _check(bool(cfg.analysis_bins), "no STFT bin centre inside freq_range",
               "estimator.freq_range")
    if "enhanced" in e.methods and not e.analysis_frequency:
        _check(all(k != "wideband" for k in src.kind),
               "the enhanced method needs analysis_frequency for wideband sources",
               "estimator.analysis_frequency")
    if a.geometry == "near_uniform" or a.geometry == "equiangular_13":
        mics = 13 if a.geometry == "equiangular_13" else a.mics
        if mics < size:
            cfg.warnings.append(
                f"estimator: {mics} microphones for {size} coefficients; the stationary "
                "system is underdetermined")
    return cfg


def _validate_erank(cfg):
    r = cfg.erank
    _check(r.order >= 0, "order must be non-negative", "erank.order")
    _check(r.frames >= 1, "at least one frame is required", "erank.frames")
    _check(len(r.rotation) == 3, "rotation is [alpha, beta, gamma] in degrees", "erank.rotation")
    _check(len(r.translation) == 3 and r.translation[0] >= 0,
           "translation is [r (m), theta, phi (deg)] with r >= 0", "erank.translation")
    _check(r.sweep in ("alpha", "beta", "gamma", "r", "frequency", "frames"),
           "sweep must be alpha, beta, gamma, r, frequency or frames", "erank.sweep")
    for i, f in enumerate(r.frequencies):
        _check(0 < f < cfg.stft.fs / 2, "frequency must lie in (0, fs/2)",
               f"erank.frequencies[{i}]")
    for i, mode in enumerate(r.modes):
        _check(mode in ("configured", "rotation", "translation", "combined"),
               "mode must be configured, rotation, translation or combined",
               f"erank.modes[{i}]")
    if r.sweep == "frames":
        _check(all(isinstance(v, int) and v >= 1 for v in r.values),
               "frame counts must be positive integers", "erank.values")
    return cfg
