"""Study orchestration: synthesis, the three estimator paths and error statistics.

A DoA study enumerates *synthesis units* (angular velocity x source
variant x source direction). Each unit is synthesised once; every trial
then adds its own noise realisation, shared across all velocities, source
variants and SNRs (common random numbers), so that differences between
conditions are not masked by noise draws. Units are independent and may
run in a process pool; results are ordered by unit index.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import itertools
import logging
import math

import numpy as np

from . import estimation as est
from .config import ExperimentConfig, parse_directions
from .errors import ConfigurationError, ShdoaError
from .motion import (EulerAngles, FramePose, Trajectory, TranslationVec, compose_transform,
                     read_trajectory)
from .simulator import (MotionSpec, NoiseSpec, SourceSpec, make_rng, noise_scale,
                        synth_moving_array)
from .spectral import STFTFrameSet, STFTParams, stft, time_align
from .steering import (ArrayGeometry, custom_geometry, equiangular_13, load_geometry,
                       load_steering, near_uniform, rigid_sphere_steering)

log = logging.getLogger(__name__)

#: seconds of acquisition assumed by the half-angle bias reference line
HALF_ANGLE_ACQUISITION = 0.75


# ---------------------------------------------------------------------------
# building blocks from a config

def build_geometry(cfg: ExperimentConfig) -> ArrayGeometry:
    a = cfg.array
    if a.geometry == "near_uniform":
        return near_uniform(a.mics, a.radius)
    if a.geometry == "equiangular_13":
        return equiangular_13(a.radius)
    if a.geometry == "custom":
        return custom_geometry(a.radius, a.mics_deg)
    return load_geometry(cfg.resolve_path(a.geometry_file))


def build_steering(cfg: ExperimentConfig, geom: ArrayGeometry | None = None) -> est.SteeringProvider:
    p = cfg.stft.params()
    c = cfg.estimator.speed_of_sound
    if cfg.array.steering_file:
        st = load_steering(cfg.resolve_path(cfg.array.steering_file))
        return est.SteeringProvider(p.frame_length, p.fs, steering_set=st, speed_of_sound=c)
    return est.SteeringProvider(p.frame_length, p.fs, geometry=geom or build_geometry(cfg),
                                speed_of_sound=c)


def resolve_directions(cfg: ExperimentConfig) -> list[tuple[float, float]]:
    """Source directions in radians."""
    spec = parse_directions(cfg.source.directions)
    if isinstance(spec, str):
        count = int(spec.split(":")[1])
        rng = make_rng(cfg.seed, 2)
        z = rng.uniform(-1.0, 1.0, count)
        phi = rng.uniform(-np.pi, np.pi, count)
        return [(float(math.acos(zz)), float(pp)) for zz, pp in zip(z, phi)]
    return [(math.radians(t), math.radians(p)) for t, p in spec]


def frame_trajectory(cfg: ExperimentConfig, velocity: float, n_frames: int) -> Trajectory:
    """Per-frame array poses relative to frame 0."""
    if cfg.motion.mode == "trajectory":
        traj = read_trajectory(cfg.resolve_path(cfg.motion.trajectory_file))
        if len(traj) < n_frames:
            raise ConfigurationError(
                f"trajectory has {len(traj)} poses, {n_frames} frames needed",
                "motion.trajectory_file")
        return Trajectory(traj.poses[:n_frames], traj.convention)
    p = cfg.stft.params()
    step = math.radians(velocity) * p.hop / p.fs if cfg.motion.mode == "rotate_z" else 0.0
    return Trajectory.rotate_z(n_frames, step)


def motion_spec(cfg: ExperimentConfig, velocity: float, traj: Trajectory | None = None) -> MotionSpec:
    p = cfg.stft.params()
    m = cfg.motion
    if m.mode == "trajectory":
        return MotionSpec("trajectory", filter_update_interval=m.filter_update_interval,
                          trajectory=traj, stft=p)
    # the array orientation is the identity at the centre of frame 0
    return MotionSpec(m.mode, velocity, m.filter_update_interval,
                      reference_time=float(p.frame_centre_time(0)))


@dataclass(frozen=True)
class Variant:
    """Estimator variant: a method and, for the enhanced path, the group size I."""

    method: str
    frames_per_group: int = 1

    @property
    def label(self) -> str:
        return f"enhanced_I{self.frames_per_group}" if self.method == "enhanced" else self.method


def estimator_variants(cfg: ExperimentConfig) -> list[Variant]:
    out = []
    for m in cfg.estimator.methods:
        if m == "enhanced":
            out.extend(Variant(m, i) for i in cfg.estimator.combined_frames)
        else:
            out.append(Variant(m))
    return out


def source_variants(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    """(kind, modulation level) pairs; the level is dB for AM and Hz for FM."""
    out = []
    for kind in cfg.source.kind:
        if kind == "am_tone":
            out.extend((kind, lvl) for lvl in cfg.source.am_level)
        elif kind == "fm_tone":
            out.extend((kind, dev) for dev in cfg.source.fm_deviation)
        else:
            out.append((kind, 0.0))
    return out


def make_source_spec(cfg: ExperimentConfig, kind: str, level: float, direction) -> SourceSpec:
    s = cfg.source
    return SourceSpec(kind, s.frequency, am_level=level if kind == "am_tone" else 0.0,
                      fm_deviation=level if kind == "fm_tone" else 0.0, mod_rate=s.mod_rate,
                      direction=tuple(direction), amplitude=s.amplitude, band=tuple(s.band),
                      seed=cfg.seed)


# ---------------------------------------------------------------------------
# the estimator pipeline on one set of STFT frames

class Pipeline:
    """Runs one estimator variant on STFT frames and returns the MUSIC result."""

    def __init__(self, cfg: ExperimentConfig, steering: est.SteeringProvider, traj: Trajectory):
        self.cfg = cfg
        self.steering = steering
        self.traj = traj
        self.order = cfg.estimator.order
        self.bins = cfg.analysis_bins
        self._transforms: dict = {}

    def transform(self, frame: int, bin_index: int):
        key = (frame, bin_index)
        if key not in self._transforms:
            k = self.steering.wavenumber(bin_index)
            self._transforms[key] = compose_transform(self.traj, frame, k, self.order)
        return self._transforms[key]

    def pwd(self, frames: STFTFrameSet, variant: Variant) -> est.PWDEstimate:
        e = self.cfg.estimator
        n_frames = e.frames
        if frames.num_frames < n_frames:
            raise ConfigurationError(
                f"{frames.num_frames} frames available, estimator.frames = {n_frames}")
        frames = frames.select(0, n_frames)
        if variant.method == "none":
            return est.pwd_stationary(frames, self.steering, self.order, self.bins)
        if variant.method == "compensated":
            return est.pwd_compensated(frames, self.steering, self.transform, self.order, self.bins)
        return self.enhanced(frames, variant.frames_per_group)

    def combined(self, start: int, count: int, bin_index: int) -> np.ndarray:
        ws = [self.transform(i, bin_index) for i in range(start, start + count)]
        vs = [self.steering(bin_index, w.output_order) for w in ws]
        return est.combined_matrix(vs, ws)

    def enhanced(self, frames: STFTFrameSet, count: int) -> est.PWDEstimate:
        e = self.cfg.estimator
        groups = frames.num_frames // count
        align_hz = self.cfg.source.frequency if e.align == "source" else None
        parts = []
        for g in range(groups):
            group = time_align(frames.select(g * count, (g + 1) * count), 0, frequency=align_hz)
            mats = {b: self.combined(g * count, count, b) for b in self.bins}
            parts.append(est.pwd_enhanced(group, mats, e.sv_threshold, self.order))
        return est.PWDEstimate.concatenate(parts)

    def noise_covariance(self, variant: Variant) -> np.ndarray:
        e = self.cfg.estimator
        pinvs = []
        for b in self.bins:
            if variant.method == "enhanced":
                a = self.combined(0, variant.frames_per_group, b)
                pinvs.append(est.truncated_pinv(a, e.sv_threshold)[0])
            elif variant.method == "compensated":
                w = self.transform(e.frames - 1, b)
                pinvs.append(est.truncated_pinv(self.steering(b, w.output_order) @ w.matrix)[0])
            else:
                pinvs.append(est.truncated_pinv(self.steering(b, self.order))[0])
        return est.noise_covariance(pinvs)

    def music(self, frames: STFTFrameSet, variant: Variant):
        e = self.cfg.estimator
        pwd = self.pwd(frames, variant)
        cov = est.smoothed_covariance(pwd)
        whitening = self.noise_covariance(variant) if e.whitening else None
        spec = est.music_spectrum(cov, e.sources, e.grid_resolution, whitening)
        return pwd, spec


def erank_of_variant(pipe: Pipeline, variant: Variant) -> dict:
    """Effective rank of the first group's combined matrix at the first analysis bin."""
    count = variant.frames_per_group if variant.method == "enhanced" else 1
    b = pipe.bins[0]
    a = pipe.combined(0, count, b)
    sv = est.normalized_singular_values(a)
    return {"effective_rank": est.effective_rank(a),
            "singular_values_above_threshold": int(np.sum(sv > pipe.cfg.estimator.sv_threshold))}


# ---------------------------------------------------------------------------
# DoA study

@dataclass
class TrialRecord:
    velocity: float
    source_kind: str
    modulation: float
    snr: float
    method: str
    direction_index: int
    trial: int
    theta: float = float("nan")
    phi: float = float("nan")
    error: float = float("nan")
    failure: str = ""


@dataclass
class DoAResults:
    config: ExperimentConfig
    records: list
    eranks: list = field(default_factory=list)
    spectra: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _units(cfg: ExperimentConfig):
    directions = resolve_directions(cfg)
    return [(v, kind, lvl, d, directions[d])
            for v, (kind, lvl), d in itertools.product(
                cfg.motion.angular_velocity, source_variants(cfg), range(len(directions)))]


def synth_unit(cfg: ExperimentConfig, velocity, kind, level, direction,
               geom: ArrayGeometry | None = None) -> tuple[np.ndarray, Trajectory]:
    """Clean microphone signals for one synthesis unit and its frame trajectory."""
    geom = geom or build_geometry(cfg)
    p = cfg.stft.params()
    n_frames = cfg.estimator.frames
    traj = frame_trajectory(cfg, velocity, n_frames)
    duration = p.samples_for(n_frames) / p.fs
    src = make_source_spec(cfg, kind, level, direction)
    clean = synth_moving_array(geom, motion_spec(cfg, velocity, traj), [src], duration, p.fs,
                               cfg.estimator.speed_of_sound)
    return clean, traj


def noise_spec(cfg: ExperimentConfig, snr: float) -> NoiseSpec:
    bin_hz = cfg.estimator.analysis_frequency or cfg.source.frequency
    return NoiseSpec(snr, cfg.noise.bandwidth, bin_hz=bin_hz, seed=cfg.seed)


def _run_unit(args):
    cfg, unit_index, (velocity, kind, level, d_index, direction) = args
    geom = build_geometry(cfg)
    clean, traj = synth_unit(cfg, velocity, kind, level, direction, geom)
    p = cfg.stft.params()
    pipe = Pipeline(cfg, build_steering(cfg, geom), traj)
    variants = estimator_variants(cfg)
    scales = {snr: noise_scale(noise_spec(cfg, snr), clean, p) for snr in cfg.noise.snr}
    records, spectra = [], {}
    for trial in range(cfg.trials):
        noise = make_rng(cfg.seed, 1, d_index, trial).standard_normal(clean.shape)
        for snr in cfg.noise.snr:
            frames = stft(clean + scales[snr] * noise, p)
            for variant in variants:
                rec = TrialRecord(velocity, kind, level, snr, variant.label, d_index, trial)
                try:
                    _, spec = pipe.music(frames, variant)
                    res = est.pick_peaks(spec, cfg.estimator.sources, truth=direction)
                    rec.theta, rec.phi = res.estimates[0] if res.estimates else (math.nan,) * 2
                    rec.error = res.error_angles[0] if res.error_angles else math.nan
                    if res.diagnostics:
                        rec.failure = "; ".join(res.diagnostics)
                    if trial == 0 and d_index == 0 and cfg.output.spectra:
                        spectra[(velocity, kind, level, snr, variant.label)] = spec
                except (ShdoaError, np.linalg.LinAlgError) as exc:
                    rec.failure = f"{type(exc).__name__}: {exc}"
                records.append(rec)
    eranks = []
    if d_index == 0:
        for variant in variants:
            if variant.method == "enhanced":
                row = {"velocity": velocity, "source_kind": kind, "modulation": level,
                       "frames_per_group": variant.frames_per_group}
                row.update(erank_of_variant(pipe, variant))
                eranks.append(row)
    return unit_index, records, eranks, spectra


def run_doa(cfg: ExperimentConfig, jobs: int = 1) -> DoAResults:
    units = _units(cfg)
    work = [(cfg, i, u) for i, u in enumerate(units)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_unit, work))
    else:
        outputs = [_run_unit(w) for w in work]
    outputs.sort(key=lambda o: o[0])
    records = [r for o in outputs for r in o[1]]
    eranks = [r for o in outputs for r in o[2]]
    spectra = {}
    for o in outputs:
        spectra.update(o[3])
    seen = set()
    unique_eranks = []
    for row in eranks:
        key = (row["velocity"], row["source_kind"], row["modulation"], row["frames_per_group"])
        if key not in seen:
            seen.add(key)
            unique_eranks.append(row)
    return DoAResults(cfg, records, unique_eranks, spectra, list(cfg.warnings))


CONDITION_KEYS = ("velocity", "source_kind", "modulation", "snr", "method")


def summarize(records) -> list[dict]:
    """Mean and sample standard deviation of the error per condition."""
    groups: dict = {}
    for rec in records:
        key = tuple(getattr(rec, k) for k in CONDITION_KEYS)
        groups.setdefault(key, []).append(rec)
    rows = []
    for key, recs in groups.items():
        errs = [r.error for r in recs if not r.failure and math.isfinite(r.error)]
        row = dict(zip(CONDITION_KEYS, key))
        row["trials"] = len(recs)
        row["failures"] = sum(1 for r in recs if r.failure)
        if errs:
            row["mean_error"], row["std_error"] = est.error_stats(errs)
        else:
            row["mean_error"] = row["std_error"] = None
        row["half_angle"] = key[0] * HALF_ANGLE_ACQUISITION / 2
        rows.append(row)
    return rows


def condition_mean(summary: list[dict], **where) -> float:
    rows = [r for r in summary if all(r[k] == v for k, v in where.items())]
    if not rows:
        raise KeyError(f"no condition matches {where}")
    errs = [r["mean_error"] for r in rows]
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# effective-rank study

@dataclass
class ErankResults:
    config: ExperimentConfig
    rows: list


def _erank_pose(rot_deg, trans, mode) -> tuple[EulerAngles, TranslationVec]:
    rot = EulerAngles(*np.radians(rot_deg))
    t = TranslationVec(trans[0], math.radians(trans[1]), math.radians(trans[2]))
    if mode == "rotation":
        t = TranslationVec()
    elif mode == "translation":
        rot = EulerAngles()
    return rot, t


def erank_matrix(steering_for, order, k, frames, rot: EulerAngles,
                 trans: TranslationVec) -> np.ndarray:
    """Combined matrix for ``frames`` poses, pose ``i`` being ``i`` times the increment."""
    poses = [FramePose()]
    for i in range(1, frames):
        poses.append(FramePose(EulerAngles(i * rot.alpha, i * rot.beta, i * rot.gamma),
                               TranslationVec(i * trans.r, trans.theta, trans.phi)))
    traj = Trajectory(tuple(poses))
    ws = [compose_transform(traj, i, k, order) for i in range(frames)]
    return est.combined_matrix([steering_for(k, w.output_order) for w in ws], ws)


def run_erank(cfg: ExperimentConfig) -> ErankResults:
    r = cfg.erank
    c = r.speed_of_sound
    if cfg.array.steering_file:
        prov = build_steering(cfg)

        def steering_for(k, order):
            return prov(_bin_of(prov, k * c / (2 * np.pi)), order)
    else:
        geom = build_geometry(cfg)

        def steering_for(k, order):
            return rigid_sphere_steering(geom, k, order).matrix

    values = r.values or [None]
    rows = []
    for mode in r.modes:
        for value in values:
            for freq in (r.frequencies if r.sweep != "frequency" else [value]):
                rot, trans, frames = list(r.rotation), list(r.translation), r.frames
                if value is not None:
                    if r.sweep in ("alpha", "beta", "gamma"):
                        rot[("alpha", "beta", "gamma").index(r.sweep)] = value
                    elif r.sweep == "r":
                        trans[0] = value
                    elif r.sweep == "frames":
                        frames = int(value)
                rot_e, trans_v = _erank_pose(rot, trans, mode)
                k = 2 * np.pi * freq / c
                a = erank_matrix(steering_for, r.order, k, frames, rot_e, trans_v)
                sv = est.normalized_singular_values(a)
                rows.append({"mode": mode, "sweep": r.sweep,
                             "value": value if value is not None else freq,
                             "frequency": freq, "frames": frames,
                             "effective_rank": est.effective_rank(a),
                             "singular_values_above_threshold": int(np.sum(sv > r.sv_threshold)),
                             "rows": a.shape[0], "columns": a.shape[1]})
    return ErankResults(cfg, rows)


def _bin_of(prov: est.SteeringProvider, freq: float) -> int:
    b = freq * prov.frame_length / prov.fs
    if abs(b - round(b)) > 1e-6:
        raise ConfigurationError(f"{freq:g} Hz is not an STFT bin centre of the steering file",
                                 "erank.frequencies")
    return int(round(b))


# ---------------------------------------------------------------------------
# recordings

def estimate_recording(cfg: ExperimentConfig, signals: np.ndarray,
                       traj: Trajectory | None = None) -> dict:
    """Run every configured estimator variant on a recording."""
    p = cfg.stft.params()
    geom = None if cfg.array.steering_file else build_geometry(cfg)
    steering = build_steering(cfg, geom)
    if signals.shape[0] != steering.num_mics:
        raise ConfigurationError(
            f"recording has {signals.shape[0]} channels, array has {steering.num_mics} mics",
            "array")
    frames = stft(signals, p)
    n_frames = cfg.estimator.frames
    if frames.num_frames < n_frames:
        raise ConfigurationError(
            f"recording yields {frames.num_frames} frames, estimator.frames = {n_frames}",
            "estimator.frames")
    if traj is None:
        traj = Trajectory.rotate_z(n_frames, 0.0)
    elif len(traj) < n_frames:
        raise ConfigurationError(f"trajectory has {len(traj)} poses for {n_frames} frames")
    pipe = Pipeline(cfg, steering, Trajectory(traj.poses[:n_frames], traj.convention))
    directions = resolve_directions(cfg)
    truth = directions if len(directions) >= cfg.estimator.sources else None
    out = []
    for variant in estimator_variants(cfg):
        _, spec = pipe.music(frames, variant)
        res = est.pick_peaks(spec, cfg.estimator.sources, truth=truth)
        out.append({"method": variant.label,
                    "estimates_deg": [[math.degrees(t), math.degrees(ph)] for t, ph in res.estimates],
                    "error_deg": res.error_angles,
                    "diagnostics": res.diagnostics})
    return {"frames": frames.num_frames, "bins": pipe.bins, "results": out}
