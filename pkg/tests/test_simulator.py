import math

import numpy as np
import pytest
from scipy.signal import hilbert

from shdoa.errors import AliasingError, ConfigurationError, UndefinedSNRError
from shdoa.motion import EulerAngles, FramePose, Trajectory, TranslationVec
from shdoa.simulator import (MotionSpec, NoiseSpec, SourceSpec, add_noise,
                             apparent_direction, make_rng, make_source, noise_scale,
                             synth_moving_array)
from shdoa.spectral import STFTParams, stft
from shdoa.steering import near_uniform, rigid_sphere_pressure

FS = 10000.0
GEOM = near_uniform(12, 0.06)


def _db(err, ref):
    return 20 * np.log10(np.linalg.norm(err) / np.linalg.norm(ref))


def _tone(freq, direction=(1.2, 0.4)):
    return SourceSpec("tone", freq, direction=direction)


# --- sources ----------------------------------------------------------------

def test_tone_spectral_peak():
    x = make_source(_tone(3100.0), 1.0, FS)
    spec = np.abs(np.fft.rfft(x))
    assert np.fft.rfftfreq(x.size, 1 / FS)[np.argmax(spec)] == pytest.approx(3100.0)


def test_degenerate_modulations_equal_tone():
    tone = make_source(_tone(3100.0), 0.3, FS)
    am = make_source(SourceSpec("am_tone", 3100.0, am_level=0.0), 0.3, FS)
    fm = make_source(SourceSpec("fm_tone", 3100.0, fm_deviation=0.0), 0.3, FS)
    assert np.array_equal(am, tone) and np.array_equal(fm, tone)


def test_am_envelope_ratio():
    x = make_source(SourceSpec("am_tone", 1000.0, am_level=6.0, mod_rate=3.0), 2.0, FS)
    env = np.abs(hilbert(x))[2000:-2000]
    assert 20 * np.log10(env.max() / env.min()) == pytest.approx(6.0, abs=0.05)


def test_fm_instantaneous_frequency():
    spec = SourceSpec("fm_tone", 1000.0, fm_deviation=10.0, mod_rate=3.0)
    x = make_source(spec, 2.0, FS)
    inst = np.diff(np.unwrap(np.angle(hilbert(x)))) * FS / (2 * np.pi)
    t = (np.arange(inst.size) + 0.5) / FS
    expected = 1000.0 + 10.0 * np.sin(2 * np.pi * 3.0 * t)
    assert np.max(np.abs(inst - expected)[1000:-1000]) < 0.5


def test_wideband_proxy_band_and_level():
    x = make_source(SourceSpec("wideband", seed=3), 2.0, FS)
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0)
    spec = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(x.size, 1 / FS)
    inside = spec[(f > 300) & (f < 3400)].sum()
    assert inside / spec.sum() > 0.99
    assert np.array_equal(x, make_source(SourceSpec("wideband", seed=3), 2.0, FS))


def test_source_errors():
    with pytest.raises(AliasingError):
        make_source(_tone(5000.0), 0.1, FS)
    with pytest.raises(AliasingError):
        make_source(SourceSpec("fm_tone", 4995.0, fm_deviation=10.0), 0.1, FS)
    with pytest.raises(ConfigurationError):
        make_source(_tone(100.0), 0.0, FS)
    with pytest.raises(ConfigurationError):
        SourceSpec("chirp")
    with pytest.raises(ConfigurationError):
        SourceSpec(mod_rate=-1.0)


# --- synthesis --------------------------------------------------------------

@pytest.mark.parametrize("freq", [500.0, 1900.0, 3100.0])
def test_static_tone_matches_frequency_domain(freq):
    direction = (1.2, 0.4)
    y = synth_moving_array(GEOM, MotionSpec(), _tone(freq, direction), 0.3, FS)
    h = rigid_sphere_pressure(GEOM, 2 * np.pi * freq / 343.0, [direction])[:, 0]
    t = np.arange(y.shape[1]) / FS
    # e^{+j w t} convention: a sine input comes out as Im(H e^{j w t})
    expected = np.imag(h[:, None] * np.exp(2j * np.pi * freq * t)[None, :])
    assert _db(y - expected, expected) < -60


def test_rotation_sweep_and_update_count(monkeypatch):
    motion = MotionSpec("rotate_z", 180.0)
    _, phi0 = apparent_direction(motion, (math.pi / 2, 0.0), 0.0)
    _, phi1 = apparent_direction(motion, (math.pi / 2, 0.0), 1.0)
    assert abs(math.degrees(phi1 - phi0)) == pytest.approx(180.0)
    seen = []
    original = MotionSpec.poses

    def spy(self, times):
        seen.append(np.asarray(times).size)
        return original(self, times)

    monkeypatch.setattr(MotionSpec, "poses", spy)
    synth_moving_array(near_uniform(4, 0.06), motion, _tone(500.0), 1.0, FS)
    assert seen == [1000]


def test_linear_superposition():
    motion = MotionSpec("rotate_z", 90.0)
    s1, s2 = _tone(700.0, (0.5, 1.0)), SourceSpec("wideband", direction=(2.0, -1.0), seed=1)
    both = synth_moving_array(GEOM, motion, [s1, s2], 0.2, FS)
    parts = (synth_moving_array(GEOM, motion, s1, 0.2, FS)
             + synth_moving_array(GEOM, motion, s2, 0.2, FS))
    assert np.max(np.abs(both - parts)) < 1e-10 * np.max(np.abs(parts))


def test_rotating_array_equals_counter_moving_source():
    # array at azimuth +a (slowly turning) against a static array with the source at -a
    omega = 2.0
    motion = MotionSpec("rotate_z", omega)
    src = _tone(1500.0, (1.1, 0.3))
    y = synth_moving_array(GEOM, motion, src, 1.0, FS)
    for t in (0.3, 0.7):
        alpha = math.radians(omega * t)
        static = synth_moving_array(GEOM, MotionSpec(), _tone(1500.0, (1.1, 0.3 - alpha)), 1.0, FS)
        window = slice(int(t * FS) - 50, int(t * FS) + 50)
        assert _db(y[:, window] - static[:, window], static[:, window]) < -50


def test_motion_does_not_inject_energy():
    src = SourceSpec("wideband", direction=(math.pi / 2, 0.0), seed=2)
    ref = np.sqrt(np.mean(synth_moving_array(GEOM, MotionSpec(), src, 1.0, FS) ** 2))
    for omega in (30.0, 90.0, 180.0):
        y = synth_moving_array(GEOM, MotionSpec("rotate_z", omega), src, 1.0, FS)
        assert abs(20 * np.log10(np.sqrt(np.mean(y ** 2)) / ref)) < 3.0


@pytest.mark.parametrize("omega", [45.0, 180.0])
def test_block_size_insensitivity(omega):
    src = _tone(3100.0, (1.3, 0.2))
    a = synth_moving_array(GEOM, MotionSpec("rotate_z", omega, 1e-3), src, 0.5, FS)
    b = synth_moving_array(GEOM, MotionSpec("rotate_z", omega, 5e-4), src, 0.5, FS)
    assert _db(a - b, a) < -40


def test_trajectory_motion_matches_rotate_z():
    p = STFTParams()
    step = math.radians(90.0) * p.hop / p.fs
    traj = Trajectory.rotate_z(40, step)
    centre = p.frame_centre_time(0)
    traj_motion = MotionSpec("trajectory", trajectory=traj, stft=p)
    rot_motion = MotionSpec("rotate_z", 90.0, reference_time=centre)
    times = p.frame_centre_time(np.arange(40))
    r1, _ = traj_motion.poses(times)
    r2, _ = rot_motion.poses(times)
    assert np.allclose(r1, r2, atol=1e-12)


def test_translation_adds_plane_wave_delay():
    p = STFTParams()
    shift = FramePose(EulerAngles(), TranslationVec(0.05, 0.0, 0.0))
    traj = Trajectory((FramePose(),) + (shift,) * 60)
    motion = MotionSpec("trajectory", trajectory=traj, stft=p)
    y = synth_moving_array(GEOM, motion, _tone(1000.0, (0.0, 0.0)), 0.6, FS)
    static = synth_moving_array(GEOM, MotionSpec(), _tone(1000.0, (0.0, 0.0)), 0.6, FS)
    # moving 5 cm toward a source on +z advances the wave by d / c
    k = 2 * np.pi * 1000.0 / 343.0
    h = rigid_sphere_pressure(GEOM, k, [[0.0, 0.0]])[:, 0] * np.exp(1j * k * 0.05)
    t = np.arange(y.shape[1]) / FS
    expected = np.imag(h[:, None] * np.exp(2j * np.pi * 1000.0 * t)[None, :])
    late = slice(3000, 6000)
    assert _db(y[:, late] - expected[:, late], expected[:, late]) < -50
    assert _db(static[:, late] - expected[:, late], expected[:, late]) > -20


def test_synth_errors():
    with pytest.raises(ConfigurationError):
        synth_moving_array(GEOM, MotionSpec(), [], 0.1, FS)
    with pytest.raises(ConfigurationError):
        synth_moving_array(GEOM, MotionSpec(), _tone(100.0), 0.0, FS)
    with pytest.raises(ConfigurationError):
        MotionSpec("spin")
    with pytest.raises(ConfigurationError):
        MotionSpec("rotate_z", 10.0, 0.0)
    with pytest.raises(ConfigurationError):
        MotionSpec("trajectory")


# --- noise ------------------------------------------------------------------

def test_infinite_snr_leaves_signal():
    x = np.random.default_rng(0).standard_normal((3, 100))
    assert np.array_equal(add_noise(x, NoiseSpec(math.inf)), x)


def test_wideband_snr_definition():
    x = synth_moving_array(GEOM, MotionSpec(), SourceSpec("wideband", seed=4), 1.0, FS)
    y = add_noise(x, NoiseSpec(0.0, seed=9))
    ratio = np.mean(x ** 2) / np.mean((y - x) ** 2)
    assert abs(10 * np.log10(ratio)) < 0.1


def test_narrowband_snr_in_analysis_bin():
    p = STFTParams()
    x = synth_moving_array(GEOM, MotionSpec(), _tone(3100.0), 2.0, FS)
    spec = NoiseSpec(10.0, "narrowband", 3100.0, seed=5)
    noise = add_noise(x, spec, stft_params=p) - x
    b = p.nearest_bin(3100.0)
    sig = np.mean(np.abs(stft(x, p).bin(b)) ** 2)
    nse = np.mean(np.abs(stft(noise, p).bin(b)) ** 2)
    assert 10 * np.log10(sig / nse) == pytest.approx(10.0, abs=0.5)


def test_noise_determinism_and_streams():
    x = np.ones((2, 1000))
    a = add_noise(x, NoiseSpec(5.0, seed=11))
    assert np.array_equal(a, add_noise(x, NoiseSpec(5.0, seed=11)))
    assert not np.array_equal(a, add_noise(x, NoiseSpec(5.0, seed=12)))
    r1 = make_rng(7, 1, 2).standard_normal(4)
    assert np.array_equal(r1, make_rng(7, 1, 2).standard_normal(4))
    assert not np.array_equal(r1, make_rng(7, 1, 3).standard_normal(4))


def test_noise_errors():
    with pytest.raises(UndefinedSNRError):
        noise_scale(NoiseSpec(10.0), np.zeros((2, 10)))
    with pytest.raises(ConfigurationError):
        NoiseSpec(float("nan"))
    with pytest.raises(ConfigurationError):
        NoiseSpec(10.0, "narrowband")
    with pytest.raises(ConfigurationError):
        noise_scale(NoiseSpec(10.0, "narrowband", 3100.0), np.ones((1, 300)))
