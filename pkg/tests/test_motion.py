import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shdoa import sh
from shdoa.errors import ApplicabilityError, FormatError, TruncationError
from shdoa.motion import (EulerAngles, FramePose, Trajectory, TranslationVec, compose_transform,
                          read_trajectory, rotation_matrix, small_translation_matrix,
                          translation_matrix, write_trajectory)
from shdoa.steering import cart_to_sph, sph_to_cart

angles = st.floats(-math.pi, math.pi, allow_nan=False)
polar = st.floats(0.0, math.pi, allow_nan=False)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# --- rotation ---------------------------------------------------------------

def test_rotation_unitary_random_triples(rng):
    for order in range(9):
        for a, b, g in rng.uniform(-math.pi, math.pi, (12, 3)):
            r = rotation_matrix(order, EulerAngles(a, abs(b), g)).matrix
            assert np.linalg.norm(r @ r.conj().T - np.eye(r.shape[0])) < 1e-10


@settings(max_examples=40)
@given(angles, polar, angles, polar, angles)
def test_rotation_moves_plane_wave(a, b, g, theta, phi):
    # oracle: rotate the arrival vector in 3-D and re-evaluate the harmonics
    rot = EulerAngles(a, b, g)
    u = sph_to_cart(theta, phi)
    t2, p2 = cart_to_sph(rot.matrix() @ u)
    expected = sh.plane_wave_pwd(5, t2, p2)
    got = rotation_matrix(5, rot).matrix @ sh.plane_wave_pwd(5, theta, phi)
    assert _rel(got, expected) < 1e-10


def test_rotation_identity_and_composition():
    r0 = rotation_matrix(4, EulerAngles()).matrix
    assert np.allclose(r0, np.eye(25))
    a, b = EulerAngles(0.3, 0.5, -0.2), EulerAngles(-1.0, 1.2, 0.7)
    ab = EulerAngles.from_matrix(a.matrix() @ b.matrix())
    lhs = rotation_matrix(4, a).matrix @ rotation_matrix(4, b).matrix
    assert np.allclose(lhs, rotation_matrix(4, ab).matrix, atol=1e-10)


def test_rotation_inverse_round_trip():
    ang = EulerAngles(0.7, 1.9, -2.4)
    fwd = rotation_matrix(6, ang).matrix
    inv = rotation_matrix(6, ang.inverse()).matrix
    assert np.allclose(inv @ fwd, np.eye(49), atol=1e-10)
    assert np.allclose(inv, fwd.conj().T, atol=1e-12)


def test_euler_angles_wrap_and_reject():
    assert EulerAngles(3 * math.pi).alpha == pytest.approx(math.pi)
    assert EulerAngles(-math.pi).alpha == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        EulerAngles(float("nan"))


# --- translation ------------------------------------------------------------

@pytest.mark.parametrize("kr", [0.1, 0.5, 1.0, 1.5, 2.0])
@pytest.mark.parametrize("order", [2, 4])
def test_translation_plane_wave_oracle(kr, order):
    # oracle: a plane wave seen from origin d is the same wave times exp(+j k u.d)
    k = 2 * math.pi * 1000 / 343.0
    t = TranslationVec(kr / k, 1.1, -0.4)
    d = t.cartesian()
    in_order = order + math.ceil(kr) + 10
    for theta, phi in [(0.3, 0.2), (1.5, 2.5), (2.8, -1.7)]:
        u = sph_to_cart(theta, phi)
        a = sh.plane_wave_pwd(in_order, theta, phi)
        got = (translation_matrix(in_order, k, t).matrix @ a)[: sh.num_coeffs(order)]
        expected = np.exp(1j * k * (u @ d)) * sh.plane_wave_pwd(order, theta, phi)
        assert _rel(got, expected) < 1e-6


def test_translation_order_growth_and_identity():
    k, t = 20.0, TranslationVec(0.12, 0.4, 0.1)
    op = translation_matrix(3, k, t)
    assert op.output_order == 3 + math.ceil(k * t.r)
    zero = translation_matrix(3, k, TranslationVec())
    assert np.allclose(zero.matrix[:16], np.eye(16))
    with pytest.raises(TruncationError):
        translation_matrix(3, k, t, out_order=2)


def test_translation_round_trip_within_band():
    # translating by d and back by -d returns the low-order coefficients
    k = 2 * math.pi * 800 / 343.0
    t = TranslationVec(0.05, 0.9, 0.3)
    back = TranslationVec.from_cartesian(-t.cartesian())
    a = sh.plane_wave_pwd(16, 1.0, 2.0)
    fwd = translation_matrix(16, k, t).matrix @ a
    mid_order = sh.order_from_size(fwd.size)
    rev = translation_matrix(mid_order, k, back).matrix @ fwd
    assert _rel(rev[:16], a[:16]) < 1e-8


def test_small_translation_matches_first_order_terms():
    k = 2 * math.pi * 500 / 343.0
    t = TranslationVec(0.02, 1.3, 0.6)
    small = small_translation_matrix(3, k, t).matrix
    full = translation_matrix(3, k, t, out_order=4, q_margin=0).matrix
    assert np.allclose(small, full)
    # first order in k r: both agree with the full operator to O((k r)^2)
    exact = translation_matrix(3, k, t, out_order=4).matrix
    assert np.max(np.abs(small - exact)) < (k * t.r) ** 2
    with pytest.raises(ApplicabilityError):
        small_translation_matrix(3, k, TranslationVec(1.0))


def test_translation_vec_validation():
    with pytest.raises(ValueError):
        TranslationVec(-1.0)
    with pytest.raises(ValueError):
        TranslationVec(1.0, 4.0)
    v = TranslationVec.from_cartesian([0.0, 0.0, -2.0])
    assert (v.r, v.theta) == (2.0, math.pi)


# --- composition ------------------------------------------------------------

def _field_seen(order, q_array, pos, theta, phi, k):
    # oracle: the array frame sees the wave from Q^T u, with phase exp(+j k u.p)
    u = sph_to_cart(theta, phi)
    t2, p2 = cart_to_sph(q_array.T @ u)
    return np.exp(1j * k * (u @ pos)) * sh.plane_wave_pwd(order, t2, p2)


def test_compose_absolute_pose_matches_plane_wave():
    k = 2 * math.pi * 700 / 343.0
    pose = FramePose(EulerAngles(0.6, 0.4, -0.3), TranslationVec(0.03, 1.0, 2.0))
    traj = Trajectory((FramePose(), pose))
    w = compose_transform(traj, 1, k, 14, order_cap=16)
    a = sh.plane_wave_pwd(14, 0.8, 1.9)
    got = (w.matrix @ a)[:16]
    q, p = traj.absolute_rotations()[1], traj.absolute_positions()[1]
    assert _rel(got, _field_seen(3, q, p, 0.8, 1.9, k)) < 1e-6


def test_delta_and_absolute_conventions_agree():
    k = 2 * math.pi * 300 / 343.0
    steps = [FramePose(EulerAngles(0.1 * i, 0.05, 0.0), TranslationVec(0.004, 1.2, 0.3 * i))
             for i in range(1, 5)]
    delta = Trajectory((FramePose(),) + tuple(steps), "delta")
    rots, pos = delta.absolute_rotations(), delta.absolute_positions()
    absolute = Trajectory((FramePose(),) + tuple(
        FramePose(EulerAngles.from_matrix(q), TranslationVec.from_cartesian(q.T @ p))
        for q, p in zip(rots[1:], pos[1:])))
    a = sh.plane_wave_pwd(12, 1.3, -0.7)
    for frame in range(1, 5):
        wd = compose_transform(delta, frame, k, 12, order_cap=14).matrix @ a
        wa = compose_transform(absolute, frame, k, 12, order_cap=14).matrix @ a
        assert _rel(wd[:9], wa[:9]) < 1e-3


def test_identity_frame_and_bounds():
    traj = Trajectory.rotate_z(3, 0.1)
    assert np.allclose(compose_transform(traj, 0, 10.0, 3).matrix, np.eye(16))
    with pytest.raises(IndexError):
        compose_transform(traj, 3, 10.0, 3)
    with pytest.raises(ValueError):
        Trajectory((FramePose(EulerAngles(0.1)),))


def test_rotate_z_path():
    traj = Trajectory.rotate_z(5, 0.2)
    assert [p.rotation.alpha for p in traj.poses] == pytest.approx([0, 0.2, 0.4, 0.6, 0.8])
    assert traj.path_length() == 0.0


# --- trajectory files -------------------------------------------------------

def test_trajectory_csv_round_trip(tmp_path):
    poses = (FramePose(), FramePose(EulerAngles(0.1, 0.2, 0.3), TranslationVec(0.01, 0.5, -1.0)))
    for conv in ("absolute", "delta"):
        traj = Trajectory(poses, conv)
        path = tmp_path / f"{conv}.csv"
        write_trajectory(path, traj)
        assert read_trajectory(path) == traj


@pytest.mark.parametrize("text, line", [
    ("frame_index,alpha\n", ":1:"),
    ("# convention=sideways\n", ":1:"),
    ("# convention=absolute\nframe_index,a\n", ":2:"),
    ("# convention=absolute\nframe_index,alpha,beta,gamma,r,theta,phi\n0,0,0,0,0,0,0\n2,0,0,0,0,0,0\n",
     ":4:"),
    ("# convention=absolute\nframe_index,alpha,beta,gamma,r,theta,phi\n0,0,0,0,x,0,0\n", ":3:"),
    ("# convention=absolute\nframe_index,alpha,beta,gamma,r,theta,phi\n0,0,0,0,-1,0,0\n", ":3:"),
])
def test_trajectory_csv_errors_name_line(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(FormatError, match=line):
        read_trajectory(path)
