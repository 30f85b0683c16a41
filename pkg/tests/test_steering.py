import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from shdoa import sh
from shdoa.errors import FormatError, UnsupportedGeometryError
from shdoa.steering import (ArrayGeometry, custom_geometry, equiangular_13, load_geometry,
                            load_steering, mode_strength, near_uniform, rigid_sphere_pressure,
                            rigid_sphere_set, rigid_sphere_steering, save_geometry, save_steering,
                            sph_to_cart)


def _scattered_sphere(kr, cosang, terms=60):
    # textbook rigid-sphere series, written directly in j_n, y_n
    total = 0j
    for n in range(terms):
        j, jp = spherical_jn(n, kr), spherical_jn(n, kr, derivative=True)
        h = j - 1j * spherical_yn(n, kr)
        hp = jp - 1j * spherical_yn(n, kr, derivative=True)
        total = total + (2 * n + 1) * 1j ** n * (j - jp / hp * h) * eval_legendre(n, cosang)
    return total


@pytest.mark.parametrize("kr", [0.3, 1.0, 2.5, 6.0])
def test_rigid_sphere_pressure_matches_series(kr):
    geom = near_uniform(12, 0.05)
    k = kr / geom.radius
    dirs = np.array([[0.4, 0.1], [2.0, -2.2]])
    got = rigid_sphere_pressure(geom, k, dirs)
    cos = geom.unit_vectors() @ sph_to_cart(dirs[:, 0], dirs[:, 1]).T
    assert np.allclose(got, _scattered_sphere(kr, cos), rtol=1e-9, atol=1e-12)


def test_steering_times_plane_wave_gives_pressure():
    geom = equiangular_13(0.06)
    k = 2 * math.pi * 1500 / 343.0
    v = rigid_sphere_steering(geom, k, 20).matrix
    a = sh.plane_wave_pwd(20, 1.2, 0.7)
    p = rigid_sphere_pressure(geom, k, [[1.2, 0.7]])[:, 0]
    assert np.allclose(v @ a, p, atol=1e-10)


def test_open_sphere_jacobi_anger_sign_convention():
    # with b_n = 4 pi j^n j_n the same expansion must reproduce exp(+j k u.x)
    x = np.array([0.03, -0.02, 0.05])
    u = sph_to_cart(0.9, 2.1)
    k = 40.0
    r = np.linalg.norm(x)
    n, _ = sh.nm_arrays(25)
    b = 4 * math.pi * 1j ** n * spherical_jn(n, k * r)
    xt, xp = math.acos(x[2] / r), math.atan2(x[1], x[0])
    p = np.sum(b * sh.sh_matrix(25, xt, xp)[0] * sh.plane_wave_pwd(25, 0.9, 2.1))
    assert p == pytest.approx(np.exp(1j * k * u @ x), abs=1e-12)


def test_mode_strength_limits():
    b = mode_strength(3, 0.0)
    assert b[0] == 4 * math.pi and np.all(b[1:] == 0)
    # a rigid sphere doubles the on-axis pressure at high frequency
    geom = custom_geometry(0.1, [[0.0, 0.0], [180.0, 0.0]])
    p = rigid_sphere_pressure(geom, 300.0, [[0.0, 0.0]])[:, 0]
    assert abs(p[0]) == pytest.approx(2.0, rel=0.05)
    # high orders underflow to zero rather than nan
    assert np.all(np.isfinite(mode_strength(80, 0.01)))


def test_steering_underflow_diagnostic():
    geom = near_uniform(4, 0.01)
    s = rigid_sphere_steering(geom, 1e-3, 60)
    assert s.diagnostics and np.all(np.isfinite(s.matrix))


@pytest.mark.parametrize("count", [4, 12, 20, 24, 32])
def test_near_uniform_sets(count):
    u = near_uniform(count, 0.05).unit_vectors()
    assert u.shape == (count, 3)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)
    # balanced: the centroid sits at the origin and no two mics coincide
    assert np.linalg.norm(u.mean(axis=0)) < 1e-12
    gram = u @ u.T - 2 * np.eye(count)
    assert gram.max() < 0.99


def test_near_uniform_rejects_unknown_count():
    with pytest.raises(UnsupportedGeometryError):
        near_uniform(7, 0.05)


def test_equiangular_layout():
    geom = equiangular_13(0.06)
    assert geom.num_mics == 13
    assert sorted(set(np.round(np.degrees(geom.theta)))) == [0, 45, 90, 135]


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry(0.0, [[0.0, 0.0]])
    with pytest.raises(ValueError):
        ArrayGeometry(1.0, [[4.0, 0.0]])


@given(st.integers(0, 5), st.floats(0.5, 8.0))
def test_steering_shape(order, kr):
    geom = near_uniform(12, 0.05)
    s = rigid_sphere_steering(geom, kr / 0.05, order)
    assert s.matrix.shape == (12, (order + 1) ** 2)


# --- files ------------------------------------------------------------------

def test_steering_file_round_trip_is_bit_identical(tmp_path):
    geom = near_uniform(4, 0.0625)
    ss = rigid_sphere_set(geom, [1000.0, 3100.0], 4, fs=10000.0)
    path = tmp_path / "v.txt"
    save_steering(path, ss)
    back = load_steering(path)
    assert back.fs == 10000.0 and back.radius == 0.0625
    for a, b in zip(ss.matrices, back.matrices):
        assert np.array_equal(a.matrix, b.matrix)
    assert back.at(3100.0) is back.matrices[1]
    with pytest.raises(KeyError):
        back.at(3000.0)
    assert back.nearest(3000.0) is back.matrices[1]


def _good_file(tmp_path):
    path = tmp_path / "v.txt"
    save_steering(path, rigid_sphere_set(near_uniform(4, 0.05), [500.0], 1))
    return path


def test_steering_file_wrong_column_count_names_line(tmp_path):
    path = _good_file(tmp_path)
    lines = path.read_text().splitlines()
    lines[8] = " ".join(lines[8].split()[:-2])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match=r":9: expected 4 complex columns"):
        load_steering(path)


@pytest.mark.parametrize("mutate, pattern", [
    (lambda ls: ["junk"] + ls[1:], ":1:"),
    (lambda ls: ls[:2] + ["X 1"] + ls[3:], ":3:"),
    (lambda ls: ls + ["1 2"], "trailing"),
    (lambda ls: ls[:-1], "missing row"),
    (lambda ls: ls[:8] + [ls[8].replace(ls[8].split()[0], "nan", 1)] + ls[9:], "non-finite"),
])
def test_steering_file_errors(tmp_path, mutate, pattern):
    path = _good_file(tmp_path)
    path.write_text("\n".join(mutate(path.read_text().splitlines())) + "\n")
    with pytest.raises(FormatError, match=pattern):
        load_steering(path)


def test_geometry_file_round_trip_and_errors(tmp_path):
    geom = near_uniform(24, 0.06)
    path = tmp_path / "g.csv"
    save_geometry(path, geom)
    back = load_geometry(path)
    assert back.radius == geom.radius and np.array_equal(back.mics, geom.mics)
    path.write_text("# radius=0.05\ntheta,phi\n0.1,oops\n")
    with pytest.raises(FormatError, match=":3:"):
        load_geometry(path)
    path.write_text("theta,phi\n")
    with pytest.raises(FormatError, match=":1:"):
        load_geometry(path)
