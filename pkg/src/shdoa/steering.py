"""Array geometries and SH-domain steering matrices.

A steering matrix ``V`` maps PWD coefficients to microphone pressures,
``p = V @ a``, with entries ``b_n(k r_a) * Y_n^m(theta_q, phi_q)`` for a rigid
sphere of radius ``r_a`` and ideal pressure microphones flush with its
surface.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import itertools
import logging
import math
from pathlib import Path

import numpy as np

from . import sh
from .errors import FormatError, UnsupportedGeometryError

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0


@dataclass
class ArrayGeometry:
    radius: float
    mics: np.ndarray  # (M, 2) of (theta, phi) radians
    label: str = ""

    def __post_init__(self):
        self.mics = np.atleast_2d(np.asarray(self.mics, dtype=float))
        if not self.radius > 0:
            raise ValueError("array radius must be positive")
        if self.mics.ndim != 2 or self.mics.shape[1] != 2 or len(self.mics) < 1:
            raise ValueError("mics must be a non-empty (M, 2) array of (theta, phi)")
        if np.any(self.mics[:, 0] < 0) or np.any(self.mics[:, 0] > np.pi):
            raise ValueError("microphone elevations must lie in [0, pi]")

    @property
    def num_mics(self) -> int:
        return len(self.mics)

    @property
    def theta(self) -> np.ndarray:
        return self.mics[:, 0]

    @property
    def phi(self) -> np.ndarray:
        return self.mics[:, 1]

    def unit_vectors(self) -> np.ndarray:
        return sph_to_cart(self.theta, self.phi)

    def rotated(self, rot: np.ndarray) -> "ArrayGeometry":
        """Geometry with every microphone rotated by the 3x3 matrix ``rot``."""
        theta, phi = cart_to_sph(self.unit_vectors() @ np.asarray(rot).T)
        return ArrayGeometry(self.radius, np.column_stack([theta, phi]), self.label)


def sph_to_cart(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def cart_to_sph(xyz):
    xyz = np.asarray(xyz, dtype=float)
    norm = np.linalg.norm(xyz, axis=-1)
    theta = np.arccos(np.clip(xyz[..., 2] / norm, -1.0, 1.0))
    phi = np.arctan2(xyz[..., 1], xyz[..., 0])
    return theta, phi


# ---------------------------------------------------------------------------
# geometries

def equiangular_13(radius: float) -> ArrayGeometry:
    """One north-pole mic plus rings at 45, 90 and 135 degrees, 90 degrees apart."""
    mics = [(0.0, 0.0)]
    for theta in (45.0, 90.0, 135.0):
        for phi in (0.0, 90.0, 180.0, 270.0):
            mics.append((theta, phi))
    return ArrayGeometry(radius, np.radians(mics), "equiangular-13")


def _tribonacci() -> float:
    return (1.0 + (19 + 3 * math.sqrt(33)) ** (1 / 3) + (19 - 3 * math.sqrt(33)) ** (1 / 3)) / 3


def _even_permutations(vec):
    a, b, c = vec
    return [(a, b, c), (b, c, a), (c, a, b)]


def _odd_permutations(vec):
    a, b, c = vec
    return [(b, a, c), (a, c, b), (c, b, a)]


def _snub_cube() -> np.ndarray:
    t = _tribonacci()
    pts = []
    for signs in itertools.product((1, -1), repeat=3):
        vec = (signs[0] * 1.0, signs[1] / t, signs[2] * t)
        plus = sum(s > 0 for s in signs)
        # one chirality: even permutations with an even number of plus signs,
        # odd permutations with an odd number
        pts.extend(_even_permutations(vec) if plus % 2 == 0 else _odd_permutations(vec))
    return np.array(pts)


def _icosahedron() -> np.ndarray:
    g = (1 + math.sqrt(5)) / 2
    pts = []
    for s1, s2 in itertools.product((1, -1), repeat=2):
        pts += [(0, s1, s2 * g), (s1, s2 * g, 0), (s2 * g, 0, s1)]
    return np.array(pts, dtype=float)


def _dodecahedron() -> np.ndarray:
    g = (1 + math.sqrt(5)) / 2
    pts = list(itertools.product((1, -1), repeat=3))
    for s1, s2 in itertools.product((1, -1), repeat=2):
        pts += [(0, s1 / g, s2 * g), (s1 / g, s2 * g, 0), (s2 * g, 0, s1 / g)]
    return np.array(pts, dtype=float)


def _icosahedron_with_faces() -> np.ndarray:
    from scipy.spatial import ConvexHull

    verts = _icosahedron()
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    centres = verts[ConvexHull(verts).simplices].mean(axis=1)
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    return np.vstack([verts, centres])


def _tetrahedron() -> np.ndarray:
    base = np.array([(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)], dtype=float)
    # generic orientation: all four vertices sit at different elevations, so
    # rotation about z sweeps four distinct rings
    tilt = _rotation_zyz(0.4, 0.35, 0.0)
    return base @ tilt.T


def _rotation_zyz(a, b, g):
    def rz(x):
        return np.array([[math.cos(x), -math.sin(x), 0], [math.sin(x), math.cos(x), 0], [0, 0, 1]])

    ry = np.array([[math.cos(b), 0, math.sin(b)], [0, 1, 0], [-math.sin(b), 0, math.cos(b)]])
    return rz(a) @ ry @ rz(g)


_NEAR_UNIFORM = {
    4: _tetrahedron,
    12: _icosahedron,
    20: _dodecahedron,
    24: _snub_cube,
    32: lambda: _icosahedron_with_faces(),
}


def near_uniform_directions(count: int) -> np.ndarray:
    """Unit vectors of a near-uniform point set; supported counts 4, 12, 20, 24, 32."""
    if count not in _NEAR_UNIFORM:
        raise UnsupportedGeometryError(
            f"no near-uniform table for M={count}; supported: {sorted(_NEAR_UNIFORM)}")
    pts = _NEAR_UNIFORM[count]()
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def near_uniform(count: int, radius: float) -> ArrayGeometry:
    theta, phi = cart_to_sph(near_uniform_directions(count))
    return ArrayGeometry(radius, np.column_stack([theta, phi]), f"near-uniform-{count}")


def custom_geometry(radius: float, mics_deg, label: str = "custom") -> ArrayGeometry:
    return ArrayGeometry(radius, np.radians(np.asarray(mics_deg, dtype=float)), label)


# ---------------------------------------------------------------------------
# rigid-sphere steering

def mode_strength(order: int, kr: float) -> np.ndarray:
    """Rigid-sphere radial functions ``b_n(kr)`` for ``n = 0..order`` at the surface.

    ``b_n = 4 pi j^n (j_n - j_n' h_n / h_n')`` with ``h_n`` the outgoing
    spherical Hankel function of the second kind. The Wronskian
    ``j_n h_n' - j_n' h_n = -j / kr^2`` gives the equivalent, overflow-safe form
    ``4 pi j^(n-1) / (kr^2 h_n'(kr))``.
    """
    n = np.arange(order + 1)
    if kr < 1e-8:
        out = np.zeros(order + 1, dtype=complex)
        out[0] = 4.0 * np.pi
        return out
    with np.errstate(over="ignore", invalid="ignore"):
        hp = sh.sph_hankel2(n, kr, derivative=True)
        b = 4.0 * np.pi * (1j ** ((n - 1) % 4)) / (kr * kr * hp)
    b[~np.isfinite(b)] = 0.0
    return b


@dataclass
class SteeringMatrix:
    k: float
    order: int
    matrix: np.ndarray
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != sh.num_coeffs(self.order):
            raise ValueError(f"steering matrix shape {self.matrix.shape} does not match "
                             f"order {self.order}")

    @property
    def num_mics(self) -> int:
        return self.matrix.shape[0]


def rigid_sphere_steering(geom: ArrayGeometry, k: float, order: int) -> SteeringMatrix:
    if not k >= 0:
        raise ValueError("wavenumber must be non-negative")
    b = mode_strength(order, k * geom.radius)
    diagnostics = []
    if order > 0 and b[-1] == 0:
        diagnostics.append(f"mode strength underflow at order {order}, kr={k * geom.radius:.3g}")
        log.warning(diagnostics[-1])
    n, _ = sh.nm_arrays(order)
    mat = sh.sh_matrix(order, geom.theta, geom.phi) * b[n][None, :]
    return SteeringMatrix(float(k), order, mat, diagnostics)


def rigid_sphere_pressure(geom: ArrayGeometry, k: float, directions, max_order=None):
    """Surface pressure at every mic for unit plane waves from ``directions``.

    Sums the Legendre series to convergence; ``directions`` is ``(S, 2)``
    of (theta, phi). Returns shape ``(M, S)``.
    """
    kr = k * geom.radius
    if max_order is None:
        max_order = int(math.ceil(kr)) + 25
    directions = np.atleast_2d(directions)
    cosang = geom.unit_vectors() @ sph_to_cart(directions[:, 0], directions[:, 1]).T
    b = mode_strength(max_order, kr)
    weights = b * (2 * np.arange(max_order + 1) + 1) / (4 * np.pi)
    return np.polynomial.legendre.legval(cosang, weights)


# ---------------------------------------------------------------------------
# steering sets and files

@dataclass
class SteeringSet:
    """Steering matrices on a sorted frequency grid."""

    frequencies: np.ndarray
    matrices: list
    radius: float = 0.0
    fs: float = 0.0
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if len(self.frequencies) != len(self.matrices):
            raise ValueError("one steering matrix per frequency required")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequency grid must be strictly increasing")

    @property
    def order(self) -> int:
        return self.matrices[0].order

    @property
    def num_mics(self) -> int:
        return self.matrices[0].num_mics

    def nearest(self, freq: float) -> SteeringMatrix:
        return self.matrices[int(np.argmin(np.abs(self.frequencies - freq)))]

    def at(self, freq: float, rtol: float = 1e-9) -> SteeringMatrix:
        idx = int(np.argmin(np.abs(self.frequencies - freq)))
        if abs(self.frequencies[idx] - freq) > rtol * max(1.0, freq):
            raise KeyError(f"no steering matrix at {freq} Hz")
        return self.matrices[idx]


def rigid_sphere_set(geom: ArrayGeometry, frequencies, order: int, fs: float = 0.0,
                     c: float = SPEED_OF_SOUND) -> SteeringSet:
    mats = [rigid_sphere_steering(geom, 2 * np.pi * f / c, order) for f in frequencies]
    return SteeringSet(np.asarray(frequencies, float), mats, geom.radius, fs, c)


_STEERING_MAGIC = "# shdoa-steering v1"


def save_steering(path, steering: SteeringSet) -> None:
    """Write a steering set as text.

    Layout: a magic line, ``key value`` header lines (M, N, radius, fs, c,
    frequencies), then for every frequency a ``frequency <hz>`` line
    followed by M rows of ``re im`` pairs, (N+1)**2 pairs per row. Floats
    are written with ``repr`` so a reload is bit-identical.
    """
    lines = [_STEERING_MAGIC,
             f"M {steering.num_mics}",
             f"N {steering.order}",
             f"radius {float(steering.radius)!r}",
             f"fs {float(steering.fs)!r}",
             f"c {float(steering.speed_of_sound)!r}",
             "frequencies " + " ".join(repr(float(f)) for f in steering.frequencies)]
    for f, mat in zip(steering.frequencies, steering.matrices):
        lines.append(f"frequency {float(f)!r}")
        for row in mat.matrix:
            lines.append(" ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_steering(path) -> SteeringSet:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != _STEERING_MAGIC:
        raise FormatError(f"{path}:1: not a steering file (missing '{_STEERING_MAGIC}')")
    header = {}
    pos = 1
    for key in ("M", "N", "radius", "fs", "c", "frequencies"):
        if pos >= len(lines):
            raise FormatError(f"{path}:{pos + 1}: truncated header, expected '{key}'")
        name, _, value = lines[pos].partition(" ")
        if name != key:
            raise FormatError(f"{path}:{pos + 1}: expected header '{key}', got '{name}'")
        header[key] = value
        pos += 1
    try:
        num_mics, order = int(header["M"]), int(header["N"])
        radius, fs, c = float(header["radius"]), float(header["fs"]), float(header["c"])
        freqs = np.array([float(v) for v in header["frequencies"].split()])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header value: {exc}") from None
    if np.any(np.diff(freqs) <= 0):
        raise FormatError(f"{path}:7: frequency grid is not strictly increasing")
    ncols = sh.num_coeffs(order)
    mats = []
    for f in freqs:
        if pos >= len(lines) or lines[pos].split()[:1] != ["frequency"]:
            raise FormatError(f"{path}:{pos + 1}: expected 'frequency {f!r}' block")
        if float(lines[pos].split()[1]) != f:
            raise FormatError(f"{path}:{pos + 1}: block frequency does not match grid")
        pos += 1
        rows = []
        for q in range(num_mics):
            if pos >= len(lines):
                raise FormatError(f"{path}:{pos + 1}: missing row {q} of block {f}")
            try:
                vals = np.array([float(v) for v in lines[pos].split()])
            except ValueError as exc:
                raise FormatError(f"{path}:{pos + 1}: {exc}") from None
            if vals.size != 2 * ncols:
                raise FormatError(f"{path}:{pos + 1}: expected {ncols} complex columns "
                                  f"for N={order}, got {vals.size / 2:g}")
            if not np.all(np.isfinite(vals)):
                raise FormatError(f"{path}:{pos + 1}: non-finite entry")
            rows.append(vals[0::2] + 1j * vals[1::2])
            pos += 1
        mats.append(SteeringMatrix(2 * np.pi * f / c, order, np.array(rows)))
    if any(line.strip() for line in lines[pos:]):
        raise FormatError(f"{path}:{pos + 1}: trailing data after last block")
    return SteeringSet(freqs, mats, radius, fs, c)


def save_geometry(path, geom: ArrayGeometry) -> None:
    rows = [f"# radius={float(geom.radius)!r}", "theta,phi"]
    rows += [f"{float(t)!r},{float(p)!r}" for t, p in geom.mics]
    Path(path).write_text("\n".join(rows) + "\n")


def load_geometry(path) -> ArrayGeometry:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("# radius="):
        raise FormatError(f"{path}:1: missing '# radius=' header")
    try:
        radius = float(lines[0].split("=", 1)[1])
    except ValueError as exc:
        raise FormatError(f"{path}:1: {exc}") from None
    if lines[1:2] != ["theta,phi"]:
        raise FormatError(f"{path}:2: expected 'theta,phi' column header")
    mics = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            theta, phi = (float(v) for v in line.split(","))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        mics.append((theta, phi))
    try:
        return ArrayGeometry(radius, np.array(mics), path.stem)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
