"""SH-domain rotation, translation and composed motion operators.

Conventions
-----------
* A :class:`FramePose` describes the array in frame *i* relative to the
  reference frame: ``rotation`` is the array orientation (zyz Euler
  angles) and ``translation`` is the array displacement expressed in the
  rotated array axes.
* ``rotation_matrix(N, angles)`` rotates the *field* actively by
  ``Rz(alpha) Ry(beta) Rz(gamma)``: a plane wave from unit vector ``u``
  becomes a plane wave from ``Q @ u``. The field seen by a rotated array
  is therefore obtained with the inverse angles.
* ``translation_matrix`` maps PWD coefficients about the reference origin
  to PWD coefficients about the displaced origin. A unit plane wave from
  ``u`` picks up the phase ``exp(+1j * k * u @ d)``.

With these, the transform from reference-frame PWD coefficients to the
coefficients seen by the array in frame *i* is ``W = T(t) @ R(inverse)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
import math
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import sh
from .errors import ApplicabilityError, FormatError, TruncationError

#: extra Bessel orders kept beyond ceil(k r) in the translation sum
Q_MARGIN = 10


def _wrap(angle: float) -> float:
    """Map an angle into (-pi, pi]."""
    wrapped = math.remainder(float(angle), 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class EulerAngles:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"Euler angle {name} must be finite")
            object.__setattr__(self, name, _wrap(value))

    def inverse(self) -> "EulerAngles":
        return EulerAngles(-self.gamma, -self.beta, -self.alpha)

    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix ``Rz(alpha) Ry(beta) Rz(gamma)``."""
        return Rotation.from_euler("ZYZ", [self.alpha, self.beta, self.gamma]).as_matrix()

    @classmethod
    def from_matrix(cls, mat) -> "EulerAngles":
        import warnings
        with warnings.catch_warnings():
            # gimbal lock at beta = 0 is expected for horizontal rotations
            warnings.simplefilter("ignore", UserWarning)
            a, b, g = Rotation.from_matrix(mat).as_euler("ZYZ")
        return cls(a, b, g)

    @property
    def is_identity(self) -> bool:
        return self.alpha == 0.0 and self.beta == 0.0 and self.gamma == 0.0


@dataclass(frozen=True)
class TranslationVec:
    r: float = 0.0
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not self.r >= 0:
            raise ValueError(f"translation distance must be >= 0, got {self.r}")
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"translation elevation {self.theta} outside [0, pi]")

    def cartesian(self) -> np.ndarray:
        st = math.sin(self.theta)
        return self.r * np.array([st * math.cos(self.phi), st * math.sin(self.phi),
                                  math.cos(self.theta)])

    @classmethod
    def from_cartesian(cls, vec) -> "TranslationVec":
        x, y, z = (float(v) for v in vec)
        r = math.sqrt(x * x + y * y + z * z)
        if r == 0.0:
            return cls()
        return cls(r, math.acos(max(-1.0, min(1.0, z / r))), math.atan2(y, x))


@dataclass(frozen=True)
class FramePose:
    rotation: EulerAngles = field(default_factory=EulerAngles)
    translation: TranslationVec = field(default_factory=TranslationVec)

    @property
    def is_identity(self) -> bool:
        return self.rotation.is_identity and self.translation.r == 0.0


@dataclass(frozen=True)
class Trajectory:
    """Per-STFT-frame poses.

    ``convention='absolute'``: pose *i* is relative to frame 0.
    ``convention='delta'``: pose *i* is relative to frame *i-1*.
    """

    poses: tuple
    convention: str = "absolute"

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("a trajectory needs at least one pose")
        if not self.poses[0].is_identity:
            raise ValueError("the first pose of a trajectory must be the identity")
        if self.convention not in ("absolute", "delta"):
            raise ValueError(f"unknown trajectory convention {self.convention!r}")

    def __len__(self):
        return len(self.poses)

    @classmethod
    def rotate_z(cls, n_frames: int, angle_step: float) -> "Trajectory":
        """Constant angular velocity about z, ``angle_step`` radians per frame."""
        return cls(tuple(FramePose(EulerAngles(i * angle_step)) for i in range(n_frames)))

    def path_length(self) -> float:
        if self.convention == "delta":
            return float(sum(p.translation.r for p in self.poses))
        return float(max(p.translation.r for p in self.poses))

    def absolute_rotations(self) -> list[np.ndarray]:
        """Array orientation matrices relative to frame 0."""
        mats = [p.rotation.matrix() for p in self.poses]
        if self.convention == "absolute":
            return mats
        out = [np.eye(3)]
        for mat in mats[1:]:
            out.append(out[-1] @ mat)
        return out

    def absolute_positions(self) -> list[np.ndarray]:
        """Array centre positions in reference-frame coordinates."""
        rots = self.absolute_rotations()
        if self.convention == "absolute":
            return [q @ p.translation.cartesian() for q, p in zip(rots, self.poses)]
        pos = [np.zeros(3)]
        for q, p in zip(rots[1:], self.poses[1:]):
            pos.append(pos[-1] + q @ p.translation.cartesian())
        return pos


@dataclass
class MotionTransform:
    matrix: np.ndarray
    input_order: int
    output_order: int
    truncated: bool = False

    def __post_init__(self):
        rows, cols = self.matrix.shape
        if rows != sh.num_coeffs(self.output_order) or cols != sh.num_coeffs(self.input_order):
            raise ValueError(f"matrix shape {self.matrix.shape} inconsistent with orders "
                             f"{self.output_order}x{self.input_order}")

    def __matmul__(self, other: "MotionTransform") -> "MotionTransform":
        return MotionTransform(self.matrix @ other.matrix, other.input_order,
                               self.output_order, self.truncated or other.truncated)

    def truncate(self, order: int) -> "MotionTransform":
        if order >= self.output_order:
            return self
        return MotionTransform(self.matrix[: sh.num_coeffs(order)], self.input_order,
                               order, True)


def _frozen(mat: np.ndarray) -> np.ndarray:
    mat.setflags(write=False)
    return mat


# ---------------------------------------------------------------------------
# rotation

@lru_cache(maxsize=4096)
def _rotation_array(order: int, angles: EulerAngles) -> np.ndarray:
    size = sh.num_coeffs(order)
    mat = np.zeros((size, size), dtype=complex)
    for n in range(order + 1):
        s = n * n
        mat[s:s + 2 * n + 1, s:s + 2 * n + 1] = sh.wigner_D_block(
            n, angles.alpha, angles.beta, angles.gamma)
    return _frozen(mat)


def rotation_matrix(order: int, angles: EulerAngles) -> MotionTransform:
    """Block-diagonal Wigner-D rotation of SH coefficients up to ``order``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    return MotionTransform(_rotation_array(order, angles), order, order)


# ---------------------------------------------------------------------------
# translation

@lru_cache(maxsize=500_000)
def translation_coeff(n_out: int, m_out: int, n: int, m: int, q: int) -> complex:
    """Coupling coefficient of the translation addition theorem.

    This is the coefficient for pressure-expansion coefficients
    (``j**n * a_nm``); :func:`translation_matrix` converts it to act on
    PWD coefficients.
    """
    sh._check_degree(n_out, m_out)
    sh._check_degree(n, m)
    if q < 0 or abs(m - m_out) > q:
        return 0j
    w0 = sh.wigner_3j(n, n_out, q, 0, 0, 0)
    if w0 == 0.0:
        return 0j
    w1 = sh.wigner_3j(n, n_out, q, -m, m_out, m - m_out)
    if w1 == 0.0:
        return 0j
    phase = 1j ** ((n_out + q - n) % 4) * (-1.0 if m % 2 else 1.0)
    norm = math.sqrt((2 * n + 1) * (2 * n_out + 1) * (2 * q + 1) / (4.0 * math.pi))
    return complex(4.0 * math.pi * phase * norm * w0 * w1)


def _translation_array(in_order, out_order, kr, theta, phi, q_cap):
    bessel = sh.sph_bessel_j(np.arange(q_cap + 1), kr)
    harm = sh.sh_matrix(q_cap, theta, phi)[0]
    mat = np.zeros((sh.num_coeffs(out_order), sh.num_coeffs(in_order)), dtype=complex)
    for n_out in range(out_order + 1):
        for n in range(in_order + 1):
            qs = [q for q in range(abs(n - n_out), min(n + n_out, q_cap) + 1)
                  if (n + n_out + q) % 2 == 0]
            if not qs:
                continue
            # diag(j^-n') T diag(j^n) turns the pressure form into the PWD form
            similarity = 1j ** ((n - n_out) % 4)
            for m_out in range(-n_out, n_out + 1):
                row = n_out * n_out + n_out + m_out
                for m in range(-n, n + 1):
                    total = 0j
                    for q in qs:
                        if abs(m - m_out) > q:
                            continue
                        c = translation_coeff(n_out, m_out, n, m, q)
                        if c:
                            total += bessel[q] * harm[q * q + q + m - m_out] * c
                    mat[row, n * n + n + m] = similarity * total
    return _frozen(mat)


@lru_cache(maxsize=4096)
def _translation_cached(in_order, out_order, k, t, q_cap):
    return _translation_array(in_order, out_order, k * t.r, t.theta, t.phi, q_cap)


def _identity_tilde(in_order, out_order):
    return np.eye(sh.num_coeffs(out_order), sh.num_coeffs(in_order), dtype=complex)


def translation_matrix(in_order: int, k: float, t: TranslationVec,
                       out_order: int | None = None,
                       q_margin: int = Q_MARGIN) -> MotionTransform:
    """Far-field translation operator on PWD coefficients.

    The Bessel sum runs to ``ceil(k r) + q_margin``; ``out_order`` defaults
    to ``in_order + ceil(k r)``.
    """
    if k < 0:
        raise ValueError("wavenumber must be non-negative")
    growth = math.ceil(k * t.r)
    if out_order is None:
        out_order = in_order + growth
    if out_order < in_order:
        raise TruncationError(f"output order {out_order} below input order {in_order}")
    if t.r == 0.0 or k == 0.0:
        return MotionTransform(_identity_tilde(in_order, out_order), in_order, out_order)
    mat = _translation_cached(in_order, out_order, float(k), t, growth + q_margin)
    return MotionTransform(mat, in_order, out_order)


def small_translation_matrix(in_order: int, k: float, t: TranslationVec) -> MotionTransform:
    """First-order translation ``j0(kr) I~ + j1(kr) C`` for ``k r < 1``."""
    kr = k * t.r
    if kr >= 1.0:
        raise ApplicabilityError(f"k*r = {kr:.3f} >= 1; use translation_matrix")
    out_order = in_order + 1
    if t.r == 0.0:
        return MotionTransform(_identity_tilde(in_order, out_order), in_order, out_order)
    mat = _translation_cached(in_order, out_order, float(k), t, 1)
    return MotionTransform(mat, in_order, out_order)


# ---------------------------------------------------------------------------
# composition

def default_order_cap(traj: Trajectory, k: float, in_order: int) -> int:
    return in_order + math.ceil(k * traj.path_length()) + 2


def _pose_transform(pose: FramePose, k: float, in_order: int, order_cap: int,
                    small: bool) -> MotionTransform:
    rot = rotation_matrix(in_order, pose.rotation.inverse())
    t = pose.translation
    if t.r == 0.0 or k == 0.0:
        return rot
    if small and k * t.r < 1.0:
        trans = small_translation_matrix(in_order, k, t)
    else:
        out = in_order + math.ceil(k * t.r)
        trans = translation_matrix(in_order, k, t, out_order=out)
    return (trans @ rot).truncate(order_cap)


def compose_transform(traj: Trajectory, frame: int, k: float, in_order: int,
                      order_cap: int | None = None) -> MotionTransform:
    """Transform ``W`` from reference-frame PWD to the PWD seen in ``frame``.

    Delta trajectories are composed as a product of per-frame operators,
    truncating intermediate orders at ``order_cap``; the returned
    transform's ``truncated`` flag records whether any rows were dropped.
    """
    if not 0 <= frame < len(traj):
        raise IndexError(f"frame {frame} outside trajectory of length {len(traj)}")
    if order_cap is None:
        order_cap = default_order_cap(traj, k, in_order)
    if order_cap < in_order:
        raise TruncationError("order cap below input order")
    if frame == 0:
        size = sh.num_coeffs(in_order)
        return MotionTransform(np.eye(size, dtype=complex), in_order, in_order)
    if traj.convention == "absolute":
        return _pose_transform(traj.poses[frame], k, in_order, order_cap, small=False)
    return _delta_chain(traj, frame, float(k), in_order, order_cap)


def _delta_chain(traj, frame, k, in_order, order_cap):
    return _delta_products(traj, k, in_order, order_cap)[frame]


@lru_cache(maxsize=32)
def _delta_products(traj, k, in_order, order_cap):
    size = sh.num_coeffs(in_order)
    chain = [MotionTransform(np.eye(size, dtype=complex), in_order, in_order)]
    for pose in traj.poses[1:]:
        prev = chain[-1]
        step = _pose_transform(pose, k, prev.output_order, order_cap, small=True)
        chain.append(step @ prev)
    return tuple(chain)


def motion_transforms(traj: Trajectory, k: float, in_order: int,
                      order_cap: int | None = None) -> list[MotionTransform]:
    return [compose_transform(traj, i, k, in_order, order_cap) for i in range(len(traj))]


# ---------------------------------------------------------------------------
# trajectory files

TRAJECTORY_COLUMNS = ("frame_index", "alpha", "beta", "gamma", "r", "theta", "phi")


def write_trajectory(path, traj: Trajectory) -> None:
    """Write a trajectory CSV.

    The first line is ``# convention=absolute`` or ``# convention=delta``,
    followed by a header row and one row per frame. Angles in radians,
    distance in metres.
    """
    with open(path, "w", newline="") as fh:
        fh.write(f"# convention={traj.convention}\n")
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for i, pose in enumerate(traj.poses):
            rot, t = pose.rotation, pose.translation
            writer.writerow([i] + [repr(float(v)) for v in
                                   (rot.alpha, rot.beta, rot.gamma, t.r, t.theta, t.phi)])


def read_trajectory(path) -> Trajectory:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FormatError(f"{path}:1: missing '# convention=absolute|delta' header")
    key, _, value = lines[0].lstrip("#").strip().partition("=")
    if key.strip() != "convention" or value.strip() not in ("absolute", "delta"):
        raise FormatError(f"{path}:1: bad convention header {lines[0]!r}")
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TRAJECTORY_COLUMNS:
        raise FormatError(f"{path}:2: expected columns {','.join(TRAJECTORY_COLUMNS)}")
    poses = []
    for lineno, row in enumerate(reader, start=3):
        if not row:
            continue
        try:
            idx = int(row[0])
            a, b, g, r, th, ph = (float(v) for v in row[1:7])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if idx != len(poses):
            raise FormatError(f"{path}:{lineno}: expected frame_index {len(poses)}, got {idx}")
        try:
            poses.append(FramePose(EulerAngles(a, b, g), TranslationVec(r, th, ph)))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    try:
        return Trajectory(tuple(poses), value.strip())
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
