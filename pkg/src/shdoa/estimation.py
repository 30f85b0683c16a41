"""Plane-wave decomposition estimators and SH-domain MUSIC.

Three PWD paths are provided:

* :func:`pwd_stationary` inverts the steering matrix frame by frame;
* :func:`pwd_compensated` inverts ``V_i W_i`` so every frame refers to the
  reference pose;
* :func:`pwd_enhanced` stacks ``I`` time-aligned frames and inverts the
  combined matrix with a truncated SVD.

The resulting coefficient vectors feed :func:`covariance`,
:func:`freq_smooth`, :func:`music_spectrum` and :func:`pick_peaks`.
"""
from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import lru_cache
import logging
import math

import numpy as np

from . import sh
from .errors import (ConfigurationError, DegenerateSystemError, InsufficientDataError,
                     InvalidSourceCountError, UndefinedRankError)
from .motion import MotionTransform
from .spectral import STFTFrameSet
from .steering import (SPEED_OF_SOUND, ArrayGeometry, SteeringMatrix, SteeringSet,
                       rigid_sphere_steering)

log = logging.getLogger(__name__)

METHODS = ("stationary", "compensated", "enhanced")
#: singular values below this fraction of the largest flag a rank-deficient system
RANK_TOL = 1e-10


# ---------------------------------------------------------------------------
# steering lookup per bin

class SteeringProvider:
    """Steering matrices per STFT bin, either computed or loaded from file.

    Computed matrices (rigid sphere) are available at any order, which the
    compensated path needs when translation raises ``W_i``'s output order.
    A loaded :class:`SteeringSet` fixes the order; lower orders are served
    by dropping columns.
    """

    def __init__(self, frame_length: int, fs: float, geometry: ArrayGeometry | None = None,
                 steering_set: SteeringSet | None = None, speed_of_sound: float = SPEED_OF_SOUND):
        if (geometry is None) == (steering_set is None):
            raise ConfigurationError("give exactly one of geometry or steering_set")
        self.frame_length = frame_length
        self.fs = float(fs)
        self.geometry = geometry
        self.steering_set = steering_set
        self.c = speed_of_sound
        self._cache: dict = {}

    @property
    def num_mics(self) -> int:
        if self.geometry is not None:
            return self.geometry.num_mics
        return self.steering_set.num_mics

    def frequency(self, bin_index: int) -> float:
        return bin_index * self.fs / self.frame_length

    def wavenumber(self, bin_index: int) -> float:
        return 2 * np.pi * self.frequency(bin_index) / self.c

    def __call__(self, bin_index: int, order: int) -> np.ndarray:
        key = (bin_index, order)
        if key not in self._cache:
            self._cache[key] = self._build(bin_index, order)
        return self._cache[key]

    def _build(self, bin_index, order):
        if self.geometry is not None:
            return rigid_sphere_steering(self.geometry, self.wavenumber(bin_index), order).matrix
        freq = self.frequency(bin_index)
        try:
            mat = self.steering_set.at(freq, rtol=1e-6)
        except KeyError:
            raise ConfigurationError(
                f"steering file has no entry at bin {bin_index} ({freq:g} Hz)") from None
        if order > mat.order:
            raise ConfigurationError(
                f"order {order} requested but the steering file stops at {mat.order}")
        return mat.matrix[:, : sh.num_coeffs(order)]


def _steering(provider, bin_index: int, order: int) -> np.ndarray:
    if callable(provider):
        return provider(bin_index, order)
    mat = provider[bin_index]
    if isinstance(mat, SteeringMatrix):
        if mat.order < order:
            raise ConfigurationError(
                f"steering at bin {bin_index} has order {mat.order}, need {order}")
        mat = mat.matrix[:, : sh.num_coeffs(order)]
    mat = np.asarray(mat)
    if mat.shape[1] != sh.num_coeffs(order):
        raise ConfigurationError(
            f"steering at bin {bin_index} has {mat.shape[1]} columns, need {sh.num_coeffs(order)}")
    return mat


# ---------------------------------------------------------------------------
# pseudo-inverse

@dataclass
class PinvInfo:
    singular_values: np.ndarray
    kept: int
    rank_deficient: bool


def truncated_pinv(mat: np.ndarray, threshold: float | None = None) -> tuple[np.ndarray, PinvInfo]:
    """Moore-Penrose pseudo-inverse keeping singular values above ``threshold * s_max``.

    ``threshold=None`` uses numpy's default cutoff ``max(shape) * eps``,
    ``threshold=0`` keeps every nonzero singular value.
    """
    mat = np.asarray(mat)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    smax = s[0] if s.size else 0.0
    if threshold is None:
        cutoff = max(mat.shape) * np.finfo(float).eps * smax
    else:
        cutoff = threshold * smax
    keep = s > cutoff
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    pinv = (vh.conj().T * inv_s) @ u.conj().T
    deficient = bool(smax == 0 or s[-1] < RANK_TOL * smax)
    return pinv, PinvInfo(s, int(keep.sum()), deficient)


# ---------------------------------------------------------------------------
# PWD estimates

@dataclass
class PWDEstimate:
    """PWD coefficient vectors, ``coeffs[estimate, bin, coefficient]``.

    For the stationary and compensated paths each estimate is one STFT
    frame; for the enhanced path each estimate is one group of ``I``
    frames.
    """

    method: str
    order: int
    bins: list
    coeffs: np.ndarray
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown PWD method {self.method!r}")
        if self.coeffs.shape[1:] != (len(self.bins), sh.num_coeffs(self.order)):
            raise ValueError(f"coefficient array shape {self.coeffs.shape} does not match "
                             f"{len(self.bins)} bins at order {self.order}")

    @property
    def num_estimates(self) -> int:
        return self.coeffs.shape[0]

    def at_bin(self, bin_index: int) -> np.ndarray:
        try:
            pos = self.bins.index(bin_index)
        except ValueError:
            raise KeyError(f"bin {bin_index} not in estimate") from None
        return self.coeffs[:, pos]

    @classmethod
    def concatenate(cls, parts: Sequence["PWDEstimate"]) -> "PWDEstimate":
        first = parts[0]
        diags = [d for p in parts for d in p.diagnostics]
        return cls(first.method, first.order, list(first.bins),
                   np.concatenate([p.coeffs for p in parts]), diags)


def _processed_bins(frames: STFTFrameSet, bins):
    if bins is None:
        return list(range(frames.params.frame_length // 2 + 1))
    bins = [int(b) for b in bins]
    if not bins:
        raise ConfigurationError("no frequency bins selected")
    if min(bins) < 0 or max(bins) >= frames.frames.shape[2]:
        raise ConfigurationError(f"bins must lie in 0..{frames.frames.shape[2] - 1}")
    return bins


def pwd_stationary(frames: STFTFrameSet, steering, order: int, bins=None) -> PWDEstimate:
    """Per-frame ``V(w)^+ p(i, w)``.

    ``steering`` maps a bin to its steering matrix, or is a callable
    ``steering(bin, order)`` such as :class:`SteeringProvider`.
    """
    bins = _processed_bins(frames, bins)
    out = np.empty((frames.num_frames, len(bins), sh.num_coeffs(order)), dtype=complex)
    diags = []
    for j, b in enumerate(bins):
        pinv, info = truncated_pinv(_steering(steering, b, order))
        if info.rank_deficient:
            diags.append(f"bin {b}: steering matrix is rank deficient "
                         f"(s_min/s_max = {info.singular_values[-1] / max(info.singular_values[0], 1e-300):.2e})")
        out[:, j] = frames.frames[:, :, b] @ pinv.T
    return PWDEstimate("stationary", order, bins, out, diags)


def pwd_compensated(frames: STFTFrameSet, steering, transforms, order: int, bins=None,
                    method: str = "compensated") -> PWDEstimate:
    """Per-frame ``[V_i(w) W_i(w)]^+ p(i, w)``.

    ``transforms(frame, bin)`` (or ``transforms[frame][bin]``) returns the
    :class:`MotionTransform` of that frame; its output order selects the
    steering order ``V_i`` is evaluated at.
    """
    bins = _processed_bins(frames, bins)
    out = np.empty((frames.num_frames, len(bins), sh.num_coeffs(order)), dtype=complex)
    diags = []
    for i in range(frames.num_frames):
        for j, b in enumerate(bins):
            w = transforms(i, b) if callable(transforms) else transforms[i][b]
            system = _compensated_system(steering, w, b, order)
            pinv, info = truncated_pinv(system)
            if info.rank_deficient:
                diags.append(f"frame {i} bin {b}: compensated system is rank deficient")
            out[i, j] = pinv @ frames.frames[i, :, b]
    return PWDEstimate(method, order, bins, out, diags)


def _compensated_system(steering, w: MotionTransform, bin_index: int, order: int) -> np.ndarray:
    if w.input_order != order:
        raise ConfigurationError(
            f"motion transform input order {w.input_order} differs from estimator order {order}")
    v = _steering(steering, bin_index, w.output_order)
    if v.shape[1] != w.matrix.shape[0]:
        raise ConfigurationError(
            f"steering has {v.shape[1]} columns but the motion transform has "
            f"{w.matrix.shape[0]} rows")
    return v @ w.matrix


def combined_matrix(steerings: Sequence[np.ndarray], transforms: Sequence[MotionTransform],
                    frames: int | None = None) -> np.ndarray:
    """Row-stack ``V_i W_i`` for the ``I`` frames of one group.

    The transforms need not start at the identity: they may be referred to
    any common reference pose, which is then the pose the estimate
    describes.
    """
    count = len(transforms) if frames is None else frames
    if count < 1 or len(steerings) < count or len(transforms) < count:
        raise ConfigurationError(f"need {count} steering matrices and transforms")
    orders = {w.input_order for w in transforms[:count]}
    if len(orders) != 1:
        raise ConfigurationError(f"inconsistent input orders across blocks: {sorted(orders)}")
    blocks = []
    for i, (v, w) in enumerate(zip(steerings[:count], transforms[:count])):
        v = np.asarray(v)
        if v.shape[1] != w.matrix.shape[0]:
            raise ConfigurationError(
                f"block {i}: steering has {v.shape[1]} columns, transform has "
                f"{w.matrix.shape[0]} rows")
        blocks.append(v @ w.matrix)
    if len({b.shape[0] for b in blocks}) != 1:
        raise ConfigurationError("inconsistent microphone counts across blocks")
    return np.vstack(blocks)


def pwd_enhanced(frames: STFTFrameSet, combined: Mapping[int, np.ndarray],
                 sv_threshold: float = 1.0 / 3.0, order: int | None = None) -> PWDEstimate:
    """Single estimate per bin, ``A(w)^+ p~(w)`` with a truncated SVD.

    ``frames`` holds the ``I`` time-aligned frames of one group and
    ``combined`` maps each bin to its ``(I*M, K)`` combined matrix.
    """
    if not 0 <= sv_threshold < 1:
        raise ConfigurationError(f"svThreshold must lie in [0, 1), got {sv_threshold}")
    bins = sorted(combined)
    if not bins:
        raise ConfigurationError("no frequency bins selected")
    size = next(iter(combined.values())).shape[1]
    if order is None:
        order = sh.order_from_size(size)
    out = np.empty((1, len(bins), sh.num_coeffs(order)), dtype=complex)
    diags = []
    for j, b in enumerate(bins):
        a = combined[b]
        stacked = frames.frames[:, :, b].reshape(-1)
        if a.shape[0] != stacked.size:
            raise ConfigurationError(
                f"bin {b}: combined matrix has {a.shape[0]} rows for {stacked.size} samples")
        pinv, info = truncated_pinv(a, sv_threshold)
        if info.kept == 0:
            raise DegenerateSystemError(f"bin {b}: no singular value above the threshold")
        diags.append(f"bin {b}: inverted {info.kept} of {info.singular_values.size} "
                     f"singular values")
        out[0, j] = pinv @ stacked
    return PWDEstimate("enhanced", order, bins, out, diags)


# ---------------------------------------------------------------------------
# covariance

@dataclass
class SmoothedCovariance:
    matrix: np.ndarray
    bins: list
    frame_count: int

    @property
    def order(self) -> int:
        return sh.order_from_size(self.matrix.shape[0])


def covariance(pwd: PWDEstimate, bin_index: int) -> np.ndarray:
    """Sample covariance ``(1/J) sum_i a(i) a(i)^H`` at one bin."""
    vecs = pwd.at_bin(bin_index)
    if vecs.shape[0] == 0:
        raise InsufficientDataError("covariance needs at least one estimate")
    q = vecs.T @ vecs.conj() / vecs.shape[0]
    return 0.5 * (q + q.conj().T)


def freq_smooth(covs: Mapping[int, np.ndarray], bins=None, frame_count: int = 0) -> SmoothedCovariance:
    """Uniformly weighted mean of per-bin covariances over ``bins``."""
    bins = sorted(covs) if bins is None else list(bins)
    if not bins:
        raise ConfigurationError("frequency-smoothing bin set is empty")
    mat = sum(covs[b] for b in bins) / len(bins)
    return SmoothedCovariance(mat, bins, frame_count)


def smoothed_covariance(pwd: PWDEstimate, bins=None) -> SmoothedCovariance:
    bins = pwd.bins if bins is None else bins
    return freq_smooth({b: covariance(pwd, b) for b in bins}, bins, pwd.num_estimates)


def noise_covariance(pinvs: Sequence[np.ndarray]) -> np.ndarray:
    """Unit-trace ``mean(B B^H)`` for the pseudo-inverses ``B`` that produced the PWD."""
    cov = sum(b @ b.conj().T for b in pinvs) / len(pinvs)
    return cov / np.trace(cov).real


# ---------------------------------------------------------------------------
# MUSIC

@dataclass
class MusicSpectrum:
    theta: np.ndarray  # polar grid, radians
    phi: np.ndarray  # azimuth grid, radians
    values: np.ndarray  # (len(theta), len(phi))
    sources: int

    @property
    def grid(self) -> np.ndarray:
        """All grid points as ``(P, 2)`` (theta, phi), row-major."""
        tt, pp = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.column_stack([tt.ravel(), pp.ravel()])


def spherical_grid(resolution_deg: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < resolution_deg <= 90:
        raise ConfigurationError(f"grid resolution must lie in (0, 90] degrees")
    theta = np.radians(np.arange(0.0, 180.0 + 1e-9, resolution_deg))
    phi = np.radians(np.arange(0.0, 360.0 - 1e-9, resolution_deg))
    return theta, phi


@lru_cache(maxsize=16)
def _direction_vectors(order: int, resolution_deg: float) -> np.ndarray:
    theta, phi = spherical_grid(resolution_deg)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    y = np.conj(sh.sh_matrix(order, tt.ravel(), pp.ravel()))
    y.setflags(write=False)
    return y


def noise_subspace(q: np.ndarray, sources: int, rtol: float = 1e-9) -> np.ndarray:
    """Eigenvectors of the ``K - S`` smallest eigenvalues of ``q``.

    Eigenvalues tied (within ``rtol`` of the largest) with the largest noise
    eigenvalue join the noise subspace, so an isotropic matrix gives a flat
    spectrum instead of one shaped by an arbitrary basis split.
    """
    size = q.shape[0]
    if not 1 <= sources < size:
        raise InvalidSourceCountError(f"S={sources} must satisfy 1 <= S < {size}")
    vals, vecs = np.linalg.eigh(q)
    tol = rtol * max(abs(vals[-1]), np.finfo(float).tiny)
    count = size - sources
    while count < size and vals[count] - vals[count - 1] <= tol:
        count += 1
    return vecs[:, :count]


def music_spectrum(cov: SmoothedCovariance, sources: int, resolution_deg: float = 2.0,
                   whitening: np.ndarray | None = None) -> MusicSpectrum:
    """``P = 1 / ||E_n^H y||^2`` on an equiangular grid, ``y_nm = conj(Y_n^m)``.

    ``whitening`` is an optional noise covariance; if given, both the
    covariance and the direction vectors are pre-whitened by its inverse
    square root.
    """
    q = np.asarray(cov.matrix)
    order = sh.order_from_size(q.shape[0])
    y = _direction_vectors(order, float(resolution_deg))
    if whitening is not None:
        w = _inverse_sqrt(whitening)
        q = w @ q @ w.conj().T
        y = y @ w.T
    en = noise_subspace(q, sources)
    proj = np.sum(np.abs(y @ en.conj()) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        vals = np.where(proj > 0, 1.0 / proj, np.finfo(float).max)
    theta, phi = spherical_grid(resolution_deg)
    return MusicSpectrum(theta, phi, vals.reshape(theta.size, phi.size), sources)


def _inverse_sqrt(cov: np.ndarray, reg: float = 1e-6) -> np.ndarray:
    cov = cov / np.trace(cov).real
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.conj().T))
    vals = np.maximum(vals, 0.0) + reg * vals.max()
    return (vecs / np.sqrt(vals)) @ vecs.conj().T


# ---------------------------------------------------------------------------
# peak picking

@dataclass
class DoAResult:
    estimates: list  # (theta, phi) radians
    values: list
    error_angles: list | None = None  # degrees
    diagnostics: list = field(default_factory=list)


def _neighbour_extremes(values: np.ndarray):
    """Max and min over the 8-neighbourhood, azimuth wrapping, poles collapsed."""
    padded = np.pad(values, ((1, 1), (0, 0)), constant_values=np.nan)
    padded = np.concatenate([padded[:, -1:], padded, padded[:, :1]], axis=1)
    rows, cols = values.shape
    stack = [padded[1 + di: 1 + di + rows, 1 + dj: 1 + dj + cols]
             for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj]
    stack = np.stack(stack)
    with np.errstate(invalid="ignore"):
        hi = np.nanmax(stack, axis=0)
        lo = np.nanmin(stack, axis=0)
    return hi, lo


def pick_peaks(spec: MusicSpectrum, sources: int, truth=None, rtol: float = 1e-9) -> DoAResult:
    """The ``S`` largest local maxima of a MUSIC spectrum.

    A point is a local maximum when it is not below any of its eight
    neighbours and exceeds the smallest of them by more than ``rtol``
    (relative), so numerically flat regions give no peaks. Polar rows,
    which repeat a single point, contribute at most one candidate each and
    neighbour the whole adjacent ring. Ties are broken by the smaller
    linear grid index.
    """
    if sources < 1:
        raise InvalidSourceCountError("S must be at least 1")
    vals = spec.values
    hi, lo = _neighbour_extremes(vals)
    is_max = (vals >= hi) & (vals > lo * (1 + rtol) + 1e-300)
    for row, ring in _pole_rows(spec):
        v = vals[row, 0]
        ring_vals = vals[ring]
        is_max[row] = False
        is_max[row, 0] = bool(v >= ring_vals.max() and v > ring_vals.min() * (1 + rtol))
    idx = np.flatnonzero(is_max.ravel())
    order = np.lexsort((idx, -vals.ravel()[idx]))
    chosen = idx[order][:sources]
    grid = spec.grid
    estimates = [(float(grid[i, 0]), float(grid[i, 1])) for i in chosen]
    result = DoAResult(estimates, [float(vals.ravel()[i]) for i in chosen])
    if len(chosen) < sources:
        result.diagnostics.append(
            f"only {len(chosen)} local maxima found for S={sources}")
    if truth is not None:
        truths = [truth] if np.ndim(truth[0]) == 0 else list(truth)
        result.error_angles = [
            min(doa_error_angle(est, t) for t in truths) for est in estimates]
    return result


def _pole_rows(spec: MusicSpectrum):
    rows = []
    n = spec.theta.size
    if n >= 2 and abs(spec.theta[0]) < 1e-12:
        rows.append((0, 1))
    if n >= 2 and abs(spec.theta[-1] - np.pi) < 1e-12:
        rows.append((n - 1, n - 2))
    return rows


# ---------------------------------------------------------------------------
# diagnostics and metrics

def effective_rank(mat: np.ndarray) -> float:
    """``exp`` of the Shannon entropy of the normalised singular values."""
    s = np.linalg.svd(np.asarray(mat), compute_uv=False)
    total = s.sum()
    if not total > 0:
        raise UndefinedRankError("effective rank of a zero matrix is undefined")
    p = s[s > 0] / total
    return float(np.exp(-np.sum(p * np.log(p))))


def normalized_singular_values(mat: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(np.asarray(mat), compute_uv=False)
    return s / s[0]


def doa_error_angle(est, truth) -> float:
    """Great-circle angle in degrees between two (theta, phi) directions in radians."""
    u = _unit(*est)
    v = _unit(*truth)
    return math.degrees(math.atan2(np.linalg.norm(np.cross(u, v)), float(u @ v)))


def _unit(theta, phi):
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def error_stats(errors) -> tuple[float, float]:
    """Sample mean and sample standard deviation (``ddof=1``)."""
    errs = np.asarray(list(errors), dtype=float)
    if errs.size == 0:
        raise InsufficientDataError("no error values")
    std = float(errs.std(ddof=1)) if errs.size > 1 else 0.0
    return float(errs.mean()), std
