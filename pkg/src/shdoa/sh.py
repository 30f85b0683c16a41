"""Spherical-harmonic special functions and coefficient indexing.

All harmonics are the orthonormal complex ones with the Condon-Shortley
phase, ``Y_n^m(theta, phi)`` with ``theta`` the polar angle (elevation
measured from +z) and ``phi`` the azimuth. Coefficient vectors use the
linear index ``n**2 + n + m`` (ACN ordering).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import special

from .errors import InvalidDegreeError, InvalidOrderError


def _check_degree(n, m):
    if n < 0:
        raise InvalidOrderError(f"order n={n} must be non-negative")
    if abs(m) > n:
        raise InvalidDegreeError(f"degree m={m} outside [-{n}, {n}]")


def acn_index(n: int, m: int) -> int:
    _check_degree(n, m)
    return n * n + n + m


def acn_to_nm(index: int) -> tuple[int, int]:
    """Inverse of :func:`acn_index`."""
    if index < 0:
        raise InvalidOrderError(f"linear index {index} must be non-negative")
    n = math.isqrt(index)
    return n, index - n * n - n


def num_coeffs(order: int) -> int:
    return (order + 1) ** 2


def order_from_size(size: int) -> int:
    order = math.isqrt(size) - 1
    if (order + 1) ** 2 != size:
        raise InvalidOrderError(f"{size} is not a square coefficient count")
    return order


def nm_arrays(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the (n, m) index arrays of all coefficients up to ``order``."""
    n = np.concatenate([np.full(2 * k + 1, k) for k in range(order + 1)])
    m = np.concatenate([np.arange(-k, k + 1) for k in range(order + 1)])
    return n, m


@dataclass(frozen=True)
class SHIndex:
    n: int
    m: int

    def __post_init__(self):
        _check_degree(self.n, self.m)

    @property
    def linear(self) -> int:
        return self.n * self.n + self.n + self.m


@dataclass
class SHVector:
    """Coefficients of a field (or PWD) up to ``order``, ACN ordered."""

    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.order < 0:
            raise InvalidOrderError("order must be non-negative")
        if self.coeffs.shape != (num_coeffs(self.order),):
            raise InvalidOrderError(
                f"expected {num_coeffs(self.order)} coefficients for order "
                f"{self.order}, got shape {self.coeffs.shape}")

    def __getitem__(self, nm):
        n, m = nm
        return self.coeffs[acn_index(n, m)]


# ---------------------------------------------------------------------------
# spherical harmonics and Bessel functions

def sph_harm(n: int, m: int, theta, phi):
    """Complex orthonormal spherical harmonic with Condon-Shortley phase."""
    _check_degree(n, m)
    return special.sph_harm_y(n, m, theta, phi)


def sh_matrix(order: int, theta, phi) -> np.ndarray:
    """Evaluate all harmonics up to ``order`` at the given directions.

    Returns an array of shape ``(len(theta), (order+1)**2)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    n, m = nm_arrays(order)
    return special.sph_harm_y(n[None, :], m[None, :], theta[:, None], phi[:, None])


def sph_bessel_j(q: int, x, derivative: bool = False):
    """Spherical Bessel function of the first kind, ``j_q(x)``.

    scipy's implementation switches to a power series near the origin, so
    ``j_q(0)`` is exact and small arguments do not lose precision.
    """
    if np.any(np.asarray(q) < 0):
        raise InvalidOrderError(f"Bessel order q={q} must be non-negative")
    return special.spherical_jn(q, x, derivative=derivative)


def sph_hankel2(n, x, derivative: bool = False):
    """Spherical Hankel function of the second kind, ``j_n - i y_n``.

    This is the outgoing wave for the ``exp(+j omega t)`` time convention
    used by the STFT in :mod:`shdoa.spectral`.
    """
    return (special.spherical_jn(n, x, derivative=derivative)
            - 1j * special.spherical_yn(n, x, derivative=derivative))


# ---------------------------------------------------------------------------
# Wigner symbols

def _log_fact(x):
    return special.gammaln(np.asarray(x, dtype=float) + 1.0)


@lru_cache(maxsize=200_000)
def wigner_3j(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    """Wigner 3j symbol by Racah's single-sum formula.

    Factorials are evaluated as log-gamma so orders above ~20 do not
    overflow. The terms are scaled by their largest magnitude before the
    alternating sum.
    """
    if j1 < 0 or j2 < 0 or j3 < 0:
        raise InvalidOrderError("3j orders must be non-negative")
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        raise InvalidDegreeError(f"invalid degrees in 3j({j1},{j2},{j3};{m1},{m2},{m3})")
    if m1 + m2 + m3 != 0:
        return 0.0
    if j3 < abs(j1 - j2) or j3 > j1 + j2:
        return 0.0
    if m1 == m2 == m3 == 0 and (j1 + j2 + j3) % 2:
        return 0.0

    kmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    if kmax < kmin:
        return 0.0
    k = np.arange(kmin, kmax + 1)
    log_den = (_log_fact(k) + _log_fact(j3 - j2 + k + m1) + _log_fact(j3 - j1 + k - m2)
               + _log_fact(j1 + j2 - j3 - k) + _log_fact(j1 - k - m1)
               + _log_fact(j2 - k + m2))
    log_pre = 0.5 * (
        _log_fact(j1 + j2 - j3) + _log_fact(j1 - j2 + j3) + _log_fact(-j1 + j2 + j3)
        - _log_fact(j1 + j2 + j3 + 1)
        + _log_fact(j1 + m1) + _log_fact(j1 - m1) + _log_fact(j2 + m2)
        + _log_fact(j2 - m2) + _log_fact(j3 + m3) + _log_fact(j3 - m3))
    log_terms = log_pre - log_den
    scale = log_terms.max()
    signs = np.where(k % 2, -1.0, 1.0)
    total = np.sum(signs * np.exp(log_terms - scale)) * math.exp(scale)
    phase = -1.0 if (j1 - j2 - m3) % 2 else 1.0
    return float(phase * total)


def jacobi(s: int, a: float, b: float, x):
    """Jacobi polynomial ``P_s^{(a,b)}(x)`` by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if s == 0:
        return p_prev
    p = (a + 1.0) + 0.5 * (a + b + 2.0) * (x - 1.0)
    for k in range(2, s + 1):
        c = 2 * k + a + b
        a1 = 2.0 * k * (k + a + b) * (c - 2.0)
        a2 = (c - 1.0) * (c * (c - 2.0) * x + a * a - b * b)
        a3 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * c
        p_prev, p = p, (a2 * p - a3 * p_prev) / a1
    return p


def wigner_d(n: int, m1: int, m2: int, beta):
    """Real Wigner small-d function ``d^n_{m1,m2}(beta)``.

    Uses the Jacobi-polynomial form with ``mu = |m1-m2|``, ``nu = |m1+m2|``
    and Jacobi degree ``s = n - (mu+nu)/2``; the sign factor is 1 when
    ``m2 >= m1`` and ``(-1)**(m2-m1)`` otherwise.
    """
    _check_degree(n, m1)
    _check_degree(n, m2)
    mu = abs(m1 - m2)
    nu = abs(m1 + m2)
    s = n - (mu + nu) // 2
    eta = 1.0 if m2 >= m1 or (m2 - m1) % 2 == 0 else -1.0
    log_norm = 0.5 * (_log_fact(s) + _log_fact(s + mu + nu)
                      - _log_fact(s + mu) - _log_fact(s + nu))
    beta = np.asarray(beta, dtype=float)
    half = 0.5 * beta
    val = (eta * np.exp(log_norm) * np.sin(half) ** mu * np.cos(half) ** nu
           * jacobi(s, mu, nu, np.cos(beta)))
    return val if val.ndim else float(val)


def wigner_D(n: int, m1: int, m2: int, alpha, beta, gamma):
    """Wigner D-function ``exp(-j m1 alpha) d^n_{m1,m2}(beta) exp(-j m2 gamma)``."""
    d = wigner_d(n, m1, m2, beta)
    return np.exp(-1j * m1 * np.asarray(alpha)) * d * np.exp(-1j * m2 * np.asarray(gamma))


def wigner_D_block(n: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    """The ``(2n+1) x (2n+1)`` block with rows m1 and columns m2 from -n to n."""
    ms = np.arange(-n, n + 1)
    d = np.empty((2 * n + 1, 2 * n + 1))
    for i, m1 in enumerate(ms):
        for j, m2 in enumerate(ms):
            d[i, j] = wigner_d(n, int(m1), int(m2), beta)
    return np.exp(-1j * ms * alpha)[:, None] * d * np.exp(-1j * ms * gamma)[None, :]


def plane_wave_pwd(order: int, theta, phi) -> np.ndarray:
    """PWD coefficients of unit plane waves arriving from ``(theta, phi)``.

    The PWD of a single plane wave is a delta on the sphere, whose
    coefficients are ``conj(Y_n^m(theta, phi))``. Returns shape
    ``((order+1)**2,)`` for scalar directions, else ``(len, (order+1)**2)``.
    """
    y = np.conj(sh_matrix(order, theta, phi))
    return y[0] if np.ndim(theta) == 0 else y
