"""Gaussian special functions and the isoperimetric profiles of the model spaces.

The Gaussian profile is ``I_gauss(v) = phi(Phi^{-1}(v))``.  The sphere model is
the n-sphere of radius ``sqrt(n-1)`` (Ricci curvature 1) with its uniform
probability measure; caps are parametrised by their colatitude ``theta`` in
``[0, pi]`` measured from the north pole.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from .errors import DomainError

SQRT_2PI = math.sqrt(2.0 * math.pi)
INV_SQRT_2PI = 1.0 / SQRT_2PI

# uniform volume grid used by every profile scan
V_GRID = np.linspace(1e-4, 1.0 - 1e-4, 2001)


def gauss_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) * INV_SQRT_2PI


def gauss_cdf(x):
    return special.ndtr(np.asarray(x, dtype=float))


def gauss_quantile(v):
    """Phi^{-1}(v) for v in (0, 1), polished by one Newton step.

    The Newton step is taken on whichever tail is smaller so that the
    correction is computed without cancellation.
    """
    v = np.asarray(v, dtype=float)
    if np.any(~((v > 0.0) & (v < 1.0))):
        raise DomainError("Gaussian quantile requires v in (0, 1)")
    x = special.ndtri(v)
    lower = v <= 0.5
    # residual on the smaller tail: Phi(x) - v  or  (1 - v) - Phi(-x)
    resid = np.where(lower, special.ndtr(x) - v, (1.0 - v) - special.ndtr(-x))
    x = x - resid / np.maximum(gauss_pdf(x), np.finfo(float).tiny)
    return x if x.ndim else float(x)


def gauss_cdf_quantile(x_or_v, mode: str = "cdf"):
    """Dispatch to the Gaussian ``cdf``, ``pdf`` or ``quantile``."""
    if mode == "cdf":
        out = gauss_cdf(x_or_v)
    elif mode == "pdf":
        out = gauss_pdf(x_or_v)
    elif mode == "quantile":
        return gauss_quantile(x_or_v)
    else:
        raise DomainError(f"unknown mode {mode!r}")
    return out if np.ndim(out) else float(out)


def quantile_from_logs(log_p, log_q):
    """Phi^{-1}(p) given log p and log q = log(1 - p), accurate in both tails."""
    log_p = np.asarray(log_p, dtype=float)
    log_q = np.asarray(log_q, dtype=float)
    lower = log_p <= log_q
    out = np.empty(np.broadcast(log_p, log_q).shape)
    lp = np.broadcast_to(log_p, out.shape)
    lq = np.broadcast_to(log_q, out.shape)
    low = np.broadcast_to(lower, out.shape)
    out[low] = special.ndtri_exp(lp[low])
    out[~low] = -special.ndtri_exp(lq[~low])
    return out


def iso_profile_gauss(v):
    """I_gauss(v) = phi(Phi^{-1}(v)); exactly 0 at v in {0, 1}."""
    v = np.asarray(v, dtype=float)
    if np.any((v < 0.0) | (v > 1.0)):
        raise DomainError("volume must lie in [0, 1]")
    out = np.zeros_like(v)
    inside = (v > 0.0) & (v < 1.0)
    # use the smaller tail so that I(v) = I(1 - v) holds bit-for-bit
    w = np.minimum(v[inside], 1.0 - v[inside])
    out[inside] = gauss_pdf(special.ndtri(w))
    return out if out.ndim else float(out)


def iso_profile_gauss_prime(v):
    """Derivative I'(v) = -Phi^{-1}(v)."""
    return -gauss_quantile(v)


def bobkov_constant(n: int) -> float:
    """c_n = sqrt(2) Gamma((n+1)/2) / Gamma(n/2).

    Direct gamma ratio while it cannot overflow, then the asymptotic series of
    Gamma(x + 1/2) / Gamma(x); a log-gamma difference would lose ~1e-13.
    """
    if n < 2:
        raise DomainError("c_n needs n >= 2")
    if n <= 300:
        return math.sqrt(2.0) * math.gamma((n + 1) / 2.0) / math.gamma(n / 2.0)
    x = n / 2.0
    return math.sqrt(2.0 * x) * sum(c / x**k for k, c in enumerate(_HALF_RATIO_SERIES))


_HALF_RATIO_SERIES = (1.0, -1 / 8, 1 / 128, 5 / 1024, -21 / 32768, -399 / 262144, 869 / 4194304)


@dataclass(frozen=True)
class SphereGeometry:
    """n-sphere of radius sqrt(n-1) with normalised uniform measure."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError("sphere dimension must be an integer >= 2")

    @property
    def R(self) -> float:
        return math.sqrt(self.n - 1.0)

    @cached_property
    def log_Z(self) -> float:
        # Z = int_0^pi sin^{n-1} = sqrt(pi) Gamma(n/2) / Gamma((n+1)/2)
        n = self.n
        return 0.5 * math.log(math.pi) + math.lgamma(n / 2.0) - math.lgamma((n + 1) / 2.0)

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)

    @property
    def alpha(self) -> float:
        """Jacobi exponent of the colatitude weight (1 - x^2)^alpha in x = cos(theta)."""
        return (self.n - 2) / 2.0

    def eigenvalue(self, k):
        """Eigenvalue of -Laplacian on degree-k harmonics: k(n+k-1)/(n-1)."""
        k = np.asarray(k, dtype=float)
        return k * (self.n + k - 1.0) / (self.n - 1.0)

    def cap_volume(self, theta):
        """mu{colatitude <= theta} as a regularised incomplete beta."""
        theta = np.asarray(theta, dtype=float)
        a = self.n / 2.0
        s2 = np.sin(0.5 * theta) ** 2
        c2 = np.cos(0.5 * theta) ** 2
        # evaluate the smaller side directly to keep relative accuracy
        out = np.where(theta <= 0.5 * np.pi,
                       special.betainc(a, a, s2),
                       1.0 - special.betainc(a, a, c2))
        return out if out.ndim else float(out)

    def interface_density(self, theta):
        """Boundary measure sin^{n-1}(theta) / (Z R) of the sphere at colatitude theta."""
        theta = np.asarray(theta, dtype=float)
        s = np.abs(np.sin(theta))
        with np.errstate(divide="ignore"):
            logs = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), -np.inf)
        out = np.exp((self.n - 1) * logs - self.log_Z - math.log(self.R))
        return out if out.ndim else float(out)

    def colatitude_for_volume(self, v):
        """Inverse of cap_volume to 1e-12 in v (beta inversion + Newton)."""
        v = np.asarray(v, dtype=float)
        if np.any((v < 0.0) | (v > 1.0)):
            raise DomainError("cap volume must lie in [0, 1]")
        a = self.n / 2.0
        x = special.betaincinv(a, a, v)
        theta = 2.0 * np.arcsin(np.sqrt(np.clip(x, 0.0, 1.0)))
        for _ in range(3):
            dens = np.exp((self.n - 1) * np.log(np.maximum(np.sin(theta), 1e-300)) - self.log_Z)
            step = np.where(dens > 1e-300, (self.cap_volume(theta) - v) / np.maximum(dens, 1e-300), 0.0)
            theta = np.clip(theta - step, 0.0, np.pi)
        theta = np.where(v == 0.0, 0.0, np.where(v == 1.0, np.pi, theta))
        return theta if theta.ndim else float(theta)


@dataclass(frozen=True)
class CapProfilePoint:
    theta: float
    volume: float
    boundary: float


def sphere_profile(geom: SphereGeometry, theta=None, volume=None) -> CapProfilePoint:
    """Volume and boundary of the cap given its colatitude or its volume.

    The cap boundary equals the spherical profile I_sphere(volume).
    """
    if (theta is None) == (volume is None):
        raise DomainError("give exactly one of theta or volume")
    if theta is None:
        theta = geom.colatitude_for_volume(volume)
    elif not 0.0 <= theta <= math.pi:
        raise DomainError("colatitude must lie in [0, pi]")
    return CapProfilePoint(float(theta), float(geom.cap_volume(theta)),
                           float(geom.interface_density(theta)))


def iso_profile_sphere(geom: SphereGeometry, v):
    v = np.asarray(v, dtype=float)
    w = np.minimum(v, 1.0 - v)
    out = geom.interface_density(geom.colatitude_for_volume(w))
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ProfileGap:
    n: int
    sup_gap: float
    argmax_v: float
    min_gap: float
    asym_residual: float


def profile_gap(n: int, grid=None) -> ProfileGap:
    """Sup of I_sphere - I_gauss on the volume grid and the Stirling residual

    |(n-1)/c_n^2 - (1 - 1/(2n))|.
    """
    geom = SphereGeometry(n)
    v = V_GRID if grid is None else np.asarray(grid, dtype=float)
    gap = iso_profile_sphere(geom, v) - iso_profile_gauss(v)
    i = int(np.argmax(gap))
    c = bobkov_constant(n)
    resid = abs((n - 1) / c**2 - (1.0 - 1.0 / (2.0 * n)))
    return ProfileGap(n, float(gap[i]), float(v[i]), float(gap.min()), resid)


def barthe_consistency_scan(n: int, grid=None) -> float:
    """max_v I_sphere(v)^{n/(n-1)} - I_gauss(v); expected <= 0.

    Consistency scan only: the exponent is applied to the probability-
    normalised profile.
    """
    geom = SphereGeometry(n)
    v = V_GRID if grid is None else np.asarray(grid, dtype=float)
    return float(np.max(iso_profile_sphere(geom, v) ** (n / (n - 1.0)) - iso_profile_gauss(v)))
