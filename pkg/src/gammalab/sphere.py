"""Zonal heat-flow calculus on the n-sphere of radius sqrt(n-1).

Zonal functions are functions of ``x = cos(theta)`` and are expanded in the
polynomials ``p_k`` orthonormal for the probability weight proportional to
``(1 - x^2)^{(n-2)/2}`` on [-1, 1].  They are the zonal spherical harmonics, with
``-Laplacian p_k = lambda_k p_k`` and ``lambda_k = k (n + k - 1) / (n - 1)``.

Everything is written in the x variable, where the geometric quantities are
polynomial: with ``D = d/dx`` and ``R^2 = n - 1``

    Gamma f          = (1 - x^2) (Df)^2 / R^2
    Laplacian f      = ((1 - x^2) D^2 f - n x Df) / R^2
    radial Hessian   = ((1 - x^2) D^2 f - x Df) / R^2
    tangential part  = -x Df / R^2   (multiplicity n - 1)

so the pole singularity of ``cot(theta)`` never appears.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import numpy as np
from scipy import special

from .errors import AliasingError, DomainError, NumericalError, TruncationError, ValidationError
from .profiles import SphereGeometry, gauss_pdf, quantile_from_logs

# mpmath precision is process-global; multiprecision sections run one at a time
_MP_LOCK = threading.RLock()


@contextmanager
def _mp_precision(dps: int):
    with _MP_LOCK, mpmath.workdps(dps):
        yield

DEFAULT_K = 96
DEFAULT_M = 256
LARGE_N_WARNING = 200


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    """Gauss-Jacobi rule in x = cos(theta) for the normalised zonal measure."""

    n: int
    m: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def theta(self):
        return np.arccos(self.nodes)


@lru_cache(maxsize=64)
def sphere_quadrature(n: int, m: int = DEFAULT_M) -> SphereQuadrature:
    a = (n - 2) / 2.0
    x, w = special.roots_jacobi(m, a, a)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return SphereQuadrature(n, m, x, w)


def recurrence_coefficients(n: int, K: int) -> np.ndarray:
    """a_k with x p_k = a_{k+1} p_{k+1} + a_k p_{k-1} (a_0 = 0)."""
    lam = (n - 1) / 2.0
    k = np.arange(1, K + 1, dtype=float)
    beta = k * (k + 2.0 * lam - 1.0) / (4.0 * (k + lam) * (k + lam - 1.0))
    return np.concatenate([[0.0], np.sqrt(beta)])


def zonal_basis(n: int, x, K: int, derivatives: int = 0) -> np.ndarray:
    """Values of p_0..p_K (and x-derivatives) at x, shape ``(d+1, K+1, len(x))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    a = recurrence_coefficients(n, K + 1)
    P = np.zeros((derivatives + 1, K + 1, x.size))
    P[0, 0] = 1.0
    if K >= 1:
        P[0, 1] = x / a[1]
        if derivatives >= 1:
            P[1, 1] = 1.0 / a[1]
    for k in range(1, K):
        P[0, k + 1] = (x * P[0, k] - a[k] * P[0, k - 1]) / a[k + 1]
        for d in range(1, derivatives + 1):
            P[d, k + 1] = (d * P[d - 1, k] + x * P[d, k] - a[k] * P[d, k - 1]) / a[k + 1]
    return P


def harmonic_dimension_log(n: int, k):
    """log of the dimension of degree-k spherical harmonics on S^n (= p_k(1)^2)."""
    k = np.asarray(k, dtype=float)
    return (np.log(2.0 * k + n - 1.0) - np.log(k + n - 1.0)
            + special.gammaln(k + n) - special.gammaln(k + 1.0) - special.gammaln(n))


def required_degree(geom: SphereGeometry, t: float, tol: float = 1e-13,
                    derivatives: int = 2, k_max: int = 4000) -> int:
    """Smallest K whose spectral tail at time t is below tol, uniformly in x.

    Uses |p_k(x)| <= p_k(1) and |coefficient| <= 1 (bounded data); each
    x-derivative costs at most a factor lambda_k (n - 1) / n.
    """
    if t <= 0:
        raise DomainError("tail bounds need t > 0")
    k = np.arange(1, k_max + 1, dtype=float)
    lam = geom.eigenvalue(k)
    log_term = (-lam * t + 0.5 * harmonic_dimension_log(geom.n, k)
                + derivatives * np.log1p(lam * (geom.n - 1) / geom.n))
    # tail sums from the top down, in log space
    rev = np.logaddexp.accumulate(log_term[::-1])[::-1]
    ok = np.nonzero(rev < math.log(tol))[0]
    if ok.size == 0:
        raise TruncationError(f"t={t} too small for any K <= {k_max}", required_degree=None)
    return int(max(ok[0], 1))


@dataclass(frozen=True, eq=False)
class ZonalFunction:
    """Zonal function sum_k coeffs[k] p_k(cos theta) on the sphere of geometry ``geom``."""

    geom: SphereGeometry
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValidationError("coefficients must be a non-empty vector")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def basis(cls, geom, k, scale=1.0):
        c = np.zeros(k + 1)
        c[k] = scale
        return cls(geom, c)

    @property
    def K(self):
        return self.coeffs.size - 1

    @property
    def n(self):
        return self.geom.n

    @property
    def mean(self):
        return float(self.coeffs[0])

    @property
    def norm2(self):
        return float(np.dot(self.coeffs, self.coeffs))

    @property
    def eigenvalues(self):
        return self.geom.eigenvalue(np.arange(self.K + 1))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        vals = self.coeffs @ zonal_basis(self.n, x.ravel(), self.K)[0]
        return vals.reshape(x.shape) if x.ndim else float(vals[0])

    def jet(self, x):
        """(f, Df, D^2 f) at x."""
        P = zonal_basis(self.n, x, self.K, derivatives=2)
        return tuple(self.coeffs @ P[i] for i in range(3))

    def at_theta(self, theta):
        return self(np.cos(np.asarray(theta, dtype=float)))

    def padded(self, K):
        if K < self.K:
            raise ValidationError("padding cannot shrink the degree")
        return ZonalFunction(self.geom, np.pad(self.coeffs, (0, K - self.K)))

    def __add__(self, other):
        if isinstance(other, ZonalFunction):
            K = max(self.K, other.K)
            return ZonalFunction(self.geom, self.padded(K).coeffs + other.padded(K).coeffs)
        c = self.coeffs.copy()
        c[0] += float(other)
        return ZonalFunction(self.geom, c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, scalar):
        return ZonalFunction(self.geom, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def laplacian(self):
        return ZonalFunction(self.geom, -self.eigenvalues * self.coeffs)


def zonal_transform(geom: SphereGeometry, data, direction: str = "analyze",
                    K: int | None = None, m: int | None = None):
    """Analyse nodal values at the Gauss-Jacobi nodes, or synthesise them."""
    if direction == "analyze":
        values = np.asarray(data, dtype=float)
        m = values.size if m is None else m
        if values.size != m:
            raise ValidationError("values must be given at all quadrature nodes")
        K = m - 1 if K is None else K
        if m < K + 1:
            raise AliasingError(f"{m} nodes cannot resolve degree {K}; need m >= K + 1")
        q = sphere_quadrature(geom.n, m)
        P = zonal_basis(geom.n, q.nodes, K)[0]
        return ZonalFunction(geom, P @ (q.weights * values))
    if direction == "synthesize":
        f = data if isinstance(data, ZonalFunction) else ZonalFunction(geom, data)
        m = max(DEFAULT_M, f.K + 1) if m is None else m
        if m < f.K + 1:
            raise AliasingError(f"{m} nodes cannot resolve degree {f.K}")
        return f(sphere_quadrature(geom.n, m).nodes)
    raise DomainError(f"unknown direction {direction!r}")


def analyze_zonal(geom: SphereGeometry, func, K: int, m: int | None = None) -> ZonalFunction:
    """Project a callable of x = cos(theta) on degrees <= K."""
    m = max(2 * K + 2, DEFAULT_M) if m is None else m
    q = sphere_quadrature(geom.n, m)
    return zonal_transform(geom, func(q.nodes), "analyze", K=K, m=m)


def gram_matrix(geom: SphereGeometry, K: int, m: int | None = None) -> np.ndarray:
    m = K + 1 if m is None else m
    q = sphere_quadrature(geom.n, m)
    P = zonal_basis(geom.n, q.nodes, K)[0]
    return (P * q.weights) @ P.T


def zonal_multiply(f: ZonalFunction, g: ZonalFunction) -> ZonalFunction:
    D = f.K + g.K
    q = sphere_quadrature(f.n, D + 1)
    return zonal_transform(f.geom, f(q.nodes) * g(q.nodes), "analyze", K=D, m=D + 1)


def heat_flow(f: ZonalFunction, t: float) -> ZonalFunction:
    """P_t f = e^{t Laplacian} f: coefficient k damped by exp(-lambda_k t)."""
    if t < 0:
        raise DomainError("time must be non-negative")
    return ZonalFunction(f.geom, f.coeffs * np.exp(-t * f.eigenvalues))


def project_linear_zonal(f: ZonalFunction, include_constant: bool = False) -> ZonalFunction:
    """Degree-1 component (optionally with the mean), i.e. the projection on
    linear (resp. affine) functions of the axis coordinate."""
    c = np.zeros(max(f.K, 1) + 1)
    if f.K >= 1:
        c[1] = f.coeffs[1]
    if include_constant:
        c[0] = f.coeffs[0]
    return ZonalFunction(f.geom, c)


@dataclass(frozen=True)
class ZonalGamma:
    """Nodal Gamma-calculus data of a zonal function."""

    x: np.ndarray
    weights: np.ndarray
    gamma: np.ndarray
    gamma2: np.ndarray
    gamma2_minus_gamma: np.ndarray
    laplacian: np.ndarray


def geometric_jet(geom: SphereGeometry, x, f0, f1, f2):
    """Gamma, radial and tangential Hessian entries and Laplacian from x-derivatives."""
    R2 = geom.n - 1.0
    s2 = 1.0 - x * x
    gamma = s2 * f1 * f1 / R2
    radial = (s2 * f2 - x * f1) / R2
    tangential = -x * f1 / R2
    lap = radial + (geom.n - 1) * tangential
    return gamma, radial, tangential, lap


def gamma_calculus_zonal(f: ZonalFunction, m: int | None = None) -> ZonalGamma:
    """Gamma, Gamma_2 and Laplacian at Gauss-Jacobi nodes exact for degree-2K integrands.

    Curvature is 1, so Gamma_2 - Gamma is the squared Hilbert-Schmidt norm of
    the Hessian.
    """
    m = f.K + 2 if m is None else m
    q = sphere_quadrature(f.n, m)
    f0, f1, f2 = f.jet(q.nodes)
    gamma, radial, tangential, lap = geometric_jet(f.geom, q.nodes, f0, f1, f2)
    hs = radial**2 + (f.n - 1) * tangential**2
    out = ZonalGamma(q.nodes, q.weights, gamma, hs + gamma, hs, lap)
    if not all(np.all(np.isfinite(a)) for a in (gamma, hs, lap)):
        raise NumericalError("non-finite Gamma-calculus values")
    return out


def spectral_integrals(f: ZonalFunction) -> dict:
    lam = f.eigenvalues
    b2 = f.coeffs**2
    return {
        "gamma": float(np.sum(lam * b2)),
        "laplacian_sq": float(np.sum(lam**2 * b2)),
        "gamma2_minus_gamma": float(np.sum((lam**2 - lam) * b2)),
        "f_plus_Lf_sq": float(np.sum((lam - 1.0) ** 2 * b2)),
    }


# -- band sets --------------------------------------------------------------------

@dataclass(frozen=True)
class BandSet:
    """Union of closed colatitude bands [theta_lo, theta_hi] (zonal set)."""

    geom: SphereGeometry
    bands: tuple = field(default_factory=tuple)

    def __post_init__(self):
        bands = tuple((float(a), float(b)) for a, b in self.bands)
        for a, b in bands:
            if not 0.0 <= a < b <= math.pi:
                raise ValidationError(f"band ({a}, {b}) not inside [0, pi] with a < b")
        for (a0, b0), (a1, b1) in zip(bands, bands[1:]):
            if not b0 < a1:
                raise ValidationError("bands must be sorted and disjoint")
        object.__setattr__(self, "bands", bands)

    @classmethod
    def from_breakpoints(cls, geom, breakpoints) -> "BandSet":
        bp = [float(b) for b in breakpoints]
        if len(bp) % 2:
            raise ValidationError("need an even number of breakpoints")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValidationError("breakpoints must be strictly increasing")
        return cls(geom, tuple(zip(bp[0::2], bp[1::2])))

    @classmethod
    def cap(cls, geom, theta=None, volume=None) -> "BandSet":
        if theta is None:
            theta = float(geom.colatitude_for_volume(volume))
        return cls(geom, ((0.0, theta),)) if theta > 0 else cls(geom, ())

    @property
    def breakpoints(self):
        return [e for ab in self.bands for e in ab]

    @property
    def volume(self) -> float:
        return float(sum(self.geom.cap_volume(b) - self.geom.cap_volume(a) for a, b in self.bands))

    @property
    def boundary(self) -> float:
        """Minkowski content: interface densities at interior breakpoints."""
        return float(sum(self.geom.interface_density(e) for e in self.breakpoints
                         if 0.0 < e < math.pi))

    @property
    def is_cap(self) -> bool:
        return len(self.bands) == 1 and (self.bands[0][0] == 0.0 or self.bands[0][1] == math.pi)

    def indicator(self, x):
        theta = np.arccos(np.clip(np.asarray(x, dtype=float), -1.0, 1.0))
        out = np.zeros(theta.shape)
        for a, b in self.bands:
            out[(theta >= a) & (theta <= b)] = 1.0
        return out

    def coefficients(self, K: int) -> np.ndarray:
        """Exact zonal coefficients of the indicator up to degree K.

        For k >= 1, int_{x0}^{1} p_k w dx = (1 - x0^2) w(x0) p_k'(x0) / mu_k with
        mu_k = k (k + n - 1), from the Sturm-Liouville form of the eigen-equation.
        """
        n = self.geom.n
        k = np.arange(K + 1)
        mu = k * (k + n - 1.0)
        log_wnorm = -(self.geom.log_Z)   # weight density in theta is sin^{n-1}/Z
        c = np.zeros(K + 1)
        c[0] = self.volume
        if K == 0:
            return c

        def upper(theta):
            # int over {colatitude <= theta} of p_k, for k >= 1
            if theta <= 0.0 or theta >= math.pi:
                return np.zeros(K)
            x0 = math.cos(theta)
            P = zonal_basis(n, [x0], K, derivatives=1)
            # (1 - x0^2) w(x0) with w(x) dx = sin^{n-1} dtheta / Z, i.e. w = (1-x^2)^{(n-2)/2}/Z
            pref = math.exp((n / 2.0) * math.log(1.0 - x0 * x0) + log_wnorm)
            return pref * P[1, 1:, 0] / mu[1:]

        for a, b in self.bands:
            c[1:] += upper(b) - upper(a)
        return c

    def zonal(self, K: int) -> ZonalFunction:
        return ZonalFunction(self.geom, self.coefficients(K))


@dataclass(frozen=True)
class ZonalProbitJet:
    """Flowed [0,1]-valued zonal data and its probit transform at nodes x."""

    geom: SphereGeometry
    x: np.ndarray
    value: np.ndarray
    grad_sq: np.ndarray
    h: np.ndarray
    gamma_h: np.ndarray
    gamma2_minus_gamma_h: np.ndarray
    valid: np.ndarray
    eta: float

    @property
    def iso(self):
        return gauss_pdf(self.h)


def probit_jet_zonal(f: ZonalFunction, x, eta: float = 1e-12) -> ZonalProbitJet:
    """h = Phi^{-1}(f) with Gamma(h) and |Hess h|^2 via the chain rule.

    Points where f leaves [eta, 1 - eta], or where rounding in the series
    swamps f or Gamma(h), are flagged invalid; there ``h`` is computed from the
    clamped value.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    P = zonal_basis(f.n, x, f.K, derivatives=2)
    f0, f1, f2 = (f.coeffs @ P[i] for i in range(3))
    # rounding of the series: near the poles basis values are huge and the sum cancels
    a = np.abs(f.coeffs)
    err0 = 8 * f.K * np.finfo(float).eps * (a @ np.abs(P[0]))
    err1 = 8 * f.K * np.finfo(float).eps * (a @ np.abs(P[1]))
    gamma, radial, tangential, _ = geometric_jet(f.geom, x, f0, f1, f2)
    v = np.clip(f0, eta, 1.0 - eta)
    h = quantile_from_logs(np.log(v), np.log1p(-v))
    phi = gauss_pdf(h)
    gamma_h = gamma / phi**2
    sd = np.sqrt(np.clip(1.0 - x * x, 0.0, None)) / f.geom.R
    valid = ((f0 >= eta) & (f0 <= 1.0 - eta)
             & (err0 <= 1e-8 * np.minimum(np.abs(f0), np.abs(1.0 - f0)))
             & (err1 * sd / phi <= 1e-7 * (1.0 + np.sqrt(gamma_h))))
    # Hess h = Hess f / phi(h) + h grad h (x) grad h ; the rank-one term is radial
    radial_h = radial / phi + h * gamma_h
    tangential_h = tangential / phi
    hs = radial_h**2 + (f.n - 1) * tangential_h**2
    return ZonalProbitJet(f.geom, x, f0, gamma, h, gamma_h, hs, valid, eta)


def flowed_band(bandset: BandSet, t: float, K: int | None = None, tol: float = 1e-13) -> ZonalFunction:
    """P_t 1_A as a truncated zonal expansion, with K chosen from the tail bound."""
    if t <= 0:
        raise DomainError("indicators are only flowed for t > 0")
    K = required_degree(bandset.geom, t, tol) if K is None else K
    return heat_flow(bandset.zonal(K), t)


# -- heat kernel ------------------------------------------------------------------

@dataclass(frozen=True)
class ZonalKernel:
    theta: np.ndarray
    distance: np.ndarray
    p: np.ndarray
    grad_log_sq: np.ndarray
    hess_log_sq: np.ndarray
    K: int
    mass: float


def _mp_zonal_jets(n, K, x_list, coeffs):
    """sum_k coeffs[k] p_k^{(d)}(x) for d = 0, 1, 2 in the current mpmath precision."""
    lam = mpmath.mpf(n - 1) / 2
    a = [mpmath.mpf(0)]
    for k in range(1, K + 2):
        a.append(mpmath.sqrt(mpmath.mpf(k) * (k + 2 * lam - 1) / (4 * (k + lam) * (k + lam - 1))))
    out = []
    for x in x_list:
        p0, p1 = mpmath.mpf(1), x / a[1]
        d0, d1 = mpmath.mpf(0), 1 / a[1]
        e0, e1 = mpmath.mpf(0), mpmath.mpf(0)
        s0 = coeffs[0] * p0 + (coeffs[1] * p1 if K >= 1 else 0)
        s1 = coeffs[1] * d1 if K >= 1 else mpmath.mpf(0)
        s2 = mpmath.mpf(0)
        for k in range(1, K):
            p2 = (x * p1 - a[k] * p0) / a[k + 1]
            d2 = (p1 + x * d1 - a[k] * d0) / a[k + 1]
            e2 = (2 * d1 + x * e1 - a[k] * e0) / a[k + 1]
            c = coeffs[k + 1]
            s0 += c * p2
            s1 += c * d2
            s2 += c * e2
            p0, p1, d0, d1, e0, e1 = p1, p2, d1, d2, e1, e2
        out.append((s0, s1, s2))
    return out


def kernel_degree(geom: SphereGeometry, t: float, rel_tol: float = 1e-12) -> int:
    """Degree at which the kernel series tail is below rel_tol times its smallest value.

    The smallest value (at the antipode) is bounded below by the leading
    heat-kernel asymptotics exp(-(pi R)^2 / (4 t)) times a generous polynomial
    factor.
    """
    return _required_degree_log(geom, t, _kernel_log_floor(geom, t) + math.log(rel_tol))


def _kernel_log_floor(geom, t):
    return -(math.pi * geom.R) ** 2 / (4.0 * t) - 10.0 * math.log(1.0 + 1.0 / t) - 20.0


def _required_degree_log(geom, t, log_tol, k_max=20000, derivatives=2):
    k = np.arange(1, k_max + 1, dtype=float)
    lam = geom.eigenvalue(k)
    log_term = (-lam * t + harmonic_dimension_log(geom.n, k)
                + derivatives * np.log1p(lam * (geom.n - 1) / geom.n))
    rev = np.logaddexp.accumulate(log_term[::-1])[::-1]
    ok = np.nonzero(rev < log_tol)[0]
    if ok.size == 0:
        raise TruncationError(f"t={t} too small for K <= {k_max}")
    return int(max(ok[0], 1))


def heat_kernel_zonal(geom: SphereGeometry, t: float, theta, K: int | None = None,
                      rel_tol: float = 1e-12) -> ZonalKernel:
    """Zonal heat kernel p_t(pole, theta) w.r.t. the uniform probability measure.

    p_t = sum_k e^{-lambda_k t} p_k(1) p_k(cos theta).  The series is summed in
    multiprecision because near the antipode p_t is exponentially smaller than
    the individual terms; the precision is set from the expected dynamic range.
    Also returns |grad log p_t|^2 and the squared Hilbert-Schmidt norm of the
    Hessian of log p_t.
    """
    if t <= 0:
        raise DomainError("heat kernel needs t > 0")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    log_floor = _kernel_log_floor(geom, t)
    K_needed = kernel_degree(geom, t, rel_tol)
    if K is None:
        K = K_needed
    elif K < K_needed:
        raise TruncationError(f"t={t} too small for truncation K={K}", required_degree=K_needed)
    # digits: dynamic range of the terms against the antipodal value, plus guard
    log_top = float(np.max(-geom.eigenvalue(np.arange(K + 1)) * t
                           + harmonic_dimension_log(geom.n, np.arange(K + 1))))
    dps = int((log_top - log_floor) / math.log(10.0)) + 30
    n = geom.n
    R2 = n - 1.0
    with _mp_precision(max(dps, 30)):
        lamk = [mpmath.mpf(k) * (n + k - 1) / (n - 1) for k in range(K + 1)]
        pk1 = _mp_basis_at_one(n, K)
        coeffs = [mpmath.exp(-lamk[k] * t) * pk1[k] for k in range(K + 1)]
        xs = [mpmath.cos(mpmath.mpf(float(th))) for th in theta]
        jets = _mp_zonal_jets(n, K, xs, coeffs)
        p, g, hs = [], [], []
        for x, (f0, f1, f2) in zip(xs, jets):
            s2 = 1 - x * x
            u1 = f1 / f0
            u2 = f2 / f0 - u1 * u1          # x-derivatives of log p
            grad = s2 * u1 * u1 / R2
            radial = (s2 * u2 - x * u1) / R2
            tang = -x * u1 / R2
            p.append(float(f0))
            g.append(float(grad))
            hs.append(float(radial**2 + (n - 1) * tang**2))
    p = np.array(p)
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise NumericalError("heat kernel series lost positivity; increase precision")
    q = sphere_quadrature(n, max(DEFAULT_M, 2 * K + 2))
    mass = float(np.sum(q.weights * _double_kernel(geom, t, q.nodes, K)))
    return ZonalKernel(theta, geom.R * theta, p, np.array(g), np.array(hs), K, mass)


def _mp_basis_at_one(n, K):
    lam = mpmath.mpf(n - 1) / 2
    a = [mpmath.mpf(0)] + [mpmath.sqrt(mpmath.mpf(k) * (k + 2 * lam - 1) / (4 * (k + lam) * (k + lam - 1)))
                           for k in range(1, K + 2)]
    p = [mpmath.mpf(1), 1 / a[1]]
    for k in range(1, K):
        p.append((p[k] - a[k] * p[k - 1]) / a[k + 1])
    return p[:K + 1]


def _double_kernel(geom, t, x, K):
    P = zonal_basis(geom.n, np.concatenate([[1.0], np.asarray(x, dtype=float)]), K)[0]
    c = np.exp(-t * geom.eigenvalue(np.arange(K + 1))) * P[:, 0]
    return c @ P[:, 1:]


# -- multiprecision evaluation of flowed bands -------------------------------------

def _mp_recurrence(n, K):
    lam = mpmath.mpf(n - 1) / 2
    return [mpmath.mpf(0)] + [mpmath.sqrt(mpmath.mpf(k) * (k + 2 * lam - 1) / (4 * (k + lam) * (k + lam - 1)))
                              for k in range(1, K + 2)]


def band_coefficients_mp(bandset: BandSet, K: int) -> list:
    """Indicator coefficients in the current mpmath precision (breakpoints taken as exact)."""
    n = bandset.geom.n
    a = _mp_recurrence(n, K)
    half = mpmath.mpf(n) / 2
    log_Z = (mpmath.log(mpmath.pi) / 2 + mpmath.loggamma(half)
             - mpmath.loggamma(mpmath.mpf(n + 1) / 2))
    c = [mpmath.mpf(0)] * (K + 1)
    for lo, hi in bandset.bands:
        for theta, sign in ((hi, 1), (lo, -1)):
            if theta <= 0.0 or theta >= math.pi:
                if theta >= math.pi:
                    c[0] += sign
                continue
            th = mpmath.mpf(theta)
            x0 = mpmath.cos(th)
            c[0] += sign * mpmath.betainc(half, half, 0, mpmath.sin(th / 2) ** 2, regularized=True)
            pref = mpmath.exp(half * mpmath.log(1 - x0 * x0) - log_Z)
            p0, p1, d0, d1 = mpmath.mpf(1), x0 / a[1], mpmath.mpf(0), 1 / a[1]
            for k in range(1, K + 1):
                c[k] += sign * pref * d1 / (k * (k + n - 1))
                p0, p1, d0, d1 = (p1, (x0 * p1 - a[k] * p0) / a[k + 1],
                                  d1, (p1 + x0 * d1 - a[k] * d0) / a[k + 1])
    return c


@dataclass(frozen=True)
class LogJet:
    """log f and the logarithmic x-derivatives f'/f, f''/f of a positive zonal function."""

    theta: np.ndarray
    log_value: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    K: int
    dps: int


def flowed_band_logjet(bandset: BandSet, t: float, theta, log_floor: float = -70.0,
                       guard_digits: int = 20) -> LogJet:
    """Relative-accuracy jet of P_t 1_A wherever P_t 1_A >= exp(log_floor).

    The spectral sum cancels catastrophically where P_t 1_A is tiny, so it is
    evaluated in multiprecision with K from the uniform tail bound and enough
    digits to cover the dynamic range down to exp(log_floor).  Values below
    the floor are still returned but carry no accuracy guarantee.
    """
    geom = bandset.geom
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    log_tol = log_floor - guard_digits * math.log(10.0)
    K = _required_degree_log(geom, t, log_tol)
    ks = np.arange(K + 1)
    log_top = float(np.max(-geom.eigenvalue(ks) * t + 0.5 * harmonic_dimension_log(geom.n, ks)))
    dps = int((max(log_top, 0.0) - log_tol) / math.log(10.0)) + 15
    n = geom.n
    with _mp_precision(dps):
        b = band_coefficients_mp(bandset, K)
        coeffs = [b[k] * mpmath.exp(-mpmath.mpf(k) * (n + k - 1) / (n - 1) * mpmath.mpf(t))
                  for k in range(K + 1)]
        xs = [mpmath.cos(mpmath.mpf(float(th))) for th in theta]
        jets = _mp_zonal_jets(n, K, xs, coeffs)
        tiny = mpmath.mpf(10) ** (-dps)
        lv, u1, u2 = [], [], []
        for f0, f1, f2 in jets:
            f0 = f0 if f0 > tiny else tiny
            lv.append(float(mpmath.log(f0)))
            u1.append(float(f1 / f0))
            u2.append(float(f2 / f0))
    return LogJet(theta, np.array(lv), np.array(u1), np.array(u2), K, dps)


def probit_jet_from_logs(geom: SphereGeometry, x, log_value, u1, u2,
                         log_comp=None) -> tuple:
    """h = Phi^{-1}(f), Gamma(h) and |Hess h|^2 from log f and f'/f, f''/f.

    Uses r = f / phi(h), which stays moderate in the tail, so no small number
    is ever divided by another.  Returns (h, gamma_h, hess_sq_h).
    """
    x = np.asarray(x, dtype=float)
    log_value = np.asarray(log_value, dtype=float)
    if log_comp is None:
        log_comp = np.log1p(-np.exp(np.minimum(log_value, -1e-300)))
    h = quantile_from_logs(log_value, log_comp)
    log_phi = -0.5 * h * h - 0.5 * math.log(2.0 * math.pi)
    r = np.exp(log_value - log_phi)
    R2 = geom.n - 1.0
    s2 = 1.0 - x * x
    gamma_h = s2 * (u1 * r) ** 2 / R2
    radial = r * (s2 * u2 - x * u1) / R2 + h * gamma_h
    tangential = -x * u1 * r / R2
    return h, gamma_h, radial**2 + (geom.n - 1) * tangential**2
