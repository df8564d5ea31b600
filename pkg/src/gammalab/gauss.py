"""Ornstein-Uhlenbeck calculus on the standard Gaussian line.

Smooth functions are finite expansions in the orthonormal Hermite basis
``h_k = He_k / sqrt(k!)`` of L^2(gamma).  The generator is ``L f = f'' - x f'``
with ``L h_k = -k h_k``, so the semigroup acts diagonally.

Indicators never become HermiteFunctions: flowed interval sets and probit-affine
functions are evaluated in closed form through :class:`ProbitJet`, which keeps
``h = Phi^{-1}(Q_t f)`` accurate deep into the tails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import AccuracyError, AliasingError, DomainError, ValidationError
from .profiles import gauss_pdf, quantile_from_logs

DEFAULT_K = 64
DEFAULT_M = 128
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussQuadrature:
    """Gauss-Hermite rule for the standard Gaussian (weights sum to 1)."""

    m: int
    nodes: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=32)
def gauss_quadrature(m: int = DEFAULT_M) -> GaussQuadrature:
    x, w = special.roots_hermitenorm(m)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return GaussQuadrature(m, x, w)


def hermite_basis(x, K: int, derivatives: int = 0):
    """Orthonormal Hermite values (and derivatives) at x.

    Returns an array of shape ``(derivatives + 1, K + 1, len(x))``.  Uses
    ``x h_k = sqrt(k+1) h_{k+1} + sqrt(k) h_{k-1}`` and ``h_k' = sqrt(k) h_{k-1}``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    H = np.zeros((K + 1, x.size))
    H[0] = 1.0
    if K >= 1:
        H[1] = x
    for k in range(1, K):
        H[k + 1] = (x * H[k] - math.sqrt(k) * H[k - 1]) / math.sqrt(k + 1)
    out = [H]
    for _ in range(derivatives):
        prev = out[-1]
        D = np.zeros_like(prev)
        D[1:] = np.sqrt(np.arange(1, K + 1))[:, None] * prev[:-1]
        out.append(D)
    return np.stack(out)


@dataclass(frozen=True, eq=False)
class HermiteFunction:
    """Finite Hermite chaos expansion ``sum_k coeffs[k] h_k``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ValidationError("coefficients must be a non-empty vector")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def basis(cls, k: int, scale: float = 1.0) -> "HermiteFunction":
        c = np.zeros(k + 1)
        c[k] = scale
        return cls(c)

    @property
    def K(self) -> int:
        return self.coeffs.size - 1

    @property
    def mean(self) -> float:
        return float(self.coeffs[0])

    @property
    def norm2(self) -> float:
        return float(np.dot(self.coeffs, self.coeffs))

    @property
    def variance(self) -> float:
        return float(np.dot(self.coeffs[1:], self.coeffs[1:]))

    def padded(self, K: int) -> "HermiteFunction":
        if K < self.K:
            raise ValidationError("padding cannot shrink the degree")
        return HermiteFunction(np.pad(self.coeffs, (0, K - self.K)))

    def derivative(self) -> "HermiteFunction":
        if self.K == 0:
            return HermiteFunction([0.0])
        return HermiteFunction(np.sqrt(np.arange(1, self.K + 1)) * self.coeffs[1:])

    def generator(self) -> "HermiteFunction":
        """L f = -sum k a_k h_k."""
        return HermiteFunction(-np.arange(self.K + 1) * self.coeffs)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        vals = self.coeffs @ hermite_basis(x.ravel(), self.K)[0]
        return vals.reshape(x.shape) if x.ndim else float(vals[0])

    def _binary(self, other, op):
        if isinstance(other, HermiteFunction):
            K = max(self.K, other.K)
            return HermiteFunction(op(self.padded(K).coeffs, other.padded(K).coeffs))
        c = self.coeffs.copy()
        c[0] = op(c[0], float(other))
        return HermiteFunction(c)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        return HermiteFunction(self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return HermiteFunction(-self.coeffs)


def hermite_transform(data, direction: str = "analyze", K: int | None = None,
                      m: int | None = None):
    """Analyse nodal values into a HermiteFunction, or synthesise nodal values.

    ``analyze`` takes values at the ``m`` Gauss-Hermite nodes and returns the
    degree-``K`` projection; it refuses ``m < K + 1`` since the rule is then
    not exact on degree-``K`` data.  ``synthesize`` takes a HermiteFunction
    (or raw coefficients) and returns its values at the nodes.
    """
    if direction == "analyze":
        values = np.asarray(data, dtype=float)
        m = values.size if m is None else m
        if values.size != m:
            raise ValidationError("values must be given at all quadrature nodes")
        K = m - 1 if K is None else K
        if m < K + 1:
            raise AliasingError(f"{m} nodes cannot resolve degree {K}; need m >= K + 1")
        q = gauss_quadrature(m)
        H = hermite_basis(q.nodes, K)[0]
        return HermiteFunction(H @ (q.weights * values))
    if direction == "synthesize":
        f = data if isinstance(data, HermiteFunction) else HermiteFunction(data)
        m = max(DEFAULT_M, f.K + 1) if m is None else m
        if m < f.K + 1:
            raise AliasingError(f"{m} nodes cannot resolve degree {f.K}")
        return f(gauss_quadrature(m).nodes)
    raise DomainError(f"unknown direction {direction!r}")


def analyze_callable(func, K: int, m: int | None = None) -> HermiteFunction:
    m = max(2 * K + 2, DEFAULT_M) if m is None else m
    q = gauss_quadrature(m)
    return hermite_transform(func(q.nodes), "analyze", K=K, m=m)


def multiply(f: HermiteFunction, g: HermiteFunction) -> HermiteFunction:
    """Exact product in the degree-extended space (degree f.K + g.K)."""
    D = f.K + g.K
    m = D + 1
    q = gauss_quadrature(m)
    return hermite_transform(f(q.nodes) * g(q.nodes), "analyze", K=D, m=m)


def ou_flow(f: HermiteFunction, t: float) -> HermiteFunction:
    """Q_t f: coefficient k is damped by exp(-k t)."""
    if t < 0:
        raise DomainError("time must be non-negative")
    return HermiteFunction(f.coeffs * np.exp(-t * np.arange(f.K + 1)))


def project_chaos(f: HermiteFunction, k: int) -> HermiteFunction:
    """Degree-k chaos component a_k h_k (returned at the degree of f)."""
    if not 0 <= k <= f.K:
        raise DomainError("chaos order outside [0, K]")
    c = np.zeros(f.K + 1)
    c[k] = f.coeffs[k]
    return HermiteFunction(c)


@dataclass(frozen=True)
class GammaCalculus:
    gamma: HermiteFunction
    gamma2: HermiteFunction
    generator: HermiteFunction


def gamma_calculus(f: HermiteFunction) -> GammaCalculus:
    """Gamma f = f'^2, Gamma_2 f = f''^2 + f'^2 and L f, without truncation."""
    d1 = f.derivative()
    d2 = d1.derivative()
    gam = multiply(d1, d1)
    gam2 = multiply(d2, d2) + gam
    return GammaCalculus(gam, gam2, f.generator())


def gamma_integrals(f: HermiteFunction) -> dict:
    """Spectral values of the integrated Gamma-calculus quantities."""
    k = np.arange(f.K + 1)
    a2 = f.coeffs**2
    return {
        "gamma": float(np.sum(k * a2)),
        "gamma2": float(np.sum(k**2 * a2)),
        "gamma2_minus_gamma": float(np.sum(k * (k - 1) * a2)),
        "generator_sq": float(np.sum(k**2 * a2)),
        "f_plus_Lf_sq": float(np.sum((k - 1) ** 2 * a2)),
    }


def commutation_defect(f: HermiteFunction, t: float) -> float:
    """max_k |coef((Q_t f)')_k - e^{-t} coef(Q_t f')_k|; zero up to rounding."""
    lhs = ou_flow(f, t).derivative().coeffs
    rhs = math.exp(-t) * ou_flow(f.derivative(), t).coeffs
    return float(np.max(np.abs(lhs - rhs)))


def mehler_apply(func, t: float, x, m: int = 64, tol: float = 1e-10, max_m: int = 1024):
    """Q_t func(x) = E func(e^{-t} x + sqrt(1 - e^{-2t}) Y), Y standard normal.

    Gauss-Hermite quadrature, doubled until two successive rules agree to
    ``tol`` relative to ``1 + |value|``.  :class:`IntervalSet` and :class:`ProbitAffine` inputs are
    evaluated in closed form instead.
    """
    if t <= 0:
        raise DomainError("Mehler formula needs t > 0")
    if isinstance(func, (IntervalSet, ProbitAffine)):
        return func.flow(t, x).value
    x = np.asarray(x, dtype=float)
    a, s = math.exp(-t), math.sqrt(-math.expm1(-2.0 * t))

    def rule(mm):
        q = gauss_quadrature(mm)
        flat = x.reshape(-1)
        step = max(1, 200_000 // mm)
        out = np.concatenate([
            np.asarray(func(a * flat[i:i + step, None] + s * q.nodes), dtype=float) @ q.weights
            for i in range(0, max(flat.size, 1), step)]) if flat.size else np.zeros(0)
        return out.reshape(x.shape)

    prev = rule(m)
    while m < max_m:
        m *= 2
        cur = rule(m)
        if np.max(np.abs(cur - prev) / (1.0 + np.abs(cur))) <= tol:
            return cur if cur.ndim else float(cur)
        prev = cur
    raise AccuracyError(f"Mehler quadrature did not settle below {tol} with {max_m} nodes")


# -- closed-form flows of [0,1]-valued data -------------------------------------

@dataclass(frozen=True)
class ProbitJet:
    """Value of a flowed [0,1]-valued function and of its probit transform.

    ``h = Phi^{-1}(value)`` with first and second x-derivatives.  ``log_value``
    and ``log_comp`` hold log(value) and log(1 - value).
    """

    log_value: np.ndarray
    log_comp: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    d2h: np.ndarray

    @property
    def value(self):
        return np.exp(self.log_value)

    @property
    def iso(self):
        """I_gauss(value) = phi(h)."""
        return gauss_pdf(self.h)

    @property
    def grad_sq(self):
        """Gamma of the flowed function, (phi(h) h')^2."""
        return (self.iso * self.dh) ** 2

    @property
    def d2value(self):
        return self.iso * (self.d2h - self.h * self.dh**2)

    @property
    def gamma_h(self):
        return self.dh**2

    @property
    def gamma2_minus_gamma_h(self):
        """(Gamma_2 - Gamma)(h) = h''^2 on the Gaussian line."""
        return self.d2h**2


def _signed_logsum(logs, signs):
    """log|sum| and sign of sum_j signs_j exp(logs_j) along the last axis.

    Positive and negative parts are summed separately so exact cancellation
    gives (-inf, 0) rather than NaN.
    """
    ninf = np.full(logs.shape, -np.inf)
    lp = special.logsumexp(np.where(signs > 0, logs, ninf), axis=-1)
    ln = special.logsumexp(np.where(signs < 0, logs, ninf), axis=-1)
    big, small = np.maximum(lp, ln), np.minimum(lp, ln)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = big + np.log(-np.expm1(small - big))
    out = np.where(np.isneginf(big), -np.inf, out)
    sign = np.where(np.isneginf(out), 0.0, np.where(lp > ln, 1.0, -1.0))
    return out, sign


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint closed intervals of the line (endpoints may be +-inf)."""

    intervals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        for (a, b) in iv:
            if not a < b:
                raise ValidationError("interval endpoints must satisfy a < b")
        for (a0, b0), (a1, b1) in zip(iv, iv[1:]):
            if not b0 < a1:
                raise ValidationError("intervals must be sorted and disjoint")
        object.__setattr__(self, "intervals", iv)

    @classmethod
    def half_line(cls, a: float, upper: bool = False) -> "IntervalSet":
        return cls(((a, math.inf),) if upper else ((-math.inf, a),))

    @property
    def measure(self) -> float:
        return float(sum(special.ndtr(b) - special.ndtr(a) for a, b in self.intervals))

    @property
    def boundary(self) -> float:
        """Gaussian Minkowski content: phi summed over finite endpoints."""
        return float(sum(gauss_pdf(e) for ab in self.intervals for e in ab if math.isfinite(e)))

    def complement(self) -> "IntervalSet":
        edges = [-math.inf]
        for a, b in self.intervals:
            edges += [a, b]
        edges.append(math.inf)
        pairs = [(edges[i], edges[i + 1]) for i in range(0, len(edges), 2)]
        return IntervalSet(tuple((a, b) for a, b in pairs if a < b))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for a, b in self.intervals:
            out[(x >= a) & (x <= b)] = 1.0
        return out

    def _log_mass(self, t, x):
        """log Q_t 1_self at x, evaluated piecewise in log space."""
        a_t, s = math.exp(-t), math.sqrt(-math.expm1(-2.0 * t))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.intervals:
            return np.full(x.shape, -np.inf)
        parts = []
        for a, b in self.intervals:
            A = (a - a_t * x) / s
            B = (b - a_t * x) / s
            with np.errstate(invalid="ignore", divide="ignore"):
                low = special.log_ndtr(B) + np.log(-np.expm1(special.log_ndtr(A) - special.log_ndtr(B)))
                up = special.log_ndtr(-A) + np.log(-np.expm1(special.log_ndtr(-B) - special.log_ndtr(-A)))
            parts.append(np.where(A >= 0.0, up, low))
        return special.logsumexp(np.stack(parts, axis=-1), axis=-1)

    def flow(self, t: float, x) -> ProbitJet:
        if t <= 0:
            raise DomainError("indicators are only flowed for t > 0")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a_t, s = math.exp(-t), math.sqrt(-math.expm1(-2.0 * t))
        log_f = self._log_mass(t, x)
        log_c = self.complement()._log_mass(t, x)
        h = quantile_from_logs(log_f, log_c)
        log_phi_h = -0.5 * h * h - _LOG_SQRT_2PI
        # f' = (a_t/s) sum_j [phi(A_j) - phi(B_j)],  f'' = (a_t/s)^2 sum_j [A_j phi(A_j) - B_j phi(B_j)]
        l1, s1, l2, s2 = [], [], [], []
        for a, b in self.intervals:
            for e, sign in ((a, 1.0), (b, -1.0)):
                if not math.isfinite(e):
                    continue
                E = (e - a_t * x) / s
                lp = -0.5 * E * E - _LOG_SQRT_2PI
                l1.append(lp)
                s1.append(np.full(x.shape, sign))
                with np.errstate(divide="ignore"):
                    l2.append(lp + np.log(np.abs(E)))
                s2.append(sign * np.sign(E))
        if l1:
            lg1, sg1 = _signed_logsum(np.stack(l1, -1), np.stack(s1, -1))
            lg2, sg2 = _signed_logsum(np.stack(l2, -1), np.stack(s2, -1))
            dh = sg1 * np.exp(lg1 - log_phi_h + math.log(a_t / s))
            d2f_over_phi = sg2 * np.exp(lg2 - log_phi_h + 2.0 * math.log(a_t / s))
        else:
            dh = np.zeros(x.shape)
            d2f_over_phi = np.zeros(x.shape)
        d2h = d2f_over_phi + h * dh * dh
        return ProbitJet(log_f, log_c, h, dh, d2h)


@dataclass(frozen=True)
class ProbitAffine:
    """f(x) = Phi(slope * x + shift); stays probit-affine under the OU flow."""

    slope: float
    shift: float = 0.0

    def __call__(self, x):
        return special.ndtr(self.slope * np.asarray(x, dtype=float) + self.shift)

    def derivative(self, x):
        return self.slope * gauss_pdf(self.slope * np.asarray(x, dtype=float) + self.shift)

    def flow(self, t: float, x) -> ProbitJet:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a_t = math.exp(-t)
        scale = math.sqrt(1.0 + self.slope**2 * -math.expm1(-2.0 * t))
        slope = self.slope * a_t / scale
        h = slope * x + self.shift / scale
        return ProbitJet(special.log_ndtr(h), special.log_ndtr(-h), h,
                         np.full(x.shape, slope), np.zeros(x.shape))


def hermite_probit_jet(f: HermiteFunction, x, eta: float = 1e-12) -> ProbitJet:
    """Probit jet of a smooth polynomial approximation with values clamped to [eta, 1-eta]."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    B = hermite_basis(x, f.K, derivatives=2)
    v, d1, d2 = (f.coeffs @ B[i] for i in range(3))
    v = np.clip(v, eta, 1.0 - eta)
    h = special.ndtri(v)
    phi = gauss_pdf(h)
    dh = d1 / phi
    d2h = d2 / phi + h * dh * dh
    return ProbitJet(np.log(v), np.log1p(-v), h, dh, d2h)


def mehler_phi_of_affine(alpha: float, t: float, x, shift: float = 0.0):
    """Q_t[phi(alpha . + shift)](x) in closed form."""
    x = np.asarray(x, dtype=float)
    s2 = -math.expm1(-2.0 * t)
    r = math.sqrt(1.0 + alpha**2 * s2)
    return gauss_pdf((alpha * math.exp(-t) * x + shift) / r) / r

