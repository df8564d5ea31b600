"""Weighted line diffusions L f = f'' - V' f' on a truncated interval.

The generator is discretised in divergence form on a uniform grid with
zero-flux ends, which keeps it exactly self-adjoint for the discrete measure
w_i proportional to exp(-V(x_i)).  Second-order quantities use the analytic
Gamma_2 = f''^2 + V'' f'^2 evaluated with finite differences.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import interpolate, linalg

from .errors import DomainError, NumericalError, TruncationError, ValidationError

MASS_TOL = 1e-10


@dataclass(frozen=True)
class WeightedLineMeasure:
    """Probability measure proportional to exp(-V) on [a, b], with kappa <= V'' <= K_upper."""

    name: str
    V: Callable
    dV: Callable
    d2V: Callable
    a: float
    b: float
    kappa: float
    K_upper: float = math.inf

    def __post_init__(self):
        if not self.a < self.b:
            raise ValidationError("need a < b")
        if self.kappa <= 0:
            raise ValidationError("kappa must be positive (log-concave potentials only)")

    def tail_mass_bound(self) -> float:
        """Upper bound on the relative mass outside [a, b].

        For convex V with V'(b) > 0, int_b^inf e^{-V} <= e^{-V(b)} / V'(b); same on the left.
        """
        db, da = float(self.dV(self.b)), float(self.dV(self.a))
        if db <= 0 or da >= 0:
            return math.inf
        x = np.linspace(self.a, self.b, 4001)
        Vx = self.V(x)
        v0 = Vx.min()
        inside = np.trapezoid(np.exp(-(Vx - v0)), x)
        outside = math.exp(-(self.V(self.b) - v0)) / db + math.exp(-(self.V(self.a) - v0)) / -da
        return outside / inside

    def check_truncation(self, tol: float = MASS_TOL):
        bound = self.tail_mass_bound()
        if bound > tol:
            a, b = self.a, self.b
            for _ in range(40):
                a, b = 1.5 * a, 1.5 * b
                if WeightedLineMeasure(self.name, self.V, self.dV, self.d2V, a, b,
                                       self.kappa).tail_mass_bound() <= tol:
                    break
            raise DomainError(f"domain [{self.a}, {self.b}] loses mass ~{bound:.2e}; "
                              f"try [{a:.3g}, {b:.3g}]")
        return bound

    def check_curvature(self, x, atol: float = 1e-12):
        d2 = np.asarray(self.d2V(x), dtype=float)
        if np.any(d2 < self.kappa - atol):
            raise DomainError(f"V'' drops to {d2.min():.4g} below kappa={self.kappa}")
        if np.any(d2 > self.K_upper + atol):
            raise DomainError(f"V'' reaches {d2.max():.4g} above K_upper={self.K_upper}")


def gaussian_measure(a=-8.0, b=8.0) -> WeightedLineMeasure:
    return WeightedLineMeasure("gaussian", lambda x: 0.5 * np.asarray(x) ** 2,
                               lambda x: np.asarray(x, dtype=float),
                               lambda x: np.ones_like(np.asarray(x, dtype=float)),
                               a, b, kappa=1.0, K_upper=1.0)


def quartic_measure(beta=0.1, a=-6.0, b=6.0) -> WeightedLineMeasure:
    """V = x^2/2 + beta x^4, so 1 <= V'' <= 1 + 12 beta max(a^2, b^2)."""
    return WeightedLineMeasure(f"quartic-{beta:g}",
                               lambda x: 0.5 * np.asarray(x) ** 2 + beta * np.asarray(x) ** 4,
                               lambda x: np.asarray(x) + 4 * beta * np.asarray(x) ** 3,
                               lambda x: 1.0 + 12 * beta * np.asarray(x) ** 2,
                               a, b, kappa=1.0, K_upper=1.0 + 12 * beta * max(a * a, b * b))


def flattened_measure(amp=0.45, a=-8.0, b=8.0) -> WeightedLineMeasure:
    """V = x^2/2 + amp exp(-x^2): a flattened, nearly bimodal-looking centre with
    V'' >= 1 - 2 amp > 0, so the measure stays log-concave."""
    e = lambda x: np.exp(-np.asarray(x, dtype=float) ** 2)
    return WeightedLineMeasure(f"double-well-capped-{amp:g}",
                               lambda x: 0.5 * np.asarray(x) ** 2 + amp * e(x),
                               lambda x: np.asarray(x) - 2 * amp * np.asarray(x) * e(x),
                               lambda x: 1.0 + amp * (4 * np.asarray(x) ** 2 - 2) * e(x),
                               a, b, kappa=1.0 - 2 * amp, K_upper=1.0 + 4 * amp * math.exp(-1.5))


BUILTIN_POTENTIALS = {
    "gaussian": gaussian_measure,
    "quartic": quartic_measure,
    "double-well-capped": flattened_measure,
}


def builtin_measure(name: str, **kwargs) -> WeightedLineMeasure:
    try:
        return BUILTIN_POTENTIALS[name](**kwargs)
    except KeyError:
        raise ValidationError(f"unknown potential {name!r}; choose from {sorted(BUILTIN_POTENTIALS)}")


def load_potential_csv(path, kappa: float, K_upper: float = math.inf) -> WeightedLineMeasure:
    """Tabulated potential with header x,V,dV,d2V; interpolated by Hermite cubics."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) < {"x", "V", "dV", "d2V"}:
        raise ValidationError("CSV needs columns x, V, dV, d2V")
    try:
        tab = {k: np.array([float(r[k]) for r in rows]) for k in ("x", "V", "dV", "d2V")}
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"non-numeric entry in {path}: {exc}") from exc
    if np.any(np.diff(tab["x"]) <= 0):
        raise ValidationError("x column must be strictly increasing")
    V = interpolate.CubicHermiteSpline(tab["x"], tab["V"], tab["dV"])
    dV = interpolate.CubicHermiteSpline(tab["x"], tab["dV"], tab["d2V"])
    d2V = interpolate.PchipInterpolator(tab["x"], tab["d2V"])
    return WeightedLineMeasure(str(path), V, dV, d2V, float(tab["x"][0]), float(tab["x"][-1]),
                               kappa, K_upper)


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Divergence-form generator on a uniform grid, self-adjoint in L^2(w)."""

    measure: WeightedLineMeasure
    x: np.ndarray
    h: float
    weights: np.ndarray        # probability weights w_i
    flux: np.ndarray           # edge conductances c_{i+1/2} (same normalisation)
    _eig: dict = field(default_factory=dict, repr=False)

    @property
    def m(self):
        return self.x.size

    def apply(self, f):
        f = np.asarray(f, dtype=float)
        J = self.flux * np.diff(f) / self.h**2
        out = np.zeros_like(f)
        out[:-1] += J
        out[1:] -= J
        return out / self.weights

    def matrix(self):
        """Dense matrix of L (for small grids and tests)."""
        return np.column_stack([self.apply(e) for e in np.eye(self.m)])

    def inner(self, f, g):
        return float(np.sum(self.weights * np.asarray(f) * np.asarray(g)))

    def symmetric_tridiagonal(self):
        """Diagonal and off-diagonal of W^{1/2} (-L) W^{-1/2}."""
        c = self.flux / self.h**2
        d = np.zeros(self.m)
        d[:-1] += c
        d[1:] += c
        d /= self.weights
        e = -c / np.sqrt(self.weights[:-1] * self.weights[1:])
        return d, e

    def eigensystem(self, count: int):
        key = int(count)
        if key not in self._eig:
            d, e = self.symmetric_tridiagonal()
            try:
                lam, vec = linalg.eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1))
            except linalg.LinAlgError as exc:
                raise NumericalError(f"eigen-solver failed: {exc}") from exc
            phi = vec / np.sqrt(self.weights)[:, None]
            # fix signs so eigenfunctions increase at the right end
            phi *= np.sign(phi[-1] + (phi[-1] == 0))[None, :]
            lam[0] = 0.0 if abs(lam[0]) < 1e-9 else lam[0]
            self._eig[key] = (lam, phi)
        return self._eig[key]


def discretize_generator(measure: WeightedLineMeasure, m: int = 2000) -> DiscreteOperator:
    if m < 100:
        raise ValidationError("need at least 100 grid nodes")
    measure.check_truncation()
    x = np.linspace(measure.a, measure.b, m)
    measure.check_curvature(x)
    h = x[1] - x[0]
    Vx = measure.V(x)
    mids = 0.5 * (x[1:] + x[:-1])
    v0 = float(np.min(Vx))
    w = np.exp(-(Vx - v0)) * h
    w[0] *= 0.5
    w[-1] *= 0.5
    Z = w.sum()
    flux = np.exp(-(measure.V(mids) - v0)) * h / Z
    return DiscreteOperator(measure, x, h, w / Z, flux)


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray   # columns, orthonormal in L^2(w)


def spectrum(op: DiscreteOperator, count: int = 10) -> Spectrum:
    if count > op.m // 10:
        raise ValidationError(f"count {count} exceeds the resolved range m/10 = {op.m // 10}")
    lam, phi = op.eigensystem(count)
    return Spectrum(lam.copy(), phi.copy())


@dataclass(frozen=True)
class GridFunction1D:
    x: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_callable(cls, op: DiscreteOperator, func):
        return cls(op.x, np.asarray(func(op.x), dtype=float), op.weights)

    @property
    def mean(self):
        return float(np.sum(self.weights * self.values))

    @property
    def norm(self):
        return math.sqrt(float(np.sum(self.weights * self.values**2)))


def semigroup_apply(op: DiscreteOperator, f: GridFunction1D, t: float, count: int | None = None,
                    tol: float = 1e-10) -> GridFunction1D:
    """P_t f from the lowest ``count`` modes; the discarded part is bounded by
    exp(-lambda_count t) times its L^2 norm."""
    if t < 0:
        raise DomainError("time must be non-negative")
    if t == 0:
        return f
    count = min(op.m, 400) if count is None else count
    lam, phi = op.eigensystem(count)
    c = phi.T @ (op.weights * f.values)
    low = phi @ c
    rest = f.values - low
    resid = math.sqrt(max(op.inner(rest, rest), 0.0)) * math.exp(-lam[-1] * t)
    if resid > tol and count < op.m:
        raise TruncationError(f"{count} modes leave residual {resid:.2e}; increase modes")
    return GridFunction1D(op.x, phi @ (np.exp(-lam * t) * c), op.weights)


def _derivatives(op, f):
    f1 = np.gradient(f, op.h, edge_order=2)
    f2 = np.gradient(f1, op.h, edge_order=2)
    return f1, f2


@dataclass(frozen=True)
class FunctionalReport:
    mean: float
    variance: float
    entropy: float
    dirichlet: float
    sg_deficit: float
    gamma2_minus_gamma: float
    f_plus_Lf_sq: float
    chain_slack: float
    projection_residual: float
    kappa: float


def functional_report(op: DiscreteOperator, f: GridFunction1D, kappa: float | None = None) -> FunctionalReport:
    kappa = op.measure.kappa if kappa is None else kappa
    w, v, x = op.weights, f.values, op.x
    mean = float(np.sum(w * v))
    var = float(np.sum(w * (v - mean) ** 2))
    sq = v * v
    mass = float(np.sum(w * sq))
    if mass <= 0:
        raise DomainError("entropy needs a nonzero f^2")
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = float(np.sum(w * np.where(sq > 0, sq * np.log(sq), 0.0))) - mass * math.log(mass)
    f1, f2 = _derivatives(op, v)
    d2V = op.measure.d2V(x)
    dV = op.measure.dV(x)
    dirichlet = float(np.sum(w * f1 * f1))
    g2mg = float(np.sum(w * (f2 * f2 + (d2V - kappa) * f1 * f1)))
    Lf = f2 - dV * f1
    fl = float(np.sum(w * (v + Lf) ** 2))
    # generalised projection: f ~ v0 V' + E f with v0 = int x (f - E f)
    v0 = float(np.sum(w * x * (v - mean)))
    resid = float(np.sum(w * (v - mean - v0 * dV) ** 2))
    return FunctionalReport(mean, var, ent, dirichlet, dirichlet - kappa * var, g2mg, fl,
                            g2mg - 0.5 * fl, resid, kappa)
