"""Uniform adapters over the three model spaces.

Each engine exposes an evaluation grid with probability weights, pointwise
Gamma of its native smooth functions, its semigroup on native functions and on
arbitrary pointwise callables.  The inequality checks are written once against
this interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gauss as G
from . import line as Ln
from . import sphere as S
from .errors import AccuracyError, DomainError, ValidationError
from .profiles import SphereGeometry, gauss_pdf


@dataclass(frozen=True, eq=False)
class SourcedHermite(G.HermiteFunction):
    """Hermite expansion that remembers the callable it was analysed from.

    Pointwise integrands are evaluated on the source: truncated expansions are
    meaningless far in the tails, where Mehler quadrature nodes land.
    """

    source: object = None


def _stencil_derivative(func, x, step=1e-3):
    return (func(x - 2 * step) - 8 * func(x - step) + 8 * func(x + step) - func(x + 2 * step)) / (12 * step)


def gauss_line_grid(width: float = 0.0, half: float = 12.0, max_step: float = 0.01):
    """Uniform trapezoid grid on [-half, half] with weights phi(x) dx, resolving features
    of size ``width`` by at least 40 points."""
    step = max_step if width <= 0 else min(max_step, width / 40.0)
    n = int(math.ceil(2 * half / step)) + 1
    x = np.linspace(-half, half, n)
    w = gauss_pdf(x) * (x[1] - x[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w / w.sum()


@dataclass
class GaussEngine:
    """Ornstein-Uhlenbeck engine on the Gaussian line (CD(1, infinity))."""

    K: int = G.DEFAULT_K
    kappa: float = 1.0
    name: str = "gauss"

    half: float = 6.0   # truncated expansions are unreliable far in the tails

    def __post_init__(self):
        self.points, self.weights = gauss_line_grid(half=self.half)

    @property
    def params(self):
        return {"K": self.K}

    def native(self, f):
        if isinstance(f, G.HermiteFunction):
            return f
        if callable(f):
            return SourcedHermite(G.analyze_callable(f, self.K).coeffs, f)
        return G.HermiteFunction(f)

    def value(self, f):
        return f(self.points)

    def gamma(self, f):
        return f.derivative()(self.points) ** 2

    def gamma_fn(self, f):
        src = getattr(f, "source", None)
        if src is not None:
            return lambda x: _stencil_derivative(src, np.asarray(x, dtype=float)) ** 2
        d = f.derivative()
        return lambda x: d(x) ** 2

    def value_fn(self, f):
        src = getattr(f, "source", None)
        return f if src is None else src

    def flow(self, f, t):
        return G.ou_flow(f, t)

    def flow_fn(self, func, t):
        if t == 0:
            return np.asarray(func(self.points), dtype=float)
        try:
            return G.mehler_apply(func, t, self.points, tol=1e-11, max_m=1024)
        except AccuracyError:
            # non-smooth integrands (|f'|, indicators): composite rule in y
            y, wy = gauss_line_grid(half=10.0, max_step=10.0 / 8192)
            a, s = math.exp(-t), math.sqrt(-math.expm1(-2 * t))
            out = np.empty(self.points.size)
            for i in range(0, self.points.size, 64):
                pts = a * self.points[i:i + 64, None] + s * y
                out[i:i + 64] = np.asarray(func(pts), dtype=float) @ wy
            return out

    def integrate(self, values):
        return float(np.dot(self.weights, values))


@dataclass
class SphereEngine:
    """Zonal heat-flow engine on the n-sphere of radius sqrt(n-1) (CD(1, infinity))."""

    n: int
    K_fn: int = 128
    m: int = 512
    kappa: float = 1.0
    name: str = field(init=False)

    def __post_init__(self):
        self.geom = SphereGeometry(self.n)
        self.name = f"sphere({self.n})"
        q = S.sphere_quadrature(self.n, self.m)
        self.nodes, self.weights = np.asarray(q.nodes), np.asarray(q.weights)
        self.points = self.nodes

    @property
    def params(self):
        return {"n": self.n}

    def native(self, f):
        if isinstance(f, S.ZonalFunction):
            return f
        if callable(f):
            return S.analyze_zonal(self.geom, f, self.K_fn)
        return S.ZonalFunction(self.geom, f)

    def value(self, f):
        return f(self.nodes)

    def value_fn(self, f):
        return f

    def gamma_fn(self, f):
        R2 = self.n - 1.0

        def g(x):
            _, f1, _ = f.jet(np.asarray(x, dtype=float))
            return (1.0 - x * x) * f1 * f1 / R2
        return g

    def gamma(self, f):
        return self.gamma_fn(f)(self.nodes)

    def flow(self, f, t):
        return S.heat_flow(f, t)

    def flow_fn(self, func, t):
        if t == 0:
            return np.asarray(func(self.nodes), dtype=float)
        g = S.analyze_zonal(self.geom, func, self.K_fn, m=max(2 * self.K_fn + 2, self.m))
        return S.heat_flow(g, t)(self.nodes)

    def integrate(self, values):
        return float(np.dot(self.weights, values))


@dataclass
class LineEngine:
    """Discretised weighted-line engine; kappa is the asserted lower curvature bound."""

    op: Ln.DiscreteOperator
    name: str = field(init=False)
    trim: int = 4

    def __post_init__(self):
        self.name = f"line({self.op.measure.name})"
        self.kappa = self.op.measure.kappa
        sl = slice(self.trim, -self.trim)
        self._sl = sl
        self.points = self.op.x[sl]
        self.weights = self.op.weights[sl] / self.op.weights[sl].sum()

    @classmethod
    def builtin(cls, name: str = "gaussian", m: int = 2000, **kw):
        return cls(Ln.discretize_generator(Ln.builtin_measure(name, **kw), m))

    @property
    def params(self):
        return {"potential": self.op.measure.name, "m": self.op.m}

    def native(self, f):
        if isinstance(f, Ln.GridFunction1D):
            return f
        if callable(f):
            return Ln.GridFunction1D.from_callable(self.op, f)
        raise ValidationError("line engine needs a callable or GridFunction1D")

    def _grid(self, values):
        return Ln.GridFunction1D(self.op.x, np.asarray(values, dtype=float), self.op.weights)

    def value(self, f):
        return f.values[self._sl]

    def value_fn(self, f):
        vals = f.values
        return lambda x: np.interp(x, self.op.x, vals)

    def gamma_fn(self, f):
        d1 = np.gradient(f.values, self.op.h, edge_order=2)
        return lambda x: np.interp(x, self.op.x, d1 * d1)

    def gamma(self, f):
        return self.gamma_fn(f)(self.points)

    def flow(self, f, t):
        return Ln.semigroup_apply(self.op, f, t, count=self.op.m)

    def flow_fn(self, func, t):
        g = self._grid(func(self.op.x))
        return self.flow(g, t).values[self._sl]

    def integrate(self, values):
        return float(np.dot(self.weights, values))


def make_engine(spec: str, **kw):
    """'gauss', 'sphere:<n>' or 'line:<potential>'."""
    kind, _, arg = spec.partition(":")
    if kind == "gauss":
        return GaussEngine(**kw)
    if kind == "sphere":
        if not arg:
            raise ValidationError("sphere engine needs a dimension, e.g. sphere:10")
        return SphereEngine(int(arg), **kw)
    if kind == "line":
        return LineEngine.builtin(arg or "gaussian", **kw)
    raise DomainError(f"unknown engine {spec!r}")
