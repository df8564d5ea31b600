"""Semigroup inequalities as oriented, machine-comparable reports.

Every check returns an :class:`InequalityReport` with ``slack = rhs - lhs``;
``slack >= -tolerance`` means the inequality holds.  Pointwise inequalities
report the worst grid point.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from . import gauss as G
from . import sphere as S
from .engines import GaussEngine, LineEngine, SphereEngine, gauss_line_grid
from .errors import DomainError, ResolutionError, ValidationError
from .profiles import bobkov_constant, gauss_pdf, iso_profile_gauss

ETA = 1e-12


def C_kappa(kappa: float, t: float) -> float:
    """C(kappa, t) = 2 int_0^t e^{2 kappa s} ds = (e^{2 kappa t} - 1) / kappa."""
    return 2.0 * t if kappa == 0 else math.expm1(2.0 * kappa * t) / kappa


def D_kappa(kappa: float, t: float) -> float:
    """D(kappa, t) = 2 int_0^t e^{-2 kappa s} ds = (1 - e^{-2 kappa t}) / kappa."""
    return 2.0 * t if kappa == 0 else -math.expm1(-2.0 * kappa * t) / kappa


@dataclass(frozen=True)
class InequalityReport:
    name: str
    engine: str
    params: dict
    lhs: float
    rhs: float
    tolerance: float
    slack: float = field(init=False)
    verdict: str = field(init=False)

    def __post_init__(self):
        vals = (self.lhs, self.rhs, self.tolerance)
        if not all(math.isfinite(float(v)) for v in vals):
            object.__setattr__(self, "slack", float("nan"))
            object.__setattr__(self, "verdict", "inconclusive")
            return
        object.__setattr__(self, "lhs", float(self.lhs))
        object.__setattr__(self, "rhs", float(self.rhs))
        slack = self.rhs - self.lhs
        object.__setattr__(self, "slack", slack)
        object.__setattr__(self, "verdict", "holds" if slack >= -self.tolerance else "violated")

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in ("name", "engine", "params", "lhs", "rhs", "slack", "tolerance", "verdict")}


def _worst(name, engine, params, lhs_vals, rhs_vals, rtol=1e-9, atol=1e-12):
    lhs_vals = np.asarray(lhs_vals, dtype=float)
    rhs_vals = np.asarray(rhs_vals, dtype=float)
    i = int(np.argmin(rhs_vals - lhs_vals))
    scale = float(np.max(np.abs(np.concatenate([lhs_vals, rhs_vals])))) if lhs_vals.size else 0.0
    return InequalityReport(name, engine.name, dict(params), lhs_vals[i], rhs_vals[i], atol + rtol * scale)


def _kappa(engine, kappa):
    if kappa is None:
        return engine.kappa
    if kappa > engine.kappa + 1e-12:
        raise ValidationError(f"kappa={kappa} exceeds the curvature bound {engine.kappa} of {engine.name}")
    return float(kappa)


# -- commutation and local inequalities -------------------------------------------

def check_commutation(engine, f, t: float, kappa: float | None = None, form: str = "gamma"):
    """Gamma(P_t f) <= e^{-2 kappa t} P_t Gamma(f)  (``form='gamma'``) or the
    stronger sqrt(Gamma(P_t f)) <= e^{-kappa t} P_t sqrt(Gamma f)  (``form='sqrt'``)."""
    if t <= 0:
        raise DomainError("commutation needs t > 0")
    kappa = _kappa(engine, kappa)
    f = engine.native(f)
    ft = engine.flow(f, t)
    g = engine.gamma(ft)
    gf = engine.gamma_fn(f)
    if form == "gamma":
        lhs, rhs = g, math.exp(-2 * kappa * t) * engine.flow_fn(gf, t)
    elif form == "sqrt":
        lhs, rhs = np.sqrt(g), math.exp(-kappa * t) * engine.flow_fn(lambda x: np.sqrt(gf(x)), t)
    else:
        raise DomainError(f"unknown form {form!r}")
    return _worst(f"commutation-{form}", engine, {"t": t, "kappa": kappa}, lhs, rhs, rtol=1e-8)


def check_local_bounds(engine, f, t: float, kappa: float | None = None, kind: str = "poincare",
                       constants: str = "sharp"):
    """Both halves of the local Poincare or log-Sobolev chain.

    Poincare:   C Gamma(P_t f) <= P_t f^2 - (P_t f)^2 <= D P_t Gamma f.
    log-Sobolev: c C Gamma(P_t f)/P_t f <= P_t(f log f) - P_t f log P_t f <= c D P_t(Gamma f/f)
    with c = 1/2 (``constants='sharp'``, attained by exponentials on the
    Gaussian line) or c = 1 (``constants='as-stated'``).
    """
    if t <= 0:
        raise DomainError("local bounds need t > 0")
    kappa = _kappa(engine, kappa)
    f = engine.native(f)
    C, D = C_kappa(kappa, t), D_kappa(kappa, t)
    ft = engine.flow(f, t)
    pf = engine.value(ft)
    fv = engine.value_fn(f)
    gf = engine.gamma_fn(f)
    params = {"t": t, "kappa": kappa}
    if kind == "poincare":
        mid = engine.flow_fn(lambda x: fv(x) ** 2, t) - pf**2
        low = C * engine.gamma(ft)
        up = D * engine.flow_fn(gf, t)
    elif kind == "log-sobolev":
        if np.any(engine.value(f) <= 0):
            raise DomainError("log-Sobolev chain needs f > 0")
        c = {"sharp": 0.5, "as-stated": 1.0}[constants]
        params["constants"] = constants
        mid = engine.flow_fn(lambda x: special.xlogy(fv(x), fv(x)), t) - special.xlogy(pf, pf)
        low = c * C * engine.gamma(ft) / pf
        up = c * D * engine.flow_fn(lambda x: gf(x) / fv(x), t)
    else:
        raise DomainError(f"unknown kind {kind!r}")
    return (_worst(f"{kind}-lower", engine, params, low, mid, rtol=1e-8),
            _worst(f"{kind}-upper", engine, params, mid, up, rtol=1e-8))


def check_l1_contraction(engine, f, t: float):
    """||f - P_t f||_1 <= sqrt(2t) ||sqrt(Gamma f)||_1."""
    if t <= 0:
        raise DomainError("contraction needs t > 0")
    f = engine.native(f)
    lhs = engine.integrate(np.abs(engine.value(f) - engine.value(engine.flow(f, t))))
    rhs = math.sqrt(2 * t) * engine.integrate(np.sqrt(engine.gamma(f)))
    return InequalityReport("l1-contraction", engine.name, {"t": t}, lhs, rhs, 1e-9 * (1 + rhs))


# -- flowed [0,1]-valued data ----------------------------------------------------

@dataclass(frozen=True)
class ProbitField:
    """P_t f, its probit h and the quantities entering the Bobkov functional on a grid."""

    x: np.ndarray
    weights: np.ndarray
    value: np.ndarray
    gamma_f: np.ndarray
    h: np.ndarray
    gamma_h: np.ndarray
    g2mg_h: np.ndarray      # (Gamma_2 - kappa Gamma)(h)
    valid: np.ndarray
    eta: float

    @property
    def iso(self):
        return gauss_pdf(self.h)


def _gauss_field(f, t, eta, grid=None):
    if isinstance(f, (G.IntervalSet, G.ProbitAffine)):
        if t <= 0 and isinstance(f, G.IntervalSet):
            raise DomainError("indicators are only flowed for t > 0")
        if isinstance(f, G.IntervalSet):
            width = math.sqrt(-math.expm1(-2 * t))
        else:
            s = abs(f.slope) * math.exp(-t) / math.sqrt(1 + f.slope**2 * -math.expm1(-2 * t))
            width = 1.0 / max(s, 1e-300)
        x, w = gauss_line_grid(width) if grid is None else grid
        if t == 0:
            h = f.slope * x + f.shift
            J = G.ProbitJet(special.log_ndtr(h), special.log_ndtr(-h), h, np.full(x.shape, f.slope), 0 * x)
        else:
            J = f.flow(t, x)
        valid = (J.log_value >= math.log(eta)) & (J.log_comp >= math.log(eta))
        return ProbitField(x, w, J.value, J.grad_sq, J.h, J.gamma_h, J.gamma2_minus_gamma_h, valid, eta)
    fh = f if isinstance(f, G.HermiteFunction) else G.analyze_callable(f, G.DEFAULT_K)
    ft = G.ou_flow(fh, t)
    # truncated expansions are only trusted on the bulk
    x, w = gauss_line_grid(half=6.0) if grid is None else grid
    J = G.hermite_probit_jet(ft, x, eta)
    v = ft(x)
    valid = (v >= eta) & (v <= 1 - eta)
    gamma_f = ft.derivative()(x) ** 2
    return ProbitField(x, w, v, gamma_f, J.h, J.gamma_h, J.gamma2_minus_gamma_h, valid, eta)


def _sphere_nodes(engine, t):
    if t <= 0:
        return engine.nodes, engine.weights
    m = int(np.clip(20 * math.pi * engine.geom.R / math.sqrt(2 * t), engine.m, 8192))
    q = S.sphere_quadrature(engine.n, m)
    return np.asarray(q.nodes), np.asarray(q.weights)


def _sphere_field(engine, f, t, eta):
    if isinstance(f, S.BandSet):
        ft = S.flowed_band(f, t)
    else:
        ft = S.heat_flow(engine.native(f), t)
    x, w = _sphere_nodes(engine, t)
    J = S.probit_jet_zonal(ft, x, eta)
    return ProbitField(x, w, J.value, J.grad_sq, J.h, J.gamma_h, J.gamma2_minus_gamma_h, J.valid, eta)


def _line_field(engine, f, t, eta):
    op = engine.op
    g = engine.native(f)
    gt = engine.flow(g, t) if t > 0 else g
    v = gt.values
    valid = (v >= eta) & (v <= 1 - eta)
    h = special.ndtri(np.clip(v, eta, 1 - eta))
    d1 = np.gradient(v, op.h, edge_order=2)
    h1 = np.gradient(h, op.h, edge_order=2)
    h2 = np.gradient(h1, op.h, edge_order=2)
    d2V = op.measure.d2V(op.x)
    sl = engine._sl
    return ProbitField(op.x[sl], engine.weights, v[sl], (d1 * d1)[sl], h[sl], (h1 * h1)[sl],
                       (h2 * h2 + (d2V - engine.kappa) * h1 * h1)[sl], valid[sl], eta)


def probit_field(engine, f, t: float, eta: float = ETA) -> ProbitField:
    if isinstance(engine, GaussEngine):
        return _gauss_field(f, t, eta)
    if isinstance(engine, SphereEngine):
        return _sphere_field(engine, f, t, eta)
    if isinstance(engine, LineEngine):
        return _line_field(engine, f, t, eta)
    raise ValidationError(f"unsupported engine {engine!r}")


def _mass(engine, f) -> float:
    if isinstance(f, G.IntervalSet):
        return f.measure
    if isinstance(f, G.ProbitAffine):
        return float(special.ndtr(f.shift / math.sqrt(1 + f.slope**2)))
    if isinstance(f, S.BandSet):
        return f.volume
    return engine.integrate(engine.value(engine.native(f)))


@dataclass(frozen=True)
class FlowTrace:
    times: np.ndarray
    psi: np.ndarray
    rate: np.ndarray           # -(psi_{j+1} - psi_j) / dt_j
    bound_mid: np.ndarray      # derivative lower bound at cell midpoints
    deficit: float
    limit: float               # I_gauss(mean f)
    kappa_eff: float
    eta: float
    masked_fraction: float

    @property
    def max_increase(self) -> float:
        return float(np.max(np.diff(self.psi))) if self.psi.size > 1 else 0.0


def psi_value(field_: ProbitField, kappa_eff: float = 1.0) -> float:
    iso = iso_profile_gauss(np.clip(field_.value, 0.0, 1.0))
    return float(np.dot(field_.weights, np.sqrt(iso**2 + field_.gamma_f / kappa_eff)))


def psi_derivative_bound(field_: ProbitField) -> float:
    """int I(P_t f) (Gamma_2 - kappa Gamma)(h) / (1 + Gamma h)^{3/2} over the unclamped region."""
    v = field_.valid
    integrand = np.zeros_like(field_.h)
    integrand[v] = field_.iso[v] * field_.g2mg_h[v] / (1 + field_.gamma_h[v]) ** 1.5
    return float(np.dot(field_.weights, integrand))


def bobkov_flow(engine, f, times, kappa_eff: float = 1.0, eta: float = ETA) -> FlowTrace:
    """Psi(t) = int sqrt(I(P_t f)^2 + Gamma(P_t f)/kappa_eff) along a time grid.

    The derivative lower bound is evaluated at cell midpoints when
    ``kappa_eff`` equals the engine curvature (the case it is proved for).
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValidationError("need an increasing time grid with at least two points")
    if kappa_eff <= 0:
        raise ValidationError("kappa_eff must be positive")
    psi, masked = [], []
    for t in times:
        fld = probit_field(engine, f, t, eta)
        psi.append(psi_value(fld, kappa_eff))
        masked.append(float(np.dot(fld.weights, ~fld.valid)))
    psi = np.array(psi)
    rate = -np.diff(psi) / np.diff(times)
    if abs(kappa_eff - engine.kappa) < 1e-15:
        mids = 0.5 * (times[1:] + times[:-1])
        bound = np.array([psi_derivative_bound(probit_field(engine, f, t, eta)) for t in mids])
    else:
        bound = np.full(rate.shape, np.nan)
    limit = float(iso_profile_gauss(_mass(engine, f)))
    return FlowTrace(times, psi, rate, bound, float(psi[0] - psi[-1]), limit, kappa_eff, eta,
                     float(max(masked)))


def sphere_kappa_eff(n: int) -> float:
    """c_n^2 / (n - 1): the constant of the optimal Bobkov inequality on the sphere."""
    return bobkov_constant(n) ** 2 / (n - 1)


def check_bobkov_flow(engine, f, times, kappa_eff: float = 1.0, step_tol: float = 1e-7,
                      eta: float = ETA) -> InequalityReport:
    """Monotonicity of Psi as a report: lhs = largest one-step increase, rhs = 0."""
    tr = bobkov_flow(engine, f, times, kappa_eff, eta)
    return InequalityReport("bobkov-monotone", engine.name,
                            {"t0": float(tr.times[0]), "t1": float(tr.times[-1]), "kappa_eff": kappa_eff,
                             "eta": eta}, tr.max_increase, 0.0, step_tol)


def check_bobkov_derivative(trace: FlowTrace, engine_name: str = "", slope: float = 10.0) -> InequalityReport:
    """Finite differences against the derivative bound: rate >= bound(mid) - slope * dt."""
    dt = np.diff(trace.times)
    i = int(np.argmin(trace.rate - (trace.bound_mid - slope * dt)))
    return InequalityReport("bobkov-derivative", engine_name, {"slope": slope},
                            trace.bound_mid[i] - slope * dt[i], trace.rate[i], 1e-12)


def check_reverse_iso(engine, f, t: float, kappa: float | None = None, eta: float = ETA):
    """C Gamma(P_t f) <= I(P_t f)^2 - (P_t I(f))^2, and C Gamma(Phi^{-1} P_t f) <= 1.

    Returns (chain report, Lipschitz report).
    """
    if t <= 0:
        raise DomainError("reverse isoperimetry needs t > 0")
    kappa = _kappa(engine, kappa)
    C = C_kappa(kappa, t)
    fld = probit_field(engine, f, t, eta)
    iso_t = iso_profile_gauss(np.clip(fld.value, 0.0, 1.0))
    if isinstance(f, (G.IntervalSet, S.BandSet)):
        pti = np.zeros_like(iso_t)
    elif isinstance(engine, GaussEngine) and isinstance(f, G.ProbitAffine):
        pti = G.mehler_phi_of_affine(f.slope, t, fld.x, f.shift)
    else:
        nat = engine.native(f)
        vals = engine.value(nat)
        if np.any(vals < -1e-9) or np.any(vals > 1 + 1e-9):
            raise DomainError("f must take values in [0, 1]")
        fv = engine.value_fn(nat)
        pti = np.interp(fld.x, engine.points, engine.flow_fn(
            lambda y: iso_profile_gauss(np.clip(fv(y), 0.0, 1.0)), t))
    params = {"t": t, "kappa": kappa, "eta": eta}
    chain = _worst("reverse-iso", engine, params, C * fld.gamma_f, iso_t**2 - pti**2, rtol=1e-8)
    v = fld.valid
    ratio = C * fld.gamma_h[v]
    lip = InequalityReport("reverse-iso-lipschitz", engine.name, params,
                           float(ratio.max()) if ratio.size else 0.0, 1.0, 1e-6)
    return chain, lip


def check_reverse_bobkov(f, dfdx=None, m: int = 256) -> InequalityReport:
    """sqrt((int f')^2 + (int I(f))^2) <= I(int f) on the Gaussian line."""
    if isinstance(f, G.ProbitAffine):
        func, deriv = f, f.derivative
    elif isinstance(f, G.HermiteFunction):
        func, deriv = f, f.derivative()
    else:
        if dfdx is None:
            raise ValidationError("pass the derivative of f")
        func, deriv = f, dfdx
    q = G.gauss_quadrature(m)
    vals = np.asarray(func(q.nodes), dtype=float)
    if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
        raise DomainError("f must take values in [0, 1]")
    mean = float(q.weights @ vals)
    grad = float(q.weights @ np.asarray(deriv(q.nodes), dtype=float))
    iso = float(q.weights @ iso_profile_gauss(np.clip(vals, 0.0, 1.0)))
    return InequalityReport("reverse-bobkov", "gauss", {"m": m}, math.hypot(grad, iso),
                            float(iso_profile_gauss(mean)), 1e-10)


# -- perimeter, half-spaces, second order ------------------------------------------

@dataclass(frozen=True)
class PerimeterEstimate:
    times: np.ndarray
    values: np.ndarray
    limit: float
    order: float
    reference: float

    @property
    def relative_error(self):
        return abs(self.limit - self.reference) / max(self.reference, 1e-300)


def flow_perimeter(engine, A, t: float) -> float:
    """int sqrt(Gamma(P_t 1_A)) d mu."""
    fld = probit_field(engine, A, t)
    return float(np.dot(fld.weights, np.sqrt(fld.gamma_f)))


def perimeter_via_flow(engine, A, times=None) -> PerimeterEstimate:
    """Richardson extrapolation in sqrt(t) of int |grad P_t 1_A| toward its t -> 0 limit.

    ``times`` must shrink by a constant factor; the observed order (in sqrt t)
    is read off successive differences.
    """
    times = np.array([0.08 / 4**j for j in range(5)] if times is None else times, dtype=float)
    ratios = times[:-1] / times[1:]
    if np.any(times <= 0) or np.any(np.abs(ratios - ratios[0]) > 1e-9 * ratios[0]) or ratios[0] <= 1:
        raise ValidationError("times must decrease geometrically")
    vals = np.array([flow_perimeter(engine, A, t) for t in times])
    reference = A.boundary
    d = np.diff(vals)
    q = math.sqrt(ratios[0])                    # sqrt(t) shrink factor
    if reference == 0.0 and np.all(np.abs(vals) < 1e-14):
        return PerimeterEstimate(times, vals, 0.0, math.inf, 0.0)
    if np.any(d[1:] * d[:-1] < 0) and np.max(np.abs(d[1:])) > 1e-10:
        raise ResolutionError("perimeter sequence oscillates; refine the time grid")
    if abs(d[-1]) < 1e-14:
        return PerimeterEstimate(times, vals, float(vals[-1]), math.inf, reference)
    order = math.log(abs(d[-2] / d[-1])) / math.log(q)
    r = q ** order
    limit = float(vals[-1] + d[-1] / (r - 1.0)) if r > 1 + 1e-12 else float(vals[-1])
    return PerimeterEstimate(times, vals, limit, order, reference)


@dataclass(frozen=True)
class HalfspaceFit:
    t: float
    slope: float
    intercept: float
    residual: float
    normalized_slope: float     # e^t |slope|, compared with k_t = (1 - e^{-2t})^{-1/2}
    k_t: float


def halfspace_flow_check(f, t: float, m: int = 48) -> HalfspaceFit:
    """Gaussian-weighted linear least squares fit of Phi^{-1}(Q_t f) at Gauss-Hermite nodes.

    Residual is the weighted L^2 norm of the misfit; it vanishes exactly when
    Phi^{-1}(Q_t f) is affine, i.e. for half-lines and probit-affine data.
    """
    if t <= 0:
        raise DomainError("half-space check needs t > 0")
    q = G.gauss_quadrature(m)
    x, w = q.nodes, q.weights
    if isinstance(f, (G.IntervalSet, G.ProbitAffine)):
        h = f.flow(t, x).h
    else:
        fh = f if isinstance(f, G.HermiteFunction) else G.analyze_callable(f, G.DEFAULT_K)
        h = G.hermite_probit_jet(G.ou_flow(fh, t), x).h
    A = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], h * sw, rcond=None)
    resid = math.sqrt(float(np.dot(w, (h - A @ coef) ** 2)))
    kt = 1.0 / math.sqrt(-math.expm1(-2 * t))
    return HalfspaceFit(t, float(coef[1]), float(coef[0]), resid, math.exp(t) * abs(float(coef[1])), kt)


@dataclass(frozen=True)
class SecondOrderBreakdown:
    report: InequalityReport
    spectral_lhs: float          # sum (lambda^2 - lambda) f_k^2
    spectral_rhs: float          # 1/2 sum (lambda - 1)^2 f_k^2
    nodal_lhs: float
    nodal_rhs: float
    corollary: InequalityReport | None
    centered: bool


def second_order_poincare(engine, f, kappa: float = 1.0) -> SecondOrderBreakdown:
    """int (Gamma_2 - Gamma)(f) >= 1/2 ||f + L f||^2, spectral and nodal.

    Oriented so that lhs is the smaller side 1/2 ||f + Lf||^2.  On the sphere
    the corollary 1/2 ||f + Lf||^2 >= 1/2 ||f - Pi_1 f||^2 is also reported.
    """
    centered = False
    if isinstance(engine, GaussEngine):
        f = engine.native(f)
        if abs(f.coeffs[0]) > 0:
            f = G.HermiteFunction(np.concatenate([[0.0], f.coeffs[1:]]))
            centered = True
        k = np.arange(f.K + 1, dtype=float)
        a2 = f.coeffs**2
        s_l, s_r = float(np.sum((k * k - k) * a2)), 0.5 * float(np.sum((k - 1) ** 2 * a2))
        gi = G.gamma_integrals(f)
        n_l, n_r = gi["gamma2_minus_gamma"], 0.5 * gi["f_plus_Lf_sq"]
        cor = None
    elif isinstance(engine, SphereEngine):
        f = engine.native(f)
        if abs(f.coeffs[0]) > 0:
            f = S.ZonalFunction(f.geom, np.concatenate([[0.0], f.coeffs[1:]]))
            centered = True
        lam = f.eigenvalues
        b2 = f.coeffs**2
        s_l, s_r = float(np.sum((lam**2 - lam) * b2)), 0.5 * float(np.sum((lam - 1) ** 2 * b2))
        gc = S.gamma_calculus_zonal(f)
        q = S.sphere_quadrature(f.n, f.K + 2)
        n_l = float(gc.weights @ gc.gamma2_minus_gamma)
        fv = f(q.nodes)
        n_r = 0.5 * float(q.weights @ (fv + gc.laplacian) ** 2)
        resid = f - S.project_linear_zonal(f)
        cor = InequalityReport("second-order-corollary", engine.name, {"K": f.K},
                               0.5 * resid.norm2, s_r, 1e-12 * (1 + s_r))
    elif isinstance(engine, LineEngine):
        from .line import functional_report
        g = engine.native(f)
        mean = g.mean
        if abs(mean) > 1e-14:
            g = type(g)(g.x, g.values - mean, g.weights)
            centered = True
        rep = functional_report(engine.op, g, kappa)
        n_l, n_r = rep.gamma2_minus_gamma, 0.5 * rep.f_plus_Lf_sq
        s_l, s_r = n_l, n_r
        cor = None
    else:
        raise ValidationError(f"unsupported engine {engine!r}")
    report = InequalityReport("second-order-poincare", engine.name, {"kappa": kappa, "centered": centered},
                              s_r, s_l, 1e-9 * (1 + abs(s_l)))
    return SecondOrderBreakdown(report, s_l, s_r, n_l, n_r, cor, centered)


@dataclass(frozen=True)
class SteinGap:
    gap: float
    k: int


def stein_gap(engine, kappa: float | None = None, k_max: int = 8) -> SteinGap:
    """min over k >= 1 of lambda_k - kappa and its minimiser."""
    kappa = engine.kappa if kappa is None else kappa
    if isinstance(engine, GaussEngine):
        gaps = [k - kappa for k in range(1, k_max + 1)]
    elif isinstance(engine, SphereEngine):
        n = engine.n
        # integer numerator keeps k=1 exact: (n - kappa (n - 1)) / (n - 1)
        gaps = [(k * (n + k - 1) - kappa * (n - 1)) / (n - 1) for k in range(1, k_max + 1)]
    elif isinstance(engine, LineEngine):
        from .line import spectrum
        lam = spectrum(engine.op, min(k_max + 1, engine.op.m // 10)).eigenvalues
        gaps = [float(l) - kappa for l in lam[1:]]
    else:
        raise ValidationError(f"unsupported engine {engine!r}")
    i = int(np.argmin(gaps))
    return SteinGap(float(gaps[i]), i + 1)
