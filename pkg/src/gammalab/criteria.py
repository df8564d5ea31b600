"""Acceptance criteria as runnable functions.

Each criterion returns a :class:`CriterionResult`; the battery and the
acceptance tests share these definitions.  Constants are looked up through
their modules at call time so that mutation tests can patch them.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import deficit as Dm
from . import gauss as G
from . import line as Ln
from . import profiles as P
from . import sphere as S
from . import inequalities as Q
from .engines import GaussEngine, LineEngine, SphereEngine


@dataclass
class CriterionResult:
    id: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    runtime: float = 0.0

    def line(self) -> str:
        return f"criterion {self.id:2d} [{'PASS' if self.passed else 'FAIL'}] {self.title} ({self.runtime:.1f}s)"

    def to_dict(self) -> dict:
        return {"id": self.id, "title": self.title, "passed": bool(self.passed),
                "runtime": round(self.runtime, 3), "details": _jsonable(self.details)}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.runtime = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _no_growth(values_early, values_late, factor=2.0):
    """Boundedness proxy on a finite range: the late sup does not exceed factor x early sup."""
    return float(np.max(values_late)) <= factor * float(np.max(values_early))


# -- 1-6: spectral identities and profiles -----------------------------------------

@_timed
def criterion_1():
    err = 0.0
    for k in range(21):
        for t in (0.1, 1.0, 5.0):
            f = G.HermiteFunction.basis(k)
            err = max(err, float(np.max(np.abs(G.ou_flow(f, t).coeffs - math.exp(-k * t) * f.coeffs))))
    return CriterionResult(1, "exact OU spectral flow", err <= 1e-12, {"max_error": err})


@_timed
def criterion_2(seed: int = 0, count: int = 20):
    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(count):
        f = G.HermiteFunction(rng.standard_normal(21))
        for t in (0.1, 1.0, 5.0):
            lhs = G.ou_flow(f, t).derivative().coeffs
            rhs = math.exp(-t) * G.ou_flow(f.derivative(), t).coeffs
            err = max(err, float(np.max(np.abs(lhs - rhs))))
    return CriterionResult(2, "commutation grad Q_t = e^{-t} Q_t grad", err <= 1e-12, {"max_error": err, "seed": seed})


@_timed
def criterion_3():
    half = abs(P.iso_profile_gauss(0.5) - 1.0 / math.sqrt(2.0 * math.pi))
    v = np.linspace(0.0, 1.0, 2001)
    sym = float(np.max(np.abs(P.iso_profile_gauss(v) - P.iso_profile_gauss(1.0 - v))))
    return CriterionResult(3, "Gaussian profile value and symmetry", half <= 1e-12 and sym <= 1e-13,
                           {"half_error": half, "symmetry_error": sym})


@_timed
def criterion_4():
    n = np.arange(2, 10001)
    c = np.array([P.bobkov_constant(int(k)) for k in n])
    lo = float(np.min(c - np.sqrt(n - 1.0)))
    hi = float(np.min(np.sqrt(n) - c))
    return CriterionResult(4, "sqrt(n-1) <= c_n <= sqrt(n)", lo >= 0 and hi >= 0,
                           {"min_c_minus_sqrt_nm1": lo, "min_sqrt_n_minus_c": hi})


@_timed
def criterion_5():
    n = np.unique(np.geomspace(100, 10000, 200).astype(int))
    c = np.array([P.bobkov_constant(int(k)) for k in n])
    scaled = np.abs((n - 1.0) / c**2 - (1.0 - 1.0 / (2.0 * n))) * n**2
    ok = bool(np.all(np.isfinite(scaled))) and _no_growth(scaled[n <= 1000], scaled[n > 1000])
    return CriterionResult(5, "Stirling asymptotic of c_n", ok,
                           {"max_scaled": float(scaled.max()), "scaled_at_1e4": float(scaled[-1])})


@_timed
def criterion_6():
    ns = np.arange(10, 201)
    gaps = [P.profile_gap(int(n)) for n in ns]
    scaled = np.array([g.sup_gap * g.n for g in gaps])
    min_gap = min(g.min_gap for g in gaps)
    ok = min_gap >= -1e-12 and _no_growth(scaled[ns <= 100], scaled[ns > 100])
    return CriterionResult(6, "profile gap O(1/n), nonnegative", ok,
                           {"max_scaled": float(scaled.max()), "min_gap": float(min_gap)})


# -- 7-9: Bobkov flow battery -----------------------------------------------------

FLOW_TIMES = np.geomspace(0.01, 2.0, 30)


def flow_battery():
    """(label, engine, f, times) for the Bobkov-flow criteria."""
    ge = GaussEngine()
    out = [("gauss half-line a=0", ge, G.IntervalSet.half_line(0.0, upper=False), FLOW_TIMES),
           ("gauss Phi(2x)", ge, G.ProbitAffine(2.0, 0.0), np.concatenate([[0.0], FLOW_TIMES]))]
    for n in (5, 10, 50):
        se = SphereEngine(n)
        for v in (0.2, 0.5):
            out.append((f"sphere n={n} cap v={v}", se, S.BandSet.cap(se.geom, volume=v), FLOW_TIMES))
    return out


_FLOW_CACHE: dict = {}


def _flow_traces():
    if "traces" not in _FLOW_CACHE:
        _FLOW_CACHE["traces"] = [(lab, eng, f, Q.bobkov_flow(eng, f, ts)) for lab, eng, f, ts in flow_battery()]
    return _FLOW_CACHE["traces"]


@_timed
def criterion_7():
    rows, ok = {}, True
    for lab, eng, f, tr in _flow_traces():
        inc = tr.max_increase
        floor_ok = tr.psi.min() >= tr.limit - 1e-7
        rows[lab] = {"max_increase": inc, "deficit": tr.deficit, "psi_end": float(tr.psi[-1]), "limit": tr.limit}
        ok &= inc <= 1e-7 and floor_ok
        if "half-line" in lab:
            ok &= abs(tr.deficit) <= 1e-8
    return CriterionResult(7, "Bobkov functional non-increasing", bool(ok), rows)


@_timed
def criterion_8(slope: float = 10.0):
    rows, ok = {}, True
    for lab, eng, f, tr in _flow_traces():
        r = Q.check_bobkov_derivative(tr, eng.name, slope)
        rows[lab] = {"worst_slack": r.slack}
        ok &= r.holds
    return CriterionResult(8, "Bobkov derivative bound vs finite differences", bool(ok), rows)


@_timed
def criterion_9():
    rows, worst = {}, 0.0
    for lab, eng, f, ts in flow_battery():
        m = 0.0
        for t in ts:
            if t <= 0:
                continue
            fld = Q.probit_field(eng, f, t)
            if np.any(fld.valid):
                m = max(m, float(Q.C_kappa(1.0, t) * fld.gamma_h[fld.valid].max()))
        rows[lab] = m
        worst = max(worst, m)
    return CriterionResult(9, "reverse isoperimetric Lipschitz bound", worst <= 1 + 1e-6, {"max_ratio": worst, **rows})


# -- 10-15 ------------------------------------------------------------------------

@_timed
def criterion_10():
    r = Q.check_reverse_bobkov(G.ProbitAffine(1.0, 0.0))
    target = 1.0 / math.sqrt(2.0 * math.pi)
    ok = abs(r.lhs - target) <= 1e-9 and abs(r.rhs - target) <= 1e-9
    return CriterionResult(10, "reverse Bobkov equality for Phi(x)", ok, {"lhs": r.lhs, "rhs": r.rhs})


def random_gauss_function(rng, degree=8):
    c = rng.standard_normal(degree + 1) / (1.0 + np.arange(degree + 1))
    c[0] = 0.0
    return G.HermiteFunction(c)


def random_zonal_function(rng, geom, degree=8):
    c = rng.standard_normal(degree + 1) / (1.0 + np.arange(degree + 1))
    c[0] = 0.0
    return S.ZonalFunction(geom, c)


@_timed
def criterion_11(seed: int = 0, count: int = 100):
    rng = np.random.default_rng(seed)
    ge = GaussEngine()
    ident = 0.0
    worst = {"gauss": math.inf, "sphere": math.inf, "corollary": math.inf}
    for _ in range(count):
        b = Q.second_order_poincare(ge, random_gauss_function(rng))
        ident = max(ident, abs(b.spectral_lhs - b.nodal_lhs), abs(b.spectral_rhs - b.nodal_rhs))
        worst["gauss"] = min(worst["gauss"], b.report.slack)
    for _ in range(count):
        n = int(rng.integers(3, 21))
        se = SphereEngine(n)
        b = Q.second_order_poincare(se, random_zonal_function(rng, se.geom))
        ident = max(ident, abs(b.spectral_lhs - b.nodal_lhs), abs(b.spectral_rhs - b.nodal_rhs))
        worst["sphere"] = min(worst["sphere"], b.report.slack)
        worst["corollary"] = min(worst["corollary"], b.corollary.slack)
    ok = ident <= 1e-9 and all(v >= -1e-9 for v in worst.values())
    return CriterionResult(11, "second-order Poincare identities and inequality", ok,
                           {"identity_error": ident, **{f"min_slack_{k}": v for k, v in worst.items()}, "seed": seed})


@_timed
def criterion_12():
    g = Q.stein_gap(GaussEngine())
    ok = abs(g.gap) <= 1e-12 and g.k == 1
    sphere_ok = all(Q.stein_gap(SphereEngine(n, m=64)).gap == 1.0 / (n - 1) for n in range(3, 51))
    lam_g = Ln.spectrum(Ln.discretize_generator(Ln.builtin_measure("gaussian"), 2000), 6).eigenvalues
    lam_q = Ln.spectrum(Ln.discretize_generator(Ln.builtin_measure("quartic"), 2000), 6).eigenvalues
    k = np.arange(6)
    line_ok = float(np.max(np.abs(lam_g - k))) <= 1e-3 and bool(np.all(lam_q >= k - 1e-3))
    return CriterionResult(12, "Stein gaps", bool(ok and sphere_ok and line_ok),
                           {"gauss_gap": g.gap, "sphere_exact": sphere_ok, "ou_error": float(np.max(np.abs(lam_g - k))),
                            "quartic": lam_q})


@_timed
def criterion_13():
    rows, ok = {}, True
    ge = GaussEngine()
    cases = [(f"gauss half-line a={a}", ge, G.IntervalSet.half_line(float(a), upper=False)) for a in (0, 1)]
    for n in (2, 10):
        se = SphereEngine(n)
        for v in (0.3, 0.5):
            cases.append((f"sphere n={n} v={v}", se, S.BandSet.cap(se.geom, volume=v)))
    for lab, eng, A in cases:
        est = Q.perimeter_via_flow(eng, A)
        rows[lab] = {"limit": est.limit, "reference": est.reference, "rel_error": est.relative_error, "order": est.order}
        ok &= est.relative_error <= 0.01 and est.order >= 0.4
    return CriterionResult(13, "perimeter via flow", bool(ok), rows)


def l1_battery():
    ge, se, le = GaussEngine(), SphereEngine(5), LineEngine.builtin("quartic", m=1500)
    cap = S.BandSet.cap(se.geom, volume=0.3)
    return [("gauss x", ge, lambda x: x), ("gauss h2", ge, G.HermiteFunction.basis(2)),
            ("gauss h3", ge, G.HermiteFunction.basis(3)), ("gauss exp(sin/2)", ge, lambda x: np.exp(0.5 * np.sin(x))),
            ("sphere5 smoothed cap", se, S.flowed_band(cap, 0.05)), ("sphere5 degree 3", se, S.ZonalFunction(se.geom, [0, 1, 0.5, 0.2])),
            ("line quartic sin", le, np.sin)]


@_timed
def criterion_14():
    rows, ok = {}, True
    for lab, eng, f in l1_battery():
        for t in (0.05, 0.1, 0.5):
            r = Q.check_l1_contraction(eng, f, t)
            rows[f"{lab} t={t}"] = r.slack
            ok &= r.holds
    r = Q.check_l1_contraction(GaussEngine(), lambda x: x, 0.1)
    ok &= abs(r.lhs - 0.07592) <= 1e-5 and abs(r.rhs - 0.44721) <= 1e-5 and abs(r.rhs - math.sqrt(0.2)) <= 1e-10
    return CriterionResult(14, "L1 contraction", bool(ok), {"x_t0.1_lhs": r.lhs, "x_t0.1_rhs": r.rhs, **rows})


@_timed
def criterion_15():
    rows, ok = {}, True
    H = G.IntervalSet.half_line(0.0, upper=False)
    for t in (0.1, 0.3, 1.0):
        fit = Q.halfspace_flow_check(H, t)
        rows[f"t={t}"] = {"residual": fit.residual, "slope": fit.slope, "normalized_slope": fit.normalized_slope, "k_t": fit.k_t}
        ok &= fit.residual <= 1e-8 and abs(fit.normalized_slope - fit.k_t) <= 1e-6
    return CriterionResult(15, "half-space flow linearity", bool(ok), rows)


# -- 16-19: deficit lab -------------------------------------------------------------

@_timed
def criterion_16():
    H = Dm.hypothesis_H_scan(ns=(3, 5, 10, 50), t_grid=(0.02, 0.05, 0.1, 0.2, 0.5), eps_grid=(0.05, 0.1, 1 / 7))
    ok = math.isfinite(H.C_H) and H.t_spread <= 3.0
    return CriterionResult(16, "Hypothesis (H) constant finite and t-stable", ok,
                           {"C_H": H.C_H, "t_spread": H.t_spread, "per_t": H.per_t})


@_timed
def criterion_17():
    scans = [Dm.kernel_bound_scan(P.SphereGeometry(n)) for n in (3, 5, 10)]
    consts = np.array([s.constant for s in scans])
    ok = bool(np.all(np.isfinite(consts))) and consts.max() <= 4.0 * consts.min()
    return CriterionResult(17, "heat-kernel derivative bounds", ok,
                           {"constants": {s.n: s.constant for s in scans}, "spread": float(consts.max() / consts.min())})


@_timed
def criterion_18():
    ns = np.array([10, 20, 30, 50, 75, 100, 150, 200])
    sup = np.array([Dm.cap_measure_gap(P.SphereGeometry(int(n)), (0.04, 0.09, 0.16, 0.25, 0.36, 0.5, 0.75, 1.0)).sup_scaled
                    for n in ns])
    ok = bool(np.all(np.isfinite(sup))) and _no_growth(sup[ns <= 50], sup[ns > 50])
    return CriterionResult(18, "cap-measure Gaussian gap O(sqrt(t)/n)", ok, {"sup_scaled": dict(zip(ns.tolist(), sup))})


S_GRID_19 = tuple(np.geomspace(5e-2, 1e-6, 12))


@_timed
def criterion_19():
    geom = P.SphereGeometry(50)
    res = Dm.deficit_experiment(geom, "cap-antipodal", 0.5, S_GRID_19)
    rounding_ok = all(r.rounding is None or r.rounding.holds for r in res.records)
    ok = res.delta_decades >= 3 and res.consistent and rounding_ok
    return CriterionResult(19, "deficit experiment consistency", bool(ok),
                           {"C_fit": res.C_fit, "c_fit": res.c_fit, "decades": res.delta_decades,
                            "violations": res.violations, "rounding_ok": rounding_ok,
                            "records": [(r.s, r.delta_sphere, r.delta_gauss, r.sym_diff,
                                         None if r.rounding is None else r.rounding.l1_distance) for r in res.records]})


ALL = {i: globals()[f"criterion_{i}"] for i in range(1, 20)}
QUICK = (1, 2, 3, 4, 5, 10, 11, 12, 14, 15)
