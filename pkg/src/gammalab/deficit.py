"""Quantitative stability experiments for zonal sets on the sphere.

Perturbed caps, their isoperimetric deficits and distance to the nearest cap,
the deficit-to-distance bound chain, and numerical scans of the auxiliary
estimates it relies on (second-order reverse isoperimetry, heat-kernel
derivative bounds, small-ball Gaussian comparison).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from . import sphere as S
from .errors import ConstructionError, DomainError, ExperimentError, ValidationError
from .profiles import SphereGeometry, iso_profile_gauss, iso_profile_sphere, quantile_from_logs

TRIVIAL_DELTA = 0.5 - 1.0 / math.sqrt(2.0 * math.pi)
FAMILIES = ("cap-antipodal", "cap-band", "boundary-wobble")


@dataclass(frozen=True)
class PipelineConstants:
    """Constants of the deficit-to-distance chain.

    ``C_pipeline`` multiplies the bracket of the L^2 projection bound; like
    ``C_H`` it is not given explicitly and is meant to be calibrated.
    """

    c: float = 0.49
    C_H: float = 1.0
    eta_H: float = 4.0
    t0: float = 0.5
    eps0: float = 1.0 / 7.0
    C_pipeline: float = 1.0

    def __post_init__(self):
        if not 0.49 <= self.c < 0.5:
            raise ValidationError("c must lie in [0.49, 0.5)")
        if not 0 < self.eps0 <= 1.0 / 7.0:
            raise ValidationError("eps0 must lie in (0, 1/7]")
        if not 0 < self.t0 < 1:
            raise ValidationError("t0 must lie in (0, 1)")
        if self.C_H <= 0 or self.C_pipeline <= 0:
            raise ValidationError("constants must be positive")


# -- sets ------------------------------------------------------------------------

def _theta(geom, v):
    return float(geom.colatitude_for_volume(min(max(v, 0.0), 1.0)))


def make_perturbed_set(geom: SphereGeometry, family: str, v: float, s: float) -> S.BandSet:
    """Cap of volume ``v`` with mass ``s`` moved elsewhere; volume stays ``v``.

    The perturbation size ``s`` is a mass, not an angle: in high dimension a
    fixed angle carries a vanishing mass.

    * cap-antipodal:   {mass v - s at the north pole} + {mass s at the south pole}
    * cap-band:        {mass v - s at the north pole} + band of mass s centred in the complement
    * boundary-wobble: {mass v - s at the north pole} + band of mass s just outside colatitude theta(v)
    """
    if not 0 < v < 1:
        raise DomainError("target volume must lie in (0, 1)")
    if s < 0:
        raise DomainError("perturbation size must be non-negative")
    if s == 0:
        return S.BandSet.cap(geom, volume=v)
    if family not in FAMILIES:
        raise DomainError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if s >= v or (family == "cap-antipodal" and s >= 1 - v) or (family != "cap-antipodal" and v + s >= 1):
        raise ConstructionError(f"perturbation s={s} does not fit next to a cap of volume {v}")
    th_main = _theta(geom, v - s)
    if family == "cap-antipodal":
        lo, hi = _theta(geom, 1 - s), math.pi
    elif family == "cap-band":
        mid = 0.5 * (v - s + 1.0)
        lo, hi = _theta(geom, mid - 0.5 * s), _theta(geom, mid + 0.5 * s)
    else:
        lo, hi = _theta(geom, v), _theta(geom, v + s)
    if not th_main < lo < hi:
        raise ConstructionError("bands collapse at this resolution")
    A = S.BandSet(geom, ((0.0, th_main), (lo, hi)))
    if abs(A.volume - v) > 1e-10:
        raise ConstructionError(f"volume {A.volume} misses target {v}")
    return A


def _intersection_mass(geom, A: S.BandSet, B: S.BandSet) -> float:
    total = 0.0
    for a0, a1 in A.bands:
        for b0, b1 in B.bands:
            lo, hi = max(a0, b0), min(a1, b1)
            if hi > lo:
                total += geom.cap_volume(hi) - geom.cap_volume(lo)
    return float(total)


def symmetric_difference(A: S.BandSet, B: S.BandSet) -> float:
    return max(A.volume + B.volume - 2.0 * _intersection_mass(A.geom, A, B), 0.0)


def nearest_cap(A: S.BandSet) -> tuple:
    """Cap of equal volume at the better of the two poles: (cap, pole, mu(A delta cap))."""
    geom, v = A.geom, A.volume
    north = S.BandSet.cap(geom, volume=v)
    th = _theta(geom, 1.0 - v)
    south = S.BandSet(geom, ((th, math.pi),)) if th < math.pi else S.BandSet(geom, ())
    dn, ds = symmetric_difference(A, north), symmetric_difference(A, south)
    return (north, "north", dn) if dn <= ds else (south, "south", ds)


# -- bound chain -----------------------------------------------------------------

@dataclass(frozen=True)
class PipelineTrace:
    """All quantities of the bound chain; logs are kept since the terms under/overflow."""

    log_delta: float
    trivial: bool
    t: float
    eps: float
    log_eps: float
    log_term1: float
    log_term2: float
    log_l2_bound: float
    l1_bound: float
    final_bound: float

    @property
    def term1(self):
        return math.exp(self.log_term1) if self.log_term1 < 700 else math.inf

    @property
    def term2(self):
        return math.exp(self.log_term2) if self.log_term2 < 700 else math.inf

    @property
    def log_ratio(self) -> float:
        """log(term2 / term1)."""
        return self.log_term2 - self.log_term1


def mn_bound_pipeline(delta: float | None = None, constants: PipelineConstants = PipelineConstants(),
                      log_delta: float | None = None) -> PipelineTrace:
    """t = |log delta|^{-2c}, eps = delta^{1/2} and the bounds built on them.

    term1 = delta / (t^{5/2} I(eps)), term2 = t^{-5} exp(-t Phi^{-1}(eps)^2),
    L2 = C (term1 + term2), L1 = sqrt(t/2) + sqrt(L2), final = L1 + delta.
    Pass ``log_delta`` to reach deficits far below the double range.
    Deficits at or above 1/2 - (2 pi)^{-1/2} take the trivial branch (bound 1).
    """
    if (delta is None) == (log_delta is None):
        raise ValidationError("give exactly one of delta or log_delta")
    if log_delta is None:
        if not delta > 0:
            raise DomainError("deficit must be positive")
        log_delta = math.log(delta)
    if log_delta >= math.log(TRIVIAL_DELTA):
        nan = float("nan")
        return PipelineTrace(log_delta, True, nan, nan, nan, nan, nan, nan, 1.0, 1.0)
    c = constants.c
    L = -log_delta
    t = L ** (-2.0 * c)
    log_eps = 0.5 * log_delta
    q = float(quantile_from_logs(log_eps, math.log1p(-math.exp(log_eps))))
    log_iso = -0.5 * q * q - 0.5 * math.log(2.0 * math.pi)
    lt1 = log_delta - 2.5 * math.log(t) - log_iso
    lt2 = -5.0 * math.log(t) - t * q * q
    log_l2 = math.log(constants.C_pipeline) + float(np.logaddexp(lt1, lt2))
    l1 = math.sqrt(0.5 * t) + (math.exp(0.5 * log_l2) if log_l2 < 1400 else math.inf)
    final = l1 + math.exp(log_delta)
    return PipelineTrace(log_delta, False, t, math.exp(log_eps), log_eps, lt1, lt2, log_l2, l1, final)


# -- records ---------------------------------------------------------------------

@dataclass(frozen=True)
class DeficitRecord:
    n: int
    family: str
    s: float
    bands: tuple
    v: float
    boundary: float
    delta_gauss: float
    delta_sphere: float
    cap_pole: str
    cap_theta: float
    sym_diff: float
    pipeline: PipelineTrace | None = None
    rounding: "RoundingResult | None" = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bands"] = [list(b) for b in self.bands]
        return d


def deficit_measure(A: S.BandSet, family: str = "", s: float = 0.0) -> DeficitRecord:
    geom, v = A.geom, A.volume
    boundary = A.boundary
    H, pole, sd = nearest_cap(A)
    th = H.bands[0][1] if pole == "north" else H.bands[0][0]
    return DeficitRecord(geom.n, family, float(s), A.bands, v, boundary,
                         boundary - float(iso_profile_gauss(v)),
                         boundary - float(iso_profile_sphere(geom, v)), pole, float(th), sd)


# -- flowed probit and its linear projection ---------------------------------------

def _probit_on_nodes(A: S.BandSet, t: float, m: int):
    """h_t = Phi^{-1}(P_t 1_A) at Gauss-Jacobi nodes, accurate in both tails.

    Double precision is used where the series is well conditioned; the
    remaining nodes go through the multiprecision jet, with a floor deep
    enough for every node whose weight can matter in an L^2 norm.
    """
    geom = A.geom
    q = S.sphere_quadrature(geom.n, m)
    x, w = np.asarray(q.nodes), np.asarray(q.weights)
    J = S.probit_jet_zonal(S.flowed_band(A, t), x, eta=1e-10)
    h = J.h.copy()
    tail = ~J.valid
    if np.any(tail):
        theta = np.arccos(x)
        bp = np.array(A.breakpoints + [0.0, math.pi])
        dist = geom.R * np.min(np.abs(theta[:, None] - bp[None, :]), axis=1)
        # the probit is (2t)^{-1/2}-Lipschitz; 3 bounds |h| at the interfaces
        h_bound = 3.0 + dist / math.sqrt(2.0 * t)
        need = tail & (w * h_bound**2 > 1e-18)
        floor = -(0.5 * float(np.max(h_bound[need])) ** 2 + 10.0) if np.any(need) else -70.0
        th = theta[tail]
        Jl = S.flowed_band_logjet(A, t, th, log_floor=floor)
        Jh = S.flowed_band_logjet(complement(A), t, th, log_floor=floor)
        h[tail] = quantile_from_logs(Jl.log_value, Jh.log_value)
    return x, w, h


def complement(A: S.BandSet) -> S.BandSet:
    bp = [0.0] + A.breakpoints + [math.pi]
    bands = [(a, b) for a, b in zip(bp[0::2], bp[1::2]) if b > a]
    return S.BandSet(A.geom, tuple(bands))


@dataclass(frozen=True)
class ProjectionCheck:
    t: float
    residual_sq: float          # ||h_t - Pi_1 h_t||_2^2
    b0: float
    b1: float                   # coefficient of the normalised degree-one harmonic
    bound_term: float           # C (term1 + term2) of the chain at this deficit
    delta: float
    m: int


def projection_distance_check(A: S.BandSet, t: float | None = None,
                              constants: PipelineConstants = PipelineConstants(),
                              delta: float | None = None, m: int | None = None) -> ProjectionCheck:
    """||h_t - Pi_1 h_t||^2 with Pi_1 the projection onto affine functions.

    ``delta`` defaults to the Gaussian deficit of A, ``t`` to the chain's choice.
    """
    if delta is None:
        delta = deficit_measure(A).delta_gauss
    tr = mn_bound_pipeline(delta, constants) if delta > 0 else None
    if t is None:
        if tr is None or tr.trivial:
            raise DomainError("pass t explicitly when the chain has no time scale")
        t = tr.t
    if m is None:
        m = int(np.clip(6 * math.pi * A.geom.R / math.sqrt(2 * t), 64, 400))
    x, w, h = _probit_on_nodes(A, t, m)
    p1 = S.zonal_basis(A.geom.n, x, 1)[0]
    b = p1 @ (w * h)
    resid = float(w @ h**2 - b @ b)
    bound = math.exp(tr.log_l2_bound) if (tr is not None and not tr.trivial and tr.log_l2_bound < 700) else math.inf
    return ProjectionCheck(float(t), max(resid, 0.0), float(b[0]), float(b[1]), bound, float(delta), m)


@dataclass(frozen=True)
class RoundingResult:
    degenerate: bool
    cap: S.BandSet | None
    sym_diff: float             # mu(A delta H)
    l1_distance: float          # ||1_A - Phi(Pi_1 h_t)||_1

    @property
    def holds(self) -> bool:
        return self.degenerate or self.sym_diff <= self.l1_distance + 1e-10


def rounding(A: S.BandSet, t: float, m: int | None = None, b=None) -> RoundingResult:
    """Round g = Phi(Pi_1 h_t) to the cap H = {Pi_1 h_t >= 0} and compare
    mu(A delta H) with ||1_A - g||_1."""
    geom = A.geom
    if b is None:
        pc = projection_distance_check(A, t=t, m=m, delta=1.0)
        b = (pc.b0, pc.b1)
    b0, b1 = float(b[0]), float(b[1])
    a1 = S.recurrence_coefficients(geom.n, 1)[1]     # p_1(x) = x / a_1
    slope = b1 / a1
    if abs(slope) <= 1e-12 * (1.0 + abs(b0)):
        return RoundingResult(True, None, float("nan"), float("nan"))
    x0 = -b0 / slope                                  # Pi_1 h = b0 + slope x
    if x0 >= 1:
        H = S.BandSet(geom, ()) if slope > 0 else S.BandSet(geom, ((0.0, math.pi),))
    elif x0 <= -1:
        H = S.BandSet(geom, ((0.0, math.pi),)) if slope > 0 else S.BandSet(geom, ())
    else:
        th0 = math.acos(x0)
        H = S.BandSet(geom, ((0.0, th0),)) if slope > 0 else S.BandSet(geom, ((th0, math.pi),))
    sd = symmetric_difference(A, H)
    log_dens = lambda th: (geom.n - 1) * math.log(max(math.sin(th), 1e-300)) - geom.log_Z

    def integrand(th, inside):
        g = special.ndtr(b0 + slope * math.cos(th))
        return abs(inside - g) * math.exp(log_dens(th))

    cuts = sorted(set([0.0, math.pi] + A.breakpoints))
    l1 = 0.0
    for lo, hi in zip(cuts, cuts[1:]):
        mid = 0.5 * (lo + hi)
        inside = float(any(a <= mid <= bb for a, bb in A.bands))
        l1 += integrate.quad(integrand, lo, hi, args=(inside,), limit=200, epsabs=1e-14, epsrel=1e-11)[0]
    return RoundingResult(False, H, sd, l1)


# -- experiment --------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentResult:
    records: list
    c_fit: float               # free log-log slope of sym_diff against |log delta|
    C_fit: float               # constant at the fixed exponent c, fitted on the top decade
    c: float
    consistent: bool
    violations: list = field(default_factory=list)
    delta_decades: float = 0.0


def _delta_for_fit(r: DeficitRecord) -> float:
    return r.delta_sphere


def deficit_experiment(geom: SphereGeometry, family: str, v: float, s_grid,
                       constants: PipelineConstants = PipelineConstants(),
                       with_rounding: bool = True, fit_decade: float = 1.0) -> ExperimentResult:
    """Sweep the perturbation size and test sym_diff <= C_fit |log delta|^{-c}.

    The deficit used is the spherical one: it is smaller than the Gaussian one,
    so the check is stricter.  C_fit is fitted on the records whose deficit lies
    in the top ``fit_decade`` decades and then verified on all smaller ones.
    The s = 0 point is excluded (its deficit is the sphere-versus-Gauss floor).
    """
    s_grid = [float(s) for s in s_grid if s > 0]
    if len(s_grid) < 5:
        raise ExperimentError("need at least five non-zero perturbation sizes")
    records = []
    for s in sorted(s_grid):
        A = make_perturbed_set(geom, family, v, s)
        r = deficit_measure(A, family, s)
        tr = mn_bound_pipeline(r.delta_gauss, constants) if r.delta_gauss > 0 else None
        rr = None
        if with_rounding:
            # the trivial branch has no time scale; round at the validity threshold instead
            rr = rounding(A, tr.t if tr is not None and not tr.trivial else constants.t0)
        records.append(DeficitRecord(**{**r.__dict__, "pipeline": tr, "rounding": rr}))
    d = np.array([_delta_for_fit(r) for r in records])
    sd = np.array([r.sym_diff for r in records])
    if np.any(d <= 0) or np.any(d >= 1):
        raise ExperimentError("deficits must lie in (0, 1) for the logarithmic fit")
    L = -np.log(d)
    c_fit = float(-np.polyfit(np.log(L), np.log(sd), 1)[0])
    top = d >= d.max() * 10.0 ** (-fit_decade)
    scaled = sd * L ** constants.c
    C_fit = float(scaled[top].max())
    viol = [i for i in range(len(records)) if scaled[i] > C_fit * (1 + 1e-12)]
    viol += [i for i, r in enumerate(records) if r.rounding is not None and not r.rounding.holds]
    return ExperimentResult(records, c_fit, C_fit, constants.c, not viol, sorted(set(viol)),
                            float(np.log10(d.max() / d.min())))


# -- auxiliary scans ----------------------------------------------------------------

@dataclass(frozen=True)
class HScanCell:
    n: int
    t: float
    eps: float
    side: str                  # "low": {P_t f <= eps}; "high": {P_t f >= 1 - eps}
    ratio: float               # sup of t^4 (Gamma_2 - Gamma)(h) / h^2, nan if skipped
    theta_at_sup: float
    points: int
    skipped_below_floor: int
    log_floor: float


@dataclass(frozen=True)
class HScan:
    cells: list
    C_H: float
    per_t: dict                # t -> sup over eps, side and n
    t_spread: float            # max/min of per_t
    symmetry_ratio: float      # max high/low ratio (or inverse) over fully resolved cell pairs


def hypothesis_H_scan(ns=(3, 5, 10, 50), t_grid=(0.02, 0.05, 0.1, 0.2, 0.5), eps_grid=(0.05, 0.1, 1 / 7),
                      v: float = 0.3, s: float = 0.01, n_theta: int = 48, log_floor: float = -70.0,
                      eta_H: float = 4.0) -> HScan:
    """Pointwise form of the second-order reverse isoperimetric hypothesis.

    f = P_s 1_cap (cap of volume v), so P_t f = P_{s+t} 1_cap.  On each
    sub-level set the sup of t^eta (Gamma_2 - Gamma)(h_t) / h_t^2 is scanned on
    a colatitude grid.  Points with P_t f < exp(log_floor) are not resolved by
    the spectral sum and are skipped (counted per cell).
    """
    cells = []
    for n in ns:
        geom = SphereGeometry(n)
        A = S.BandSet.cap(geom, volume=v)
        Ac = complement(A)
        th_c = A.bands[0][1]
        for t in t_grid:
            for side, B, grid in (("low", A, np.linspace(th_c, math.pi, n_theta + 1)[1:]),
                                  ("high", Ac, np.linspace(0.0, th_c, n_theta + 1)[:-1])):
                J = S.flowed_band_logjet(B, s + t, grid, log_floor=log_floor)
                Jc = S.flowed_band_logjet(complement(B), s + t, grid, log_floor=log_floor)
                x = np.cos(grid)
                h, _, hs = S.probit_jet_from_logs(geom, x, J.log_value, J.u1, J.u2, log_comp=Jc.log_value)
                ok = J.log_value >= log_floor
                ratio_pt = t**eta_H * hs / np.maximum(h * h, 1e-300)
                for eps in eps_grid:
                    sel = J.log_value <= math.log(eps)
                    use = sel & ok
                    skipped = int(np.sum(sel & ~ok))
                    if not np.any(use):
                        cells.append(HScanCell(n, t, eps, side, float("nan"), float("nan"), 0, skipped, log_floor))
                        continue
                    i = int(np.argmax(np.where(use, ratio_pt, -np.inf)))
                    cells.append(HScanCell(n, t, eps, side, float(ratio_pt[i]), float(grid[i]),
                                           int(use.sum()), skipped, log_floor))
    finite = [c for c in cells if math.isfinite(c.ratio)]
    if not finite:
        raise ExperimentError("every cell of the scan was empty")
    per_t = {}
    for c in finite:
        per_t[c.t] = max(per_t.get(c.t, 0.0), c.ratio)
    vals = np.array(list(per_t.values()))
    sym = 1.0
    resolved = [c for c in finite if c.skipped_below_floor == 0]
    for c in resolved:
        if c.side != "low":
            continue
        partner = [d for d in resolved if d.side == "high" and (d.n, d.t, d.eps) == (c.n, c.t, c.eps)]
        if partner and c.ratio > 0 and partner[0].ratio > 0:
            r = partner[0].ratio / c.ratio
            sym = max(sym, r, 1.0 / r)
    return HScan(cells, float(max(c.ratio for c in finite)), per_t, float(vals.max() / vals.min()), sym)


@dataclass(frozen=True)
class KernelScan:
    n: int
    t_grid: np.ndarray
    grad_scaled: np.ndarray    # per t: sup_theta t^2 |grad log p_t|^2 / (1 + d^2)
    hess_scaled: np.ndarray    # per t: sup_theta t^4 |Hess log p_t|^2 / (1 + d^2 + d^4)
    mass_error: float

    @property
    def constant(self) -> float:
        return float(max(self.grad_scaled.max(), self.hess_scaled.max()))


def kernel_bound_scan(geom: SphereGeometry, t_grid=(0.05, 0.1, 0.2, 0.5, 1.0), n_theta: int = 64) -> KernelScan:
    """Scaled suprema of the heat-kernel log-derivatives over colatitude."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or np.any(t_grid > 1):
        raise DomainError("kernel bounds are scanned for t in (0, 1]")
    theta = np.linspace(0.0, math.pi, n_theta)
    gs, hs, merr = [], [], 0.0
    for t in t_grid:
        k = S.heat_kernel_zonal(geom, t, theta)
        d2 = k.distance**2
        gs.append(float(np.max(t**2 * k.grad_log_sq / (1 + d2))))
        hs.append(float(np.max(t**4 * k.hess_log_sq / (1 + d2 + d2 * d2))))
        merr = max(merr, abs(k.mass - 1.0))
    return KernelScan(geom.n, t_grid, np.array(gs), np.array(hs), merr)


def slab_measure(geom: SphereGeometry, r: float) -> float:
    """mu{0 <= <x, e> <= r}: the one-dimensional marginal of the sphere, whose
    density is c_n / sqrt(2 pi (n-1)) (1 - u^2/(n-1))^{(n-2)/2}."""
    if not 0 <= r <= geom.R:
        raise DomainError("slab width must lie in [0, R]")
    return 0.5 - float(geom.cap_volume(math.acos(r / geom.R)))


@dataclass(frozen=True)
class CapGap:
    n: int
    t_grid: np.ndarray
    gap: np.ndarray            # |mu(slab of width sqrt t) - gamma_1([0, sqrt t])|
    scaled: np.ndarray         # gap * n / sqrt(t)

    @property
    def sup_scaled(self) -> float:
        return float(self.scaled.max())


def cap_measure_gap(geom: SphereGeometry, t_grid=(0.04, 0.09, 0.16, 0.25, 0.5, 1.0)) -> CapGap:
    """Gaussian comparison of the small-ball measure used for dimension-free
    heat-kernel bounds, in the one-dimensional marginal form written there."""
    t_grid = np.asarray(t_grid, dtype=float)
    r = np.sqrt(t_grid)
    if np.any(r > geom.R):
        raise DomainError("sqrt(t) exceeds the radius")
    mu = np.array([slab_measure(geom, x) for x in r])
    g = special.ndtr(r) - 0.5
    gap = np.abs(mu - g)
    return CapGap(geom.n, t_grid, gap, gap * geom.n / r)
