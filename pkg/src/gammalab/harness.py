"""Runs: configuration in, reports and digests on disk, exit status out."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import criteria as Cr
from . import deficit as Dm
from . import gauss as G
from . import line as Ln
from . import profiles as P
from . import sphere as S
from . import inequalities as Q
from .config import RunConfig, RunManifest
from .engines import GaussEngine, LineEngine, SphereEngine, make_engine
from .errors import DomainError, GammaLabError, ValidationError

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("GAMMA_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# -- output ---------------------------------------------------------------------

class Writer:
    """Single writer: every file is written to a temporary name and renamed into place."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.artifacts = []

    def write_text(self, name: str, text: str) -> Path:
        data = text.encode("utf-8")
        path = self.root / name
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.artifacts.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(to_jsonable(obj), indent=2, ensure_ascii=False) + "\n")

    def write_jsonl(self, name: str, rows) -> Path:
        return self.write_text(name, "".join(json.dumps(to_jsonable(r), ensure_ascii=False) + "\n" for r in rows))

    def write_csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return self.write_text(name, buf.getvalue())

    def finalize(self, manifest: RunManifest) -> Path:
        manifest.artifacts = list(self.artifacts)
        manifest.finished = _now()
        # the manifest itself is not listed: it is written last, after everything it names
        return self.write_text("manifest.json", json.dumps(manifest.to_dict(), indent=2) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def to_jsonable(x):
    if hasattr(x, "to_dict"):
        return to_jsonable(x.to_dict())
    return Cr._jsonable(x)


# -- test functions -----------------------------------------------------------------

def _args(spec: str):
    name, _, arg = spec.partition(":")
    vals = [float(a) for a in arg.split(",") if a]
    return name, vals


def resolve_function(engine, spec: str, seed: int = 0):
    """Named test functions: h<k>/p<k>, x, sin, exp:a, probit:a,b, halfline:a,
    interval:a,b, cap:v, smoothcap:v,s, random."""
    name, vals = _args(spec)
    rng = np.random.default_rng(seed)
    if isinstance(engine, GaussEngine):
        if name.startswith("h") and name[1:].isdigit():
            return G.HermiteFunction.basis(int(name[1:]))
        table = {"x": lambda: G.HermiteFunction.basis(1), "sin": lambda: np.sin,
                 "exp": lambda: (lambda x, a=vals[0] if vals else 1.0: np.exp(a * x)),
                 "probit": lambda: G.ProbitAffine(*(vals or [1.0, 0.0])),
                 "halfline": lambda: G.IntervalSet.half_line(vals[0] if vals else 0.0, upper=False),
                 "interval": lambda: G.IntervalSet([tuple(vals[:2])]),
                 "random": lambda: Cr.random_gauss_function(rng)}
    elif isinstance(engine, SphereEngine):
        geom = engine.geom
        if name.startswith("p") and name[1:].isdigit():
            return S.ZonalFunction.basis(geom, int(name[1:]))
        table = {"x": lambda: S.ZonalFunction.basis(geom, 1), "cap": lambda: S.BandSet.cap(geom, volume=vals[0] if vals else 0.5),
                 "smoothcap": lambda: S.flowed_band(S.BandSet.cap(geom, volume=vals[0] if vals else 0.5),
                                                    vals[1] if len(vals) > 1 else 0.05),
                 "random": lambda: Cr.random_zonal_function(rng, geom)}
    else:
        table = {"x": lambda: (lambda x: x), "sin": lambda: np.sin,
                 "exp": lambda: (lambda x, a=vals[0] if vals else 1.0: np.exp(a * x)),
                 "halfline": lambda: (lambda x, a=vals[0] if vals else 0.0: (x <= a).astype(float)),
                 "probit": lambda: (lambda x, a=(vals or [1.0, 0.0]): P.gauss_cdf(a[0] * x + a[1]))}
    if name not in table:
        raise ValidationError(f"unknown function {spec!r} for engine {engine.name}")
    return table[name]()


def build_engine(spec: str, params: dict):
    kind, _, arg = spec.partition(":")
    if kind == "line" and arg.endswith(".csv"):
        measure = Ln.load_potential_csv(arg, float(params.get("kappa", 0.0)))
        return LineEngine(Ln.discretize_generator(measure, int(params.get("m", 2000))))
    if kind == "line":
        return make_engine(spec, m=int(params.get("m", 2000)))
    return make_engine(spec)


# -- commands -------------------------------------------------------------------------

@dataclass
class Outcome:
    reports: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)      # name -> (header, rows)
    extra: dict = field(default_factory=dict)       # name -> json object
    jsonl: dict = field(default_factory=dict)       # name -> rows
    passed: bool = True


def _reports_outcome(reports):
    rows = [(r.name, r.engine, json.dumps(r.params, sort_keys=True), r.lhs, r.rhs, r.slack, r.tolerance, r.verdict)
            for r in reports]
    return Outcome(reports=list(reports),
                   tables={"reports.csv": (("name", "engine", "params", "lhs", "rhs", "slack", "tolerance", "verdict"), rows)},
                   passed=all(r.verdict == "holds" for r in reports))


def cmd_profile(cfg: RunConfig) -> Outcome:
    p = cfg.params
    v = np.linspace(0.01, 0.99, int(p.get("points", 99)))
    rows = []
    if cfg.engine.startswith("sphere") or "n" in p:
        n = int(p.get("n", cfg.engine.partition(":")[2] or 10))
        geom = P.SphereGeometry(n)
        isph = P.iso_profile_sphere(geom, v)
        rows = [(float(a), float(P.iso_profile_gauss(a)), float(b), float(b - P.iso_profile_gauss(a))) for a, b in zip(v, isph)]
        gap = P.profile_gap(n)
        extra = {"profile.json": {"n": n, "c_n": P.bobkov_constant(n), "sup_gap": gap.sup_gap,
                                  "asym_residual": gap.asym_residual}}
        return Outcome(tables={"profile.csv": (("v", "I_gauss", "I_sphere", "gap"), rows)}, extra=extra,
                       passed=gap.min_gap >= -1e-12)
    rows = [(float(a), float(P.iso_profile_gauss(a))) for a in v]
    return Outcome(tables={"profile.csv": (("v", "I_gauss"), rows)})


def cmd_flow(cfg: RunConfig) -> Outcome:
    p = cfg.params
    eng = build_engine(cfg.engine, p)
    f = resolve_function(eng, p.get("f", "halfline:0" if isinstance(eng, GaussEngine) else "cap:0.5"), cfg.seed)
    times = np.geomspace(float(p.get("t0", 0.01)), float(p.get("t1", 2.0)), int(p.get("steps", 30)))
    ke = p.get("kappa_eff", 1.0)
    if ke == "optimal":
        if not isinstance(eng, SphereEngine):
            raise ValidationError("the optimal constant is defined on the sphere only")
        ke = Q.sphere_kappa_eff(eng.n)
    tr = Q.bobkov_flow(eng, f, times, float(ke))
    step_tol = float(cfg.tolerances.get("step", 1e-7))
    rep = Q.InequalityReport("bobkov-monotone", eng.name, {"kappa_eff": float(ke), "eta": tr.eta},
                             tr.max_increase, 0.0, step_tol)
    out = _reports_outcome([rep])
    bound = np.concatenate([tr.bound_mid, [math.nan]])
    rate = np.concatenate([tr.rate, [math.nan]])
    out.tables["flow.csv"] = (("t", "psi", "rate", "bound_mid"), list(zip(tr.times, tr.psi, rate, bound)))
    out.extra["flow.json"] = {"deficit": tr.deficit, "limit": tr.limit, "kappa_eff": tr.kappa_eff, "eta": tr.eta,
                              "masked_fraction": tr.masked_fraction}
    return out


CHECKS = ("commutation", "poincare", "log-sobolev", "reverse-iso", "reverse-bobkov", "l1-contraction",
          "second-order", "stein-gap", "halfspace", "perimeter")


def cmd_check(cfg: RunConfig) -> Outcome:
    op, p = cfg.operation, cfg.params
    if op not in CHECKS:
        raise ValidationError(f"unknown check {op!r}; expected one of {CHECKS}")
    eng = build_engine(cfg.engine, p)
    t = float(p.get("t", 0.1))
    kappa = p.get("kappa")
    kappa = None if kappa is None else float(kappa)
    fspec = p.get("f", "h3" if isinstance(eng, GaussEngine) else "x")
    f = resolve_function(eng, fspec, cfg.seed) if op not in ("stein-gap",) else None
    if op == "commutation":
        reps = [Q.check_commutation(eng, f, t, kappa, form=p.get("form", "gamma"))]
    elif op in ("poincare", "log-sobolev"):
        reps = list(Q.check_local_bounds(eng, f, t, kappa, kind=op, constants=p.get("constants", "sharp")))
    elif op == "reverse-iso":
        reps = list(Q.check_reverse_iso(eng, f, t, kappa))
    elif op == "reverse-bobkov":
        if not isinstance(eng, GaussEngine):
            raise ValidationError("reverse Bobkov is checked on the Gaussian engine")
        if not isinstance(f, (G.ProbitAffine, G.HermiteFunction)):
            raise ValidationError("reverse Bobkov needs a probit-affine or Hermite function")
        reps = [Q.check_reverse_bobkov(f)]
    elif op == "l1-contraction":
        reps = [Q.check_l1_contraction(eng, f, t)]
    elif op == "second-order":
        b = Q.second_order_poincare(eng, f, 1.0 if kappa is None else kappa)
        reps = [b.report] + ([b.corollary] if b.corollary is not None else [])
        out = _reports_outcome(reps)
        out.extra["breakdown.json"] = {"spectral_lhs": b.spectral_lhs, "spectral_rhs": b.spectral_rhs,
                                       "nodal_lhs": b.nodal_lhs, "nodal_rhs": b.nodal_rhs, "centered": b.centered}
        return out
    elif op == "stein-gap":
        g = Q.stein_gap(eng, kappa)
        reps = [Q.InequalityReport("stein-gap", eng.name, {"kappa": eng.kappa if kappa is None else kappa, "k": g.k},
                                   0.0, g.gap, 1e-12)]
    elif op == "halfspace":
        fit = Q.halfspace_flow_check(f, t)
        reps = [Q.InequalityReport("halfspace-residual", eng.name, {"t": t}, fit.residual,
                                   float(cfg.tolerances.get("residual", 1e-8)), 0.0)]
        out = _reports_outcome(reps)
        out.extra["halfspace.json"] = fit.__dict__
        return out
    else:
        est = Q.perimeter_via_flow(eng, f)
        rel = float(cfg.tolerances.get("relative", 0.01))
        reps = [Q.InequalityReport("perimeter-relative-error", eng.name, {"order": est.order},
                                   est.relative_error, rel, 0.0)]
        out = _reports_outcome(reps)
        out.tables["perimeter.csv"] = (("t", "value"), list(zip(est.times, est.values)))
        out.extra["perimeter.json"] = {"limit": est.limit, "reference": est.reference, "order": est.order}
        return out
    return _reports_outcome(reps)


def _pipeline_constants(p) -> Dm.PipelineConstants:
    keys = ("c", "C_H", "eta_H", "t0", "eps0", "C_pipeline")
    return Dm.PipelineConstants(**{k: float(p[k]) for k in keys if k in p})


def cmd_deficit(cfg: RunConfig) -> Outcome:
    op, p = cfg.operation or "sweep", cfg.params
    consts = _pipeline_constants(p)
    if op == "pipeline":
        if "delta" not in p:
            raise ValidationError("the pipeline operation needs delta")
        tr = Dm.mn_bound_pipeline(float(p["delta"]), consts)
        return Outcome(extra={"pipeline.json": tr.__dict__})
    n = int(p.get("n", cfg.engine.partition(":")[2] or 50))
    geom = P.SphereGeometry(n)
    family, v = p.get("family", "cap-antipodal"), float(p.get("v", 0.5))
    if op == "measure":
        r = Dm.deficit_measure(Dm.make_perturbed_set(geom, family, v, float(p.get("s", p.get("eps", 0.01)))), family, float(p.get("s", p.get("eps", 0.01))))
        return Outcome(extra={"record.json": r.to_dict()}, passed=r.delta_gauss >= r.delta_sphere - 1e-12)
    if op == "hscan":
        H = Dm.hypothesis_H_scan(ns=tuple(int(k) for k in p.get("ns", (n,))),
                                 t_grid=tuple(p.get("t_grid", (0.02, 0.05, 0.1, 0.2, 0.5))),
                                 eps_grid=tuple(p.get("eps_grid", (0.05, 0.1, 1 / 7))), v=float(p.get("v", 0.3)))
        rows = [(c.n, c.t, c.eps, c.side, c.ratio, c.theta_at_sup, c.points, c.skipped_below_floor) for c in H.cells]
        return Outcome(tables={"hscan.csv": (("n", "t", "eps", "side", "ratio", "theta", "points", "skipped"), rows)},
                       extra={"hscan.json": {"C_H": H.C_H, "t_spread": H.t_spread, "per_t": H.per_t,
                                             "symmetry_ratio": H.symmetry_ratio}},
                       passed=math.isfinite(H.C_H))
    if op != "sweep":
        raise ValidationError(f"unknown deficit operation {op!r}")
    s_grid = p.get("s_grid") or list(np.geomspace(float(p.get("s_max", 5e-2)), float(p.get("s_min", 1e-6)),
                                                  int(p.get("count", 12))))
    res = Dm.deficit_experiment(geom, family, v, s_grid, consts, with_rounding=bool(p.get("rounding", True)))
    rows = [(r.s, r.delta_sphere, r.delta_gauss, r.sym_diff, res.C_fit * (-math.log(r.delta_sphere)) ** (-res.c),
             r.pipeline.final_bound if r.pipeline else math.nan) for r in res.records]
    return Outcome(tables={"sweep.csv": (("s", "delta_sphere", "delta_gauss", "sym_diff", "fitted_bound", "pipeline_bound"), rows)},
                   jsonl={"records.jsonl": [r.to_dict() for r in res.records]},
                   extra={"fit.json": {"C_fit": res.C_fit, "c_fit": res.c_fit, "c": res.c, "decades": res.delta_decades,
                                       "violations": res.violations, "consistent": res.consistent}},
                   passed=res.consistent)


def cmd_kernel(cfg: RunConfig) -> Outcome:
    p = cfg.params
    n = int(p.get("n", cfg.engine.partition(":")[2] or 3))
    ks = Dm.kernel_bound_scan(P.SphereGeometry(n), tuple(p.get("t_grid", (0.05, 0.1, 0.2, 0.5, 1.0))))
    rows = list(zip(ks.t_grid, ks.grad_scaled, ks.hess_scaled))
    return Outcome(tables={"kernel.csv": (("t", "grad_scaled", "hess_scaled"), rows)},
                   extra={"kernel.json": {"n": n, "constant": ks.constant, "mass_error": ks.mass_error}},
                   passed=math.isfinite(ks.constant) and ks.mass_error < 1e-10)


def battery(profile: str = "quick", threads: int | None = None) -> list:
    if profile not in ("quick", "full"):
        raise ValidationError("battery profile is quick or full")
    ids = Cr.QUICK if profile == "quick" else tuple(Cr.ALL)
    threads = thread_count() if threads is None else threads
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda i: Cr.ALL[i](), ids))
    return sorted(results, key=lambda r: r.id)


def cmd_battery(cfg: RunConfig) -> Outcome:
    results = battery(cfg.params.get("profile", cfg.operation or "quick"))
    rows = [(r.id, r.title, "pass" if r.passed else "fail", round(r.runtime, 3)) for r in results]
    return Outcome(tables={"battery.csv": (("criterion", "title", "verdict", "runtime_s"), rows)},
                   extra={"battery.json": {"profile": cfg.params.get("profile", cfg.operation or "quick"),
                                           "passed": all(r.passed for r in results),
                                           "criteria": [r.to_dict() for r in results]}},
                   passed=all(r.passed for r in results))


HANDLERS = {"profile": cmd_profile, "flow": cmd_flow, "check": cmd_check, "deficit": cmd_deficit,
            "kernel": cmd_kernel, "battery": cmd_battery}


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    message: str = ""
    violating: list = field(default_factory=list)


def run(cfg: RunConfig) -> RunResult:
    """Execute a configuration; artifacts are written atomically and the manifest last."""
    writer = Writer(cfg.out)
    manifest = RunManifest(cfg.hash, __version__, _now())
    writer.write_json("config.json", cfg.to_dict())
    try:
        out = HANDLERS[cfg.command](cfg)
    except (ValidationError, DomainError) as exc:
        manifest.exit_code = EXIT_USAGE
        writer.write_json("error.json", {"error": type(exc).__name__, "message": str(exc)})
        writer.finalize(manifest)
        return RunResult(EXIT_USAGE, writer.root, str(exc))
    except GammaLabError as exc:
        manifest.exit_code = EXIT_VIOLATION
        writer.write_json("error.json", {"error": type(exc).__name__, "message": str(exc)})
        writer.finalize(manifest)
        return RunResult(EXIT_VIOLATION, writer.root, str(exc))
    violating = []
    if out.reports:
        path = writer.write_json("reports.json", [r.to_dict() for r in out.reports])
        if not out.passed:
            violating.append(str(path))
    for name, (header, rows) in sorted(out.tables.items()):
        writer.write_csv(name, header, rows)
    for name, rows in sorted(out.jsonl.items()):
        writer.write_jsonl(name, rows)
    for name, obj in sorted(out.extra.items()):
        path = writer.write_json(name, obj)
        if not out.passed and not out.reports:
            violating.append(str(path))
    code = EXIT_OK if out.passed else EXIT_VIOLATION
    manifest.exit_code = code
    writer.finalize(manifest)
    return RunResult(code, writer.root, "" if out.passed else "check violated", violating)
