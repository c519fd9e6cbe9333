"""Monte Carlo experiments and their statistical verdicts."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from . import asymptotics as asy
from .engine import (EVENT_DRIVEN, THINNING, THINNING_MAX_BETA, InitialCondition, Params,
                     default_budget, new_system, step, thinning_step)
from .errors import ThinningGuardError, TruncationError
from .hazard import t1_survival_array
from .observables import (CycleRecord, rescale_trajectory, run_cycles_detailed)
from .rng import replica_seed

KS_COEFF_1PCT = 1.63
THREADS_ENV = "DIKMC_THREADS"


# ---------------------------------------------------------------------------
# configuration and report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    params: Params
    init: InitialCondition = InitialCondition()
    replicas: int = 1
    cycles: int = 1
    engine_kind: str = EVENT_DRIVEN
    budget: Optional[int] = None
    outputs: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if self.cycles < 1:
            raise ValueError("cycles must be at least 1")
        if self.engine_kind not in (EVENT_DRIVEN, THINNING):
            raise ValueError(f"unknown engine {self.engine_kind!r}")
        if self.budget is not None and self.budget < self.params.N:
            raise ValueError("budget must be at least N")
        if self.engine_kind == THINNING and self.params.beta > THINNING_MAX_BETA:
            raise ThinningGuardError(
                f"thinning engine requires beta <= {THINNING_MAX_BETA}, got {self.params.beta}")

    @property
    def seed(self) -> int:
        return self.params.seed

    @property
    def event_budget(self) -> int:
        return default_budget(self.params.N) if self.budget is None else self.budget

    def replica_params(self, r: int) -> Params:
        return self.params.with_seed(replica_seed(self.params.seed, r))

    def echo(self) -> dict:
        init = {"kind": self.init.kind, "lambda0": self.init.resolved_lambda0(self.params),
                "noise_eps": self.init.noise_eps}
        if self.init.kind == "profile":
            init["profile"] = {"M": self.init.profile.M, "x_min": self.init.profile.x_min,
                               "x_max": self.init.profile.x_max}
        return {"N": self.params.N, "alpha": self.params.alpha, "beta": self.params.beta,
                "c": self.params.c, "seed": self.params.seed, "init": init,
                "replicas": self.replicas, "cycles": self.cycles, "engine": self.engine_kind,
                "budget": self.event_budget}


@dataclass
class TestEntry:
    """One verdict.  ``kind`` says how ``statistic`` is compared with ``critical``:
    ``upper`` (at most), ``lower`` (at least) or ``interval`` (within ``[lower, critical]``)."""

    name: str
    statistic: float
    critical: float
    kind: str = "upper"
    lower: Optional[float] = None
    note: str = ""

    @property
    def passed(self) -> bool:
        s = self.statistic
        if not math.isfinite(s):
            return False
        if self.kind == "upper":
            return s <= self.critical
        if self.kind == "lower":
            return s >= self.critical
        return self.lower <= s <= self.critical

    def to_dict(self) -> dict:
        d = {"name": self.name, "statistic": _num(self.statistic), "critical": self.critical,
             "pass": self.passed, "kind": self.kind}
        if self.lower is not None:
            d["lower"] = self.lower
        if self.note:
            d["note"] = self.note
        return d

    def line(self) -> str:
        if self.kind == "interval":
            bound = f"in [{self.lower:.4g}, {self.critical:.4g}]"
        else:
            bound = ("<= " if self.kind == "upper" else ">= ") + f"{self.critical:.4g}"
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.statistic:.5g} (need {bound})"


def _num(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


@dataclass
class Report:
    config_echo: dict = field(default_factory=dict)
    tests: List[TestEntry] = field(default_factory=list)
    quantiles: dict = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tests)

    def extend(self, other: "Report") -> "Report":
        self.tests.extend(other.tests)
        self.quantiles.update(other.quantiles)
        self.warnings.extend(w for w in other.warnings if w not in self.warnings)
        return self

    def to_dict(self) -> dict:
        return {"config_echo": self.config_echo, "tests": [t.to_dict() for t in self.tests],
                "quantiles": self.quantiles, "warnings": self.warnings, "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def regime_warnings(params: Params) -> List[str]:
    if params.c >= 1:
        return [f"c = ln N / beta = {params.c:.4g} >= 1: the single droplet picture does not "
                "apply (several droplets can nucleate); asymptotic checks are not meaningful"]
    return []


def _quantiles(x, qs=(0.1, 0.5, 0.9)) -> dict:
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return {f"q{int(round(q * 100))}": None for q in qs}
    return {f"q{int(round(q * 100))}": float(np.quantile(x, q)) for q in qs}


# ---------------------------------------------------------------------------
# replica execution
# ---------------------------------------------------------------------------

def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def parallel_map(fn: Callable[[int], object], n: int, threads: Optional[int] = None) -> list:
    """``[fn(0), ..., fn(n-1)]`` computed on a thread pool, in index order."""
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or n <= 1:
        return [fn(r) for r in range(n)]
    with ThreadPoolExecutor(max_workers=min(threads, n)) as pool:
        return list(pool.map(fn, range(n)))


@dataclass
class ReplicaResult:
    """Half-cycle records of one replica; ``error`` is set if it was truncated."""

    index: int
    seed: int
    records: List[CycleRecord]
    error: Optional[str] = None
    path: object = None

    @property
    def truncated(self) -> bool:
        return self.error is not None

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]


def _run_one(cfg: ExperimentConfig, r: int, keep_path: bool) -> ReplicaResult:
    p = cfg.replica_params(r)
    try:
        run = run_cycles_detailed(p, cfg.init, cfg.cycles, cfg.event_budget,
                                  keep_log=keep_path, engine=cfg.engine_kind)
    except TruncationError as exc:
        return ReplicaResult(r, p.seed, list(getattr(exc, "records", [])), str(exc))
    path = rescale_trajectory(run.log, p) if keep_path else None
    return ReplicaResult(r, p.seed, run.records, None, path)


def run_replicas(cfg: ExperimentConfig, threads: Optional[int] = None,
                 keep_paths: bool = False) -> List[ReplicaResult]:
    """Run every replica of ``cfg``; replica ``r`` is seeded with ``replica_seed(seed, r)``."""
    return parallel_map(lambda r: _run_one(cfg, r, keep_paths), cfg.replicas, threads)


def sample_first_flips(cfg: ExperimentConfig, threads: Optional[int] = None):
    """First-flip times and sites of ``cfg.replicas`` fresh systems."""
    def one(r):
        st = new_system(cfg.replica_params(r), cfg.init, cfg.engine_kind)
        ev = thinning_step(st) if cfg.engine_kind == THINNING else step(st)
        return ev.time, ev.site
    out = parallel_map(one, cfg.replicas, threads)
    return np.array([o[0] for o in out]), np.array([o[1] for o in out], dtype=np.int64)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def ks_statistic(samples, cdf: Callable) -> float:
    """One-sample Kolmogorov-Smirnov distance of sorted ``samples`` to ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("KS statistic needs at least one sample")
    try:
        F = np.asarray(cdf(x), dtype=float)
        if F.shape != x.shape:
            raise TypeError
    except (TypeError, ValueError):
        F = np.array([cdf(v) for v in x], dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(np.abs(i / n - F)), np.max(np.abs((i - 1) / n - F))))


def ks_critical(n: int) -> float:
    return KS_COEFF_1PCT / math.sqrt(n)


def ks_critical_two_sample(n: int, m: int) -> float:
    return KS_COEFF_1PCT * math.sqrt((n + m) / (n * m))


def lag1_correlation(X: np.ndarray) -> float:
    """Pearson correlation pooled over consecutive pairs ``(X_j, X_{j+1})``.

    ``X`` has one row per replica and one column per half-cycle.
    """
    a = X[:, :-1].ravel()
    b = X[:, 1:].ravel()
    ok = np.isfinite(a) & np.isfinite(b)
    if ok.sum() < 3:
        return math.nan
    return float(np.corrcoef(a[ok], b[ok])[0, 1])


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------

def _base_report(cfg: ExperimentConfig) -> Report:
    return Report(config_echo=cfg.echo(), warnings=regime_warnings(cfg.params))


def verify_t1_exact(cfg: ExperimentConfig, threads: Optional[int] = None) -> Report:
    """KS of first-flip times against the exact law for constant fields."""
    if cfg.init.kind != "constant" or cfg.init.noise_eps != 0:
        raise ValueError("the exact first-flip law needs a constant initial field without noise")
    gamma = -cfg.init.lambda0
    if not gamma > 0:
        raise ValueError("the exact first-flip law is tabulated for negative initial fields")
    p = cfg.params
    t1, _ = sample_first_flips(cfg, threads)
    D = ks_statistic(t1, lambda t: 1.0 - t1_survival_array(p.N, gamma, p.alpha, t))
    rep = _base_report(cfg)
    rep.tests.append(TestEntry("t1_exact_ks", D, ks_critical(len(t1))))
    rep.quantiles["T1"] = _quantiles(t1)
    return rep


def verify_oracle(cfg: ExperimentConfig, threads: Optional[int] = None) -> Report:
    """Event-driven engine against the thinning construction on the same instance."""
    ed = ExperimentConfig(cfg.params, cfg.init, cfg.replicas, 1, EVENT_DRIVEN, cfg.budget)
    th_params = cfg.params.with_seed(replica_seed(cfg.params.seed, 2**62))
    th = ExperimentConfig(th_params, cfg.init, cfg.replicas, 1, THINNING, cfg.budget)
    t_ed, s_ed = sample_first_flips(ed, threads)
    t_th, s_th = sample_first_flips(th, threads)
    n, m = len(t_ed), len(t_th)
    rep = _base_report(cfg)
    rep.tests.append(TestEntry("oracle_t1_two_sample_ks", float(stats.ks_2samp(t_ed, t_th).statistic),
                               ks_critical_two_sample(n, m)))
    N = cfg.params.N
    crit = float(stats.chi2.ppf(0.99, N - 1))
    for name, sites in (("event_driven", s_ed), ("thinning", s_th)):
        counts = np.bincount(sites, minlength=N)
        chi = float(stats.chisquare(counts).statistic)
        rep.tests.append(TestEntry(f"oracle_first_site_chi2_{name}", chi, crit))
    rep.quantiles["T1_event_driven"] = _quantiles(t_ed)
    rep.quantiles["T1_thinning"] = _quantiles(t_th)
    return rep


def verify_gumbel(cfg: ExperimentConfig, threads: Optional[int] = None,
                  critical: float = 0.05) -> Report:
    """Centered first-flip times against the Gumbel limit."""
    p = cfg.params
    t1, _ = sample_first_flips(cfg, threads)
    lam = abs(cfg.init.resolved_lambda0(p))
    if cfg.init.kind == "profile" and not cfg.init.profile.degenerate:
        center = asy.t1_center_profile(p, lam, cfg.init.profile)
    else:
        center = asy.t1_center(p, lam)
    X = p.alpha * math.log(p.N) * (t1 - center)
    rep = _base_report(cfg)
    rep.tests.append(TestEntry("gumbel_ks", ks_statistic(X, asy.gumbel_cdf), critical))
    rep.quantiles["X"] = _quantiles(X)
    return rep


def cover_entries(records: Sequence[CycleRecord], params: Params) -> Report:
    """Covering-time verdicts from first half-cycle records."""
    X = np.array([r.X for r in records])
    Z = np.array([r.Z for r in records])
    ratio = Z * np.exp(X)
    rep = Report()
    rep.tests.append(TestEntry("cover_median_ratio", float(np.median(ratio)), 1.2,
                               kind="interval", lower=0.8))
    rep.tests.append(TestEntry("cover_frechet_ks", ks_statistic(Z, asy.frechet_cdf), 0.08))
    frac = float(np.mean([r.undesired > 0 for r in records]))
    rep.tests.append(TestEntry("cover_undesired_fraction", frac, 0.02))
    rep.quantiles["Tc_ratio"] = _quantiles(ratio)
    rep.quantiles["Z"] = _quantiles(Z)
    rep.quantiles["X"] = _quantiles(X)
    return rep


def field_entry(records: Sequence[CycleRecord], threshold: float = 0.5,
                fraction: float = 0.95) -> TestEntry:
    res = np.array([r.field_residual_max for r in records])
    share = float(np.mean(res <= threshold))
    return TestEntry("post_cover_field_residual_share", share, fraction, kind="lower",
                     note=f"share of replicas with max residual <= {threshold}")


def _records(results: List[ReplicaResult], warnings: List[str]) -> List[List[CycleRecord]]:
    bad = [r.index for r in results if r.truncated]
    if bad:
        warnings.append(f"{len(bad)} replica(s) truncated by the event budget: {bad[:10]}")
    return [r.records for r in results if not r.truncated]


def verify_cover(cfg: ExperimentConfig, threads: Optional[int] = None) -> Report:
    """Covering scaling, Frechet limit, undesired flips and post-cover fields."""
    cfg1 = ExperimentConfig(cfg.params, cfg.init, cfg.replicas, 1, cfg.engine_kind, cfg.budget)
    rep = _base_report(cfg)
    recs = [r[0] for r in _records(run_replicas(cfg1, threads), rep.warnings)]
    rep.extend(cover_entries(recs, cfg.params))
    rep.tests.append(field_entry(recs))
    rep.quantiles["field_residual_max"] = _quantiles([r.field_residual_max for r in recs])
    return rep


def cycles_entries(runs: List[List[CycleRecord]], n: int, gumbel_crit: float = 0.07,
                   frechet_crit: float = 0.08, corr_crit: float = 0.1) -> Report:
    rep = Report()
    X = np.array([[r.X for r in run] for run in runs])
    Z = np.array([[r.Z for r in run] for run in runs])
    for j in range(n):
        rep.tests.append(TestEntry(f"cycles_gumbel_ks_j{j + 1}", ks_statistic(X[:, j], asy.gumbel_cdf),
                                   gumbel_crit))
    if n >= 2:
        rho = lag1_correlation(X)
        rep.tests.append(TestEntry("cycles_lag1_abs_corr", abs(rho), corr_crit))
        rep.quantiles["lag1_corr_by_j"] = {
            f"j{j + 1}": float(np.corrcoef(X[:, j], X[:, j + 1])[0, 1]) for j in range(n - 1)}
    for j in range(n):
        rep.tests.append(TestEntry(f"cycles_frechet_ks_j{j + 1}", ks_statistic(Z[:, j], asy.frechet_cdf),
                                   frechet_crit))
    rep.quantiles["X_by_j"] = {f"j{j + 1}": _quantiles(X[:, j]) for j in range(n)}
    return rep


def verify_cycles(cfg: ExperimentConfig, threads: Optional[int] = None) -> Report:
    """Per-half-cycle Gumbel and Frechet laws and lag-one independence."""
    rep = _base_report(cfg)
    runs = _records(run_replicas(cfg, threads), rep.warnings)
    return rep.extend(cycles_entries(runs, cfg.cycles))


def profile_shape_r2(post_field: np.ndarray, params: Params, p: asy.Profile,
                     exclude_site: int = -1) -> float:
    """R^2 of the per-site field regressed on ``(R Phi)(x_i)``."""
    y = np.asarray(post_field, dtype=float)
    x = asy.apply_R(p, params.c).at_sites(params.N)
    keep = np.ones(params.N, dtype=bool)
    if exclude_site >= 0:
        keep[(exclude_site - 1) % params.N] = False
        keep[(exclude_site + 1) % params.N] = False
    x, y = x[keep], y[keep]
    fit = np.polyfit(x, y, 1)
    resid = y - np.polyval(fit, x)
    sst = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0


def contraction_entry(p: asy.Profile, c: float, j: int = 10, critical: float = 1e-3) -> TestEntry:
    q = asy.iterate_R(p, c, j)
    return TestEntry(f"profile_R{j}_sup_distance_to_one", float(np.max(np.abs(q.values - 1.0))),
                     critical)


def verify_profile(cfg: ExperimentConfig, threads: Optional[int] = None,
                   gumbel_crit: float = 0.06, r2_crit: float = 0.95) -> Report:
    """Profile-centered first flips and the shape of the post-cover field."""
    if cfg.init.kind != "profile":
        raise ValueError("verify_profile needs a profile initial condition")
    p = cfg.params
    prof = cfg.init.profile

    def one(r):
        rp = cfg.replica_params(r)
        try:
            run = run_cycles_detailed(rp, cfg.init, 1, cfg.event_budget, keep_fields=True,
                                      engine=cfg.engine_kind)
        except TruncationError as exc:
            return None, str(exc)
        rec = run.records[0]
        return (rec.X, profile_shape_r2(run.post_fields[0], p, prof, run.state.last_site)), None

    out = parallel_map(one, cfg.replicas, threads)
    rep = _base_report(cfg)
    bad = [k for k, o in enumerate(out) if o[0] is None]
    if bad:
        rep.warnings.append(f"{len(bad)} replica(s) truncated by the event budget: {bad[:10]}")
    X = np.array([o[0][0] for o in out if o[0] is not None])
    r2 = np.array([o[0][1] for o in out if o[0] is not None])
    rep.tests.append(TestEntry("profile_gumbel_ks", ks_statistic(X, asy.gumbel_cdf), gumbel_crit))
    rep.tests.append(TestEntry("profile_field_shape_r2_median", float(np.median(r2)), r2_crit,
                               kind="lower"))
    rep.tests.append(contraction_entry(prof, p.c))
    rep.quantiles["X"] = _quantiles(X)
    rep.quantiles["field_shape_r2"] = _quantiles(r2, (0.05, 0.5, 0.95))
    return rep


# ---------------------------------------------------------------------------
# sawtooth
# ---------------------------------------------------------------------------

def sup_distance_to_sawtooth(records: Sequence[CycleRecord], path) -> float:
    """Sup-norm distance between a rescaled path and the limit path built from its own ``Z_j``.

    The rescaled path is a step function and the limit path is piecewise
    linear, so the supremum is attained at a breakpoint of one of them
    (taking left limits at the jumps of the step path).
    """
    saw = asy.LimitSawtooth([r.Z for r in records])
    end = float(path.s[-1])
    cap = saw.horizon

    def limit(t):
        return asy.limit_sawtooth_eval(saw, min(t, cap))

    best = 0.0
    for k, s in enumerate(path.s):
        v = limit(float(s))
        best = max(best, abs(path.m[k] - v))
        if k:
            best = max(best, abs(path.m[k - 1] - v))
    for b in saw.breakpoints:
        if b <= end:
            best = max(best, abs(float(path(b)) - limit(float(b))))
    return float(best)


def sawtooth_distances(cfg: ExperimentConfig, threads: Optional[int] = None):
    """Per-replica sup distances and worst ramp R^2 (undesired-free replicas only)."""
    res = run_replicas(cfg, threads, keep_paths=True)
    dist, r2, warn = [], [], []
    for r in res:
        if r.truncated:
            warn.append(r.index)
            continue
        dist.append(sup_distance_to_sawtooth(r.records, r.path))
        if all(rec.undesired == 0 for rec in r.records):
            r2.append(min(rec.ramp_r2 for rec in r.records))
    return np.array(dist), np.array(r2), warn, res


def verify_sawtooth(cfg: ExperimentConfig, grid: Sequence[int] = (256, 1024, 4096),
                    threads: Optional[int] = None, critical: float = 0.1) -> Report:
    """Sup distance to the limit sawtooth over a grid of ring sizes at fixed c."""
    if not grid:
        raise ValueError("empty grid")
    c = cfg.params.c
    rep = _base_report(cfg)
    medians, all_r2 = [], []
    for N in grid:
        p = Params.from_c(N, c, cfg.params.alpha, cfg.params.seed)
        sub = ExperimentConfig(p, cfg.init, cfg.replicas, cfg.cycles, cfg.engine_kind,
                               None if cfg.budget is None else max(cfg.budget, N))
        d, r2, warn, _ = sawtooth_distances(sub, threads)
        if warn:
            rep.warnings.append(f"N={N}: {len(warn)} replica(s) truncated")
        medians.append(float(np.median(d)))
        all_r2.append(r2)
        rep.quantiles[f"supdist_N{N}"] = _quantiles(d)
    steps = np.diff(medians)
    rep.tests.append(TestEntry("sawtooth_median_supdist_non_decreasing_steps",
                               float(np.count_nonzero(steps >= 0)), 0.0,
                               note="median sup distance must fall at every step of the grid"))
    rep.tests.append(TestEntry(f"sawtooth_median_supdist_N{grid[-1]}", medians[-1], critical))
    r2 = np.concatenate(all_r2)
    rep.tests.append(TestEntry("ramp_r2_share_above_0.99", float(np.mean(r2 >= 0.99)), 0.95,
                               kind="lower",
                               note="undesired-free replicas whose every ramp fits a line with R^2 >= 0.99"))
    rep.quantiles["median_supdist_by_N"] = {str(N): m for N, m in zip(grid, medians)}
    return rep


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_HEADER = ("N", "beta", "median_ratio", "ks_gumbel", "ks_frechet", "median_supdist")


def sweep(cfg: ExperimentConfig, grid: Sequence[int], threads: Optional[int] = None) -> List[dict]:
    """Per-N summary rows at the fixed ``c`` of ``cfg.params``."""
    if not grid:
        raise ValueError("empty grid")
    rows = []
    c = cfg.params.c
    for N in grid:
        p = Params.from_c(N, c, cfg.params.alpha, cfg.params.seed)
        sub = ExperimentConfig(p, cfg.init, cfg.replicas, cfg.cycles, cfg.engine_kind,
                               None if cfg.budget is None else max(cfg.budget, N))
        d, _, _, res = sawtooth_distances(sub, threads)
        first = [r.records[0] for r in res if not r.truncated]
        X = np.array([r.X for r in first])
        Z = np.array([r.Z for r in first])
        rows.append({
            "N": N, "beta": p.beta,
            "median_ratio": float(np.median(Z * np.exp(X))),
            "ks_gumbel": ks_statistic(X, asy.gumbel_cdf),
            "ks_frechet": ks_statistic(Z, asy.frechet_cdf),
            "median_supdist": float(np.median(d)),
        })
    return rows
