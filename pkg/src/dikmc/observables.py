"""Stopping times, droplet bookkeeping and (rescaled) magnetization paths."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from numba import njit

from . import asymptotics as asy
from .engine import (EVENT_DRIVEN, EventLog, InitialCondition, Params, Stop, SystemState,
                     gamma_auto, new_system, run_until)
from .errors import RegimeError, TruncationError

CYCLE_HEADER = ("j", "T1", "Tc", "X", "Z", "undesired", "ramp_r2", "field_residual_max")


@dataclass(frozen=True)
class CycleRecord:
    j: int
    T1: float
    Tc: float
    X: float
    Z: float
    undesired: int
    ramp_r2: float
    field_residual_max: float


def write_cycles_csv(records, dest) -> None:
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        w = csv.writer(fh)
        w.writerow(CYCLE_HEADER)
        for r in records:
            w.writerow([r.j] + [f"{getattr(r, k):.17g}" for k in ("T1", "Tc", "X", "Z")]
                       + [r.undesired, f"{r.ramp_r2:.17g}", f"{r.field_residual_max:.17g}"])
    finally:
        if own:
            fh.close()


def read_cycles_csv(src) -> List[CycleRecord]:
    text = Path(src).read_text() if isinstance(src, (str, Path)) else src.read()
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(CycleRecord(
            j=int(row["j"]), T1=float(row["T1"]), Tc=float(row["Tc"]), X=float(row["X"]),
            Z=float(row["Z"]), undesired=int(row["undesired"]), ramp_r2=float(row["ramp_r2"]),
            field_residual_max=float(row["field_residual_max"]),
        ))
    return out


# ---------------------------------------------------------------------------
# stopping times
# ---------------------------------------------------------------------------

def detect_first_flip(log: EventLog) -> float:
    if len(log) == 0:
        raise ValueError("empty event log has no first flip")
    return float(log.time[0])


def detect_covering(log: EventLog, target_spin: int) -> float:
    """Time from the first flip until every spin equals ``target_spin``."""
    if target_spin not in (1, -1):
        raise ValueError("target_spin must be +1 or -1")
    if len(log) == 0:
        raise ValueError("empty event log")
    sums = log.spin_sums()[1:]
    hit = np.flatnonzero(sums == target_spin * log.N)
    if len(hit) == 0:
        raise TruncationError("the log never reaches the all-equal configuration", log)
    return float(log.time[hit[0]] - log.time[0])


def center_T1(T1: float, params: Params, lambda_mag: float) -> float:
    """Centered and rescaled first-flip time for nearly constant fields."""
    return asy.center_X(params, T1, lambda_mag)


# ---------------------------------------------------------------------------
# droplet tracking
# ---------------------------------------------------------------------------

class DropletTracker:
    """Follows the ring interval of flipped spins during one covering."""

    def __init__(self, N: int, target: int = 1):
        self.N = N
        self.target = target
        self.spins = np.full(N, -target, dtype=np.int8)
        self.plus_interval = None
        self.undesired = 0

    @property
    def single_droplet(self) -> bool:
        return self.undesired == 0

    def update(self, site: int, new_spin: int) -> None:
        n = self.N
        adjacent = (self.spins[site - 1] == self.target or self.spins[(site + 1) % n] == self.target)
        self.spins[site] = new_spin
        if new_spin != self.target:
            self.undesired += 1
        elif self.plus_interval is None and self.undesired == 0:
            self.plus_interval = (site, site)
        elif not adjacent:
            self.undesired += 1
        if self.undesired:
            self.plus_interval = None
            return
        left, right = self.plus_interval
        if site == (left - 1) % n:
            left = site
        elif site == (right + 1) % n:
            right = site
        self.plus_interval = (left, right)


@njit(cache=True, nogil=True)
def _count_undesired(initial, sites, new_spins):
    n = initial.shape[0]
    m = sites.shape[0]
    if m == 0:
        return 0
    spins = initial.copy()
    target = new_spins[0]
    bad = 0
    for k in range(m):
        i = sites[k]
        s = new_spins[k]
        if s != target:
            bad += 1
        elif k > 0:
            left = i - 1 if i > 0 else n - 1
            right = i + 1 if i < n - 1 else 0
            if spins[left] != target and spins[right] != target:
                bad += 1
        spins[i] = s
    return bad


def track_droplet(log: EventLog, N: Optional[int] = None):
    """``(undesired_count, single_droplet)`` for one half-cycle.

    A flip is undesired when it goes against the direction of the covering or
    when it nucleates at a site with no flipped neighbour after the first flip.
    """
    if N is not None and N != log.N:
        raise ValueError("N does not match the log")
    bad = int(_count_undesired(log.initial_spins.astype(np.int8), log.site.astype(np.int64),
                               log.new_spin.astype(np.int8)))
    return bad, bad == 0


def ramp_r2(t, m) -> float:
    """Coefficient of determination of the least-squares line of ``m`` on ``t``."""
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    if len(t) < 3:
        return 1.0
    tc = t - t.mean()
    mc = m - m.mean()
    sxx = float(tc @ tc)
    syy = float(mc @ mc)
    if sxx == 0.0 or syy == 0.0:
        return 1.0
    sxy = float(tc @ mc)
    return min(1.0, max(0.0, sxy * sxy / (sxx * syy)))


def _excluded_sites(state: SystemState) -> np.ndarray:
    keep = np.ones(state.N, dtype=bool)
    if state.last_site >= 0:
        keep[(state.last_site - 1) % state.N] = False
        keep[(state.last_site + 1) % state.N] = False
    return keep


def post_cover_field_check(state: SystemState, params: Params, X_measured: float) -> float:
    """Largest deviation of the post-covering fields from the common prediction.

    The two neighbours of the final flip are left out: their jump happened at
    the very end of the covering and has had no time to relax.
    """
    sign = 1 if state.plus_count == state.N else -1
    pred = asy.post_cover_prediction(params, X_measured)
    dev = np.abs(sign * state.fields() - pred)
    return float(dev[_excluded_sites(state)].max())


def post_cover_profile_residuals(state: SystemState, params: Params, shape: asy.Profile,
                                 X_measured: float) -> np.ndarray:
    """Per-site deviation from ``4 beta - shape(x) [ln N - 3/2 ln ln N - ln(alpha sqrt(shape''/2pi)) - X]``.

    Excluded sites (see :func:`post_cover_field_check`) are reported as NaN.
    """
    ln_n = math.log(params.N)
    level = (ln_n - 1.5 * math.log(ln_n)
             - math.log(params.alpha * math.sqrt(shape.d2_min / (2.0 * math.pi))) - X_measured)
    sign = 1 if state.plus_count == state.N else -1
    pred = 4.0 * params.beta - shape.at_sites(params.N) * level
    dev = sign * state.fields() - pred
    dev[~_excluded_sites(state)] = np.nan
    return dev


# ---------------------------------------------------------------------------
# cycles
# ---------------------------------------------------------------------------

@dataclass
class CycleRun:
    records: List[CycleRecord]
    log: Optional[EventLog]
    state: SystemState
    post_fields: List[np.ndarray]


def _cycle_center(params: Params, lam_mag: float, shape) -> float:
    if shape is None:
        return asy.t1_center(params, lam_mag)
    return asy.t1_center_profile(params, lam_mag, shape)


def run_cycles_detailed(params: Params, init: InitialCondition, n: int,
                        budget: Optional[int] = None, keep_log: bool = False,
                        keep_fields: bool = False, engine: str = EVENT_DRIVEN) -> CycleRun:
    """Run ``n`` half-cycles and collect per-half-cycle statistics.

    Half-cycle 1 is centered with the initial field magnitude.  Later ones
    use ``gamma_auto`` for (nearly) constant fields; for profile initial
    conditions the field magnitude and shape are carried forward from the
    measured first-flip time, the shape evolving through R.
    """
    if n < 1:
        raise ValueError("need at least one half-cycle")
    state = new_system(params, init, engine)
    ln_n = math.log(params.N)
    scale = asy.tc_scale(params)
    shape = init.profile if init.kind == "profile" else None
    if shape is not None and shape.degenerate:
        shape = None
    lam_mag = abs(init.resolved_lambda0(params))
    records: List[CycleRecord] = []
    logs: List[EventLog] = []
    post_fields: List[np.ndarray] = []

    for j in range(1, n + 1):
        target = 1 if j % 2 == 1 else -1
        first = run_until(state, Stop.first_flip())
        T1 = float(first.time[0])
        try:
            rest = run_until(state, Stop.all_plus() if target == 1 else Stop.all_minus(), budget)
        except TruncationError as exc:
            partial = EventLog.concatenate([first, exc.log]) if exc.log is not None else first
            if keep_log:
                logs.append(partial)
            err = TruncationError(f"half-cycle {j}: {exc}", EventLog.concatenate(logs) if keep_log else partial)
            err.records = records
            raise err from None
        hc = EventLog.concatenate([first, rest])
        hc.half_cycle[:] = 0
        hc.cycle_offsets = hc.cycle_offsets[:1]
        Tc = float(hc.time[-1]) - T1
        try:
            X = params.alpha * ln_n * (T1 - _cycle_center(params, lam_mag, shape))
        except RegimeError:
            X = math.nan
        undesired, _ = track_droplet(hc)
        m = hc.spin_sums()[1:] / params.N
        r2 = ramp_r2(hc.time, m)
        if math.isnan(X):
            resid = math.nan
        elif shape is None:
            resid = post_cover_field_check(state, params, X)
        else:
            resid = float(np.nanmax(np.abs(post_cover_profile_residuals(state, params, shape, X))))
        records.append(CycleRecord(j, T1, Tc, X, Tc / scale, undesired, r2, resid))
        if keep_log:
            logs.append(hc)
        if keep_fields:
            post_fields.append(target * state.fields())

        if shape is None:
            lam_mag = gamma_auto(params)
        else:
            level = lam_mag * math.exp(-params.alpha * T1)
            lam_mag = 4.0 * params.beta - shape.phi_max * level
            shape = asy.apply_R(shape, level / params.beta)

    log = EventLog.concatenate(logs) if keep_log else None
    return CycleRun(records, log, state, post_fields)


def run_cycles(params: Params, init: InitialCondition, n: int,
               budget: Optional[int] = None, engine: str = EVENT_DRIVEN) -> List[CycleRecord]:
    """Per-half-cycle records of ``n`` alternating half-cycles from all minus."""
    return run_cycles_detailed(params, init, n, budget, engine=engine).records


# ---------------------------------------------------------------------------
# rescaled magnetization
# ---------------------------------------------------------------------------

@dataclass
class RescaledPath:
    """Right-continuous step path: ``m[k]`` holds on ``[s[k], s[k+1])``."""

    s: np.ndarray
    m: np.ndarray

    def __call__(self, s):
        k = np.searchsorted(self.s, s, side="right") - 1
        return self.m[np.clip(k, 0, len(self.m) - 1)]

    def to_csv(self, dest) -> None:
        _write_xy(dest, ("s", "m_tilde"), self.s, self.m)


def _write_xy(dest, header, x, y):
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in zip(x, y):
            w.writerow([f"{a:.17g}", f"{b:.17g}"])
    finally:
        if own:
            fh.close()


def write_magnetization_csv(log: EventLog, dest) -> None:
    t, m = log.magnetization()
    _write_xy(dest, ("t", "m"), t, m)


def rescale_trajectory(log: EventLog, params: Params) -> RescaledPath:
    """Magnetization with plateaus divided by the first-flip scale and ramps by the covering scale.

    Durations are taken within each half-cycle (relative times), so the
    absolute clock never enters the differences.
    """
    plateau = asy.t1_scale(params)
    ramp = asy.tc_scale(params)
    sums = log.spin_sums()
    n = params.N
    s = np.empty(len(log) + 1)
    s[0] = 0.0
    prev_t = 0.0
    prev_hc = 0
    acc = 0.0
    for k in range(len(log)):
        hc = int(log.half_cycle[k])
        t = float(log.time[k])
        if hc != prev_hc:
            # closing of the previous half-cycle coincides with the new origin
            prev_t = 0.0
            prev_hc = hc
        dt = t - prev_t
        acc += dt / (plateau if abs(sums[k]) == n else ramp)
        s[k + 1] = acc
        prev_t = t
    return RescaledPath(s, sums / n)
