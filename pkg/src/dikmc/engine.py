"""Exact event-driven simulation of the dissipative Glauber-Ising ring.

State ``(sigma, lambda)`` on ``N`` sites with periodic neighbours ``i +- 1 mod N``.
Site ``i`` flips with rate ``exp(-sigma_i lambda_i)``; between flips every field
relaxes as ``lambda_i(t) = value_i * exp(-alpha (t - anchor_i))`` and a flip at
``i`` moves both neighbours' fields by ``-2 beta sigma_i`` (pre-flip spin).

Each site carries one scheduled candidate time obtained by drawing a unit
exponential threshold and inverting the closed-form cumulative hazard of its
current segment.  When a flip changes a site's segment (the flipped site and its
two neighbours) the threshold is redrawn; conditional on not having fired, the
residual threshold is again Exp(1), so redrawing leaves the law unchanged.

``thinning_*`` implements the literal graphical construction (per-site Poisson
candidates at rate ``exp(4 beta)`` accepted with probability rate / exp(4 beta))
as an independent small-instance oracle.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from numba import njit

from . import rng as _rng
from .errors import ConvergenceError, ThinningGuardError, TruncationError
from .hazard import MAX_EXPONENT, _invert_hazard

EVENT_DRIVEN = "event_driven"
THINNING = "thinning"
THINNING_MAX_BETA = 2.0

# stop kinds understood by the kernels
_STOP_FIRST = 0
_STOP_ALL_EQUAL = 1
_STOP_HORIZON = 2
_STOP_NONE = 3

_STATUS_REACHED = 0
_STATUS_BUDGET = 1
_STATUS_HORIZON = 2
_STATUS_GUARD = 3
_STATUS_NUMERICS = 4


@dataclass(frozen=True)
class Params:
    N: int
    alpha: float
    beta: float
    seed: int = 0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ValueError(f"N must be an integer >= 3, got {self.N}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def c(self) -> float:
        """Regime parameter ``ln N / beta``."""
        return math.log(self.N) / self.beta

    @classmethod
    def from_c(cls, N: int, c: float, alpha: float = 1.0, seed: int = 0) -> "Params":
        return cls(N=N, alpha=alpha, beta=math.log(N) / c, seed=seed)

    def with_seed(self, seed: int) -> "Params":
        return Params(self.N, self.alpha, self.beta, seed)


def gamma_auto(params: Params) -> float:
    """``4 beta - ln N + ln ln N``: field magnitude that reproduces itself after a cycle."""
    ln_n = math.log(params.N)
    return 4.0 * params.beta - ln_n + math.log(ln_n)


@dataclass(frozen=True)
class InitialCondition:
    """Initial fields; spins always start at -1.

    ``constant``: every field equals ``lambda0``.
    ``gamma_auto``: ``lambda0 = -gamma_auto(params)``.
    ``profile``: ``lambda_i = lambda0 * profile(i / N)`` (``lambda0`` defaults to
    ``-gamma_auto``).  Sites are numbered 0..N-1 here; site ``k`` sits at ``x = (k+1)/N``.
    Each kind optionally adds i.i.d. uniform noise on ``[-noise_eps, noise_eps]``.
    """

    kind: str = "gamma_auto"
    lambda0: Optional[float] = None
    noise_eps: float = 0.0
    profile: object = None

    def __post_init__(self):
        if self.kind not in ("constant", "gamma_auto", "profile"):
            raise ValueError(f"unknown initial condition kind {self.kind!r}")
        if self.noise_eps < 0:
            raise ValueError("noise_eps must be non-negative")
        if self.kind == "constant" and self.lambda0 is None:
            raise ValueError("constant initial condition needs lambda0")
        if self.kind == "profile" and self.profile is None:
            raise ValueError("profile initial condition needs a profile")

    @classmethod
    def constant(cls, lambda0: float, noise_eps: float = 0.0) -> "InitialCondition":
        return cls("constant", float(lambda0), noise_eps)

    def resolved_lambda0(self, params: Params) -> float:
        if self.kind == "gamma_auto" or (self.kind == "profile" and self.lambda0 is None):
            return -gamma_auto(params)
        return float(self.lambda0)

    def fields(self, params: Params, rng_state: np.ndarray) -> np.ndarray:
        lam0 = self.resolved_lambda0(params)
        if self.kind == "profile":
            x = np.arange(1, params.N + 1) / params.N
            out = lam0 * self.profile(x)
        else:
            out = np.full(params.N, lam0)
        if self.noise_eps > 0:
            u = _uniform_array(rng_state, params.N)
            out = out + self.noise_eps * (2.0 * u - 1.0)
        return np.ascontiguousarray(out, dtype=np.float64)


@dataclass(frozen=True)
class Event:
    time: float
    site: int
    new_spin: int
    field_before: float


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _uniform_array(state, n):
    out = np.empty(n)
    for k in range(n):
        out[k] = _rng.next_uniform(state)
    return out


@njit(cache=True, nogil=True)
def _field(fval, fanc, alpha, i, t):
    return fval[i] * math.exp(-alpha * (t - fanc[i]))


@njit(cache=True, nogil=True)
def _less(fire, a, b):
    return fire[a] < fire[b] or (fire[a] == fire[b] and a < b)


@njit(cache=True, nogil=True)
def _sift_up(heap, pos, fire, k):
    site = heap[k]
    while k > 0:
        parent = (k - 1) >> 1
        p = heap[parent]
        if _less(fire, site, p):
            heap[k] = p
            pos[p] = k
            k = parent
        else:
            break
    heap[k] = site
    pos[site] = k


@njit(cache=True, nogil=True)
def _sift_down(heap, pos, fire, k):
    n = heap.shape[0]
    site = heap[k]
    while True:
        child = 2 * k + 1
        if child >= n:
            break
        if child + 1 < n and _less(fire, heap[child + 1], heap[child]):
            child += 1
        if _less(fire, heap[child], site):
            heap[k] = heap[child]
            pos[heap[k]] = k
            k = child
        else:
            break
    heap[k] = site
    pos[site] = k


@njit(cache=True, nogil=True)
def _heap_update(heap, pos, fire, site):
    _sift_up(heap, pos, fire, pos[site])
    _sift_down(heap, pos, fire, pos[site])


@njit(cache=True, nogil=True)
def _heapify(heap, pos, fire):
    n = heap.shape[0]
    for k in range(n):
        heap[k] = k
        pos[k] = k
    for k in range(n // 2 - 1, -1, -1):
        _sift_down(heap, pos, fire, k)


@njit(cache=True, nogil=True)
def _schedule(i, t, spins, fval, fanc, fire, alpha, state):
    """Draw a fresh threshold for site i's segment starting at t; False on numerics failure."""
    a = -spins[i] * _field(fval, fanc, alpha, i, t)
    e = _rng.next_exponential(state)
    if a > MAX_EXPONENT:
        u = 0.0
    else:
        u = _invert_hazard(a, alpha, e)
        if u < 0.0:
            return False
    ft = t + u
    if ft <= t:
        # delay below the clock's resolution; keep events strictly ordered
        ft = np.nextafter(t, np.inf)
    fire[i] = ft
    return True


@njit(cache=True, nogil=True)
def _schedule_all(t, spins, fval, fanc, fire, heap, pos, alpha, state):
    for i in range(spins.shape[0]):
        if not _schedule(i, t, spins, fval, fanc, fire, alpha, state):
            return False
    _heapify(heap, pos, fire)
    return True


@njit(cache=True, nogil=True)
def _flip(i, t, spins, fval, fanc, alpha, two_beta):
    n = spins.shape[0]
    lam_i = _field(fval, fanc, alpha, i, t)
    fval[i] = lam_i
    fanc[i] = t
    old = spins[i]
    spins[i] = -old
    jump = -old * two_beta
    left = i - 1 if i > 0 else n - 1
    right = i + 1 if i < n - 1 else 0
    fval[left] = _field(fval, fanc, alpha, left, t) + jump
    fanc[left] = t
    fval[right] = _field(fval, fanc, alpha, right, t) + jump
    fanc[right] = t
    return lam_i


@njit(cache=True, nogil=True)
def _stop_now(stop_kind, target, plus, n_sites):
    if stop_kind == _STOP_FIRST:
        return True
    if stop_kind == _STOP_ALL_EQUAL:
        return (target == 1 and plus == n_sites) or (target == -1 and plus == 0)
    return False


@njit(cache=True, nogil=True)
def _run_event_driven(spins, fval, fanc, fire, heap, pos, state, clock, counts,
                      alpha, two_beta, stop_kind, target, horizon, max_events,
                      out_t, out_site, out_spin, out_fb):
    n_sites = spins.shape[0]
    plus = counts[0]
    n = 0
    while n < max_events:
        i = heap[0]
        tn = fire[i]
        if stop_kind == _STOP_HORIZON and tn > horizon:
            clock[0] = horizon
            counts[0] = plus
            return n, _STATUS_HORIZON
        fb = _flip(i, tn, spins, fval, fanc, alpha, two_beta)
        plus += spins[i]
        clock[0] = tn
        out_t[n] = tn
        out_site[n] = i
        out_spin[n] = spins[i]
        out_fb[n] = fb
        n += 1
        left = i - 1 if i > 0 else n_sites - 1
        right = i + 1 if i < n_sites - 1 else 0
        # one key at a time: each sift assumes a single heap violation
        for k in (i, left, right):
            if not _schedule(k, tn, spins, fval, fanc, fire, alpha, state):
                counts[0] = plus
                return n, _STATUS_NUMERICS
            _heap_update(heap, pos, fire, k)
        if _stop_now(stop_kind, target, plus, n_sites):
            counts[0] = plus
            return n, _STATUS_REACHED
    counts[0] = plus
    return n, _STATUS_BUDGET


@njit(cache=True, nogil=True)
def _run_thinning(spins, fval, fanc, cand, state, clock, counts, alpha, two_beta,
                  dom_rate, stop_kind, target, horizon, max_events,
                  out_t, out_site, out_spin, out_fb):
    n_sites = spins.shape[0]
    plus = counts[0]
    n = 0
    while n < max_events:
        i = 0
        for k in range(1, n_sites):
            if cand[k] < cand[i]:
                i = k
        tn = cand[i]
        if stop_kind == _STOP_HORIZON and tn > horizon:
            clock[0] = horizon
            counts[0] = plus
            return n, _STATUS_HORIZON
        cand[i] = tn + _rng.next_exponential(state) / dom_rate
        clock[0] = tn
        ratio = math.exp(-spins[i] * _field(fval, fanc, alpha, i, tn)) / dom_rate
        if ratio > 1.0:
            counts[0] = plus
            return n, _STATUS_GUARD
        if ratio > _rng.next_uniform(state):
            fb = _flip(i, tn, spins, fval, fanc, alpha, two_beta)
            plus += spins[i]
            out_t[n] = tn
            out_site[n] = i
            out_spin[n] = spins[i]
            out_fb[n] = fb
            n += 1
            if _stop_now(stop_kind, target, plus, n_sites):
                counts[0] = plus
                return n, _STATUS_REACHED
    counts[0] = plus
    return n, _STATUS_BUDGET


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

class SystemState:
    """Mutable simulation state; confine each instance to one thread at a time.

    ``t`` is the working clock.  It restarts at zero each time a half-cycle
    completes (all spins equal again); the absolute time of the working clock's
    zero is kept as a compensated sum in ``origin``.
    """

    def __init__(self, params: Params, spins, field_value, field_anchor, rng_state,
                 engine: str = EVENT_DRIVEN):
        self.params = params
        self.engine = engine
        self.spins = spins
        self.field_value = field_value
        self.field_anchor = field_anchor
        self.rng_state = rng_state
        self.next_fire = np.empty(params.N)
        self.heap = np.empty(params.N, dtype=np.int64)
        self.heap_pos = np.empty(params.N, dtype=np.int64)
        self._clock = np.zeros(1)
        self._counts = np.array([int(np.count_nonzero(spins == 1))], dtype=np.int64)
        self._origin_hi = 0.0
        self._origin_lo = 0.0
        self.last_site = -1
        self.dominating_rate = math.exp(4.0 * params.beta) if params.beta < 177.0 else math.inf

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def t(self) -> float:
        return float(self._clock[0])

    @property
    def origin(self) -> float:
        return self._origin_hi + self._origin_lo

    @property
    def time_abs(self) -> float:
        return self._origin_hi + (self._origin_lo + self.t)

    @property
    def plus_count(self) -> int:
        return int(self._counts[0])

    @property
    def magnetization(self) -> float:
        return (2 * self.plus_count - self.N) / self.N

    def field(self, i: int, t: Optional[float] = None) -> float:
        return field_at(self, i, self.t if t is None else t)

    def fields(self, t: Optional[float] = None) -> np.ndarray:
        t = self.t if t is None else t
        return self.field_value * np.exp(-self.params.alpha * (t - self.field_anchor))

    def rebase(self) -> None:
        """Move the working clock's zero to the current instant."""
        shift = self.t
        if shift == 0.0:
            return
        # TwoSum keeps the low-order bits of the accumulated origin
        s = self._origin_hi + shift
        bp = s - self._origin_hi
        err = (self._origin_hi - (s - bp)) + (shift - bp)
        self._origin_hi = s
        self._origin_lo += err
        self.field_anchor -= shift
        self.next_fire -= shift
        self._clock[0] = 0.0
        if self.engine == EVENT_DRIVEN:
            # rounding in the shift may create ties whose site order differs
            _heapify(self.heap, self.heap_pos, self.next_fire)

    def _start_clocks(self):
        if self.engine == THINNING:
            for i in range(self.N):
                self.next_fire[i] = _rng.next_exponential(self.rng_state) / self.dominating_rate
            return
        ok = _schedule_all(0.0, self.spins, self.field_value, self.field_anchor, self.next_fire,
                           self.heap, self.heap_pos, self.params.alpha, self.rng_state)
        if not ok:
            raise ConvergenceError("hazard inversion failed while scheduling initial clocks")


def new_system(params: Params, init: InitialCondition,
               engine: str = EVENT_DRIVEN) -> SystemState:
    """All spins -1, fields per ``init``, every site's first clock scheduled."""
    if engine not in (EVENT_DRIVEN, THINNING):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == THINNING:
        _check_thinning(params)
    state = _rng.new_state(params.seed)
    fields = init.fields(params, state)
    spins = np.full(params.N, -1, dtype=np.int8)
    st = SystemState(params, spins, fields, np.zeros(params.N), state, engine)
    st._start_clocks()
    return st


def _check_thinning(params: Params) -> None:
    if params.beta > THINNING_MAX_BETA:
        raise ThinningGuardError(
            f"thinning engine requires beta <= {THINNING_MAX_BETA} "
            f"(dominating rate N*exp(4*beta)); got beta={params.beta}"
        )


def field_at(state: SystemState, i: int, t: float) -> float:
    """``lambda_i(t)`` for ``t`` at or after the site's last jump."""
    return float(state.field_value[i] * math.exp(-state.params.alpha * (t - state.field_anchor[i])))


# ---------------------------------------------------------------------------
# event log
# ---------------------------------------------------------------------------

CSV_HEADER = ("time", "site", "new_spin", "field_before")


@dataclass
class EventLog:
    """Ordered flips of one run.

    ``time`` is relative to the start of the half-cycle the event belongs to;
    ``half_cycle[k]`` indexes ``cycle_offsets``, the absolute start times.
    """

    time: np.ndarray
    site: np.ndarray
    new_spin: np.ndarray
    field_before: np.ndarray
    half_cycle: np.ndarray
    cycle_offsets: np.ndarray
    initial_spins: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    @property
    def N(self) -> int:
        return len(self.initial_spins)

    def __iter__(self) -> Iterator[Event]:
        for k in range(len(self)):
            yield Event(float(self.time[k]), int(self.site[k]), int(self.new_spin[k]),
                        float(self.field_before[k]))

    def absolute_times(self) -> np.ndarray:
        return self.cycle_offsets[self.half_cycle] + self.time

    def spin_sums(self) -> np.ndarray:
        """Integer spin sum after each event, preceded by the initial sum."""
        s0 = int(self.initial_spins.astype(np.int64).sum())
        steps = 2 * self.new_spin.astype(np.int64)
        return np.concatenate(([s0], s0 + np.cumsum(steps)))

    def magnetization(self):
        """``(t_abs, m)`` with the initial point at the first offset."""
        t0 = self.cycle_offsets[0] if len(self.cycle_offsets) else 0.0
        t = np.concatenate(([t0], self.absolute_times()))
        return t, self.spin_sums() / self.N

    def final_spins(self) -> np.ndarray:
        spins = self.initial_spins.astype(np.int8).copy()
        if len(self):
            # last flip of every site decides its final spin
            rev = self.site[::-1]
            _, last = np.unique(rev, return_index=True)
            spins[rev[last]] = self.new_spin[::-1][last]
        return spins

    @classmethod
    def concatenate(cls, logs) -> "EventLog":
        logs = list(logs)
        if not logs:
            raise ValueError("nothing to concatenate")
        offsets, parts = [], []
        for lg in logs:
            base = len(offsets)
            offsets.extend(lg.cycle_offsets.tolist())
            parts.append(lg.half_cycle + base)
        return cls(
            time=np.concatenate([lg.time for lg in logs]),
            site=np.concatenate([lg.site for lg in logs]),
            new_spin=np.concatenate([lg.new_spin for lg in logs]),
            field_before=np.concatenate([lg.field_before for lg in logs]),
            half_cycle=np.concatenate(parts),
            cycle_offsets=np.asarray(offsets, dtype=float),
            initial_spins=logs[0].initial_spins,
        )

    def to_csv(self, dest, with_offsets: bool = False) -> None:
        """Write ``time,site,new_spin,field_before`` (17 significant digits).

        ``with_offsets`` appends ``half_cycle,cycle_offset`` columns.
        """
        own = isinstance(dest, (str, Path))
        fh = open(dest, "w", newline="") if own else dest
        try:
            w = csv.writer(fh)
            header = list(CSV_HEADER) + (["half_cycle", "cycle_offset"] if with_offsets else [])
            w.writerow(header)
            for k in range(len(self)):
                row = [f"{self.time[k]:.17g}", int(self.site[k]), int(self.new_spin[k]),
                       f"{self.field_before[k]:.17g}"]
                if with_offsets:
                    h = int(self.half_cycle[k])
                    row += [h, f"{self.cycle_offsets[h]:.17g}"]
                w.writerow(row)
        finally:
            if own:
                fh.close()

    @classmethod
    def read_csv(cls, src, initial_spins) -> "EventLog":
        text = Path(src).read_text() if isinstance(src, (str, Path)) else src.read()
        rows = list(csv.DictReader(io.StringIO(text)))
        has_off = rows and "half_cycle" in rows[0]
        hc = np.array([int(r["half_cycle"]) for r in rows] if has_off else [0] * len(rows),
                      dtype=np.int64)
        if has_off and rows:
            n_off = int(hc.max()) + 1
            offs = np.zeros(n_off)
            for r in rows:
                offs[int(r["half_cycle"])] = float(r["cycle_offset"])
        else:
            offs = np.zeros(1)
        return cls(
            time=np.array([float(r["time"]) for r in rows]),
            site=np.array([int(r["site"]) for r in rows], dtype=np.int64),
            new_spin=np.array([int(r["new_spin"]) for r in rows], dtype=np.int8),
            field_before=np.array([float(r["field_before"]) for r in rows]),
            half_cycle=hc,
            cycle_offsets=offs,
            initial_spins=np.asarray(initial_spins, dtype=np.int8),
        )


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stop:
    """Stopping predicate for :func:`run_until`."""

    kind: str
    value: float = 0.0

    @classmethod
    def first_flip(cls):
        return cls("first_flip")

    @classmethod
    def all_plus(cls):
        return cls("all_plus")

    @classmethod
    def all_minus(cls):
        return cls("all_minus")

    @classmethod
    def half_cycles(cls, j: int):
        if j < 1:
            raise ValueError("need at least one half-cycle")
        return cls("half_cycles", j)

    @classmethod
    def horizon(cls, t: float):
        return cls("horizon", float(t))

    @classmethod
    def event_budget(cls, n: int):
        return cls("event_budget", n)


def default_budget(N: int) -> int:
    return 50 * N + 1000


def _raise_status(status: int, state: SystemState):
    if status == _STATUS_GUARD:
        raise ThinningGuardError(
            "acceptance ratio rate/exp(4*beta) exceeded 1: a field left [-4 beta, 4 beta] "
            "and the thinning construction no longer dominates the dynamics"
        )
    if status == _STATUS_NUMERICS:
        raise ConvergenceError("hazard inversion failed during rescheduling")


def _advance(state: SystemState, stop_kind: int, target: int, horizon: float, max_events: int):
    out_t = np.empty(max_events)
    out_site = np.empty(max_events, dtype=np.int64)
    out_spin = np.empty(max_events, dtype=np.int8)
    out_fb = np.empty(max_events)
    p = state.params
    if state.engine == THINNING:
        n, status = _run_thinning(state.spins, state.field_value, state.field_anchor,
                                  state.next_fire, state.rng_state, state._clock, state._counts,
                                  p.alpha, 2.0 * p.beta, state.dominating_rate,
                                  stop_kind, target, horizon, max_events,
                                  out_t, out_site, out_spin, out_fb)
    else:
        n, status = _run_event_driven(state.spins, state.field_value, state.field_anchor,
                                      state.next_fire, state.heap, state.heap_pos,
                                      state.rng_state, state._clock, state._counts,
                                      p.alpha, 2.0 * p.beta, stop_kind, target, horizon,
                                      max_events, out_t, out_site, out_spin, out_fb)
    _raise_status(status, state)
    if n:
        state.last_site = int(out_site[n - 1])
    return (out_t[:n].copy(), out_site[:n].copy(), out_spin[:n].copy(), out_fb[:n].copy()), status


def step(state: SystemState) -> Event:
    """Execute the next flip of the event-driven engine."""
    if state.engine != EVENT_DRIVEN:
        raise ValueError("step() needs an event-driven state; use thinning_step()")
    (t, s, sp, fb), _ = _advance(state, _STOP_FIRST, 0, 0.0, 1)
    return Event(float(t[0]), int(s[0]), int(sp[0]), float(fb[0]))


def thinning_step(state: SystemState) -> Event:
    """Execute the next accepted flip of the graphical construction."""
    if state.engine != THINNING:
        raise ValueError("thinning_step() needs a state built with engine='thinning'")
    _check_thinning(state.params)
    (t, s, sp, fb), _ = _advance(state, _STOP_FIRST, 0, 0.0, 1)
    return Event(float(t[0]), int(s[0]), int(sp[0]), float(fb[0]))


def _half_cycle_target(state: SystemState) -> int:
    if state.plus_count == state.N:
        return -1
    if state.plus_count == 0:
        return 1
    return 1 if 2 * state.plus_count <= state.N else -1


def _make_log(parts, offsets, initial_spins) -> EventLog:
    if parts:
        t = np.concatenate([p[0][0] for p in parts])
        s = np.concatenate([p[0][1] for p in parts])
        sp = np.concatenate([p[0][2] for p in parts])
        fb = np.concatenate([p[0][3] for p in parts])
        hc = np.concatenate([np.full(len(p[0][0]), p[1], dtype=np.int64) for p in parts])
    else:
        t, fb = np.empty(0), np.empty(0)
        s, hc = np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        sp = np.empty(0, dtype=np.int8)
    return EventLog(t, s, sp, fb, hc, np.asarray(offsets, dtype=float), initial_spins)


def run_until(state: SystemState, stop: Stop, budget: Optional[int] = None) -> EventLog:
    """Advance ``state`` until ``stop`` holds and return the flips that happened.

    ``budget`` caps the number of flips (per half-cycle for ``half_cycles``);
    running out raises :class:`TruncationError` carrying the partial log, except
    for ``Stop.event_budget`` where exhausting the budget *is* the stop.
    Reaching an all-equal configuration rebases the working clock.
    """
    budget = default_budget(state.N) if budget is None else int(budget)
    initial = state.spins.copy()
    parts, offsets = [], [state.origin]

    def finish_cycle():
        state.rebase()
        offsets.append(state.origin)

    if stop.kind == "first_flip":
        parts.append((_advance(state, _STOP_FIRST, 0, 0.0, 1)[0], 0))
        return _make_log(parts, offsets, initial)

    if stop.kind == "event_budget":
        parts.append((_advance(state, _STOP_NONE, 0, 0.0, int(stop.value))[0], 0))
        return _make_log(parts, offsets, initial)

    if stop.kind == "horizon":
        horizon = stop.value - state.origin
        if horizon <= state.t:
            return _make_log(parts, offsets, initial)
        ev, status = _advance(state, _STOP_HORIZON, 0, horizon, budget)
        parts.append((ev, 0))
        if status == _STATUS_BUDGET:
            raise TruncationError(f"event budget {budget} exhausted before the horizon",
                                  _make_log(parts, offsets, initial))
        return _make_log(parts, offsets, initial)

    if stop.kind in ("all_plus", "all_minus"):
        target = 1 if stop.kind == "all_plus" else -1
        if state.plus_count == (state.N if target == 1 else 0):
            return _make_log(parts, offsets, initial)
        ev, status = _advance(state, _STOP_ALL_EQUAL, target, 0.0, budget)
        parts.append((ev, 0))
        if status != _STATUS_REACHED:
            raise TruncationError(f"event budget {budget} exhausted before {stop.kind}",
                                  _make_log(parts, offsets, initial))
        finish_cycle()
        return _make_log(parts, offsets[:-1], initial)

    if stop.kind == "half_cycles":
        for h in range(int(stop.value)):
            target = _half_cycle_target(state)
            ev, status = _advance(state, _STOP_ALL_EQUAL, target, 0.0, budget)
            parts.append((ev, h))
            if status != _STATUS_REACHED:
                raise TruncationError(f"event budget {budget} exhausted in half-cycle {h + 1}",
                                      _make_log(parts, offsets, initial))
            finish_cycle()
        return _make_log(parts, offsets[:-1], initial)

    raise ValueError(f"unknown stop predicate {stop.kind!r}")
