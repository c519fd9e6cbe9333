"""Closed-form limit predictions: centering constants, limit laws, scales,
the limit sawtooth, Laplace sums over smooth profiles and the profile map R.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import Params, gamma_auto
from .errors import ProfileError, RegimeError

DEFAULT_GRID = 4096
_FLAT_TOL = 1e-12


# ---------------------------------------------------------------------------
# limit laws
# ---------------------------------------------------------------------------

def gumbel_sf(x):
    """``P(X > x) = exp(-e^x)``; accepts scalars or arrays."""
    if np.ndim(x):
        return np.exp(-np.exp(np.asarray(x, dtype=float)))
    return math.exp(-math.exp(x)) if x < 709.0 else 0.0


def gumbel_cdf(x):
    if np.ndim(x):
        return -np.expm1(-np.exp(np.asarray(x, dtype=float)))
    return -math.expm1(-math.exp(x)) if x < 709.0 else 1.0


def gumbel_sample(u):
    """Inverse transform: ``x = ln(-ln u)`` has survival ``exp(-e^x)``."""
    return np.log(-np.log(u))


def frechet_cdf(z):
    """``P(Z <= z) = exp(-1/z)`` for ``Z = e^{-X}``."""
    if np.ndim(z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise ValueError("frechet_cdf needs z > 0")
        return np.exp(-1.0 / z)
    if not z > 0:
        raise ValueError(f"frechet_cdf needs z > 0, got {z}")
    return math.exp(-1.0 / z)


# ---------------------------------------------------------------------------
# centering constants and scales
# ---------------------------------------------------------------------------

def _check_regime(params: Params, lambda_mag: float) -> float:
    ln_n = math.log(params.N)
    if not lambda_mag > ln_n:
        raise RegimeError(
            f"field magnitude {lambda_mag:.6g} must exceed ln N = {ln_n:.6g}; "
            "otherwise T1 converges to zero and no centering applies"
        )
    return ln_n


def t1_center(params: Params, lambda_mag: float) -> float:
    """Centering of the first-flip time for nearly constant fields of magnitude ``lambda_mag``."""
    ln_n = _check_regime(params, lambda_mag)
    a = params.alpha
    return (math.log(lambda_mag / ln_n) + math.log(ln_n) / ln_n + math.log(a) / ln_n) / a


def t1_scale(params: Params) -> float:
    """Plateau time scale: the centering at ``gamma_auto``."""
    return t1_center(params, gamma_auto(params))


def tc_scale(params: Params) -> float:
    """Covering time scale ``N^2 e^{-2 beta} / (2 alpha ln N)``."""
    ln_n = math.log(params.N)
    return math.exp(2.0 * math.log(params.N) - 2.0 * params.beta) / (2.0 * params.alpha * ln_n)


def center_X(params: Params, T1: float, lambda_mag: float) -> float:
    return params.alpha * math.log(params.N) * (T1 - t1_center(params, lambda_mag))


def post_cover_prediction(params: Params, X: float) -> float:
    """Predicted common field magnitude right after a covering."""
    ln_n = math.log(params.N)
    return 4.0 * params.beta - ln_n + math.log(ln_n) + math.log(params.alpha) + X


# ---------------------------------------------------------------------------
# limit sawtooth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitSawtooth:
    """Unit plateaus at -1, +1, -1, ... joined by linear ramps of lengths ``z``."""

    z: tuple

    def __init__(self, z: Sequence[float]):
        z = tuple(float(v) for v in z)
        if any(not v > 0 for v in z):
            raise ValueError("ramp durations must be positive")
        object.__setattr__(self, "z", z)

    @property
    def breakpoints(self) -> np.ndarray:
        """Times where the path changes slope, starting at 0."""
        pts = [0.0]
        for zj in self.z:
            pts.append(pts[-1] + 1.0)
            pts.append(pts[-1] + zj)
        pts.append(pts[-1] + 1.0)
        return np.array(pts)

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    def __call__(self, t):
        return limit_sawtooth_eval(self, t)


def limit_sawtooth_eval(s: LimitSawtooth, t: float) -> float:
    """Value of the limit path at ``t`` (ramps of lengths ``s.z``)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    start = 0.0
    level = -1.0
    for zj in s.z:
        if t < start + 1.0:
            return level
        start += 1.0
        if t < start + zj:
            return level + 2.0 * (-level) * (t - start) / zj
        start += zj
        level = -level
    if t <= start + 1.0:
        return level
    raise ValueError(f"t={t} lies beyond the {len(s.z)} ramp(s) provided")


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Periodic field shape tabulated at ``x = k/M``, ``k = 0..M-1``.

    A valid profile has values in [1, 2], a single minimum equal to 1 with
    positive curvature and a single maximum with negative curvature, both
    away from ``x = 0``.  The constant profile 1 is accepted as the degenerate
    fixed point of R.
    """

    values: np.ndarray
    x_min: float = field(init=False)
    x_max: float = field(init=False)
    phi_min: float = field(init=False)
    phi_max: float = field(init=False)
    d2_min: float = field(init=False)
    d2_max: float = field(init=False)
    i_min: int = field(init=False)
    i_max: int = field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        m = len(v)
        if m < 8:
            raise ProfileError("profile grid needs at least 8 points")
        if not np.all(np.isfinite(v)):
            raise ProfileError("profile values must be finite")
        i_min, i_max = int(np.argmin(v)), int(np.argmax(v))
        d2 = lambda k: (v[(k + 1) % m] - 2.0 * v[k] + v[k - 1]) * m * m
        for name, val in (("i_min", i_min), ("i_max", i_max)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "x_min", i_min / m)
        object.__setattr__(self, "x_max", i_max / m)
        object.__setattr__(self, "phi_min", float(v[i_min]))
        object.__setattr__(self, "phi_max", float(v[i_max]))
        object.__setattr__(self, "d2_min", float(d2(i_min)))
        object.__setattr__(self, "d2_max", float(d2(i_max)))
        if abs(self.phi_min - 1.0) > 1e-12:
            raise ProfileError(f"profile minimum must equal 1, got {self.phi_min}")
        if self.phi_max > 2.0 + 1e-12:
            raise ProfileError(f"profile values must lie in [1, 2], max is {self.phi_max}")
        if self.degenerate:
            return
        if i_min == 0 or i_max == 0:
            raise ProfileError("extrema on the boundary x = 0 are not supported")
        if not self.d2_min > 0:
            raise ProfileError("minimum must have positive curvature")
        if not self.d2_max < 0:
            raise ProfileError("maximum must have negative curvature")
        steps = np.sign(np.diff(np.append(v, v[0])))
        steps = steps[steps != 0]
        turns = int(np.count_nonzero(steps != np.roll(steps, 1)))
        if turns != 2:
            raise ProfileError(f"profile must have one minimum and one maximum, found {turns // 2} of each")

    @classmethod
    def from_values(cls, values) -> "Profile":
        return cls(np.asarray(values, dtype=float))

    @classmethod
    def constant(cls, M: int = DEFAULT_GRID) -> "Profile":
        return cls(np.ones(M))

    @property
    def M(self) -> int:
        return len(self.values)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.M) / self.M

    @property
    def degenerate(self) -> bool:
        return self.phi_max - self.phi_min <= _FLAT_TOL

    def __call__(self, x):
        """Periodic linear interpolation of the table."""
        x = np.asarray(x, dtype=float)
        s = np.mod(x, 1.0) * self.M
        k = np.floor(s).astype(np.int64) % self.M
        w = s - np.floor(s)
        v = self.values
        return (1.0 - w) * v[k] + w * v[(k + 1) % self.M]

    def at_sites(self, N: int) -> np.ndarray:
        """Values at the ring sites ``x = (k+1)/N``, ``k = 0..N-1``."""
        return self(np.arange(1, N + 1) / N)

    def to_csv(self, dest) -> None:
        own = isinstance(dest, (str, Path))
        fh = open(dest, "w", newline="") if own else dest
        try:
            w = csv.writer(fh)
            w.writerow(["x", "phi"])
            for x, p in zip(self.grid, self.values):
                w.writerow([f"{x:.17g}", f"{p:.17g}"])
        finally:
            if own:
                fh.close()

    @classmethod
    def read_csv(cls, src) -> "Profile":
        text = Path(src).read_text() if isinstance(src, (str, Path)) else src.read()
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls.from_values([float(r["phi"]) for r in rows])


def cosine_profile(x0: float = 0.25, M: int = DEFAULT_GRID) -> Profile:
    """``(3 - cos 2 pi (x - x0)) / 2``: minimum 1 at ``x0``, maximum 2 half a period away."""
    if not 0 < x0 < 1:
        raise ValueError("x0 must lie in (0, 1)")
    x = np.arange(M) / M
    v = (3.0 - np.cos(2.0 * np.pi * (x - x0))) / 2.0
    # pin the tabulated minimum exactly at 1 even when x0 is off-grid
    return Profile(1.0 + (v - v.min()))


def apply_R(p: Profile, c: float) -> Profile:
    """``R Phi = (4 - c Phi) / (4 - c Phi(x^*))``: the shape after one more covering."""
    if not 0 < c < 1:
        raise ValueError(f"c must lie in (0, 1), got {c}")
    if p.degenerate:
        return p
    out = (4.0 - c * p.values) / (4.0 - c * p.phi_max)
    out[p.i_max] = 1.0
    try:
        q = Profile(out)
    except ProfileError as exc:
        raise ProfileError(f"R produced an invalid profile: {exc}") from exc
    if q.degenerate:
        raise ProfileError("R produced a flat profile from a non-flat one")
    return q


def iterate_R(p: Profile, c: float, j: int) -> Profile:
    for _ in range(j):
        p = apply_R(p, c)
    return p


# ---------------------------------------------------------------------------
# Laplace sums
# ---------------------------------------------------------------------------

def _sum_weights(p: Profile, shift: float):
    if shift == 0:
        return p.values
    if not shift > p.phi_max:
        raise ValueError(f"shift must exceed the profile maximum {p.phi_max}, got {shift}")
    return shift - p.values


def laplace_sum_exact(p: Profile, gamma: float, alpha: float, shift: float = 0.0) -> float:
    """Direct sum over the profile grid (its size plays the role of N).

    ``shift == 0``: ``sum exp(-gamma Phi) / (gamma alpha Phi)``.
    ``shift > max Phi``: ``sum exp(gamma Phi) / (gamma alpha (shift - Phi))``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    w = _sum_weights(p, shift)
    v = p.values
    if shift == 0:
        # factor exp(-gamma * min) out so the terms stay representable
        terms = np.exp(-gamma * (v - p.phi_min)) / w
        log_scale = -gamma * p.phi_min
    else:
        terms = np.exp(gamma * (v - p.phi_max)) / w
        log_scale = gamma * p.phi_max
    return math.fsum(terms) * math.exp(log_scale) / (gamma * alpha)


def laplace_sum_asymptotic(p: Profile, gamma: float, alpha: float, shift: float = 0.0,
                           N: int | None = None) -> float:
    """One-term Laplace approximation of :func:`laplace_sum_exact`."""
    if p.degenerate:
        raise ProfileError("Laplace approximation needs a non-degenerate extremum")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    _sum_weights(p, shift)
    N = p.M if N is None else N
    if shift == 0:
        return (N * math.exp(-gamma * p.phi_min) / (gamma ** 1.5 * alpha * p.phi_min)
                * math.sqrt(2.0 * math.pi / p.d2_min))
    return (N * math.exp(gamma * p.phi_max) / (gamma ** 1.5 * alpha * (shift - p.phi_max))
            * math.sqrt(2.0 * math.pi / -p.d2_max))


def t1_center_profile(params: Params, lambda_mag: float, p: Profile) -> float:
    """First-flip centering when the fields are ``-lambda_mag * Phi(i/N)``."""
    if p.degenerate:
        raise ProfileError("profile centering needs a non-degenerate minimum")
    ln_n = _check_regime(params, lambda_mag)
    a = params.alpha
    return (math.log(lambda_mag / ln_n)
            + 1.5 * math.log(ln_n) / ln_n
            + math.log(a * math.sqrt(p.d2_min / (2.0 * math.pi))) / ln_n) / a
