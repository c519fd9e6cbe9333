"""Cumulative hazards of exponentially relaxing log-rates.

Between two field-changing events a site's flip rate is

    rate(u) = exp(a * exp(-alpha * u)),    u = time since the segment start,

so its cumulative hazard has the closed form

    H(u) = (Ei(a) - Ei(a * exp(-alpha * u))) / alpha.

Everything here is written so that the difference of exponential integrals is
never formed by subtracting two nearly equal numbers: close to the diagonal it
is integrated directly with Gauss-Legendre, for moderate positive arguments the
two power series are subtracted term by term, and elsewhere the two values are
far enough apart that plain subtraction is harmless.

The ``_``-prefixed kernels are numba-compiled and shared with the engine; the
public wrappers validate arguments and raise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConvergenceError

EULER_GAMMA = 0.57721566490153286061
# Largest rate exponent evaluated; above it exp(a) leaves double range.
MAX_EXPONENT = 700.0
_EPS = 2.220446049250313e-16
_SERIES_MAX = 40.0
_TINY_ARG = 1e-10

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class HazardSegment:
    """Flip intensity ``exp(a * exp(-alpha * (t - t0)))`` for ``t >= t0``."""

    a: float
    alpha: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (math.isfinite(self.a) and math.isfinite(self.t0)):
            raise ValueError("a and t0 must be finite")

    def rate(self, u):
        return math.exp(self.a * math.exp(-self.alpha * u))


# ---------------------------------------------------------------------------
# exponential integral
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _ei_series(x):
    # gamma + ln|x| + sum x^k / (k k!); only used where terms do not cancel
    term = 1.0
    total = 0.0
    k = 0
    while True:
        k += 1
        term *= x / k
        contrib = term / k
        total += contrib
        if abs(contrib) <= _EPS * abs(total) and k > abs(x):
            break
    return EULER_GAMMA + math.log(abs(x)) + total


@njit(cache=True, nogil=True)
def _ei_scaled_asymptotic(x):
    # exp(-x) Ei(x) ~ (1/x) sum k!/x^k, cut at the smallest term
    total = 1.0
    term = 1.0
    k = 0
    while True:
        k += 1
        nxt = term * k / x
        if nxt >= term:
            break
        term = nxt
        total += term
        if term <= _EPS * total:
            break
    return total / x


@njit(cache=True, nogil=True)
def _e1_cf(y):
    # modified Lentz evaluation of the E1 continued fraction, y > 1
    tiny = 1e-300
    b = y + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) <= 1e-16:
            break
    return h * math.exp(-y)


@njit(cache=True, nogil=True)
def _e1_small(y, log_y):
    # E1(y) = -gamma - ln y - sum (-y)^k/(k k!), 0 < y <= 1; log passed separately
    term = 1.0
    total = 0.0
    k = 0
    while True:
        k += 1
        term *= -y / k
        contrib = term / k
        total += contrib
        if abs(contrib) <= _EPS * abs(total) or k > 60:
            break
    return -EULER_GAMMA - log_y - total


@njit(cache=True, nogil=True)
def _e1(y):
    if y <= 1.0:
        return _e1_small(y, math.log(y))
    return _e1_cf(y)


@njit(cache=True, nogil=True)
def _ei(x):
    if x == 0.0:
        return -np.inf
    if x < 0.0:
        return -_e1(-x)
    if x <= _SERIES_MAX:
        return _ei_series(x)
    return math.exp(x) * _ei_scaled_asymptotic(x)


@njit(cache=True, nogil=True)
def _ei_scaled(x):
    if x >= _SERIES_MAX:
        return _ei_scaled_asymptotic(x)
    return math.exp(-x) * _ei(x)


def exp_integral_ei(x: float) -> float:
    """Principal-value exponential integral Ei(x).

    Raises ``ValueError`` at the logarithmic singularity ``x = 0`` and
    ``OverflowError`` once the result leaves double range (x above ~709.78);
    use :func:`exp_integral_ei_scaled` there.
    """
    x = float(x)
    if x == 0.0:
        raise ValueError("Ei has a logarithmic singularity at x = 0")
    if not math.isfinite(x):
        raise ValueError(f"Ei needs a finite argument, got {x}")
    if x > 709.78:
        raise OverflowError(f"Ei({x}) exceeds double range; use exp_integral_ei_scaled")
    return float(_ei(x))


def exp_integral_ei_scaled(x: float) -> float:
    """``exp(-x) * Ei(x)`` for ``x > 1``."""
    x = float(x)
    if not x > 1.0:
        raise ValueError(f"scaled Ei is defined here for x > 1, got {x}")
    if not math.isfinite(x):
        raise ValueError(f"scaled Ei needs a finite argument, got {x}")
    return float(_ei_scaled(x))


# ---------------------------------------------------------------------------
# cumulative hazard of one segment
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _ei_diff(a, alpha, u):
    """alpha * H(u) = Ei(a) - Ei(a exp(-alpha u)) for a segment with exponent a."""
    x = alpha * u
    if a == 0.0 or x == 0.0:
        return x
    one_minus_q = -math.expm1(-x)
    q = math.exp(-x)
    delta = a * one_minus_q  # a - b, same sign as a
    abs_a = abs(a)

    if abs(delta) <= 1.0 and abs(delta) <= 0.5 * abs_a:
        # exp(a) * int_0^delta exp(-s) / (a - s) ds
        half = 0.5 * delta
        acc = 0.0
        for k in range(_GL_X.shape[0]):
            s = half + half * _GL_X[k]
            acc += _GL_W[k] * math.exp(-s) / (a - s)
        return math.exp(a) * acc * half

    if (a > 0.0 and a <= _SERIES_MAX) or (a < 0.0 and a >= -1.0):
        # x + sum a^k (1 - q^k) / (k k!), with 1 - q^{k+1} = (1-q) + q (1 - q^k)
        term = 1.0
        total = 0.0
        p = one_minus_q
        k = 0
        while True:
            k += 1
            term *= a / k
            contrib = term * p / k
            total += contrib
            p = one_minus_q + q * p
            if abs(contrib) <= _EPS * abs(total) and k > abs_a:
                break
        return x + total

    b = a * q
    if a > 0.0:
        if b < _TINY_ARG:
            ei_b = EULER_GAMMA + (math.log(a) - x) + b
        else:
            ei_b = _ei(b)
        return _ei(a) - ei_b

    # a < -1: Ei(a) - Ei(b) = E1(|b|) - E1(|a|)
    abs_b = -b
    if abs_b <= 1.0:
        e1_b = _e1_small(abs_b, math.log(abs_a) - x)
    else:
        e1_b = _e1_cf(abs_b)
    return e1_b - _e1(abs_a)


# below this |a| the rate exp(a e^{-alpha u}) equals 1 in double precision
_TINY_EXPONENT = 1e-18


@njit(cache=True, nogil=True)
def _segment_hazard(a, alpha, u):
    if abs(a) < _TINY_EXPONENT:
        return u
    return _ei_diff(a, alpha, u) / alpha


@njit(cache=True, nogil=True)
def _invert_hazard(a, alpha, target):
    """Smallest u >= 0 with H(u) = target; returns -1.0 on non-convergence."""
    if target <= 0.0:
        return 0.0
    if abs(a) < _TINY_EXPONENT:
        return target
    goal = alpha * target
    # relative tolerance: hazards of order e^-30 must invert as accurately as O(1) ones
    tol = 1e-15 * goal
    if a > 0.0:
        # rate <= exp(a): this is a lower bound of the root, Newton then
        # climbs monotonically on the concave hazard
        u = target * math.exp(-a)
        if u <= 0.0:
            u = 5e-324
    else:
        u = target
        if a < -1.0:
            u += (math.log(-a) + EULER_GAMMA) / alpha
    lo = 0.0
    hi = np.inf
    for _ in range(200):
        f = _ei_diff(a, alpha, u) - goal
        if abs(f) <= tol:
            return u
        if f < 0.0:
            lo = u
        else:
            hi = u
        slope = alpha * math.exp(a * math.exp(-alpha * u))
        if slope > 0.0:
            cand = u - f / slope
        else:
            cand = np.nan
        if not (cand > lo and cand < hi):
            if hi == np.inf:
                cand = 2.0 * u
            else:
                cand = lo + 0.5 * (hi - lo)
        if cand == u or (hi < np.inf and (cand <= lo or cand >= hi)):
            return u
        u = cand
    return -1.0


def segment_hazard(seg: HazardSegment, u: float) -> float:
    """Cumulative hazard ``int_0^u exp(a exp(-alpha v)) dv`` of ``seg``."""
    if u < 0:
        raise ValueError(f"u must be non-negative, got {u}")
    if seg.a > MAX_EXPONENT:
        raise OverflowError(
            f"rate exponent {seg.a} exceeds {MAX_EXPONENT}; the engine treats such "
            "segments as instantaneous flips"
        )
    return float(_segment_hazard(seg.a, seg.alpha, float(u)))


def invert_segment_hazard(seg: HazardSegment, target: float) -> float:
    """Unique ``u >= 0`` with ``segment_hazard(seg, u) == target``."""
    if target < 0:
        raise ValueError(f"target must be non-negative, got {target}")
    if seg.a > MAX_EXPONENT:
        raise OverflowError(f"rate exponent {seg.a} exceeds {MAX_EXPONENT}")
    u = float(_invert_hazard(seg.a, seg.alpha, float(target)))
    if u < 0:
        raise ConvergenceError(
            f"hazard inversion did not converge (a={seg.a}, alpha={seg.alpha}, target={target})"
        )
    return u


# ---------------------------------------------------------------------------
# the I / F pair used in the first-flip analysis
# ---------------------------------------------------------------------------

def hazard_I(gamma: float, alpha: float, t: float) -> float:
    """``I(gamma, t) = int_0^t exp(-gamma exp(-alpha s)) ds``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if -gamma > MAX_EXPONENT:
        raise OverflowError(f"exponent {-gamma} exceeds {MAX_EXPONENT}")
    return float(_segment_hazard(-float(gamma), float(alpha), float(t)))


def hazard_F(gamma: float, alpha: float, t: float) -> float:
    """Leading term ``exp(-gamma e^{-alpha t}) / (gamma alpha e^{-alpha t})`` of I."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    decay = math.exp(-alpha * t)
    return math.exp(-gamma * decay) / (gamma * alpha * decay)


def t1_survival(N: int, gamma: float, alpha: float, t: float) -> float:
    """Exact ``P(T1 > t)`` when every site starts with field ``-gamma``."""
    if t <= 0:
        return 1.0
    return math.exp(-N * hazard_I(gamma, alpha, t))


def t1_survival_array(N: int, gamma: float, alpha: float, t) -> np.ndarray:
    """Vectorised :func:`t1_survival` over an array of times."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    flat_t = t.ravel()
    flat = out.ravel()
    for k, tk in enumerate(flat_t):
        flat[k] = 1.0 if tk <= 0 else math.exp(-N * _segment_hazard(-gamma, alpha, tk))
    return out
