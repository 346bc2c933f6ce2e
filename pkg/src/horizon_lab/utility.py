"""Utility-function algebra: value, marginal, inverse marginal, conjugate.

A :class:`UtilitySpec` bundles the three evaluables every other module
needs: U, U' and I = (U')^{-1}.  Built-in kinds (power, log) use closed
forms; custom kinds must supply all three callables and are checked on a
probe grid at construction time rather than trusted blindly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ContractViolationError",
    "UtilitySpec",
    "ExitSafetyReport",
    "eval_bundle",
    "inverse_marginal",
    "conjugate",
    "classify_exit_safety",
    "bisection_inverse",
]


class ContractViolationError(ValueError):
    """A supplied utility broke monotonicity, concavity, or positivity."""


# Construction-time probe grid.  Narrower than the classification grid so
# steep power utilities (large |p|) do not overflow before they can be
# rejected for a real reason.
_PROBE_LO = 1e-4
_PROBE_HI = 1e4
_PROBE_N = 17


def _as_positive_array(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("%s must be nonempty" % name)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError("%s must be finite and > 0" % name)
    return arr


def _call_checked(fn, a, what):
    try:
        out = np.asarray(fn(a), dtype=np.float64)
    except ContractViolationError:
        raise
    except Exception as exc:
        raise ContractViolationError(
            "custom %s raised %r at a=%r" % (what, exc, a)
        ) from exc
    if out.shape != np.shape(a):
        out = np.broadcast_to(out, np.shape(a)).copy()
    return out


@dataclass(frozen=True)
class UtilitySpec:
    """A utility function on the positive axis.

    Use the constructors :meth:`power`, :meth:`log`, :meth:`custom`; the
    raw dataclass fields are an implementation detail.  ``p`` is the power
    exponent, with 0.0 standing in for the log kind internally.
    """

    kind: str
    p: float = 0.0
    value_fn: object = field(default=None, repr=False, compare=False)
    marginal_fn: object = field(default=None, repr=False, compare=False)
    inverse_marginal_fn: object = field(default=None, repr=False, compare=False)
    name: str = ""

    @staticmethod
    def power(p):
        p = float(p)
        if not (p < 1.0) or p == 0.0:
            raise ValueError("power exponent must satisfy p < 1 and p != 0")
        return UtilitySpec(kind="power", p=p, name="power(p=%g)" % p)

    @staticmethod
    def log():
        return UtilitySpec(kind="log", name="log")

    @staticmethod
    def custom(value, marginal, inverse_marginal, name="custom"):
        if value is None or marginal is None or inverse_marginal is None:
            raise ValueError(
                "custom utilities must supply value, marginal, and "
                "inverse_marginal; numeric differentiation is not done here"
            )
        spec = UtilitySpec(
            kind="custom",
            value_fn=value,
            marginal_fn=marginal,
            inverse_marginal_fn=inverse_marginal,
            name=name,
        )
        _validate_custom(spec)
        return spec

    def __post_init__(self):
        if self.kind not in ("power", "log", "custom"):
            raise ValueError("unknown utility kind %r" % self.kind)


def _validate_custom(spec):
    """Probe-grid contract check for caller-supplied utilities."""
    grid = np.geomspace(_PROBE_LO, _PROBE_HI, _PROBE_N)
    vals = _call_checked(spec.value_fn, grid, "value")
    margs = _call_checked(spec.marginal_fn, grid, "marginal")
    if not np.all(np.isfinite(vals)):
        raise ContractViolationError("custom value is not finite on the probe grid")
    if not np.all(np.isfinite(margs)) or np.any(margs <= 0.0):
        raise ContractViolationError(
            "custom marginal must be finite and strictly positive"
        )
    if not np.all(np.diff(vals) > 0.0):
        raise ContractViolationError("custom value is not strictly increasing")
    if not np.all(np.diff(margs) < 0.0):
        raise ContractViolationError(
            "custom marginal is not strictly decreasing (concavity/Inada trend)"
        )
    # Concavity: second differences of U on the geometric grid may carry
    # rounding noise, so allow a relative slack.
    d2 = np.diff(vals, 2)
    scale = np.maximum.reduce(np.abs(vals))
    if np.any(d2 > 1e-9 * max(scale, 1.0)):
        raise ContractViolationError("custom value fails concavity probe")
    inv = _call_checked(spec.inverse_marginal_fn, margs, "inverse_marginal")
    rel = np.abs(inv - grid) / grid
    if np.any(~np.isfinite(inv)) or np.any(rel > 1e-10):
        raise ContractViolationError(
            "custom inverse_marginal disagrees with marginal "
            "(max rel err %.3e)" % float(np.max(rel))
        )


def _scalarize(x, scalar_in):
    return float(x) if scalar_in else x


def eval_bundle(U, a):
    """U(a) and U'(a) as ``{"value": ..., "marginal": ...}``."""
    scalar_in = np.isscalar(a) or np.ndim(a) == 0
    arr = _as_positive_array(a, "a")
    if U.kind == "power":
        value = arr ** U.p / U.p
        marginal = arr ** (U.p - 1.0)
    elif U.kind == "log":
        value = np.log(arr)
        marginal = 1.0 / arr
    else:
        value = _call_checked(U.value_fn, arr, "value")
        marginal = _call_checked(U.marginal_fn, arr, "marginal")
        if np.any(marginal <= 0.0):
            raise ContractViolationError(
                "custom marginal returned a nonpositive value"
            )
    return {
        "value": _scalarize(value, scalar_in),
        "marginal": _scalarize(marginal, scalar_in),
    }


def inverse_marginal(U, b):
    """I(b) = (U')^{-1}(b), the inverse of the marginal utility."""
    scalar_in = np.isscalar(b) or np.ndim(b) == 0
    arr = _as_positive_array(b, "b")
    if U.kind == "power":
        out = arr ** (1.0 / (U.p - 1.0))
    elif U.kind == "log":
        out = 1.0 / arr
    else:
        out = _call_checked(U.inverse_marginal_fn, arr, "inverse_marginal")
        if np.any(out <= 0.0) or np.any(~np.isfinite(out)):
            raise ContractViolationError(
                "custom inverse_marginal returned a nonpositive value"
            )
        back = _call_checked(U.marginal_fn, out, "marginal")
        rel = np.abs(back - arr) / arr
        if np.any(rel > 1e-12):
            raise ContractViolationError(
                "custom inverse_marginal violates U'(I(b))=b "
                "(max rel err %.3e)" % float(np.max(rel))
            )
    return _scalarize(out, scalar_in)


def conjugate(U, b):
    """V(b) = sup_{a>0} (U(a) - a*b).

    Closed form for the built-in kinds; for custom kinds the supremum is
    attained at a = I(b) by first-order optimality, so no search is run.
    """
    scalar_in = np.isscalar(b) or np.ndim(b) == 0
    arr = _as_positive_array(b, "b")
    if U.kind == "power":
        out = (1.0 - U.p) / U.p * arr ** (U.p / (U.p - 1.0))
    elif U.kind == "log":
        out = -np.log(arr) - 1.0
    else:
        i = inverse_marginal(U, arr)
        i = np.asarray(i, dtype=np.float64)
        out = _call_checked(U.value_fn, i, "value") - arr * i
    return _scalarize(out, scalar_in)


def bisection_inverse(marginal, bracket=(1e-12, 1e12), rtol=1e-13, max_iter=200):
    """Build an inverse for a strictly decreasing marginal by bisection.

    Returns a callable usable as the ``inverse_marginal`` of a custom
    :class:`UtilitySpec`.  Bisection runs on log(a), so the bracket may
    span many orders of magnitude.
    """
    lo0, hi0 = float(bracket[0]), float(bracket[1])
    if not (0.0 < lo0 < hi0):
        raise ValueError("bracket must satisfy 0 < lo < hi")

    def _solve_one(b):
        lo, hi = math.log(lo0), math.log(hi0)
        flo = marginal(math.exp(lo))
        fhi = marginal(math.exp(hi))
        if not (flo >= b >= fhi):
            raise ValueError(
                "marginal(a)=%g not bracketed on [%g, %g]" % (b, lo0, hi0)
            )
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if marginal(math.exp(mid)) >= b:
                lo = mid
            else:
                hi = mid
            if hi - lo <= rtol:
                break
        return math.exp(0.5 * (lo + hi))

    def inverse(b):
        if np.ndim(b) == 0:
            return _solve_one(float(b))
        return np.array([_solve_one(float(v)) for v in np.ravel(b)]).reshape(
            np.shape(b)
        )

    return inverse


@dataclass(frozen=True)
class ExitSafetyReport:
    """Grid-based classification of how U behaves at the domain edges.

    All limit quantities are numeric estimates from the probe grid, not
    proofs: ``inf_a_marginal`` is the grid infimum of a*U'(a),
    ``limsup_zero`` its maximum over the first probed decade, and
    ``liminf_tail`` its minimum over the last probed decade.
    """

    inf_a_marginal: float
    limsup_zero: float
    liminf_tail: float
    u_at_zero_is_minus_inf: bool
    bounded_below: bool
    verdict: str


# Classification thresholds.  Decade-drop ratio >= DROP_DIVERGE means the
# per-decade decrease of U toward 0 is not shrinking, so the sum of drops
# diverges (U(0+) = -inf); <= DROP_CONVERGE means geometric decay of the
# drops (U bounded below).  TAIL_EPS is "indistinguishable from 0" for
# a*U'(a), and TAIL_SLOPE a log-log slope that still counts as decaying.
_DROP_DIVERGE = 0.9
_DROP_CONVERGE = 0.5
_TAIL_EPS = 1e-4
_TAIL_SLOPE = -0.05
_ZERO_GROWTH = 2.0


def classify_exit_safety(U, probe=(1e-8, 1e8, 200)):
    """Classify whether premature exit can destroy expected utility.

    Verdicts: ``safe_bounded_below`` (U bounded below, nothing to lose),
    ``safe_thm4`` (U(0+) = -inf but a*U'(a) stays away from 0, which rules
    out the failure mode), ``at_risk_thm3`` (U(0+) = -inf and a*U'(a)
    decays to 0 at infinity, the regime where the two-point construction
    applies), or ``inconclusive`` when the probe trends do not support
    either call.
    """
    lo, hi, n = float(probe[0]), float(probe[1]), int(probe[2])
    if lo > 1e-8 or hi < 1e8:
        raise ValueError("probe grid must cover at least [1e-8, 1e8]")
    if n < 50:
        raise ValueError("probe grid needs at least 50 points")
    grid = np.geomspace(lo, hi, n)
    with np.errstate(all="ignore"):
        bundle = eval_bundle(U, grid)
    vals = np.asarray(bundle["value"])
    margs = np.asarray(bundle["marginal"])
    am = grid * margs

    first = grid <= lo * 10.0
    last = grid >= hi / 10.0
    inf_am = float(np.min(am))
    limsup_zero = float(np.max(am[first]))
    liminf_tail = float(np.min(am[last]))

    # Decade drops of U nearest zero: D0 on [g0, 10*g0], D1 on the next
    # decade up.  Their ratio decides the boundary behaviour of U(0+).
    i1 = int(np.searchsorted(grid, lo * 10.0))
    i2 = int(np.searchsorted(grid, lo * 100.0))
    d0 = float(vals[i1] - vals[0])
    d1 = float(vals[i2] - vals[i1])
    if not (math.isfinite(d0) and math.isfinite(d1)) or d1 <= 0.0:
        ratio = math.inf
    else:
        ratio = d0 / d1
    minus_inf = ratio >= _DROP_DIVERGE
    bounded_below = ratio <= _DROP_CONVERGE

    # Log-log slope of a*U'(a) over the last decade: the sign of the decay
    # at the far end of the grid.
    j0 = int(np.searchsorted(grid, hi / 10.0))
    with np.errstate(all="ignore"):
        slope_tail = (math.log(am[-1]) - math.log(am[j0])) / (
            math.log(grid[-1]) - math.log(grid[j0])
        )
    growth_zero = am[0] / am[i1]

    if bounded_below:
        verdict = "safe_bounded_below"
    elif (
        minus_inf
        and inf_am > _TAIL_EPS
        and slope_tail > _TAIL_SLOPE
        and growth_zero <= _ZERO_GROWTH
    ):
        verdict = "safe_thm4"
    elif minus_inf and (liminf_tail < _TAIL_EPS or slope_tail <= _TAIL_SLOPE):
        verdict = "at_risk_thm3"
    else:
        verdict = "inconclusive"

    return ExitSafetyReport(
        inf_a_marginal=inf_am,
        limsup_zero=limsup_zero,
        liminf_tail=liminf_tail,
        u_at_zero_is_minus_inf=bool(minus_inf),
        bounded_below=bool(bounded_below),
        verdict=verdict,
    )
