"""Two-point complete market where early exit destroys expected utility.

The market is built on a dyadic partition: event k has probability 2^-k
and carries a two-point random variable Y_k in {a_k, b_k} with E[Y_k] = 1.
The sequences (a_k, b_k, x_k) are chosen so that holding to the terminal
horizon gives finite expected utility while exiting at the n-th partition
time forces utility below U(x_n)*2^-n -> -inf.  All expected utilities
reduce to exact sums over levels; Monte Carlo only cross-checks them.

Floating-point note: 1 - p_k degrades catastrophically once b_k is large,
so levels store one_minus_p = (1-a)/(b-a) separately and every expectation
is computed as  a*f(a)*p + b*g(b)*one_minus_p.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import utility as ut
from .market_sim import McEstimate

__all__ = [
    "ClassificationError",
    "ConstructionError",
    "Interval",
    "Level",
    "CounterexampleInstance",
    "build_instance",
    "initial_wealth",
    "premature_value",
    "terminal_value",
    "mc_cross_check",
]


class ClassificationError(ValueError):
    """The utility is not in the at-risk class the construction needs."""


class ConstructionError(RuntimeError):
    """The level sequences could not be built within iteration caps."""


# Levels computed past n_max before falling back to a blanket tail bound.
TAIL_LEVELS = 24

# The blanket bound allows this multiple of the last computed per-level
# contribution for everything beyond it; construction refuses to use it
# unless the contributions are observed to decay.
TAIL_SAFETY = 4.0

_MAX_CHAIN_ITER = 6000


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError("interval needs lo <= hi")

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self):
        return self.hi - self.lo


@dataclass(frozen=True)
class Level:
    a: float
    b: float
    p: float
    one_minus_p: float
    x: float
    alpha: float  # nan on extension levels past the time grid


@dataclass(frozen=True, eq=False)
class CounterexampleInstance:
    t_grid: np.ndarray
    levels: tuple
    n_max: int
    utility: ut.UtilitySpec
    x0: float
    _ext_cache: dict = field(default_factory=dict, repr=False)


def _inverse_value(U, target):
    """Solve U(x) = target for x > 0."""
    if U.kind == "power":
        if U.p < 0.0:
            if target >= 0.0:
                raise ConstructionError(
                    "negative-power utility never reaches value %g" % target
                )
            return (U.p * target) ** (1.0 / U.p)
        if target <= 0.0:
            raise ConstructionError(
                "positive-power utility never reaches value %g" % target
            )
        return (U.p * target) ** (1.0 / U.p)
    if U.kind == "log":
        return math.exp(target)
    def val(a):
        return float(np.asarray(U.value_fn(a), dtype=np.float64))

    lo, hi = math.log(1e-308), math.log(1e12)
    if not (val(math.exp(lo)) <= target <= val(math.exp(hi))):
        raise ConstructionError(
            "target value %g not bracketed by the custom utility probe" % target
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if val(math.exp(mid)) < target:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def _a_i_a(U, a):
    return a * float(ut.inverse_marginal(U, a))


def _next_level(U, k, a_prev, b_prev):
    """Continue the halving/doubling chains to level k (no alpha)."""
    x = _inverse_value(U, -float(k) * 2.0 ** k)
    a = 0.5 * a_prev  # at least one halving keeps a_k strictly decreasing
    it = 0
    while not (_a_i_a(U, a) < 0.5 * x):
        a *= 0.5
        it += 1
        if a == 0.0 or it > _MAX_CHAIN_ITER:
            raise ConstructionError(
                "halving chain for level %d failed: a*I(a) stays >= x_k/2 "
                "(liminf a*U'(a) = 0 may fail in the probed range)" % k
            )
    b = 2.0 * b_prev
    it = 0
    while not (float(ut.inverse_marginal(U, b)) < 0.5 * x):
        b *= 2.0
        it += 1
        if math.isinf(b) or it > _MAX_CHAIN_ITER:
            raise ConstructionError(
                "doubling chain for level %d failed: I(b) stays >= x_k/2" % k
            )
    p = (b - 1.0) / (b - a)
    omp = (1.0 - a) / (b - a)
    return a, b, p, omp, x


def _default_t_grid(n_points):
    k = np.arange(1, n_points + 1, dtype=np.float64)
    return 1.0 - 0.5 ** k


def build_instance(U, n_max, t_grid=None, divergence_threshold=None):
    """Construct the market levels for an at-risk utility.

    x_k = U^{-1}(-k*2^k) pins the exit-value divergence rate; a_k halves
    until a_k*I(a_k) < x_k/2, b_k doubles until I(b_k) < x_k/2, and the
    two-point probabilities make E[Y_k] = 1.  The result is a pure function
    of the inputs (bit-identical across runs).  If ``divergence_threshold``
    (a negative number) is given, construction verifies that the exit value
    at n_max has already fallen below it.
    """
    n_max = int(n_max)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    report = ut.classify_exit_safety(U)
    if report.verdict != "at_risk_thm3":
        raise ClassificationError(
            "utility classified as %r; the construction needs at_risk_thm3 "
            "(U(0+) = -inf and a*U'(a) decaying to 0)" % report.verdict
        )
    if t_grid is None:
        t_grid = _default_t_grid(n_max + 1)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or t_grid.size < n_max + 1:
        raise ValueError("t_grid needs at least n_max+1 points")
    if not (np.all(np.diff(t_grid) > 0.0) and 0.0 < t_grid[0] and t_grid[-1] < 1.0):
        raise ValueError("t_grid must increase strictly inside (0, 1)")

    levels = []
    a_prev, b_prev = 1.0, 1.0
    for k in range(1, n_max + 1):
        a, b, p, omp, x = _next_level(U, k, a_prev, b_prev)
        if not (0.0 < p < 1.0) or not (0.0 < omp < 1.0):
            raise ConstructionError(
                "level %d probabilities left (0,1) in floating point "
                "(b_k=%g too large); reduce n_max" % (k, b)
            )
        ey = a * p + b * omp
        if abs(ey - 1.0) > 1e-14:
            raise ConstructionError(
                "level %d lost E[Y]=1 beyond 1e-14: %g" % (k, ey - 1.0)
            )
        # complementary quantile keeps alpha accurate when p_k -> 1
        alpha = -math.sqrt(t_grid[k] - t_grid[k - 1]) * float(
            kernels.norm_ppf(np.float64(omp))
        )
        levels.append(Level(a=a, b=b, p=p, one_minus_p=omp, x=x, alpha=alpha))
        a_prev, b_prev = a, b

    inst = CounterexampleInstance(
        t_grid=t_grid.copy(),
        levels=tuple(levels),
        n_max=n_max,
        utility=U,
        x0=math.nan,
    )
    object.__setattr__(inst, "x0", initial_wealth(inst))
    if divergence_threshold is not None:
        thr = float(divergence_threshold)
        if thr >= 0.0:
            raise ValueError("divergence_threshold must be negative")
        reached = premature_value(inst, n_max).hi
        if not (reached < thr):
            raise ConstructionError(
                "exit value %g at n_max=%d has not crossed threshold %g; "
                "increase n_max" % (reached, n_max, thr)
            )
    return inst


def _extended_levels(inst, upto):
    """Instance levels plus deterministic continuation past n_max."""
    cached = inst._ext_cache.get("levels", ())
    have = inst.n_max + len(cached)
    if have < upto:
        ext = list(cached)
        if ext:
            a_prev, b_prev = ext[-1].a, ext[-1].b
        else:
            a_prev, b_prev = inst.levels[-1].a, inst.levels[-1].b
        for k in range(have + 1, upto + 1):
            a, b, p, omp, x = _next_level(inst.utility, k, a_prev, b_prev)
            ext.append(
                Level(a=a, b=b, p=p, one_minus_p=omp, x=x, alpha=math.nan)
            )
            a_prev, b_prev = a, b
        inst._ext_cache["levels"] = tuple(ext)
        cached = inst._ext_cache["levels"]
    return inst.levels + cached[: upto - inst.n_max]


def _eval_u(W, v):
    return float(ut.eval_bundle(W, v)["value"])


def _level_u_term(level, W):
    """E[U(I(Y_k))] for the evaluation utility W."""
    ia = float(ut.inverse_marginal(W, level.a))
    ib = float(ut.inverse_marginal(W, level.b))
    return level.p * _eval_u(W, ia) + level.one_minus_p * _eval_u(W, ib)


def _level_m_term(level, W):
    """E[Y_k * I(Y_k)] for the evaluation utility W."""
    if W.kind == "log":
        return 1.0  # Y * (1/Y) = 1 identically
    ia = float(ut.inverse_marginal(W, level.a))
    ib = float(ut.inverse_marginal(W, level.b))
    return level.a * ia * level.p + level.b * ib * level.one_minus_p


def _check_decay(terms, what):
    tail = [abs(t) for t in terms[-6:]]
    if any(tail[i + 1] > tail[i] for i in range(len(tail) - 1)):
        raise ConstructionError(
            "per-level %s contributions are not decaying at the truncation "
            "point; cannot bound the tail" % what
        )


def _inner_sum_interval(inst, n, W):
    """Sum_{k>n} E[Y_k I(Y_k)] * 2^-(k-n), with its truncation bounds.

    For the instance's own (or any native power p<0) utility the tail uses
    the rigorous bound E[Y I(Y)] <= x_k with x_k decreasing; for a log
    evaluation utility it is exact (terms are identically 1); for other
    override utilities the blanket decaying-tail allowance applies.
    """
    n_ext = inst.n_max + TAIL_LEVELS
    levels = _extended_levels(inst, n_ext)
    terms = [
        _level_m_term(levels[k - 1], W) * 2.0 ** (n - k)
        for k in range(n + 1, n_ext + 1)
    ]
    s = math.fsum(terms)
    if W.kind == "log":
        exact_tail = 2.0 ** (n - n_ext)
        return Interval(s + exact_tail, s + exact_tail)
    native = W is inst.utility or W == inst.utility
    if native:
        # E[Y I(Y)] = p*aI(a) + (b*omp)*I(b) < x/2 + x/2 = x_k, since
        # b*omp = b(1-a)/(b-a) < 1 for 0<a<1<b, and x_k decreases in k
        x_next = _inverse_value(W, -float(n_ext + 1) * 2.0 ** (n_ext + 1))
        return Interval(s, s + x_next * 2.0 ** (n - n_ext))
    _check_decay(terms, "budget")
    allowance = TAIL_SAFETY * abs(terms[-1])
    return Interval(s, s + allowance)


def initial_wealth(inst, utility=None):
    """x0 = E[Y I(Y)] summed over the partition (the budget of the
    level-1 optimizer).

    The infinite series is truncated after the extension levels; the
    remaining tail is bounded as in the premature/terminal evaluations and
    the midpoint is returned, so the result is exact to within half that
    tail bound (zero for a log evaluation utility).
    """
    W = utility if utility is not None else inst.utility
    inner = _inner_sum_interval(inst, 0, W)
    return inner.mid


def premature_value(inst, n, utility=None):
    """Expected utility when the horizon-1 optimizer exits at t_n.

    Exact three-part decomposition over the partition: fully resolved
    events below n, the event at n (wealth collapses to its conditional
    expectation), and the not-yet-resolved remainder.  Returns an Interval
    whose width reflects only series truncation.  ``utility`` evaluates the
    same instance under a different preference (the instance's own utility
    by default).
    """
    if not isinstance(n, (int, np.integer)):
        raise IndexError("n must be an integer level index")
    n = int(n)
    if not (1 <= n <= inst.n_max):
        raise IndexError("n=%d outside [1, n_max=%d]" % (n, inst.n_max))
    W = utility if utility is not None else inst.utility

    head = math.fsum(
        _level_u_term(inst.levels[k - 1], W) * 2.0 ** (-k) for k in range(1, n)
    )
    m_n = _level_m_term(inst.levels[n - 1], W)
    at_n = _eval_u(W, m_n) * 2.0 ** (-n)
    inner = _inner_sum_interval(inst, n, W)
    w = 2.0 ** (-n)
    lo = head + at_n + _eval_u(W, inner.lo) * w
    hi = head + at_n + _eval_u(W, inner.hi) * w
    if lo > hi:  # U increasing makes this impossible; guard anyway
        lo, hi = hi, lo
    return Interval(lo, hi)


def terminal_value(inst, utility=None):
    """Expected utility of holding to the terminal horizon.

    Series over all levels of E[U(I(Y_k))] * 2^-k, truncated after the
    extension levels with the decaying-tail allowance on both endpoints.
    """
    W = utility if utility is not None else inst.utility
    n_ext = inst.n_max + TAIL_LEVELS
    levels = _extended_levels(inst, n_ext)
    terms = [
        _level_u_term(levels[k - 1], W) * 2.0 ** (-k) for k in range(1, n_ext + 1)
    ]
    s = math.fsum(terms)
    _check_decay(terms, "utility")
    allowance = TAIL_SAFETY * abs(terms[-1])
    return Interval(s - allowance, s + allowance)


def mc_cross_check(inst, n, paths, seed, quantity="premature", utility=None):
    """Simulate the partition and cross-check the exact sums.

    quantity='premature' draws the event cell and the two-point Y values
    and averages the same per-cell expressions premature_value uses;
    quantity='xi' averages the time-t_n density itself (exactly 1 in
    expectation).  Cell assignment uses the binary exponent of 1-u, so
    P(cell k) is exactly 2^-k.
    """
    paths = int(paths)
    if paths < 1000:
        raise ValueError("paths must be >= 1000")
    if not (1 <= int(n) <= inst.n_max):
        raise IndexError("n=%d outside [1, n_max=%d]" % (int(n), inst.n_max))
    n = int(n)
    if quantity not in ("premature", "xi"):
        raise ValueError("quantity must be 'premature' or 'xi'")
    W = utility if utility is not None else inst.utility

    u1, u2 = kernels.uniform_pairs(seed, kernels.STREAM_CE, paths)
    v = 1.0 - u1  # exact: u1 = (bits+0.5)*2^-52 keeps 1-u1 representable
    _, exps = np.frexp(v)
    cell = 1 - exps  # v in [2^-k, 2^-(k-1))  <=>  cell k

    a = np.array([lv.a for lv in inst.levels])
    b = np.array([lv.b for lv in inst.levels])
    p = np.array([lv.p for lv in inst.levels])

    vals = np.empty(paths)
    resolved = cell < n
    idx = np.clip(cell, 1, inst.n_max) - 1
    y = np.where(u2 < p[idx], a[idx], b[idx])
    if quantity == "xi":
        vals[:] = np.where(resolved, y, 1.0)
    else:
        iy = np.asarray(ut.inverse_marginal(W, y))
        uy = np.asarray(ut.eval_bundle(W, iy)["value"])
        m_n = _level_m_term(inst.levels[n - 1], W)
        inner = _inner_sum_interval(inst, n, W)
        vals[:] = np.where(
            resolved,
            uy,
            np.where(cell == n, _eval_u(W, m_n), _eval_u(W, inner.mid)),
        )
    from .market_sim import mc_mean

    mean, stderr = mc_mean(vals)
    return McEstimate(mean=mean, stderr=stderr, n_paths=paths, seed=int(seed))
