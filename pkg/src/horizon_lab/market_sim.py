"""Market path simulation and martingale-method valuation.

Three model variants share one engine: a constant-coefficient market, the
mean-reverting-drift market (state = drift, exact Gaussian transitions),
and a square-root stochastic-volatility market (state = variance, full
truncation Euler).  Each path carries the state and the log of the pricing
density Z, accumulated with the market price of risk frozen at the left
endpoint of every step.  All draws come from the counter-based kernels, so
results are a pure function of (model, grid, n, seed) no matter how many
threads run.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels
from . import kim_omberg as ko
from . import utility as ut

__all__ = [
    "CalibrationError",
    "MarketModel",
    "PathBatch",
    "McEstimate",
    "simulate_paths",
    "martingale_check",
    "complete_market_value",
    "dual_value_complete",
    "merton_value_oracle",
    "premature_curve_ko",
    "wealth_path",
]

WEALTH_FLOOR = 1e-300


class CalibrationError(RuntimeError):
    """Budget equation could not be solved inside the search bracket."""


@dataclass(frozen=True)
class MarketModel:
    """One of the three supported market variants.

    Use the constructors; fields not applicable to a variant stay at their
    defaults.  Interest is constant: ``r`` for the constant-coefficient
    variant, zero for the others.
    """

    variant: str
    r: float = 0.0
    lam: float = 0.0
    sigma: float = 1.0
    ko_params: object = None
    kappa: float = 0.0
    theta: float = 0.0
    beta: float = 0.0
    rho: float = 0.0
    v0: float = 0.0
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0

    @staticmethod
    def merton(r, lam, sigma):
        r, lam, sigma = float(r), float(lam), float(sigma)
        if r < 0.0:
            raise ValueError("r must be >= 0")
        if sigma <= 0.0:
            raise ValueError("sigma must be > 0")
        return MarketModel(variant="merton", r=r, lam=lam, sigma=sigma)

    @staticmethod
    def kim_omberg(params):
        if not isinstance(params, ko.KimOmbergParams):
            raise ValueError("params must be a KimOmbergParams")
        return MarketModel(variant="kim_omberg", ko_params=params)

    @staticmethod
    def feller_cv(kappa, theta, beta, rho, v0, c0, c1, c2, c3):
        kappa, theta, beta = float(kappa), float(theta), float(beta)
        rho, v0 = float(rho), float(v0)
        c0, c1, c2, c3 = float(c0), float(c1), float(c2), float(c3)
        if min(kappa, theta, beta, v0) <= 0.0:
            raise ValueError("kappa, theta, beta, v0 must be > 0")
        if not (-1.0 <= rho <= 1.0):
            raise ValueError("rho must lie in [-1, 1]")
        if min(c0, c1, c2, c3) < 0.0:
            raise ValueError("C0..C3 must be >= 0")
        if c0 > 0.0 and c1 <= 0.0:
            raise ValueError("C1 must be > 0 when C0 > 0 (risk price blows up at v=0)")
        return MarketModel(
            variant="feller_cv",
            kappa=kappa,
            theta=theta,
            beta=beta,
            rho=rho,
            v0=v0,
            c0=c0,
            c1=c1,
            c2=c2,
            c3=c3,
        )

    def __post_init__(self):
        if self.variant not in ("merton", "kim_omberg", "feller_cv"):
            raise ValueError("unknown variant %r" % self.variant)


@dataclass(frozen=True, eq=False)
class PathBatch:
    time_grid: np.ndarray
    state: np.ndarray
    log_z: np.ndarray
    log_s0: np.ndarray
    seed: int
    scheme: str
    model: MarketModel
    db: object = field(default=None, repr=False)  # full-step increments or None

    @property
    def n_paths(self):
        return self.state.shape[0]


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int


def mc_mean(values):
    """Deterministic mean/stderr: compensated sums in fixed index order."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ValueError("need at least 2 values")
    mean = math.fsum(values) / n
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _validate_grid(grid):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be 1-D with at least 2 nodes")
    if grid[0] != 0.0:
        raise ValueError("grid must start at 0")
    if not np.all(np.diff(grid) > 0.0):
        raise ValueError("grid must be strictly increasing")
    if not np.all(np.isfinite(grid)):
        raise ValueError("grid must be finite")
    return grid


def _keep_indices(keep, n_nodes):
    if isinstance(keep, str):
        if keep == "all":
            return np.arange(n_nodes, dtype=np.int64)
        if keep == "ends":
            return np.array([0, n_nodes - 1], dtype=np.int64)
        raise ValueError("keep must be 'all', 'ends', or an index array")
    idx = np.asarray(keep, dtype=np.int64)
    if idx.size == 0 or not np.all(np.diff(idx) > 0):
        raise ValueError("keep indices must be nonempty and strictly increasing")
    if idx[0] != 0:
        raise ValueError("keep indices must include node 0")
    if idx[-1] >= n_nodes or idx[0] < 0:
        raise ValueError("keep indices out of range")
    return idx


def simulate_paths(model, grid, n, seed, keep="all", want_db=False, threads=None):
    """Simulate n paths of (state, log Z) on the given time grid.

    The grid defines the discretization: one scheme step per interval, no
    hidden substeps.  ``keep`` selects which nodes are stored ('all',
    'ends', or a strictly increasing index array starting at 0); ``want_db``
    additionally stores every Brownian increment of the pricing factor and
    requires keep='all'.
    """
    grid = _validate_grid(grid)
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    seed = int(seed)
    threads = kernels.resolve_threads(threads)
    n_nodes = grid.size
    keep_idx = _keep_indices(keep, n_nodes)
    if want_db and keep_idx.size != n_nodes:
        raise ValueError("want_db requires keep='all'")

    dt = np.diff(grid)
    sqdt = np.sqrt(dt)

    if model.variant == "merton":
        lam = model.lam
        e1 = np.ones_like(dt)
        cn1 = np.zeros_like(dt)
        cn2 = np.zeros_like(dt)
        state, logz, db = kernels.ou_paths(
            seed, kernels.STREAM_SIM, n, lam, lam, dt, sqdt, e1, cn1, cn2,
            keep_idx, want_db, threads,
        )
        scheme = "exact_gaussian"
    elif model.variant == "kim_omberg":
        p = model.ko_params
        kappa, beta = p.kappa, p.beta
        if kappa == 0.0:
            e1 = np.ones_like(dt)
            cn1 = beta * sqdt
            cn2 = np.zeros_like(dt)
        else:
            # exact one-step law of the drift, split into the component
            # along the pricing Brownian (cn1) and an independent one (cn2)
            em = -np.expm1(-kappa * dt)  # 1 - e^(-k dt)
            e1 = 1.0 - em
            cn1 = beta * em / (kappa * sqdt)
            var = beta ** 2 * (-np.expm1(-2.0 * kappa * dt)) / (2.0 * kappa)
            cn2 = np.sqrt(np.maximum(var - cn1 ** 2, 0.0))
        state, logz, db = kernels.ou_paths(
            seed, kernels.STREAM_SIM, n, p.mu0, p.theta, dt, sqdt, e1, cn1, cn2,
            keep_idx, want_db, threads,
        )
        scheme = "exact_gaussian"
    else:
        rhoc = math.sqrt(max(1.0 - model.rho ** 2, 0.0))
        state, logz, db = kernels.feller_paths(
            seed, kernels.STREAM_SIM, n, model.v0,
            model.c0, model.c1, model.c2, model.c3,
            model.rho, rhoc,
            model.kappa * dt, model.kappa * model.theta * dt,
            model.beta * sqdt, dt, sqdt, keep_idx, want_db, threads,
        )
        scheme = "full_truncation_euler"

    kept_times = grid[keep_idx]
    log_s0 = model.r * kept_times
    return PathBatch(
        time_grid=kept_times,
        state=state,
        log_z=logz,
        log_s0=log_s0,
        seed=seed,
        scheme=scheme,
        model=model,
        db=db,
    )


DEFAULT_MC_STEPS = 64


def _horizon_grid(model, K, n_steps=None):
    if n_steps is None:
        n_steps = 1 if model.variant == "merton" else DEFAULT_MC_STEPS
    return np.linspace(0.0, float(K), int(n_steps) + 1)


def martingale_check(model, t, paths, seed, n_steps=None, threads=None):
    """Estimate E[Z_t]; a genuine martingale puts 1 within ~3 stderr."""
    t = float(t)
    if t <= 0.0:
        raise ValueError("t must be > 0")
    grid = _horizon_grid(model, t, n_steps)
    batch = simulate_paths(model, grid, paths, seed, keep="ends", threads=threads)
    z = np.exp(batch.log_z[:, -1])
    mean, stderr = mc_mean(z)
    return McEstimate(mean=mean, stderr=stderr, n_paths=int(paths), seed=int(seed))


def _require_complete(model):
    if model.variant not in ("merton", "kim_omberg"):
        raise ValueError(
            "operation needs a complete model variant (merton or kim_omberg)"
        )


def _terminal_h(model, K, paths, seed, n_steps, threads):
    grid = _horizon_grid(model, K, n_steps)
    batch = simulate_paths(model, grid, paths, seed, keep="ends", threads=threads)
    # H = Z / S0; with constant r this is exp(log_z - r*K)
    return np.exp(batch.log_z[:, -1] - batch.log_s0[-1])


def complete_market_value(
    model, U, x, K, paths, seed,
    n_steps=None, fresh_paths=False, threads=None,
):
    """Martingale-method value in a complete market.

    Calibrates the multiplier y so the budget mean(H*I(y*H)) equals x
    (the map is strictly decreasing in y), then estimates E[U(I(y*H))].
    By default the same sample serves calibration and evaluation, reported
    via ``sample_reuse``; ``fresh_paths`` re-draws the evaluation sample
    with seed+1.
    """
    _require_complete(model)
    x = float(x)
    if x <= 0.0:
        raise ValueError("x must be > 0")
    if float(K) <= 0.0:
        raise ValueError("K must be > 0")
    h = _terminal_h(model, K, paths, seed, n_steps, threads)
    n = h.size

    def budget(log_y):
        y = math.exp(log_y)
        return math.fsum(h * ut.inverse_marginal(U, y * h)) / n - x

    lo, hi = math.log(1e-12), math.log(1e12)
    b_lo, b_hi = budget(lo), budget(hi)
    if not (b_lo > 0.0 > b_hi):
        raise CalibrationError(
            "budget map does not bracket x=%g on y in [1e-12, 1e12] "
            "(endpoints %g, %g)" % (x, b_lo + x, b_hi + x)
        )
    log_y = brentq(budget, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200)
    y = math.exp(log_y)
    residual = budget(log_y)
    if abs(residual) > 1e-10 * x:
        raise CalibrationError(
            "budget residual %g exceeds tolerance %g" % (residual, 1e-10 * x)
        )

    if fresh_paths:
        h_eval = _terminal_h(model, K, paths, int(seed) + 1, n_steps, threads)
        eval_seed = int(seed) + 1
    else:
        h_eval = h
        eval_seed = int(seed)
    vals = ut.eval_bundle(U, ut.inverse_marginal(U, y * h_eval))["value"]
    mean, stderr = mc_mean(vals)
    return {
        "y": y,
        "u": McEstimate(mean=mean, stderr=stderr, n_paths=n, seed=eval_seed),
        "sample_reuse": not fresh_paths,
    }


def dual_value_complete(model, U, y, K, paths, seed, n_steps=None, threads=None):
    """E[V(y*H_K)]: the dual objective at nu=0, exact dual value when
    the market is complete."""
    _require_complete(model)
    y = float(y)
    if y <= 0.0:
        raise ValueError("y must be > 0")
    h = _terminal_h(model, K, paths, seed, n_steps, threads)
    vals = ut.conjugate(U, y * h)
    mean, stderr = mc_mean(vals)
    return McEstimate(mean=mean, stderr=stderr, n_paths=h.size, seed=int(seed))


def merton_value_oracle(r, lam, p, x, K):
    """Closed-form optimal value for the constant-coefficient market.

    u = (x^p/p) * exp(p*r*K + p*lam^2*K / (2*(1-p))), the lognormal moment
    E[H^(p/(p-1))]^(1-p) folded in analytically.  p=0 selects the log
    branch u = log x + (r + lam^2/2)*K.
    """
    r, lam, x, K = float(r), float(lam), float(x), float(K)
    p = float(p)
    if x <= 0.0:
        raise ValueError("x must be > 0")
    if K < 0.0:
        raise ValueError("K must be >= 0")
    if p >= 1.0:
        raise ValueError("p must be < 1")
    if p == 0.0:
        return math.log(x) + (r + 0.5 * lam ** 2) * K
    return x ** p / p * math.exp(p * r * K + p * lam ** 2 * K / (2.0 * (1.0 - p)))


def premature_curve_ko(params, x, T, K_grid, paths, seed, n_steps=None, threads=None):
    """Expected utility of the horizon-T optimizer stopped at earlier K.

    Calibrates y once from the closed-form budget x = y^(1/(p-1)) * E(T),
    simulates (state, Z) jointly, maps each path through the closed-form
    conditional wealth at every requested K, and reports one Monte Carlo
    row {K, estimate, stderr} per grid point.
    """
    x = float(x)
    T = float(T)
    if x <= 0.0:
        raise ValueError("x must be > 0")
    K_grid = np.asarray(K_grid, dtype=np.float64)
    if K_grid.ndim != 1 or K_grid.size == 0:
        raise ValueError("K_grid must be a nonempty 1-D array")
    if not np.all(np.diff(K_grid) > 0.0):
        raise ValueError("K_grid must be strictly increasing")
    if K_grid[0] < 0.0 or K_grid[-1] > T:
        raise ValueError("K_grid must lie within [0, T]")

    e_t = ko.value_e(params, T)
    if math.isinf(e_t):
        raise ko.RegimeError("horizon T=%g is at or beyond the explosion time" % T)
    y = (x / e_t) ** (params.p - 1.0)
    U = ut.UtilitySpec.power(params.p)

    # simulation grid: uniform refinement with every K snapped onto a node
    if n_steps is None:
        n_steps = 256
    base = np.linspace(0.0, T, int(n_steps) + 1)
    grid = np.unique(np.concatenate([base, K_grid]))
    model = MarketModel.kim_omberg(params)
    keep_idx = np.searchsorted(grid, K_grid)
    if keep_idx[0] != 0:
        keep_idx = np.concatenate([[0], keep_idx])
    batch = simulate_paths(model, grid, paths, seed, keep=keep_idx, threads=threads)

    rows = []
    kept_times = batch.time_grid
    for j, K in enumerate(K_grid):
        col = int(np.searchsorted(kept_times, K))
        z = np.exp(batch.log_z[:, col])
        mu = batch.state[:, col]
        w = ko.conditional_wealth(params, y, K, T, z, mu)
        vals = ut.eval_bundle(U, w)["value"]
        mean, stderr = mc_mean(vals)
        rows.append({"K": float(K), "estimate": mean, "stderr": stderr})
    return rows


def wealth_path(batch, strategy, x):
    """Terminal wealth of a self-financing fraction strategy, log-Euler.

    ``strategy`` is either a constant fraction (number) or a callable
    ``f(t, state) -> fraction`` evaluated at each left endpoint.  Needs a
    batch built with keep='all' and want_db=True.  Returns (wealth array,
    floored count); paths whose wealth underflows 1e-300 are clamped there
    so downstream utilities see U(floor).
    """
    x = float(x)
    if x <= 0.0:
        raise ValueError("x must be > 0")
    if batch.db is None:
        raise ValueError("batch carries no Brownian increments; "
                         "simulate with want_db=True and keep='all'")
    model = batch.model
    if model.variant == "feller_cv":
        raise ValueError(
            "wealth paths need the drift/vol split, which the "
            "square-root variant does not define"
        )
    grid = batch.time_grid
    n_steps = grid.size - 1
    n = batch.state.shape[0]
    if batch.db.shape != (n, n_steps):
        raise ValueError("batch increments do not match the grid")

    sigma = model.sigma if model.variant == "merton" else 1.0
    r = model.r
    callable_strategy = callable(strategy)
    if not callable_strategy:
        pi_const = float(strategy)

    log_floor = math.log(WEALTH_FLOOR)
    logx = np.full(n, math.log(x))
    floored = np.zeros(n, dtype=bool)
    for j in range(n_steps):
        t = grid[j]
        state = batch.state[:, j]
        lam = state  # price of risk at the left endpoint
        if callable_strategy:
            pi = np.broadcast_to(
                np.asarray(strategy(float(t), state), dtype=np.float64), state.shape
            )
        else:
            pi = pi_const
        dt = grid[j + 1] - grid[j]
        drift = (r + pi * sigma * lam - 0.5 * pi ** 2 * sigma ** 2) * dt
        logx = logx + drift + pi * sigma * batch.db[:, j]
        under = logx < log_floor
        if np.any(under):
            floored |= under
            logx = np.where(under, log_floor, logx)
    return np.exp(logx), int(np.count_nonzero(floored))
