"""Mean-reverting drift model: Riccati system, explosion time, value formulas.

The drift follows dmu = kappa*(theta - mu) dt + beta dB and the investor has
power utility with exponent p in (0, 1).  Everything reduces to the scalar
quantity E(K) = exp(a(K) + b(K)*mu0 + c(K)*mu0^2/2) where (a, b, c) solve a
coupled ODE system in time-to-horizon; c satisfies a constant-coefficient
Riccati equation that blows up in finite time exactly when the discriminant
is negative.  A finite blow-up time makes the value function explode as the
horizon approaches it.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "RegimeError",
    "IntegrationError",
    "KimOmbergParams",
    "RiccatiSolution",
    "discriminant",
    "solve_riccati",
    "analytic_c",
    "analytic_pole",
    "value_e",
    "primal_value",
    "ou_moments",
    "conditional_wealth",
]

# c is declared blown up once it crosses this; the remaining time to the
# true pole is then added in closed form, so the threshold only needs to be
# large, not accurate.
BLOWUP_THRESHOLD = 1e8

DEFAULT_TOL = 1e-10


class RegimeError(ValueError):
    """Operation requires the exploding (negative-discriminant) regime."""


class IntegrationError(RuntimeError):
    """The ODE integrator failed before reaching the target horizon."""


@dataclass(frozen=True)
class KimOmbergParams:
    kappa: float
    theta: float
    beta: float
    mu0: float
    p: float

    def __post_init__(self):
        for name in ("kappa", "theta", "beta", "mu0", "p"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError("%s must be a finite real, got %r" % (name, v))
            object.__setattr__(self, name, float(v))
        if self.beta <= 0.0:
            raise ValueError("beta must be > 0")
        if not (0.0 < self.p < 1.0):
            raise ValueError("p must lie in (0, 1)")
        if self.kappa < 0.0:
            raise ValueError("kappa must be >= 0")


def _quad_coeffs(params):
    """c' = q0 + q1*c + q2*c^2 with constant coefficients."""
    q = params.p / (params.p - 1.0)
    q0 = params.p / (params.p - 1.0) ** 2
    q1 = -2.0 * (params.kappa + params.beta * q)
    q2 = params.beta ** 2
    return q0, q1, q2


def discriminant(params):
    """Negative exactly when c (hence the value function) explodes."""
    q0, q1, q2 = _quad_coeffs(params)
    # equals 4*(kappa + beta*p/(p-1))^2 - 4*beta^2*p/(p-1)^2
    return q1 ** 2 - 4.0 * q2 * q0


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    s_grid: np.ndarray
    a_vals: np.ndarray
    b_vals: np.ndarray
    c_vals: np.ndarray
    explosion_time: object  # float or None
    method: str
    _dense: object = field(default=None, repr=False)

    def eval_abc(self, s):
        """Dense-output (a, b, c) at time-to-horizon s."""
        s = np.asarray(s, dtype=np.float64)
        if np.any(s < 0.0) or np.any(s > self.s_grid[-1] * (1.0 + 1e-12) + 1e-300):
            raise ValueError(
                "s outside solved range [0, %g]" % float(self.s_grid[-1])
            )
        if self._dense is None:
            raise ValueError("solution carries no dense output")
        out = self._dense(np.clip(s, 0.0, self.s_grid[-1]))
        return out[0], out[1], out[2]


def _tail_time_to_pole(c_start, q0, q1, q2):
    """Exact remaining time for c' = q0+q1*c+q2*c^2 to reach +inf.

    Valid when the quadratic has no real roots (D > 0 below); this is the
    arctan antiderivative evaluated from c_start to infinity.
    """
    d = q0 - q1 * q1 / (4.0 * q2)
    omega = math.sqrt(d * q2)
    w = c_start + q1 / (2.0 * q2)
    return (math.pi / 2.0 - math.atan(w * math.sqrt(q2 / d))) / omega


def solve_riccati(params, s_max, tol=DEFAULT_TOL):
    """Integrate (a, b, c) from zero initial conditions up to s_max.

    Stops early if c crosses BLOWUP_THRESHOLD; the reported explosion_time
    adds the closed-form remaining time from the crossing to the pole, so
    its error is the integrator's local error at the crossing, well inside
    ``tol``.  The returned grid always ends strictly before explosion_time.
    """
    s_max = float(s_max)
    tol = float(tol)
    if s_max <= 0.0:
        raise ValueError("s_max must be > 0")
    if tol <= 0.0:
        raise ValueError("tol must be > 0")
    q0, q1, q2 = _quad_coeffs(params)
    kappa, theta, beta = params.kappa, params.theta, params.beta
    bq = -0.5 * q1  # kappa + beta*p/(p-1)

    def rhs(s, y):
        a, b, c = y
        return (
            kappa * theta * b + 0.5 * beta ** 2 * (b * b + c),
            kappa * theta * c + b * (beta ** 2 * c - bq),
            q0 + q1 * c + q2 * c * c,
        )

    def blowup(s, y):
        return y[2] - BLOWUP_THRESHOLD

    blowup.terminal = True
    blowup.direction = 1.0

    sol = solve_ivp(
        rhs,
        (0.0, s_max),
        (0.0, 0.0, 0.0),
        method="RK45",
        rtol=tol,
        atol=tol * 1e-2,
        dense_output=True,
        events=(blowup,),
    )
    if sol.status == -1 or (sol.status == 0 and sol.t[-1] < s_max):
        raise IntegrationError(
            "integration failed at s=%g: %s" % (float(sol.t[-1]), sol.message)
        )

    explosion_time = None
    if sol.status == 1:  # blow-up event fired
        if discriminant(params) >= 0.0:
            raise IntegrationError(
                "c crossed the blow-up threshold with nonnegative "
                "discriminant; parameters are outside the supported regime"
            )
        t_ev = float(sol.t_events[0][0])
        c_ev = float(sol.y_events[0][0][2])
        explosion_time = t_ev + _tail_time_to_pole(c_ev, q0, q1, q2)

    return RiccatiSolution(
        s_grid=sol.t.copy(),
        a_vals=sol.y[0].copy(),
        b_vals=sol.y[1].copy(),
        c_vals=sol.y[2].copy(),
        explosion_time=explosion_time,
        method="numeric",
        _dense=sol.sol,
    )


@lru_cache(maxsize=128)
def _solve_cached(params, s_max, tol):
    return solve_riccati(params, s_max, tol)


def analytic_pole(params):
    """First pole of the tangent-family solution (explosion regime only)."""
    if discriminant(params) >= 0.0:
        raise RegimeError("analytic tangent solution requires discriminant < 0")
    q0, q1, q2 = _quad_coeffs(params)
    d = q0 - q1 * q1 / (4.0 * q2)
    omega = math.sqrt(d * q2)
    phi0 = math.atan(q1 / (2.0 * omega))
    return (math.pi / 2.0 - phi0) / omega


def analytic_c(params, s):
    """Closed-form c(s) when the discriminant is negative.

    Completing the square turns c' = q0 + q1*c + q2*c^2 into w' = q2*w^2 + D
    for w = c + q1/(2*q2) and D = q0 - q1^2/(4*q2) > 0, whose solution
    through c(0)=0 is sqrt(D/q2)*tan(omega*s + phi0) - q1/(2*q2) with
    omega = sqrt(D*q2) and phi0 = arctan(q1/(2*omega)).  Returns +inf at or
    past the first tangent pole.
    """
    s = float(s)
    if s < 0.0:
        raise ValueError("s must be >= 0")
    if discriminant(params) >= 0.0:
        raise RegimeError("analytic tangent solution requires discriminant < 0")
    q0, q1, q2 = _quad_coeffs(params)
    d = q0 - q1 * q1 / (4.0 * q2)
    omega = math.sqrt(d * q2)
    phi0 = math.atan(q1 / (2.0 * omega))
    pole = (math.pi / 2.0 - phi0) / omega
    if s >= pole:
        return math.inf
    return math.sqrt(d / q2) * math.tan(omega * s + phi0) - q1 / (2.0 * q2)


def value_e(params, K, tol=DEFAULT_TOL):
    """E(K) = exp(a(K) + b(K)*mu0 + c(K)*mu0^2/2); +inf once K reaches
    the explosion time (or the numerical blow-up bracket just below it)."""
    K = float(K)
    if K < 0.0:
        raise ValueError("K must be >= 0")
    if K == 0.0:
        return 1.0
    sol = _solve_cached(params, K, float(tol))
    if sol.explosion_time is not None and (
        K >= sol.explosion_time or K > sol.s_grid[-1]
    ):
        return math.inf
    a, b, c = sol.eval_abc(K)
    exponent = float(a) + float(b) * params.mu0 + 0.5 * float(c) * params.mu0 ** 2
    with np.errstate(over="ignore"):
        return float(np.exp(exponent))


def primal_value(params, x, K, tol=DEFAULT_TOL):
    """Maximal expected utility E(K)^(1-p) * x^p / p; +inf on explosion."""
    x = float(x)
    if x <= 0.0:
        raise ValueError("x must be > 0")
    e = value_e(params, K, tol)
    if math.isinf(e):
        return math.inf
    return e ** (1.0 - params.p) * x ** params.p / params.p


def ou_moments(params, t):
    """Mean and variance of the drift state at time t."""
    t = float(t)
    if t < 0.0:
        raise ValueError("t must be >= 0")
    kappa, beta = params.kappa, params.beta
    if kappa == 0.0:
        mean = params.mu0
        var = beta ** 2 * t
    else:
        # 1 - e^(-kt) via expm1 keeps small-t accuracy
        em = -math.expm1(-kappa * t)
        mean = math.exp(-kappa * t) * params.mu0 + params.theta * em
        var = beta ** 2 * (-math.expm1(-2.0 * kappa * t)) / (2.0 * kappa)
    return {"mean": mean, "var": var}


def conditional_wealth(params, y, t, T, z, mu, tol=DEFAULT_TOL):
    """Closed-form optimal wealth at time t given realized (z, mu).

    X_t = y^(1/(p-1)) * M_t / z where M_t = z^(p/(p-1)) *
    exp(a(T-t) + b(T-t)*mu + c(T-t)*mu^2/2); the exponents combine to
    (log y + log z)/(p-1) plus the affine exponent.  Vectorized over
    (z, mu).  Horizons at or beyond the explosion time (including the
    numerical blow-up bracket) are rejected.
    """
    y = float(y)
    t = float(t)
    T = float(T)
    if y <= 0.0:
        raise ValueError("y must be > 0")
    if not (0.0 <= t <= T):
        raise ValueError("need 0 <= t <= T")
    if T <= 0.0:
        raise ValueError("T must be > 0")
    scalar_in = np.ndim(z) == 0 and np.ndim(mu) == 0
    z = np.asarray(z, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(z <= 0.0) or not np.all(np.isfinite(z)):
        raise ValueError("z must be finite and > 0")
    sol = _solve_cached(params, T, float(tol))
    if sol.explosion_time is not None and (
        T >= sol.explosion_time or T > sol.s_grid[-1]
    ):
        raise RegimeError(
            "horizon T=%g is at or beyond the explosion time %g"
            % (T, sol.explosion_time)
        )
    a, b, c = sol.eval_abc(T - t)
    a, b, c = float(a), float(b), float(c)
    logx = (np.log(y) + np.log(z)) / (params.p - 1.0)
    logx = logx + (a + b * mu + 0.5 * c * mu * mu)
    with np.errstate(over="ignore"):
        out = np.exp(logx)
    return float(out) if scalar_in else out
