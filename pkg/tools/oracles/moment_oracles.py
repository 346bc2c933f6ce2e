"""Closed-form moment oracles verified by direct quadrature.

Three families of constants used in the tests, each printed next to an
independent scipy.integrate.quad evaluation over the relevant density:

1. Constant-coefficient complete-market value for U(a)=a^p/p:
     u(x) = (x^p/p) * exp(p*r*K + p*lambda^2*K / (2*(1-p)))
   checked by integrating U(I(y*H)) over the lognormal law of
   H = exp(-(r + lambda^2/2)K - lambda*sqrt(K)*N) with y from the budget.

2. Gaussian square-exponential moment (exponential-moment checker):
     E[exp(d*X^2)] = (1-2*d*s^2)^(-1/2) * exp(d*m^2/(1-2*d*s^2)),
     X ~ N(m, s^2), valid for 2*d*s^2 < 1.

3. Lognormal density-ratio moment (discounted-moment checker):
     E[(Z_T/Z_t)^g] = exp((g^2-g)*lambda^2*(T-t)/2).

Run:  python3 tools/oracles/moment_oracles.py
"""

import math

import numpy as np
from scipy import integrate


def norm_pdf(z):
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def merton_value(r, lam, p, x, K):
    closed = (x ** p / p) * math.exp(p * r * K + p * lam * lam * K / (2 * (1 - p)))

    # martingale method by quadrature: X = I(y*H), budget E[H*X] = x
    def h(z):
        return math.exp(-(r + 0.5 * lam * lam) * K - lam * math.sqrt(K) * z)

    def budget(y):
        f = lambda z: h(z) * (y * h(z)) ** (1.0 / (p - 1.0)) * norm_pdf(z)
        return integrate.quad(f, -12, 12)[0] - x

    lo, hi = 1e-8, 1e8
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if budget(mid) > 0:
            lo = mid
        else:
            hi = mid
    y = math.sqrt(lo * hi)
    f = lambda z: ((y * h(z)) ** (p / (p - 1.0)) / p) * norm_pdf(z)
    quad_val = integrate.quad(f, -12, 12)[0]
    return closed, quad_val, y


def gauss_square_exp(d, m, s):
    closed = (1 - 2 * d * s * s) ** -0.5 * math.exp(d * m * m / (1 - 2 * d * s * s))
    f = lambda z: math.exp(d * (m + s * z) ** 2) * norm_pdf(z)
    return closed, integrate.quad(f, -14, 14)[0]


def lognormal_ratio_moment(g, lam, dt):
    closed = math.exp((g * g - g) * lam * lam * dt / 2.0)
    # Z_T/Z_t = exp(-lam*sqrt(dt)*N - lam^2*dt/2)
    f = lambda z: math.exp(g * (-lam * math.sqrt(dt) * z - lam * lam * dt / 2)) * norm_pdf(z)
    return closed, integrate.quad(f, -14, 14)[0]


def main():
    closed, quad_val, y = merton_value(r=0.02, lam=0.3, p=-1.0, x=1.0, K=1.0)
    print("constant-model value p=-1, r=0.02, lam=0.3, K=1:")
    print("  closed      :", repr(closed))
    print("  -exp(-.0425):", repr(-math.exp(-0.0425)))
    print("  quadrature  :", repr(quad_val), " (y=%.6f)" % y)

    print("log-utility value r=0.02, lam=0.3, K=1 (expect r*K + lam^2*K/2):")
    print("  formula     :", repr(0.02 + 0.045))

    # moments of a mean-reverting Gaussian state at t=1 for
    # kappa=1, theta=0.05, beta=0.3, mu0=0.2
    m = math.exp(-1.0) * 0.2 + 0.05 * (1 - math.exp(-1.0))
    s2 = 0.3 ** 2 * (1 - math.exp(-2.0)) / 2.0
    c, q = gauss_square_exp(d=0.5, m=m, s=math.sqrt(s2))
    print("gaussian square-exp moment d=0.5, m=%.6f, s^2=%.6f:" % (m, s2))
    print("  closed      :", repr(c))
    print("  quadrature  :", repr(q))

    c, q = lognormal_ratio_moment(g=-2.0, lam=0.3, dt=0.2)
    print("lognormal ratio moment g=-2, lam=0.3, dt=0.2:")
    print("  closed      :", repr(c))
    print("  quadrature  :", repr(q))


if __name__ == "__main__":
    main()
