"""Independent check of the mean-reverting-drift value function.

Integrates the (a, b, c) ODE system with a plain fixed-step RK4 (no scipy,
no package code) and compares against the closed forms used by the tests:

  c' = q0 + q1*c + q2*c^2,  q0 = p/(p-1)^2, q1 = -2*(kappa + beta*p/(p-1)),
  q2 = beta^2
  b' = kappa*theta*c + b*(beta^2*c - kappa - beta*p/(p-1))
  a' = kappa*theta*b + (beta^2/2)*(b^2 + c)

For kappa=0, theta=0.05, beta=1, p=0.5, mu0=0.5 the quadratic has
q0=2, q1=2, q2=1, so c(s) = tan(s + pi/4) - 1 with pole at s* = pi/4,
b == 0, and a(K) = 0.5*(log(cos(pi/4)/cos(K + pi/4)) - K).  The growth
factor is E(K) = exp(a + b*mu0 + c*mu0^2/2).

Run:  python3 tools/oracles/riccati_rk4.py
"""

import math

KAPPA, THETA, BETA, MU0, P = 0.0, 0.05, 1.0, 0.5, 0.5


def rhs(_, y):
    a, b, c = y
    pr = P / (P - 1.0)
    da = KAPPA * THETA * b + 0.5 * BETA ** 2 * (b * b + c)
    db = KAPPA * THETA * c + b * (BETA ** 2 * c - KAPPA - BETA * pr)
    dc = P / (P - 1.0) ** 2 - 2.0 * c * (KAPPA + BETA * pr) + BETA ** 2 * c * c
    return (da, db, dc)


def rk4(s_end, n_steps):
    h = s_end / n_steps
    s, y = 0.0, (0.0, 0.0, 0.0)
    for _ in range(n_steps):
        k1 = rhs(s, y)
        k2 = rhs(s + h / 2, tuple(y[i] + h / 2 * k1[i] for i in range(3)))
        k3 = rhs(s + h / 2, tuple(y[i] + h / 2 * k2[i] for i in range(3)))
        k4 = rhs(s + h, tuple(y[i] + h * k3[i] for i in range(3)))
        y = tuple(
            y[i] + h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            for i in range(3)
        )
        s += h
    return y


def analytic_abc(s):
    c = math.tan(s + math.pi / 4) - 1.0
    a = 0.5 * (math.log(math.cos(math.pi / 4) / math.cos(s + math.pi / 4)) - s)
    return a, 0.0, c


def main():
    pole = math.pi / 4
    print("analytic pole  :", repr(pole))
    for s in (0.1, 0.2, math.pi / 8, 0.3, 0.7):
        a_n, b_n, c_n = rk4(s, 200_000)
        a_x, b_x, c_x = analytic_abc(s)
        print(
            "s=%-8.5f  c: rk4=%.12f exact=%.12f (d=%.1e)   a: d=%.1e  b=%.1e"
            % (s, c_n, c_x, c_n - c_x, a_n - a_x, abs(b_n))
        )
    k = math.pi / 8
    a_x, _, c_x = analytic_abc(k)
    e = math.exp(a_x + 0.0 * MU0 + c_x * MU0 ** 2 / 2.0)
    print("E(pi/8) analytic :", repr(e))
    a_n, b_n, c_n = rk4(k, 400_000)
    e_n = math.exp(a_n + b_n * MU0 + c_n * MU0 ** 2 / 2.0)
    print("E(pi/8) rk4      :", repr(e_n))
    print("agreement        : %.2e" % abs(e - e_n))


if __name__ == "__main__":
    main()
