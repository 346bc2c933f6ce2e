"""High-precision oracle for the dyadic two-point market sums.

Rebuilds the level sequences for U(a) = -1/a (power p = -1) in 50-digit
mpmath arithmetic, completely independently of the package, and prints
the exact-to-50-digits terminal and exit values that the float64
implementation is tested against.

For p=-1: I(y) = y^(-1/2), x_k = 1/(k 2^k), a*I(a) = sqrt(a),
I(b) = 1/sqrt(b).  The halving/doubling chains are integer powers of two,
so the float64 build constructs the exact same a_k, b_k.

Identity worth noting: for p=-1, U(I(y)) = -sqrt(y) and Y*I(Y) = sqrt(Y),
so E[U(I(Y_k))] = -E[Y_k I(Y_k)] and the terminal value equals -x0.

Run:  python3 tools/oracles/two_point_market.py
"""

import mpmath as mp

mp.mp.dps = 50

N_MAX = 20
N_EXT = 64  # far past the float implementation's truncation


def build_levels(n_levels):
    levels = []
    a_prev, b_prev = mp.mpf(1), mp.mpf(1)
    for k in range(1, n_levels + 1):
        x = 1 / (mp.mpf(k) * mp.power(2, k))
        a = a_prev / 2
        while not (mp.sqrt(a) < x / 2):
            a /= 2
        b = 2 * b_prev
        while not (1 / mp.sqrt(b) < x / 2):
            b *= 2
        p = (b - 1) / (b - a)
        omp = (1 - a) / (b - a)
        levels.append((a, b, p, omp, x))
        a_prev, b_prev = a, b
    return levels


def u_term(a, b, p, omp):
    # E[U(I(Y))] = -(p*sqrt(a) + omp*sqrt(b))
    return -(p * mp.sqrt(a) + omp * mp.sqrt(b))


def m_term(a, b, p, omp):
    # E[Y*I(Y)] = p*sqrt(a) + omp*sqrt(b)
    return p * mp.sqrt(a) + omp * mp.sqrt(b)


def main():
    levels = build_levels(N_EXT)
    for k in (1, 2, 3):
        a, b, p, omp, x = levels[k - 1]
        print("level %d: a=%s b=%s x=%s" % (k, a, b, x))

    terminal = mp.fsum(
        u_term(*lv[:4]) * mp.power(2, -(k + 1)) for k, lv in enumerate(levels)
    )
    print("terminal (to n=64):", mp.nstr(terminal, 20))
    x0 = -terminal
    print("x0 = -terminal    :", mp.nstr(x0, 20))

    for n in (1, 5, 10, 15, 20):
        head = mp.fsum(
            u_term(*levels[k - 1][:4]) * mp.power(2, -k) for k in range(1, n)
        )
        m_n = m_term(*levels[n - 1][:4])
        inner = mp.fsum(
            m_term(*levels[k - 1][:4]) * mp.power(2, -(k - n))
            for k in range(n + 1, N_EXT + 1)
        )
        # U(m) = -1/m for p=-1
        val = head - (1 / m_n) * mp.power(2, -n) - (1 / inner) * mp.power(2, -n)
        print("premature(%2d): %s" % (n, mp.nstr(val, 20)))

    # log-utility override: U(I(y)) = -log y, Y*I(Y) = 1
    term_log = mp.fsum(
        -(lv[2] * mp.log(lv[0]) + lv[3] * mp.log(lv[1])) * mp.power(2, -(k + 1))
        for k, lv in enumerate(levels)
    )
    print("terminal under log:", mp.nstr(term_log, 20))
    for n in (10, 15, 20):
        head = mp.fsum(
            -(levels[k - 1][2] * mp.log(levels[k - 1][0])
              + levels[k - 1][3] * mp.log(levels[k - 1][1])) * mp.power(2, -k)
            for k in range(1, n)
        )
        # both remaining terms are U(1) = 0 under log
        print("log premature(%2d): %s  gap=%s"
              % (n, mp.nstr(head, 20), mp.nstr(term_log - head, 8)))


if __name__ == "__main__":
    main()
