"""Pure-numpy backend for the simulation kernels.

The compiled backend in ``_core.pyx`` mirrors this module statement for
statement, and the two must produce bit-identical arrays.  That only works
because every step below sticks to operations that IEEE 754 defines exactly
(+, -, *, /, sqrt, frexp, integer ops) in a fixed evaluation order, and every
transcendental per-step coefficient (exp/erf style quantities) is precomputed
once in Python and passed in as data.  When editing either file, keep the
arithmetic expression order in sync with the other one.

Draws come from a counter-based block cipher in the Philox-4x32-10 family:
the two standard normals consumed by path ``i`` at step ``j`` are a pure
function of ``(seed, stream, i, j)``, so path-level parallelism and thread
count can never reorder or change the stream.
"""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_SH6 = np.uint64(6)
_SH26 = np.uint64(26)

# (n + 0.5) * 2**-52 maps a 52-bit integer into (0, 1); every value is an
# exact double and the endpoints are excluded, so the inverse normal CDF
# below never sees 0 or 1.  (53 bits would round the top value to 1.0.)
_TWO_NEG52 = 1.0 / 4503599627370496.0

_LN2 = 0.6931471805599453


def _philox_block(step, path, stream, seed):
    """One Philox block per path: counter (step, path, stream, path>>32)."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    k0_init = np.uint64(seed & 0xFFFFFFFF)
    k1_init = np.uint64((seed >> 32) & 0xFFFFFFFF)
    c0 = np.full_like(path, np.uint64(int(step) & 0xFFFFFFFF))
    c1 = path & _MASK32
    c2 = np.full_like(path, np.uint64(int(stream) & 0xFFFFFFFF))
    c3 = path >> _SH32
    k0 = np.full_like(path, k0_init)
    k1 = np.full_like(path, k1_init)
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SH32
        lo0 = p0 & _MASK32
        hi1 = p1 >> _SH32
        lo1 = p1 & _MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _to_uniform(w_hi, w_lo):
    bits = ((w_hi >> _SH6) << _SH26) | (w_lo >> _SH6)
    return (bits.astype(np.float64) + 0.5) * _TWO_NEG52


def uniform_pairs(seed, stream, n):
    """Two uniforms in (0,1) per index 0..n-1, from the block at step 0."""
    path = np.arange(n, dtype=np.uint64)
    w0, w1, w2, w3 = _philox_block(0, path, stream, seed)
    return _to_uniform(w0, w1), _to_uniform(w2, w3)


def _normal_pair(step, path, stream, seed):
    w0, w1, w2, w3 = _philox_block(step, path, stream, seed)
    return norm_ppf(_to_uniform(w0, w1)), norm_ppf(_to_uniform(w2, w3))


def portable_log(x):
    """Natural log via frexp plus a fixed-length atanh series.

    Exists so both backends evaluate the identical operation sequence; libm
    log() is allowed to differ between the C library and numpy by an ulp,
    which would break bit parity.  Accuracy is better than 1 ulp for the
    mantissa range frexp produces (|s| <= 1/3 below).
    """
    x = np.asarray(x, dtype=np.float64)
    m, e = np.frexp(x)
    s = (m - 1.0) / (m + 1.0)
    s2 = s * s
    acc = np.full_like(s, 1.0 / 37.0)
    acc = acc * s2 + 1.0 / 35.0
    acc = acc * s2 + 1.0 / 33.0
    acc = acc * s2 + 1.0 / 31.0
    acc = acc * s2 + 1.0 / 29.0
    acc = acc * s2 + 1.0 / 27.0
    acc = acc * s2 + 1.0 / 25.0
    acc = acc * s2 + 1.0 / 23.0
    acc = acc * s2 + 1.0 / 21.0
    acc = acc * s2 + 1.0 / 19.0
    acc = acc * s2 + 1.0 / 17.0
    acc = acc * s2 + 1.0 / 15.0
    acc = acc * s2 + 1.0 / 13.0
    acc = acc * s2 + 1.0 / 11.0
    acc = acc * s2 + 1.0 / 9.0
    acc = acc * s2 + 1.0 / 7.0
    acc = acc * s2 + 1.0 / 5.0
    acc = acc * s2 + 1.0 / 3.0
    acc = acc * s2 + 1.0
    return e.astype(np.float64) * _LN2 + (2.0 * s) * acc


def norm_ppf(u):
    """Inverse standard normal CDF, Wichura's PPND16 rational fits."""
    u = np.asarray(u, dtype=np.float64)
    q = u - 0.5
    with np.errstate(all="ignore"):
        r = 0.180625 - q * q
        num = np.full_like(q, 2.5090809287301226727e3)
        num = num * r + 3.3430575583588128105e4
        num = num * r + 6.7265770927008700853e4
        num = num * r + 4.5921953931549871457e4
        num = num * r + 1.3731693765509461125e4
        num = num * r + 1.9715909503065514427e3
        num = num * r + 1.3314166789178437745e2
        num = num * r + 3.3871328727963666080e0
        den = np.full_like(q, 5.2264952788528545610e3)
        den = den * r + 2.8729085735721942674e4
        den = den * r + 3.9307895800092710610e4
        den = den * r + 2.1213794301586595867e4
        den = den * r + 5.3941960214247511077e3
        den = den * r + 6.8718700749205790830e2
        den = den * r + 4.2313330701600911252e1
        den = den * r + 1.0
        central_val = q * (num / den)

        rt = np.where(q < 0.0, u, 1.0 - u)
        rt = np.sqrt(-portable_log(rt))

        r = rt - 1.6
        num = np.full_like(q, 7.74545014278341407640e-4)
        num = num * r + 2.27238449892691845833e-2
        num = num * r + 2.41780725177450611770e-1
        num = num * r + 1.27045825245236838258e0
        num = num * r + 3.64784832476320460504e0
        num = num * r + 5.76949722146069140550e0
        num = num * r + 4.63033784615654529590e0
        num = num * r + 1.42343711074968357734e0
        den = np.full_like(q, 1.05075007164441684324e-9)
        den = den * r + 5.47593808499534494600e-4
        den = den * r + 1.51986665636164571966e-2
        den = den * r + 1.48103976427480074590e-1
        den = den * r + 6.89767334985100004550e-1
        den = den * r + 1.67638483018380384940e0
        den = den * r + 2.05319162663775882187e0
        den = den * r + 1.0
        near_val = num / den

        r = rt - 5.0
        num = np.full_like(q, 2.01033439929228813265e-7)
        num = num * r + 2.71155556874348757815e-5
        num = num * r + 1.24266094738807843860e-3
        num = num * r + 2.65321895265761230930e-2
        num = num * r + 2.96560571828504891230e-1
        num = num * r + 1.78482653991729133580e0
        num = num * r + 5.46378491116411436990e0
        num = num * r + 6.65790464350110377720e0
        den = np.full_like(q, 2.04426310338993978564e-15)
        den = den * r + 1.42151175831644588870e-7
        den = den * r + 1.84631831751005468180e-5
        den = den * r + 7.86869131145613259100e-4
        den = den * r + 1.48753612908506148525e-2
        den = den * r + 1.36929880922735805310e-1
        den = den * r + 5.99832206555887937690e-1
        den = den * r + 1.0
        far_val = num / den

        tail_val = np.where(rt <= 5.0, near_val, far_val)
        tail_val = np.where(q < 0.0, -tail_val, tail_val)
        return np.where(np.abs(q) <= 0.425, central_val, tail_val)


def ou_paths(seed, stream, n_paths, mu0, theta, dt, sqdt, e1, cn1, cn2,
             keep, want_db, threads):
    """State with a Gaussian linear transition, plus the density log.

    Per step j (left endpoint state mu, Brownian increment dB = sqdt*z1):

        logz <- logz - mu*dB - 0.5*dt*(mu*mu)
        mu   <- theta + (mu - theta)*e1[j] + (cn1[j]*z1 + cn2[j]*z2)

    e1/cn1/cn2 encode the exact one-step law of the state; with e1=1 and
    cn1=cn2=0 the state is frozen and logz is an exact lognormal martingale.
    ``threads`` is accepted for signature parity and ignored here.
    """
    dt = np.asarray(dt, dtype=np.float64)
    sqdt = np.asarray(sqdt, dtype=np.float64)
    e1 = np.asarray(e1, dtype=np.float64)
    cn1 = np.asarray(cn1, dtype=np.float64)
    cn2 = np.asarray(cn2, dtype=np.float64)
    keep = np.asarray(keep, dtype=np.int64)
    n_steps = dt.shape[0]
    n_keep = keep.shape[0]

    path = np.arange(n_paths, dtype=np.uint64)
    state = np.full(n_paths, float(mu0))
    logz = np.zeros(n_paths)
    out_state = np.empty((n_paths, n_keep))
    out_logz = np.empty((n_paths, n_keep))
    db = np.empty((n_paths, n_steps)) if want_db else None

    kpos = 0
    if n_keep > 0 and keep[0] == 0:
        out_state[:, 0] = state
        out_logz[:, 0] = logz
        kpos = 1
    for j in range(n_steps):
        z1, z2 = _normal_pair(j, path, stream, seed)
        dB = sqdt[j] * z1
        if want_db:
            db[:, j] = dB
        logz = logz - state * dB - (0.5 * dt[j]) * (state * state)
        state = theta + (state - theta) * e1[j] + (cn1[j] * z1 + cn2[j] * z2)
        if kpos < n_keep and keep[kpos] == j + 1:
            out_state[:, kpos] = state
            out_logz[:, kpos] = logz
            kpos += 1
    return out_state, out_logz, db


def feller_paths(seed, stream, n_paths, v0, lc0, lc1, lc2, lc3, rho, rhoc,
                 kdt, ktheta_dt, beta_sqdt, dt, sqdt, keep, want_db, threads):
    """Square-root state (full-truncation Euler) plus the density log.

    The market price of risk is lam = lc0/sqrt(lc1+v+) + lc2*sqrt(lc3+v+)
    with v+ = max(v, 0); v+ also enters the drift and diffusion of v, the
    standard full-truncation scheme.  The state Brownian is correlated with
    the pricing Brownian through (rho, rhoc).
    """
    dt = np.asarray(dt, dtype=np.float64)
    sqdt = np.asarray(sqdt, dtype=np.float64)
    kdt = np.asarray(kdt, dtype=np.float64)
    ktheta_dt = np.asarray(ktheta_dt, dtype=np.float64)
    beta_sqdt = np.asarray(beta_sqdt, dtype=np.float64)
    keep = np.asarray(keep, dtype=np.int64)
    n_steps = dt.shape[0]
    n_keep = keep.shape[0]

    path = np.arange(n_paths, dtype=np.uint64)
    v = np.full(n_paths, float(v0))
    logz = np.zeros(n_paths)
    out_state = np.empty((n_paths, n_keep))
    out_logz = np.empty((n_paths, n_keep))
    db = np.empty((n_paths, n_steps)) if want_db else None

    kpos = 0
    if n_keep > 0 and keep[0] == 0:
        out_state[:, 0] = v
        out_logz[:, 0] = logz
        kpos = 1
    for j in range(n_steps):
        z1, z2 = _normal_pair(j, path, stream, seed)
        vp = np.maximum(v, 0.0)
        if lc0 != 0.0:
            lam = lc0 / np.sqrt(lc1 + vp) + lc2 * np.sqrt(lc3 + vp)
        else:
            lam = lc2 * np.sqrt(lc3 + vp)
        dB = sqdt[j] * z1
        if want_db:
            db[:, j] = dB
        logz = logz - lam * dB - (0.5 * dt[j]) * (lam * lam)
        dw = rho * z1 + rhoc * z2
        v = v + (ktheta_dt[j] - kdt[j] * vp) + (beta_sqdt[j] * np.sqrt(vp)) * dw
        if kpos < n_keep and keep[kpos] == j + 1:
            out_state[:, kpos] = v
            out_logz[:, kpos] = logz
            kpos += 1
    return out_state, out_logz, db
