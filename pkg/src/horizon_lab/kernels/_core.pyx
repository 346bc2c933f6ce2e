# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the simulation kernels.

Mirrors kernels/pyref.py statement for statement; the two backends must
produce bit-identical arrays.  Keep arithmetic expression order in sync
with pyref.py when editing.  Parallelism is over paths; draws are keyed by
(seed, stream, path, step), so thread count cannot affect output.
"""

from cython.parallel cimport prange
from libc.math cimport sqrt, fabs, frexp

import numpy as np

ctypedef unsigned long long u64

cdef u64 _M0 = 0xD2511F53ULL
cdef u64 _M1 = 0xCD9E8D57ULL
cdef u64 _W0 = 0x9E3779B9ULL
cdef u64 _W1 = 0xBB67AE85ULL
cdef u64 _MASK32 = 0xFFFFFFFFULL

cdef double _TWO_NEG52 = 1.0 / 4503599627370496.0
cdef double _LN2 = 0.6931471805599453


cdef inline void _block(u64 step, u64 path, u64 stream, u64 k0_init,
                        u64 k1_init, double *u1, double *u2) noexcept nogil:
    cdef u64 c0 = step & _MASK32
    cdef u64 c1 = path & _MASK32
    cdef u64 c2 = stream & _MASK32
    cdef u64 c3 = path >> 32
    cdef u64 k0 = k0_init
    cdef u64 k1 = k1_init
    cdef u64 p0, p1, hi0, lo0, hi1, lo1, n0, n1, n2, n3, bits
    cdef int r
    for r in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> 32
        lo0 = p0 & _MASK32
        hi1 = p1 >> 32
        lo1 = p1 & _MASK32
        n0 = hi1 ^ c1 ^ k0
        n1 = lo1
        n2 = hi0 ^ c3 ^ k1
        n3 = lo0
        c0 = n0
        c1 = n1
        c2 = n2
        c3 = n3
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    bits = ((c0 >> 6) << 26) | (c1 >> 6)
    u1[0] = (<double> bits + 0.5) * _TWO_NEG52
    bits = ((c2 >> 6) << 26) | (c3 >> 6)
    u2[0] = (<double> bits + 0.5) * _TWO_NEG52


cdef inline double _plog(double x) noexcept nogil:
    cdef int e
    cdef double m = frexp(x, &e)
    cdef double s = (m - 1.0) / (m + 1.0)
    cdef double s2 = s * s
    cdef double acc = 1.0 / 37.0
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
    return (<double> e) * _LN2 + (2.0 * s) * acc


cdef inline double _ppnd16(double u) noexcept nogil:
    cdef double q = u - 0.5
    cdef double r, num, den, val
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        num = 2.5090809287301226727e3
        num = num * r + 3.3430575583588128105e4
        num = num * r + 6.7265770927008700853e4
        num = num * r + 4.5921953931549871457e4
        num = num * r + 1.3731693765509461125e4
        num = num * r + 1.9715909503065514427e3
        num = num * r + 1.3314166789178437745e2
        num = num * r + 3.3871328727963666080e0
        den = 5.2264952788528545610e3
        den = den * r + 2.8729085735721942674e4
        den = den * r + 3.9307895800092710610e4
        den = den * r + 2.1213794301586595867e4
        den = den * r + 5.3941960214247511077e3
        den = den * r + 6.8718700749205790830e2
        den = den * r + 4.2313330701600911252e1
        den = den * r + 1.0
        return q * (num / den)
    if q < 0.0:
        r = u
    else:
        r = 1.0 - u
    r = sqrt(-_plog(r))
    if r <= 5.0:
        r = r - 1.6
        num = 7.74545014278341407640e-4
        num = num * r + 2.27238449892691845833e-2
        num = num * r + 2.41780725177450611770e-1
        num = num * r + 1.27045825245236838258e0
        num = num * r + 3.64784832476320460504e0
        num = num * r + 5.76949722146069140550e0
        num = num * r + 4.63033784615654529590e0
        num = num * r + 1.42343711074968357734e0
        den = 1.05075007164441684324e-9
        den = den * r + 5.47593808499534494600e-4
        den = den * r + 1.51986665636164571966e-2
        den = den * r + 1.48103976427480074590e-1
        den = den * r + 6.89767334985100004550e-1
        den = den * r + 1.67638483018380384940e0
        den = den * r + 2.05319162663775882187e0
        den = den * r + 1.0
        val = num / den
    else:
        r = r - 5.0
        num = 2.01033439929228813265e-7
        num = num * r + 2.71155556874348757815e-5
        num = num * r + 1.24266094738807843860e-3
        num = num * r + 2.65321895265761230930e-2
        num = num * r + 2.96560571828504891230e-1
        num = num * r + 1.78482653991729133580e0
        num = num * r + 5.46378491116411436990e0
        num = num * r + 6.65790464350110377720e0
        den = 2.04426310338993978564e-15
        den = den * r + 1.42151175831644588870e-7
        den = den * r + 1.84631831751005468180e-5
        den = den * r + 7.86869131145613259100e-4
        den = den * r + 1.48753612908506148525e-2
        den = den * r + 1.36929880922735805310e-1
        den = den * r + 5.99832206555887937690e-1
        den = den * r + 1.0
        val = num / den
    if q < 0.0:
        return -val
    return val


def uniform_pairs(seed, stream, n):
    """Two uniforms in (0,1) per index 0..n-1, from the block at step 0."""
    cdef u64 seed_u = <u64> (int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef u64 k0 = seed_u & _MASK32
    cdef u64 k1 = (seed_u >> 32) & _MASK32
    cdef u64 stream_u = <u64> (int(stream) & 0xFFFFFFFF)
    cdef Py_ssize_t m = int(n)
    out1 = np.empty(m, dtype=np.float64)
    out2 = np.empty(m, dtype=np.float64)
    cdef double[::1] o1 = out1
    cdef double[::1] o2 = out2
    cdef Py_ssize_t i
    cdef double u1, u2
    with nogil:
        for i in range(m):
            _block(0, <u64> i, stream_u, k0, k1, &u1, &u2)
            o1[i] = u1
            o2[i] = u2
    return out1, out2


def norm_ppf(u):
    """Inverse standard normal CDF, Wichura's PPND16 rational fits."""
    # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d and
    # scalar callers would get back a length-1 array
    a = np.asarray(u, dtype=np.float64)
    flat = a.ravel()
    out = np.empty_like(flat)
    cdef double[::1] fi = flat
    cdef double[::1] fo = out
    cdef Py_ssize_t i, m = fi.shape[0]
    with nogil:
        for i in range(m):
            fo[i] = _ppnd16(fi[i])
    return out.reshape(a.shape)


def portable_log(x):
    """Natural log via frexp plus a fixed-length atanh series."""
    a = np.asarray(x, dtype=np.float64)
    flat = a.ravel()
    out = np.empty_like(flat)
    cdef double[::1] fi = flat
    cdef double[::1] fo = out
    cdef Py_ssize_t i, m = fi.shape[0]
    with nogil:
        for i in range(m):
            fo[i] = _plog(fi[i])
    return out.reshape(a.shape)


def ou_paths(seed, stream, n_paths, mu0, theta, dt, sqdt, e1, cn1, cn2,
             keep, want_db, threads):
    """State with a Gaussian linear transition, plus the density log."""
    cdef double[::1] dt_v = np.ascontiguousarray(dt, dtype=np.float64)
    cdef double[::1] sqdt_v = np.ascontiguousarray(sqdt, dtype=np.float64)
    cdef double[::1] e1_v = np.ascontiguousarray(e1, dtype=np.float64)
    cdef double[::1] cn1_v = np.ascontiguousarray(cn1, dtype=np.float64)
    cdef double[::1] cn2_v = np.ascontiguousarray(cn2, dtype=np.float64)
    cdef long long[::1] keep_v = np.ascontiguousarray(keep, dtype=np.int64)
    cdef int n_steps = dt_v.shape[0]
    cdef int n_keep = keep_v.shape[0]
    cdef Py_ssize_t n = int(n_paths)
    cdef int nthreads = max(1, int(threads))
    cdef int wdb = 1 if want_db else 0
    cdef u64 seed_u = <u64> (int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef u64 k0 = seed_u & _MASK32
    cdef u64 k1 = (seed_u >> 32) & _MASK32
    cdef u64 stream_u = <u64> (int(stream) & 0xFFFFFFFF)
    cdef double mu0_d = float(mu0)
    cdef double theta_d = float(theta)

    out_state_arr = np.empty((n, n_keep), dtype=np.float64)
    out_logz_arr = np.empty((n, n_keep), dtype=np.float64)
    if wdb:
        db_arr = np.empty((n, n_steps), dtype=np.float64)
    else:
        db_arr = np.empty((1, 1), dtype=np.float64)
    cdef double[:, ::1] out_state = out_state_arr
    cdef double[:, ::1] out_logz = out_logz_arr
    cdef double[:, ::1] db_v = db_arr

    cdef Py_ssize_t i
    cdef int j, kpos
    cdef double state, logz, u1, u2, z1, z2, dB
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        state = mu0_d
        logz = 0.0
        kpos = 0
        # plain assignments force per-thread copies; _block writes through
        # pointers, which alone would leave u1/u2 shared across threads
        u1 = 0.0
        u2 = 0.0
        if n_keep > 0 and keep_v[0] == 0:
            out_state[i, 0] = state
            out_logz[i, 0] = logz
            kpos = 1
        for j in range(n_steps):
            _block(<u64> j, <u64> i, stream_u, k0, k1, &u1, &u2)
            z1 = _ppnd16(u1)
            z2 = _ppnd16(u2)
            dB = sqdt_v[j] * z1
            if wdb:
                db_v[i, j] = dB
            logz = logz - state * dB - (0.5 * dt_v[j]) * (state * state)
            state = theta_d + (state - theta_d) * e1_v[j] + (cn1_v[j] * z1 + cn2_v[j] * z2)
            if kpos < n_keep and keep_v[kpos] == j + 1:
                out_state[i, kpos] = state
                out_logz[i, kpos] = logz
                kpos = kpos + 1
    return out_state_arr, out_logz_arr, (db_arr if wdb else None)


def feller_paths(seed, stream, n_paths, v0, lc0, lc1, lc2, lc3, rho, rhoc,
                 kdt, ktheta_dt, beta_sqdt, dt, sqdt, keep, want_db, threads):
    """Square-root state (full-truncation Euler) plus the density log."""
    cdef double[::1] dt_v = np.ascontiguousarray(dt, dtype=np.float64)
    cdef double[::1] sqdt_v = np.ascontiguousarray(sqdt, dtype=np.float64)
    cdef double[::1] kdt_v = np.ascontiguousarray(kdt, dtype=np.float64)
    cdef double[::1] ktheta_dt_v = np.ascontiguousarray(ktheta_dt, dtype=np.float64)
    cdef double[::1] beta_sqdt_v = np.ascontiguousarray(beta_sqdt, dtype=np.float64)
    cdef long long[::1] keep_v = np.ascontiguousarray(keep, dtype=np.int64)
    cdef int n_steps = dt_v.shape[0]
    cdef int n_keep = keep_v.shape[0]
    cdef Py_ssize_t n = int(n_paths)
    cdef int nthreads = max(1, int(threads))
    cdef int wdb = 1 if want_db else 0
    cdef u64 seed_u = <u64> (int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef u64 k0 = seed_u & _MASK32
    cdef u64 k1 = (seed_u >> 32) & _MASK32
    cdef u64 stream_u = <u64> (int(stream) & 0xFFFFFFFF)
    cdef double v0_d = float(v0)
    cdef double lc0_d = float(lc0)
    cdef double lc1_d = float(lc1)
    cdef double lc2_d = float(lc2)
    cdef double lc3_d = float(lc3)
    cdef double rho_d = float(rho)
    cdef double rhoc_d = float(rhoc)

    out_state_arr = np.empty((n, n_keep), dtype=np.float64)
    out_logz_arr = np.empty((n, n_keep), dtype=np.float64)
    if wdb:
        db_arr = np.empty((n, n_steps), dtype=np.float64)
    else:
        db_arr = np.empty((1, 1), dtype=np.float64)
    cdef double[:, ::1] out_state = out_state_arr
    cdef double[:, ::1] out_logz = out_logz_arr
    cdef double[:, ::1] db_v = db_arr

    cdef Py_ssize_t i
    cdef int j, kpos
    cdef double v, logz, u1, u2, z1, z2, dB, vp, lam, dw
    for i in prange(n, nogil=True, num_threads=nthreads, schedule="static"):
        v = v0_d
        logz = 0.0
        kpos = 0
        # see ou_paths: keep u1/u2 thread-private despite pointer writes
        u1 = 0.0
        u2 = 0.0
        if n_keep > 0 and keep_v[0] == 0:
            out_state[i, 0] = v
            out_logz[i, 0] = logz
            kpos = 1
        for j in range(n_steps):
            _block(<u64> j, <u64> i, stream_u, k0, k1, &u1, &u2)
            z1 = _ppnd16(u1)
            z2 = _ppnd16(u2)
            if v > 0.0:
                vp = v
            else:
                vp = 0.0
            if lc0_d != 0.0:
                lam = lc0_d / sqrt(lc1_d + vp) + lc2_d * sqrt(lc3_d + vp)
            else:
                lam = lc2_d * sqrt(lc3_d + vp)
            dB = sqdt_v[j] * z1
            if wdb:
                db_v[i, j] = dB
            logz = logz - lam * dB - (0.5 * dt_v[j]) * (lam * lam)
            dw = rho_d * z1 + rhoc_d * z2
            v = v + (ktheta_dt_v[j] - kdt_v[j] * vp) + (beta_sqdt_v[j] * sqrt(vp)) * dw
            if kpos < n_keep and keep_v[kpos] == j + 1:
                out_state[i, kpos] = v
                out_logz[i, kpos] = logz
                kpos = kpos + 1
    return out_state_arr, out_logz_arr, (db_arr if wdb else None)
