# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled message-passing kernels.

Block layout shared by every CHMM kernel: ``data`` holds all present blocks
back to back in row-major grid order, each block row-major. ``block_ptr[i, j]``
is the offset of block (i, j) in ``data`` or -1 when absent. Per-step message
vectors live in one flat array indexed by ``ptr``.

Every function returns -1 on success or the index of the first step whose
total mass is zero.
"""

from libc.math cimport log, exp as _exp
from libc.stdint cimport int64_t
from scipy.linalg.cython_blas cimport dgemv, dger, ddot
import numpy as np


cdef extern from *:
    """
    #if defined(__SSE2__) || defined(_M_X64)
    #include <xmmintrin.h>
    static unsigned int chmm_ftz_on(void) {
        unsigned int old = _mm_getcsr();
        _mm_setcsr(old | 0x8040);
        return old;
    }
    static void chmm_ftz_restore(unsigned int old) { _mm_setcsr(old); }
    #else
    static unsigned int chmm_ftz_on(void) { return 0; }
    static void chmm_ftz_restore(unsigned int old) { (void)old; }
    #endif
    """
    # flush-to-zero / denormals-are-zero while a kernel runs: decaying
    # online-EM entries otherwise drift into the subnormal range and every
    # multiply touching them becomes very slow
    unsigned int chmm_ftz_on() noexcept nogil
    void chmm_ftz_restore(unsigned int old) noexcept nogil


cdef inline double _sum(double* x, int n) noexcept nogil:
    cdef double s = 0.0
    cdef int k
    for k in range(n):
        s += x[k]
    return s


cdef inline void _scale(double* x, int n, double f) noexcept nogil:
    cdef int k
    for k in range(n):
        x[k] *= f


# BLAS call overhead dominates for the tiny blocks of toy models
DEF SMALL = 256


cdef inline void _vecmat(const double* blk, const double* x, double* y, int mi, int mj) noexcept nogil:
    # y = x @ blk, blk row-major (mi x mj)
    cdef int u, v
    cdef double xu
    for v in range(mj):
        y[v] = 0.0
    for u in range(mi):
        xu = x[u]
        for v in range(mj):
            y[v] += xu * blk[u * mj + v]


cdef inline void _matvec(const double* blk, const double* x, double* y, int mi, int mj) noexcept nogil:
    # y = blk @ x
    cdef int u, v
    cdef double acc
    for u in range(mi):
        acc = 0.0
        for v in range(mj):
            acc += blk[u * mj + v] * x[v]
        y[u] = acc


cdef inline void _outer_add(const double* a, const double* b, double w, double* out, int mi, int mj) noexcept nogil:
    cdef int u, v
    cdef double au
    for u in range(mi):
        au = a[u] * w
        for v in range(mj):
            out[u * mj + v] += au * b[v]


cdef Py_ssize_t _forward(const double[::1] data, const int64_t[:, ::1] block_ptr,
            const int64_t[::1] offsets, const double[::1] prior,
            const int64_t[::1] obs, const int64_t[::1] ptr,
            double[::1] alpha, double[::1] log_c) noexcept nogil:
    cdef Py_ssize_t N = obs.shape[0]
    cdef Py_ssize_t n, p
    cdef int64_t i, j, k
    cdef int mi, mj, one = 1
    cdef double c, zero = 0.0, unit = 1.0
    cdef char trans = b'N'
    i = obs[0]
    mi = <int>(offsets[i + 1] - offsets[i])
    for k in range(mi):
        alpha[k] = prior[offsets[i] + k]
    c = _sum(&alpha[0], mi)
    if c <= 0.0:
        return 0
    _scale(&alpha[0], mi, 1.0 / c)
    log_c[0] = log(c)
    for n in range(1, N):
        j = obs[n]
        p = block_ptr[i, j]
        if p < 0:
            return n
        mj = <int>(offsets[j + 1] - offsets[j])
        if mi * mj <= SMALL:
            _vecmat(&data[p], &alpha[ptr[n - 1]], &alpha[ptr[n]], mi, mj)
        else:
            # row-major (mi x mj) block == column-major (mj x mi)
            dgemv(&trans, &mj, &mi, &unit, <double*>&data[p], &mj,
                  &alpha[ptr[n - 1]], &one, &zero, &alpha[ptr[n]], &one)
        c = _sum(&alpha[ptr[n]], mj)
        if c <= 0.0:
            return n
        _scale(&alpha[ptr[n]], mj, 1.0 / c)
        log_c[n] = log(c)
        i = j
        mi = mj
    return -1


def forward(const double[::1] data, const int64_t[:, ::1] block_ptr,
            const int64_t[::1] offsets, const double[::1] prior,
            const int64_t[::1] obs, const int64_t[::1] ptr,
            double[::1] alpha, double[::1] log_c):
    cdef Py_ssize_t r
    cdef unsigned int mx
    with nogil:
        mx = chmm_ftz_on()
        r = _forward(data, block_ptr, offsets, prior, obs, ptr, alpha, log_c)
        chmm_ftz_restore(mx)
    return r

cdef Py_ssize_t _backward(const double[::1] data, const int64_t[:, ::1] block_ptr,
             const int64_t[::1] offsets, const int64_t[::1] obs,
             const int64_t[::1] ptr, double[::1] beta, double[::1] log_d) noexcept nogil:
    cdef Py_ssize_t N = obs.shape[0]
    cdef Py_ssize_t n, p
    cdef int64_t i, j, k
    cdef int mi, mj, one = 1
    cdef double d, zero = 0.0, unit = 1.0
    cdef char trans = b'T'
    j = obs[N - 1]
    mj = <int>(offsets[j + 1] - offsets[j])
    for k in range(mj):
        beta[ptr[N - 1] + k] = 1.0
    log_d[N - 1] = 0.0
    for n in range(N - 2, -1, -1):
        i = obs[n]
        p = block_ptr[i, j]
        if p < 0:
            return n
        mi = <int>(offsets[i + 1] - offsets[i])
        if mi * mj <= SMALL:
            _matvec(&data[p], &beta[ptr[n + 1]], &beta[ptr[n]], mi, mj)
        else:
            dgemv(&trans, &mj, &mi, &unit, <double*>&data[p], &mj,
                  &beta[ptr[n + 1]], &one, &zero, &beta[ptr[n]], &one)
        d = _sum(&beta[ptr[n]], mi)
        if d <= 0.0:
            return n
        _scale(&beta[ptr[n]], mi, 1.0 / d)
        log_d[n] = log(d)
        j = i
        mj = mi
    return -1


def backward(const double[::1] data, const int64_t[:, ::1] block_ptr,
             const int64_t[::1] offsets, const int64_t[::1] obs,
             const int64_t[::1] ptr, double[::1] beta, double[::1] log_d):
    cdef Py_ssize_t r
    cdef unsigned int mx
    with nogil:
        mx = chmm_ftz_on()
        r = _backward(data, block_ptr, offsets, obs, ptr, beta, log_d)
        chmm_ftz_restore(mx)
    return r

cdef Py_ssize_t _accumulate_outer(const int64_t[:, ::1] block_ptr, const int64_t[::1] offsets,
                     const int64_t[::1] obs, const int64_t[::1] ptr,
                     const double[::1] alpha, const double[::1] beta,
                     const double[::1] log_d, double[::1] acc) noexcept nogil:
    cdef Py_ssize_t N = obs.shape[0]
    cdef Py_ssize_t n, p
    cdef int64_t i, j
    cdef int mi, mj, one = 1
    cdef double z, w
    for n in range(N - 1):
        i = obs[n]
        j = obs[n + 1]
        p = block_ptr[i, j]
        mi = <int>(offsets[i + 1] - offsets[i])
        mj = <int>(offsets[j + 1] - offsets[j])
        # alpha_n^T T beta_{n+1} == d_n * alpha_n . beta_n
        z = ddot(&mi, <double*>&alpha[ptr[n]], &one, <double*>&beta[ptr[n]], &one)
        z *= _exp(log_d[n])
        if z <= 0.0:
            return n
        w = 1.0 / z
        if mi * mj <= SMALL:
            _outer_add(&alpha[ptr[n]], &beta[ptr[n + 1]], w, &acc[p], mi, mj)
        else:
            dger(&mj, &mi, &w, <double*>&beta[ptr[n + 1]], &one,
                 <double*>&alpha[ptr[n]], &one, &acc[p], &mj)
    return -1


def accumulate_outer(const int64_t[:, ::1] block_ptr, const int64_t[::1] offsets,
                     const int64_t[::1] obs, const int64_t[::1] ptr,
                     const double[::1] alpha, const double[::1] beta,
                     const double[::1] log_d, double[::1] acc):
    """acc[block] += outer(alpha_n, beta_{n+1}) / Z_n for every transition.

    Multiplying ``acc`` elementwise by ``data`` afterwards yields the
    expected transition counts.
    """
    cdef Py_ssize_t r
    cdef unsigned int mx
    with nogil:
        mx = chmm_ftz_on()
        r = _accumulate_outer(block_ptr, offsets, obs, ptr, alpha, beta, log_d, acc)
        chmm_ftz_restore(mx)
    return r

cdef Py_ssize_t _viterbi(const double[::1] data, const int64_t[:, ::1] block_ptr,
            const int64_t[::1] offsets, const double[::1] prior,
            const int64_t[::1] obs, const int64_t[::1] ptr,
            double[::1] delta_buf, int64_t[::1] backptr, int64_t[::1] path,
            double[::1] log_s) noexcept nogil:
    cdef Py_ssize_t N = obs.shape[0]
    cdef Py_ssize_t n, p
    cdef int64_t i, j, u, v, best_u, half
    cdef int mi, mj
    cdef double best, val, s
    cdef double* cur
    cdef double* nxt
    cdef double* tmp
    half = delta_buf.shape[0] // 2
    cur = &delta_buf[0]
    nxt = &delta_buf[half]
    i = obs[0]
    mi = <int>(offsets[i + 1] - offsets[i])
    s = 0.0
    for u in range(mi):
        cur[u] = prior[offsets[i] + u]
        if cur[u] > s:
            s = cur[u]
    if s <= 0.0:
        return 0
    _scale(cur, mi, 1.0 / s)
    log_s[0] = log(s)
    for n in range(1, N):
        j = obs[n]
        p = block_ptr[i, j]
        if p < 0:
            return n
        mj = <int>(offsets[j + 1] - offsets[j])
        s = 0.0
        for v in range(mj):
            best = -1.0
            best_u = 0
            for u in range(mi):
                val = cur[u] * data[p + u * mj + v]
                if val > best:
                    best = val
                    best_u = u
            nxt[v] = best
            backptr[ptr[n] + v] = best_u
            if best > s:
                s = best
        if s <= 0.0:
            return n
        _scale(nxt, mj, 1.0 / s)
        log_s[n] = log(s)
        tmp = cur
        cur = nxt
        nxt = tmp
        i = j
        mi = mj
    best = -1.0
    best_u = 0
    for u in range(mi):
        if cur[u] > best:
            best = cur[u]
            best_u = u
    path[N - 1] = best_u
    for n in range(N - 1, 0, -1):
        path[n - 1] = backptr[ptr[n] + path[n]]
    return -1


def viterbi(const double[::1] data, const int64_t[:, ::1] block_ptr,
            const int64_t[::1] offsets, const double[::1] prior,
            const int64_t[::1] obs, const int64_t[::1] ptr,
            double[::1] delta_buf, int64_t[::1] backptr, int64_t[::1] path,
            double[::1] log_s):
    """Max-product pass with per-step max normalization.

    ``delta_buf`` holds the current and next delta (2 * max block width).
    ``backptr`` uses the same flat layout as messages. Ties resolve to the
    lowest predecessor index.
    """
    cdef Py_ssize_t r
    cdef unsigned int mx
    with nogil:
        mx = chmm_ftz_on()
        r = _viterbi(data, block_ptr, offsets, prior, obs, ptr, delta_buf, backptr, path, log_s)
        chmm_ftz_restore(mx)
    return r

cdef Py_ssize_t _dense_forward(const double[:, ::1] trans, const double[:, ::1] emit,
                  const double[::1] prior, const int64_t[::1] obs,
                  double[:, ::1] alpha, double[::1] log_c) noexcept nogil:
    cdef Py_ssize_t N = obs.shape[0]
    cdef Py_ssize_t n
    cdef int H = <int>trans.shape[0], one = 1, h
    cdef double c, zero = 0.0, unit = 1.0
    cdef char tr = b'N'
    cdef int64_t x
    x = obs[0]
    for h in range(H):
        alpha[0, h] = prior[h] * emit[h, x]
    c = _sum(&alpha[0, 0], H)
    if c <= 0.0:
        return 0
    _scale(&alpha[0, 0], H, 1.0 / c)
    log_c[0] = log(c)
    for n in range(1, N):
        dgemv(&tr, &H, &H, &unit, <double*>&trans[0, 0], &H,
              &alpha[n - 1, 0], &one, &zero, &alpha[n, 0], &one)
        x = obs[n]
        for h in range(H):
            alpha[n, h] *= emit[h, x]
        c = _sum(&alpha[n, 0], H)
        if c <= 0.0:
            return n
        _scale(&alpha[n, 0], H, 1.0 / c)
        log_c[n] = log(c)
    return -1


def dense_forward(const double[:, ::1] trans, const double[:, ::1] emit,
                  const double[::1] prior, const int64_t[::1] obs,
                  double[:, ::1] alpha, double[::1] log_c):
    cdef Py_ssize_t r
    cdef unsigned int mx
    with nogil:
        mx = chmm_ftz_on()
        r = _dense_forward(trans, emit, prior, obs, alpha, log_c)
        chmm_ftz_restore(mx)
    return r

cdef Py_ssize_t _dense_backward(const double[:, ::1] trans, const double[:, ::1] emit,
                   const int64_t[::1] obs, double[:, ::1] beta,
                   double[::1] log_d, double[::1] work) noexcept nogil:
    cdef Py_ssize_t N = obs.shape[0]
    cdef Py_ssize_t n
    cdef int H = <int>trans.shape[0], one = 1, h
    cdef double d, zero = 0.0, unit = 1.0
    cdef char tr = b'T'
    cdef int64_t x
    for h in range(H):
        beta[N - 1, h] = 1.0
    log_d[N - 1] = 0.0
    for n in range(N - 2, -1, -1):
        x = obs[n + 1]
        for h in range(H):
            work[h] = emit[h, x] * beta[n + 1, h]
        dgemv(&tr, &H, &H, &unit, <double*>&trans[0, 0], &H,
              &work[0], &one, &zero, &beta[n, 0], &one)
        d = _sum(&beta[n, 0], H)
        if d <= 0.0:
            return n
        _scale(&beta[n, 0], H, 1.0 / d)
        log_d[n] = log(d)
    return -1


def dense_backward(const double[:, ::1] trans, const double[:, ::1] emit,
                   const int64_t[::1] obs, double[:, ::1] beta,
                   double[::1] log_d, double[::1] work):
    cdef Py_ssize_t r
    cdef unsigned int mx
    with nogil:
        mx = chmm_ftz_on()
        r = _dense_backward(trans, emit, obs, beta, log_d, work)
        chmm_ftz_restore(mx)
    return r

cdef Py_ssize_t _dense_accumulate(const double[:, ::1] emit, const int64_t[::1] obs,
                     const double[:, ::1] alpha, const double[:, ::1] beta,
                     const double[::1] log_d, double[:, ::1] outer_acc,
                     double[:, ::1] emit_acc, double[::1] work) noexcept nogil:
    cdef Py_ssize_t N = obs.shape[0]
    cdef Py_ssize_t n
    cdef int H = <int>emit.shape[0], one = 1, h
    cdef double z, w
    cdef int64_t x
    for n in range(N):
        z = ddot(&H, <double*>&alpha[n, 0], &one, <double*>&beta[n, 0], &one)
        if z <= 0.0:
            return n
        x = obs[n]
        for h in range(H):
            emit_acc[h, x] += alpha[n, h] * beta[n, h] / z
        if n == N - 1:
            break
        z *= _exp(log_d[n])
        x = obs[n + 1]
        for h in range(H):
            work[h] = emit[h, x] * beta[n + 1, h]
        w = 1.0 / z
        dger(&H, &H, &w, &work[0], &one, <double*>&alpha[n, 0], &one,
             &outer_acc[0, 0], &H)
    return -1


def dense_accumulate(const double[:, ::1] emit, const int64_t[::1] obs,
                     const double[:, ::1] alpha, const double[:, ::1] beta,
                     const double[::1] log_d, double[:, ::1] outer_acc,
                     double[:, ::1] emit_acc, double[::1] work):
    """Transition outer products (to be multiplied by T) and emission counts."""
    cdef Py_ssize_t r
    cdef unsigned int mx
    with nogil:
        mx = chmm_ftz_on()
        r = _dense_accumulate(emit, obs, alpha, beta, log_d, outer_acc, emit_acc, work)
        chmm_ftz_restore(mx)
    return r

cdef Py_ssize_t _online_pass(double[::1] data, const int64_t[:, ::1] block_ptr,
                 const int64_t[::1] offsets, const int64_t[::1] entry_rows,
                 const double[::1] first_prior, const double[::1] flat_prior,
                 const int64_t[::1] obs, const int64_t[:, ::1] windows,
                 double[::1] stat, const double[::1] init_rows, double init_weight,
                 double lam, double[::1] gamma1, int64_t[::1] ptr,
                 double[::1] alpha, double[::1] beta, double[::1] log_c,
                 double[::1] log_d, double[::1] acc, double[::1] rowsum) noexcept nogil:
    cdef Py_ssize_t W = windows.shape[0], E = data.shape[0], H = rowsum.shape[0]
    cdef Py_ssize_t w, n, e, lo, hi, N, r
    cdef int64_t s, k, m
    cdef double x, g
    for w in range(W):
        lo = windows[w, 0]
        hi = windows[w, 1]
        N = hi - lo
        ptr[0] = 0
        for n in range(N):
            s = obs[lo + n]
            ptr[n + 1] = ptr[n] + offsets[s + 1] - offsets[s]
        if w == 0:
            r = _forward(data, block_ptr, offsets, first_prior, obs[lo:hi], ptr, alpha, log_c)
        else:
            # later windows start mid-sequence: flat prior over the clones
            r = _forward(data, block_ptr, offsets, flat_prior, obs[lo:hi], ptr, alpha, log_c)
        if r >= 0:
            return w
        if _backward(data, block_ptr, offsets, obs[lo:hi], ptr, beta, log_d) >= 0:
            return w
        for e in range(E):
            acc[e] = 0.0
        if _accumulate_outer(block_ptr, offsets, obs[lo:hi], ptr, alpha, beta, log_d, acc) >= 0:
            return w
        if w == 0:
            s = obs[lo]
            m = offsets[s + 1] - offsets[s]
            g = 0.0
            for k in range(m):
                g += alpha[k] * beta[k]
            for k in range(gamma1.shape[0]):
                gamma1[k] = 0.0
            for k in range(m):
                gamma1[offsets[s] + k] = alpha[k] * beta[k] / g
        init_weight *= lam
        for k in range(H):
            rowsum[k] = 0.0
        for e in range(E):
            x = acc[e] * data[e]
            stat[e] = lam * stat[e] + (1.0 - lam) * x
            rowsum[entry_rows[e]] += stat[e] + init_weight * init_rows[e]
        for e in range(E):
            g = rowsum[entry_rows[e]]
            # rows with no mass keep their current values
            if g > 0.0:
                data[e] = (stat[e] + init_weight * init_rows[e]) / g
    return -1


def online_pass(double[::1] data, const int64_t[:, ::1] block_ptr,
                const int64_t[::1] offsets, const int64_t[::1] entry_rows,
                const double[::1] first_prior, const int64_t[::1] obs,
                const int64_t[:, ::1] windows, double[::1] stat,
                const double[::1] init_rows, double init_weight, double lam,
                double[::1] gamma1):
    """One online-EM sweep over ``windows`` of ``obs``, updating ``data`` and
    ``stat`` in place after every window.

    The first window starts from ``first_prior``, later ones from a flat
    prior. ``gamma1`` receives the first window's initial posterior. Returns
    -1 or the index of the first window with zero probability.
    """
    cdef Py_ssize_t H = offsets[offsets.shape[0] - 1]
    cdef Py_ssize_t longest = 0, w, r
    for w in range(windows.shape[0]):
        if windows[w, 1] - windows[w, 0] > longest:
            longest = windows[w, 1] - windows[w, 0]
    widest = 0
    for w in range(offsets.shape[0] - 1):
        widest = max(widest, offsets[w + 1] - offsets[w])
    buf = longest * widest
    alpha = np.zeros(buf)
    beta = np.zeros(buf)
    log_c = np.zeros(longest)
    log_d = np.zeros(longest)
    acc = np.zeros(data.shape[0])
    rowsum = np.zeros(H)
    flat = np.ones(H)
    ptr = np.zeros(longest + 1, dtype=np.int64)
    cdef double[::1] alpha_v = alpha, beta_v = beta, log_c_v = log_c, log_d_v = log_d
    cdef double[::1] acc_v = acc, rowsum_v = rowsum, flat_v = flat
    cdef int64_t[::1] ptr_v = ptr
    cdef unsigned int mx
    with nogil:
        mx = chmm_ftz_on()
        r = _online_pass(data, block_ptr, offsets, entry_rows, first_prior, flat_v, obs,
                         windows, stat, init_rows, init_weight, lam, gamma1, ptr_v,
                         alpha_v, beta_v, log_c_v, log_d_v, acc_v, rowsum_v)
        chmm_ftz_restore(mx)
    return r
