"""Pure NumPy versions of the compiled kernels in ``_ckernels.pyx``.

Signatures, buffer layouts and return codes are identical so either module
can be dropped in behind :mod:`chmm.kernels`.
"""

import math

import numpy as np


def _block(data, block_ptr, offsets, i, j):
    p = block_ptr[i, j]
    if p < 0:
        return None
    mi = offsets[i + 1] - offsets[i]
    mj = offsets[j + 1] - offsets[j]
    return data[p:p + mi * mj].reshape(mi, mj)


def forward(data, block_ptr, offsets, prior, obs, ptr, alpha, log_c):
    i = obs[0]
    a = prior[offsets[i]:offsets[i + 1]]
    c = a.sum()
    if c <= 0.0:
        return 0
    a = a / c
    alpha[ptr[0]:ptr[1]] = a
    log_c[0] = math.log(c)
    for n in range(1, len(obs)):
        j = obs[n]
        blk = _block(data, block_ptr, offsets, i, j)
        if blk is None:
            return n
        a = a @ blk
        c = a.sum()
        if c <= 0.0:
            return n
        a /= c
        alpha[ptr[n]:ptr[n + 1]] = a
        log_c[n] = math.log(c)
        i = j
    return -1


def backward(data, block_ptr, offsets, obs, ptr, beta, log_d):
    N = len(obs)
    j = obs[N - 1]
    b = np.ones(offsets[j + 1] - offsets[j])
    beta[ptr[N - 1]:ptr[N]] = b
    log_d[N - 1] = 0.0
    for n in range(N - 2, -1, -1):
        i = obs[n]
        blk = _block(data, block_ptr, offsets, i, j)
        if blk is None:
            return n
        b = blk @ b
        d = b.sum()
        if d <= 0.0:
            return n
        b /= d
        beta[ptr[n]:ptr[n + 1]] = b
        log_d[n] = math.log(d)
        j = i
    return -1


def accumulate_outer(block_ptr, offsets, obs, ptr, alpha, beta, log_d, acc):
    for n in range(len(obs) - 1):
        i, j = obs[n], obs[n + 1]
        p = block_ptr[i, j]
        a = alpha[ptr[n]:ptr[n + 1]]
        b_next = beta[ptr[n + 1]:ptr[n + 2]]
        z = a @ beta[ptr[n]:ptr[n + 1]] * math.exp(log_d[n])
        if z <= 0.0:
            return n
        acc[p:p + a.size * b_next.size] += np.outer(a, b_next / z).ravel()
    return -1


def viterbi(data, block_ptr, offsets, prior, obs, ptr, delta_buf, backptr, path, log_s):
    N = len(obs)
    i = obs[0]
    delta = prior[offsets[i]:offsets[i + 1]].copy()
    s = delta.max()
    if s <= 0.0:
        return 0
    delta /= s
    log_s[0] = math.log(s)
    for n in range(1, N):
        j = obs[n]
        blk = _block(data, block_ptr, offsets, i, j)
        if blk is None:
            return n
        scores = delta[:, None] * blk
        bp = scores.argmax(axis=0)
        delta = scores[bp, np.arange(blk.shape[1])]
        backptr[ptr[n]:ptr[n + 1]] = bp
        s = delta.max()
        if s <= 0.0:
            return n
        delta /= s
        log_s[n] = math.log(s)
        i = j
    path[N - 1] = int(delta.argmax())
    for n in range(N - 1, 0, -1):
        path[n - 1] = backptr[ptr[n] + path[n]]
    return -1


def dense_forward(trans, emit, prior, obs, alpha, log_c):
    a = prior * emit[:, obs[0]]
    c = a.sum()
    if c <= 0.0:
        return 0
    alpha[0] = a / c
    log_c[0] = math.log(c)
    for n in range(1, len(obs)):
        a = (alpha[n - 1] @ trans) * emit[:, obs[n]]
        c = a.sum()
        if c <= 0.0:
            return n
        alpha[n] = a / c
        log_c[n] = math.log(c)
    return -1


def dense_backward(trans, emit, obs, beta, log_d, work):
    N = len(obs)
    beta[N - 1] = 1.0
    log_d[N - 1] = 0.0
    for n in range(N - 2, -1, -1):
        b = trans @ (emit[:, obs[n + 1]] * beta[n + 1])
        d = b.sum()
        if d <= 0.0:
            return n
        beta[n] = b / d
        log_d[n] = math.log(d)
    return -1


def dense_accumulate(emit, obs, alpha, beta, log_d, outer_acc, emit_acc, work):
    N = len(obs)
    z_all = np.einsum("nh,nh->n", alpha, beta)
    if np.any(z_all <= 0.0):
        return int(np.argmax(z_all <= 0.0))
    gamma = alpha * beta / z_all[:, None]
    np.add.at(emit_acc.T, obs, gamma)
    if N > 1:
        z = z_all[:-1] * np.exp(log_d[:-1])
        right = emit[:, obs[1:]].T * beta[1:] / z[:, None]
        outer_acc += alpha[:-1].T @ right
    return -1


def online_pass(data, block_ptr, offsets, entry_rows, first_prior, obs, windows, stat,
                init_rows, init_weight, lam, gamma1):
    sizes = np.diff(offsets)
    H = int(offsets[-1])
    flat = np.ones(H)
    for w, (lo, hi) in enumerate(windows):
        seg = obs[lo:hi]
        ptr = np.zeros(seg.size + 1, dtype=np.int64)
        np.cumsum(sizes[seg], out=ptr[1:])
        alpha = np.zeros(int(ptr[-1]))
        beta = np.zeros(int(ptr[-1]))
        log_c = np.zeros(seg.size)
        log_d = np.zeros(seg.size)
        prior = first_prior if w == 0 else flat
        if forward(data, block_ptr, offsets, prior, seg, ptr, alpha, log_c) >= 0:
            return w
        if backward(data, block_ptr, offsets, seg, ptr, beta, log_d) >= 0:
            return w
        acc = np.zeros(data.size)
        if accumulate_outer(block_ptr, offsets, seg, ptr, alpha, beta, log_d, acc) >= 0:
            return w
        if w == 0:
            m = sizes[seg[0]]
            g = alpha[:m] * beta[:m]
            gamma1[:] = 0.0
            gamma1[offsets[seg[0]]:offsets[seg[0]] + m] = g / g.sum()
        init_weight *= lam
        stat *= lam
        stat += (1.0 - lam) * acc * data
        counts = stat + init_weight * init_rows
        rows = np.bincount(entry_rows, weights=counts, minlength=H)[entry_rows]
        keep = rows > 0.0
        data[keep] = counts[keep] / rows[keep]
    return -1
