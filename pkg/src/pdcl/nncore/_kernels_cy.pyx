# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cython MLP kernels, drop-in compatible with ``_kernels_np``.

The hot path during training is thousands of forward/backward passes on
small dense layers, where Python/numpy dispatch overhead dominates. These
loops run entirely in C on double-precision memoryviews.
"""

import numpy as np

from libc.math cimport exp, log


cdef void _affine(double[:, ::1] a, double[:, ::1] w, double[::1] b,
                  double[:, ::1] out, bint relu) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], k = w.shape[1]
    cdef Py_ssize_t i, j, p
    cdef double acc
    for i in range(n):
        for j in range(k):
            acc = b[j]
            for p in range(m):
                acc += a[i, p] * w[p, j]
            if relu and acc < 0.0:
                acc = 0.0
            out[i, j] = acc


def forward(list ws, list bs, x):
    """Return logits of shape (n, K) for inputs x of shape (n, d)."""
    cdef Py_ssize_t last = len(ws) - 1
    cdef Py_ssize_t l
    a = np.ascontiguousarray(x, dtype=np.float64)
    for l in range(len(ws)):
        out = np.empty((a.shape[0], ws[l].shape[1]), dtype=np.float64)
        _affine(a, ws[l], bs[l], out, l != last)
        a = out
    return a


cdef double _fill_log_softmax(double[:, ::1] logits, double[:, ::1] logp,
                              long[:] y, double[::1] losses) noexcept nogil:
    # Writes log-softmax into logp, per-sample losses into losses,
    # and returns the summed loss.
    cdef Py_ssize_t n = logits.shape[0], k = logits.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s, total = 0.0
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(k):
            s += exp(logits[i, j] - mx)
        s = log(s)
        for j in range(k):
            logp[i, j] = logits[i, j] - mx - s
        losses[i] = -logp[i, y[i]]
        total += losses[i]
    return total


def per_sample_losses(ws, bs, x, y):
    """Softmax cross-entropy (natural log) per sample, shape (n,)."""
    logits = forward(ws, bs, x)
    cdef Py_ssize_t n = logits.shape[0]
    logp = np.empty_like(logits)
    losses = np.empty(n, dtype=np.float64)
    yc = np.ascontiguousarray(y, dtype=np.int64)
    _fill_log_softmax(logits, logp, yc, losses)
    return losses


def loss_and_grad(list ws, list bs, x, y):
    """Mean cross-entropy loss and its gradients (matches _kernels_np)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t last = len(ws) - 1
    cdef Py_ssize_t l, i, j, p, m, k
    cdef double acc

    a = np.ascontiguousarray(x, dtype=np.float64)
    acts = [a]
    for l in range(len(ws)):
        out = np.empty((n, ws[l].shape[1]), dtype=np.float64)
        _affine(acts[l], ws[l], bs[l], out, l != last)
        acts.append(out)

    logits = acts[len(ws)]
    logp = np.empty_like(logits)
    losses = np.empty(n, dtype=np.float64)
    yc = np.ascontiguousarray(y, dtype=np.int64)
    cdef double total = _fill_log_softmax(logits, logp, yc, losses)
    cdef double loss = total / n

    # delta at the output: (softmax - onehot) / n
    delta = np.exp(logp)
    cdef double[:, ::1] dv = delta
    cdef long[:] yv = yc
    for i in range(n):
        dv[i, yv[i]] -= 1.0
        for j in range(delta.shape[1]):
            dv[i, j] /= n

    gws = [None] * len(ws)
    gbs = [None] * len(bs)
    cdef double[:, ::1] d, gw, wv, prev, act
    cdef double[::1] gb
    for l in range(last, -1, -1):
        gw_arr = np.empty_like(ws[l])
        gb_arr = np.empty(ws[l].shape[1], dtype=np.float64)
        d = delta
        act = acts[l]
        gw = gw_arr
        gb = gb_arr
        m = act.shape[1]
        k = d.shape[1]
        with nogil:
            for j in range(k):
                acc = 0.0
                for i in range(n):
                    acc += d[i, j]
                gb[j] = acc
            for p in range(m):
                for j in range(k):
                    acc = 0.0
                    for i in range(n):
                        acc += act[i, p] * d[i, j]
                    gw[p, j] = acc
        gws[l] = gw_arr
        gbs[l] = gb_arr
        if l > 0:
            prev_arr = np.empty((n, m), dtype=np.float64)
            prev = prev_arr
            wv = ws[l]
            with nogil:
                for i in range(n):
                    for p in range(m):
                        if act[i, p] <= 0.0:
                            prev[i, p] = 0.0
                        else:
                            acc = 0.0
                            for j in range(k):
                                acc += d[i, j] * wv[p, j]
                            prev[i, p] = acc
            delta = prev_arr
    return loss, gws, gbs
