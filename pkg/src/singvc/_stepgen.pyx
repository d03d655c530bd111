# cython: language_level=3
"""Compiled autoregressive generation loop.

One decoder step per output sample using per-layer ring buffers of past
activations, so a T-sample clip costs O(T * depth) instead of the naive
O(T^2 * depth).  The numpy fallback in `_stepgen_py` implements the same
arithmetic; this module only removes the interpreter from the inner loop.
"""

import numpy as np

cimport cython
from libc.math cimport exp, tanh

ctypedef fused real:
    float
    double


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def generate(
    real[:, ::1] embed,            # (256, C_r)
    real[:, :, :, ::1] taps,       # (L, K, 2C_r, C_r) tap j hits x[t - d*(K-1-j)]
    real[:, ::1] conv_b,           # (L, 2C_r)
    real[:, :, ::1] res_w,         # (L, C_r, C_r)
    real[:, ::1] res_b,            # (L, C_r)
    real[:, :, ::1] skip_w,        # (L, C_s, C_r)
    real[:, ::1] skip_b,           # (L, C_s)
    real[:, :, ::1] cond_layer,    # (L, 2C_r, T) per-layer conditioning, precomputed
    real[:, ::1] cond_head,        # (C_s, T)
    real[:, ::1] head1_w,          # (C_s, C_s)
    real[::1] head1_b,
    real[:, ::1] head2_w,          # (256, C_s)
    real[::1] head2_b,
    long[::1] dilations,           # (L,)
    int kernel_size,
    double[::1] uniforms,          # (T,)
    double temperature,
    int start_index,
    long[::1] out_indices,         # (T,)
    real[:, ::1] out_logits,       # (T, 256) or (0, 0) when not wanted
):
    cdef Py_ssize_t L = taps.shape[0]
    cdef Py_ssize_t K = kernel_size
    cdef Py_ssize_t C2 = conv_b.shape[1]
    cdef Py_ssize_t C = C2 // 2
    cdef Py_ssize_t S = skip_b.shape[1]
    cdef Py_ssize_t Q = head2_w.shape[0]
    cdef Py_ssize_t T = uniforms.shape[0]
    cdef bint keep_logits = out_logits.shape[0] == T

    cdef long max_size = 0
    cdef Py_ssize_t l
    for l in range(L):
        if (K - 1) * dilations[l] > max_size:
            max_size = (K - 1) * dilations[l]

    if real is float:
        buf_np = np.zeros((L, max(max_size, 1), C), dtype=np.float32)
        work_np = np.zeros((2 * C2 + 2 * S + Q, ), dtype=np.float32)
    else:
        buf_np = np.zeros((L, max(max_size, 1), C), dtype=np.float64)
        work_np = np.zeros((2 * C2 + 2 * S + Q, ), dtype=np.float64)
    cdef real[:, :, ::1] buf = buf_np
    cdef real[::1] work = work_np

    # work layout: x (C) | z (C2) | g (C) | skip (S) | h (S) | logits (Q)
    cdef real* x = &work[0]
    cdef real* z = &work[C]
    cdef real* g = &work[C + C2]
    cdef real* skip = &work[C + C2 + C]
    cdef real* h = &work[C + C2 + C + S]
    cdef real* logits = &work[C + C2 + C + S + S]

    cdef double[::1] prob = np.zeros(Q, dtype=np.float64)

    cdef Py_ssize_t t, i, j, m, c, slot, size, pos
    cdef long d, prev = start_index
    cdef real acc, xi
    cdef double mx, ssum, cum, u, best
    cdef Py_ssize_t idx

    for t in range(T):
        for c in range(C):
            x[c] = embed[prev, c]
        for c in range(S):
            skip[c] = 0

        for l in range(L):
            d = dilations[l]
            size = (K - 1) * d
            for i in range(C2):
                z[i] = conv_b[l, i] + cond_layer[l, i, t]
            # past taps from the ring buffer
            for m in range(K - 1):
                pos = t - d * (K - 1 - m)
                slot = pos % size
                if slot < 0:
                    slot += size
                for j in range(C):
                    xi = buf[l, slot, j]
                    if xi != 0:
                        for i in range(C2):
                            z[i] += taps[l, m, i, j] * xi
            # current tap
            for i in range(C2):
                acc = 0
                for j in range(C):
                    acc += taps[l, K - 1, i, j] * x[j]
                z[i] += acc
            # store this layer's input for future steps
            slot = t % size
            for j in range(C):
                buf[l, slot, j] = x[j]
            # gated tanh
            for c in range(C):
                g[c] = <real>(tanh(<double>z[c]) * (1.0 / (1.0 + exp(-<double>z[C + c]))))
            # residual + skip projections
            for i in range(C):
                acc = res_b[l, i]
                for j in range(C):
                    acc += res_w[l, i, j] * g[j]
                x[i] = x[i] + acc
            for i in range(S):
                acc = skip_b[l, i]
                for j in range(C):
                    acc += skip_w[l, i, j] * g[j]
                skip[i] += acc

        # head: relu(skips + cond) -> 1x1 -> relu -> 1x1 logits
        for i in range(S):
            acc = skip[i] + cond_head[i, t]
            skip[i] = acc if acc > 0 else 0
        for i in range(S):
            acc = head1_b[i]
            for j in range(S):
                acc += head1_w[i, j] * skip[j]
            h[i] = acc if acc > 0 else 0
        for i in range(Q):
            acc = head2_b[i]
            for j in range(S):
                acc += head2_w[i, j] * h[j]
            logits[i] = acc
            if keep_logits:
                out_logits[t, i] = acc

        # sample: inverse CDF over softmax(logits / temperature), float64
        if temperature == 0.0:
            best = <double>logits[0]
            idx = 0
            for i in range(1, Q):
                if <double>logits[i] > best:
                    best = <double>logits[i]
                    idx = i
        else:
            mx = <double>logits[0] / temperature
            for i in range(1, Q):
                if <double>logits[i] / temperature > mx:
                    mx = <double>logits[i] / temperature
            ssum = 0
            for i in range(Q):
                prob[i] = exp(<double>logits[i] / temperature - mx)
                ssum += prob[i]
            u = uniforms[t]
            cum = 0
            idx = Q - 1
            for i in range(Q):
                cum += prob[i] / ssum
                if cum > u:
                    idx = i
                    break

        out_indices[t] = idx
        prev = idx

    return None
