# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: GRU recurrence and sampled-softmax candidate scoring.

Drop-in replacement for ``numpy_ops`` (same signatures, same accumulate
semantics); matrix products go through BLAS.  See that module for the
contract documentation.
"""

import numpy as np

from libc.math cimport exp, log, tanh as ctanh
from scipy.linalg.cython_blas cimport daxpy, ddot, dgemv, dger

NAME = "cython"

cdef int ONE = 1
cdef double D_ONE = 1.0
cdef double D_ZERO = 0.0


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline void _matvec(double[:, ::1] W, double* x, double* y) nogil:
    # y = W @ x for row-major W (m, n): BLAS sees the buffer as the
    # column-major (n, m) transpose, so ask for the transposed product.
    cdef int m = W.shape[0]
    cdef int n = W.shape[1]
    dgemv("T", &n, &m, &D_ONE, &W[0, 0], &n, x, &ONE, &D_ZERO, y, &ONE)


cdef inline void _matvec_t_acc(double[:, ::1] W, double* x, double* y) nogil:
    # y += W.T @ x for row-major W (m, n); y has length n
    cdef int m = W.shape[0]
    cdef int n = W.shape[1]
    dgemv("N", &n, &m, &D_ONE, &W[0, 0], &n, x, &ONE, &D_ONE, y, &ONE)


cdef inline void _outer_acc(double[:, ::1] A, double* dy, double* x) nogil:
    # A += outer(dy, x) for row-major A (m, n)
    cdef int m = A.shape[0]
    cdef int n = A.shape[1]
    dger(&n, &m, &D_ONE, x, &ONE, dy, &ONE, &A[0, 0], &n)


def gru_forward(double[:, ::1] W_r, double[:, ::1] W_u, double[:, ::1] W_c,
                double[::1] b_r, double[::1] b_u, double[::1] b_c,
                double[:, ::1] E, double[::1] h0):
    cdef int T = E.shape[0]
    cdef int d_e = E.shape[1]
    cdef int d_h = h0.shape[0]
    cdef int dz = d_e + d_h

    H_arr = np.empty((T, d_h))
    R_arr = np.empty((T, d_h))
    U_arr = np.empty((T, d_h))
    C_arr = np.empty((T, d_h))
    z_arr = np.empty(dz)
    a_arr = np.empty(d_h)
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] R = R_arr
    cdef double[:, ::1] U = U_arr
    cdef double[:, ::1] C = C_arr
    cdef double[::1] z = z_arr
    cdef double[::1] a = a_arr
    cdef double* hprev
    cdef int t, i

    with nogil:
        for t in range(T):
            hprev = &H[t - 1, 0] if t > 0 else &h0[0]
            for i in range(d_e):
                z[i] = E[t, i]
            for i in range(d_h):
                z[d_e + i] = hprev[i]
            _matvec(W_r, &z[0], &a[0])
            for i in range(d_h):
                R[t, i] = _sigmoid(a[i] + b_r[i])
            _matvec(W_u, &z[0], &a[0])
            for i in range(d_h):
                U[t, i] = _sigmoid(a[i] + b_u[i])
            for i in range(d_h):
                z[d_e + i] = R[t, i] * hprev[i]
            _matvec(W_c, &z[0], &a[0])
            for i in range(d_h):
                C[t, i] = ctanh(a[i] + b_c[i])
            for i in range(d_h):
                H[t, i] = U[t, i] * hprev[i] + (1.0 - U[t, i]) * C[t, i]
    return H_arr, R_arr, U_arr, C_arr


def gru_backward(double[:, ::1] W_r, double[:, ::1] W_u, double[:, ::1] W_c,
                 double[:, ::1] E, double[::1] h0,
                 double[:, ::1] H, double[:, ::1] R, double[:, ::1] U,
                 double[:, ::1] C, double[:, ::1] dH,
                 double[:, ::1] gW_r, double[:, ::1] gW_u, double[:, ::1] gW_c,
                 double[::1] gb_r, double[::1] gb_u, double[::1] gb_c,
                 double[:, ::1] dE, double[::1] dh0):
    cdef int T = E.shape[0]
    cdef int d_e = E.shape[1]
    cdef int d_h = h0.shape[0]
    cdef int dz = d_e + d_h

    scratch = np.empty((5, max(dz, d_h)))
    cdef double[:, ::1] buf = scratch
    cdef double* z = &buf[0, 0]
    cdef double* dz_buf = &buf[1, 0]
    cdef double* da = &buf[2, 0]
    cdef double* dh = &buf[3, 0]
    cdef double* dr = &buf[4, 0]
    carry_arr = np.zeros(d_h)
    dhp_arr = np.empty(d_h)
    cdef double[::1] carry = carry_arr
    cdef double[::1] dhp = dhp_arr
    cdef double* hprev
    cdef int t, i

    with nogil:
        for t in range(T - 1, -1, -1):
            hprev = &H[t - 1, 0] if t > 0 else &h0[0]
            for i in range(d_h):
                dh[i] = dH[t, i] + carry[i]
                dhp[i] = dh[i] * U[t, i]

            # candidate gate, input [e_t, r_t * h_prev]
            for i in range(d_h):
                da[i] = dh[i] * (1.0 - U[t, i]) * (1.0 - C[t, i] * C[t, i])
            for i in range(d_e):
                z[i] = E[t, i]
            for i in range(d_h):
                z[d_e + i] = R[t, i] * hprev[i]
            _outer_acc(gW_c, da, z)
            for i in range(d_h):
                gb_c[i] += da[i]
            for i in range(dz):
                dz_buf[i] = 0.0
            _matvec_t_acc(W_c, da, dz_buf)
            for i in range(d_e):
                dE[t, i] = dz_buf[i]
            for i in range(d_h):
                dr[i] = dz_buf[d_e + i] * hprev[i]
                dhp[i] += dz_buf[d_e + i] * R[t, i]

            # update gate, input [e_t, h_prev]
            for i in range(d_h):
                da[i] = dh[i] * (hprev[i] - C[t, i]) * U[t, i] * (1.0 - U[t, i])
            for i in range(d_h):
                z[d_e + i] = hprev[i]
            _outer_acc(gW_u, da, z)
            for i in range(d_h):
                gb_u[i] += da[i]
            for i in range(dz):
                dz_buf[i] = 0.0
            _matvec_t_acc(W_u, da, dz_buf)
            for i in range(d_e):
                dE[t, i] += dz_buf[i]
            for i in range(d_h):
                dhp[i] += dz_buf[d_e + i]

            # reset gate, same input as the update gate
            for i in range(d_h):
                da[i] = dr[i] * R[t, i] * (1.0 - R[t, i])
            _outer_acc(gW_r, da, z)
            for i in range(d_h):
                gb_r[i] += da[i]
            for i in range(dz):
                dz_buf[i] = 0.0
            _matvec_t_acc(W_r, da, dz_buf)
            for i in range(d_e):
                dE[t, i] += dz_buf[i]
            for i in range(d_h):
                dhp[i] += dz_buf[d_e + i]

            for i in range(d_h):
                carry[i] = dhp[i]
    dh0_arr = np.asarray(dh0)
    dh0_arr[:] = carry_arr


def sampled_softmax_batch(double[:, ::1] U_sm, double[::1] b_M, double[::1] log_q,
                          double[:, ::1] D, long[::1] targets, long[:, ::1] negatives,
                          double scale, double[:, ::1] dD,
                          double[:, ::1] gU, double[::1] gb_M):
    cdef int P = D.shape[0]
    cdef int d_e = D.shape[1]
    cdef int k = negatives.shape[1]
    cdef int n_cand = k + 1

    ids_arr = np.empty(n_cand, dtype=np.int64)
    lg_arr = np.empty(n_cand)
    cdef long[::1] ids = ids_arr
    cdef double[::1] lg = lg_arr
    cdef double total = 0.0
    cdef double mx, Z, logit0, g
    cdef long w
    cdef int p, j, i

    with nogil:
        for p in range(P):
            ids[0] = targets[p]
            for j in range(k):
                ids[j + 1] = negatives[p, j]
            mx = -1e300
            for j in range(n_cand):
                w = ids[j]
                lg[j] = ddot(&d_e, &U_sm[w, 0], &ONE, &D[p, 0], &ONE) \
                    + b_M[w] - log_q[w]
                if lg[j] > mx:
                    mx = lg[j]
            logit0 = lg[0]
            Z = 0.0
            for j in range(n_cand):
                lg[j] = exp(lg[j] - mx)
                Z += lg[j]
            total += log(Z) + mx - logit0
            for i in range(d_e):
                dD[p, i] = 0.0
            for j in range(n_cand):
                w = ids[j]
                g = lg[j] / Z
                if j == 0:
                    g -= 1.0
                g *= scale
                daxpy(&d_e, &g, &U_sm[w, 0], &ONE, &dD[p, 0], &ONE)
                daxpy(&d_e, &g, &D[p, 0], &ONE, &gU[w, 0], &ONE)
                gb_M[w] += g
    return total
