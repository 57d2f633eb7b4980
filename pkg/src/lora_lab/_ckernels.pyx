# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training-loop kernels.

The LoRA forward/backward is fused per sample, so no ``N x n`` temporaries
are formed; every inner loop is a contiguous pass of length ``n``.  Loops run
without the GIL in a fixed order, so results are deterministic for a given
build.
"""

import numpy as np
from libc.math cimport sqrt, isfinite
from libc.stdlib cimport malloc, free


def lora_loss_grads(const double[:, ::1] u, const double[:, ::1] base,
                    const double[::1] w_out, const double[:, ::1] A,
                    const double[:, ::1] B, const double[::1] targets,
                    double scale, double[:, ::1] dA, double[:, ::1] dB):
    cdef Py_ssize_t N = u.shape[0], n = u.shape[1], r = A.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double loss = 0.0, y, res, dy, acc, zk, ck, yj
    cdef bint finite = True
    _check_shapes(u, base, w_out, A, B, targets)
    if dA.shape[0] != r or dA.shape[1] != n or dB.shape[0] != n or dB.shape[1] != r:
        raise ValueError("gradient buffer shape mismatch")

    cdef double *Bt = <double *> malloc(n * r * sizeof(double))
    cdef double *dBt = <double *> malloc(n * r * sizeof(double))
    cdef double *za = <double *> malloc(r * sizeof(double))
    cdef double *yh = <double *> malloc(n * sizeof(double))
    cdef double *gv = <double *> malloc(n * sizeof(double))
    if Bt == NULL or dBt == NULL or za == NULL or yh == NULL or gv == NULL:
        free(Bt); free(dBt); free(za); free(yh); free(gv)
        raise MemoryError()

    with nogil:
        for k in range(r):
            for j in range(n):
                Bt[k * n + j] = B[j, k]
                dBt[k * n + j] = 0.0
                dA[k, j] = 0.0
        for i in range(N):
            # Z_A of this sample
            for k in range(r):
                acc = 0.0
                for j in range(n):
                    acc = acc + A[k, j] * u[i, j]
                za[k] = acc
                if not isfinite(acc):
                    finite = False
            # hidden pre-activation and output
            for j in range(n):
                yh[j] = base[i, j]
            for k in range(r):
                zk = scale * za[k]
                for j in range(n):
                    yh[j] = yh[j] + Bt[k * n + j] * zk
            y = 0.0
            for j in range(n):
                yj = yh[j]
                if yj < 0.0:
                    yj = 0.0
                y = y + w_out[j] * yj
            res = y - targets[i]
            loss += res * res
            dy = 2.0 * res / N
            # upstream gradient at the hidden pre-activation
            for j in range(n):
                gv[j] = dy * w_out[j] if yh[j] > 0.0 else 0.0
            for k in range(r):
                zk = scale * za[k]
                acc = 0.0
                for j in range(n):
                    acc = acc + gv[j] * Bt[k * n + j]
                    dBt[k * n + j] = dBt[k * n + j] + gv[j] * zk
                ck = scale * acc
                for j in range(n):
                    dA[k, j] = dA[k, j] + ck * u[i, j]
        for k in range(r):
            for j in range(n):
                dB[j, k] = dBt[k * n + j]
    free(Bt); free(dBt); free(za); free(yh); free(gv)
    if not finite:
        return float("nan")
    return loss / N


cdef _check_shapes(const double[:, ::1] u, const double[:, ::1] base,
                   const double[::1] w_out, const double[:, ::1] A,
                   const double[:, ::1] B, const double[::1] targets):
    cdef Py_ssize_t N = u.shape[0], n = u.shape[1], r = A.shape[0]
    if base.shape[0] != N or base.shape[1] != n or w_out.shape[0] != n:
        raise ValueError("base / w_out shape mismatch")
    if A.shape[1] != n or B.shape[0] != n or B.shape[1] != r:
        raise ValueError("A / B shape mismatch")
    if targets.shape[0] != N:
        raise ValueError("targets shape mismatch")


def lora_eval(const double[:, ::1] u, const double[:, ::1] base,
              const double[::1] w_out, const double[:, ::1] A,
              const double[:, ::1] B, const double[::1] targets, double scale):
    cdef Py_ssize_t N = u.shape[0], n = u.shape[1], r = A.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double loss = 0.0, y, res, acc, zk, yj, nza, nzb, za_sum = 0.0, zb_sum = 0.0
    _check_shapes(u, base, w_out, A, B, targets)
    cdef double *Bt = <double *> malloc(n * r * sizeof(double))
    cdef double *za = <double *> malloc(r * sizeof(double))
    cdef double *zb = <double *> malloc(n * sizeof(double))
    if Bt == NULL or za == NULL or zb == NULL:
        free(Bt); free(za); free(zb)
        raise MemoryError()
    with nogil:
        for k in range(r):
            for j in range(n):
                Bt[k * n + j] = B[j, k]
        for i in range(N):
            nza = 0.0
            for k in range(r):
                acc = 0.0
                for j in range(n):
                    acc = acc + A[k, j] * u[i, j]
                za[k] = acc
                nza = nza + acc * acc
            za_sum += sqrt(nza)
            for j in range(n):
                zb[j] = 0.0
            for k in range(r):
                zk = za[k]
                for j in range(n):
                    zb[j] = zb[j] + Bt[k * n + j] * zk
            y = 0.0
            nzb = 0.0
            for j in range(n):
                acc = scale * zb[j]
                nzb = nzb + acc * acc
                yj = base[i, j] + acc
                if yj < 0.0:
                    yj = 0.0
                y = y + w_out[j] * yj
            zb_sum += sqrt(nzb)
            res = y - targets[i]
            loss += res * res
    free(Bt); free(za); free(zb)
    return loss / N, za_sum / N, zb_sum / N


def adamw_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                 double lr, double beta1, double beta2, double eps,
                 double weight_decay, double bc1, double bc2):
    cdef Py_ssize_t i, size = p.shape[0]
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2, decay = 1.0 - lr * weight_decay, gi
    if g.shape[0] != size or m.shape[0] != size or v.shape[0] != size:
        raise ValueError("optimizer buffer shape mismatch")
    with nogil:
        for i in range(size):
            gi = g[i]
            if weight_decay != 0.0:
                p[i] = p[i] * decay
            m[i] = m[i] * beta1 + c1 * gi
            v[i] = v[i] * beta2 + c2 * (gi * gi)
            p[i] = p[i] - (lr * (m[i] / bc1)) / (sqrt(v[i] / bc2) + eps)


def sign_update(double[::1] p, const double[::1] g, double lr):
    cdef Py_ssize_t i, size = p.shape[0]
    cdef double gi
    if g.shape[0] != size:
        raise ValueError("gradient shape mismatch")
    with nogil:
        for i in range(size):
            gi = g[i]
            if gi > 0.0:
                p[i] = p[i] - lr
            elif gi < 0.0:
                p[i] = p[i] + lr
            elif gi != gi:
                p[i] = gi


def sgd_update(double[::1] p, const double[::1] g, double lr):
    cdef Py_ssize_t i, size = p.shape[0]
    if g.shape[0] != size:
        raise ValueError("gradient shape mismatch")
    with nogil:
        for i in range(size):
            p[i] = p[i] - lr * g[i]
