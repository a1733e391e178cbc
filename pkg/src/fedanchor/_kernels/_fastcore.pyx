# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels.

Fused forward/backward over one mini-batch plus the momentum SGD update,
for the fixed dense+ReLU / dense / dense-head architecture. Mirrors
fedanchor._kernels.reference at the formula level; every inner loop runs
over the contiguous (last) axis, which keeps per-coordinate accumulation
in ascending index order while letting the compiler vectorize.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def grad_batch(
    double[:, ::1] x,
    cnp.int64_t[::1] y,
    double[:, ::1] bw,
    double[::1] bb,
    double[:, ::1] fw,
    double[::1] fb,
    double[:, ::1] hw,
    double[::1] hb,
    cnp.uint8_t[::1] anchor_mask,
    double[:, ::1] anchors,
    double lam,
):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t din = x.shape[1]
    cdef Py_ssize_t dh = bw.shape[1]
    cdef Py_ssize_t dm = fw.shape[1]
    cdef Py_ssize_t dc = hw.shape[1]
    cdef Py_ssize_t i, a, j, k, c, yi

    gbw_arr = np.zeros((din, dh), dtype=np.float64)
    gbb_arr = np.zeros(dh, dtype=np.float64)
    gfw_arr = np.zeros((dh, dm), dtype=np.float64)
    gfb_arr = np.zeros(dm, dtype=np.float64)
    ghw_arr = np.zeros((dm, dc), dtype=np.float64)
    ghb_arr = np.zeros(dc, dtype=np.float64)
    cdef double[:, ::1] gbw = gbw_arr
    cdef double[::1] gbb = gbb_arr
    cdef double[:, ::1] gfw = gfw_arr
    cdef double[::1] gfb = gfb_arr
    cdef double[:, ::1] ghw = ghw_arr
    cdef double[::1] ghb = ghb_arr

    hid_arr = np.zeros(dh, dtype=np.float64)
    z_arr = np.zeros(dm, dtype=np.float64)
    logit_arr = np.zeros(dc, dtype=np.float64)
    dl_arr = np.zeros(dc, dtype=np.float64)
    dz_arr = np.zeros(dm, dtype=np.float64)
    dhid_arr = np.zeros(dh, dtype=np.float64)
    cdef double[::1] hid = hid_arr
    cdef double[::1] z = z_arr
    cdef double[::1] logit = logit_arr
    cdef double[::1] dl = dl_arr
    cdef double[::1] dz = dz_arr
    cdef double[::1] dhid = dhid_arr

    # raw pointers: distinct mallocs/arrays, so the compiler's runtime alias
    # checks let it vectorize the j-inner accumulation loops
    cdef double *px = &x[0, 0]
    cdef double *pbw = &bw[0, 0]
    cdef double *pfw = &fw[0, 0]
    cdef double *phw = &hw[0, 0]
    cdef double *panc = &anchors[0, 0] if anchors.shape[0] else NULL
    cdef double *pgbw = &gbw[0, 0]
    cdef double *pgfw = &gfw[0, 0]
    cdef double *pghw = &ghw[0, 0]
    cdef double *ph = &hid[0]
    cdef double *pz = &z[0]
    cdef double *pl = &logit[0]
    cdef double *pdl = &dl[0]
    cdef double *pdz = &dz[0]
    cdef double *pdh = &dhid[0]

    cdef double s, shift, sumexp, g
    cdef double *row

    for i in range(n):
        yi = <Py_ssize_t> y[i]

        # hidden = relu(x_i @ bw + bb), accumulated along rows of bw
        for j in range(dh):
            ph[j] = bb[j]
        for a in range(din):
            g = px[i * din + a]
            row = pbw + a * dh
            for j in range(dh):
                ph[j] = ph[j] + g * row[j]
        for j in range(dh):
            if ph[j] < 0.0:
                ph[j] = 0.0

        for j in range(dm):
            pz[j] = fb[j]
        for k in range(dh):
            g = ph[k]
            if g != 0.0:
                row = pfw + k * dm
                for j in range(dm):
                    pz[j] = pz[j] + g * row[j]

        for c in range(dc):
            pl[c] = hb[c]
        for j in range(dm):
            g = pz[j]
            row = phw + j * dc
            for c in range(dc):
                pl[c] = pl[c] + g * row[c]

        # softmax gradient with max-shift
        shift = pl[0]
        for c in range(1, dc):
            if pl[c] > shift:
                shift = pl[c]
        sumexp = 0.0
        for c in range(dc):
            pdl[c] = exp(pl[c] - shift)
            sumexp = sumexp + pdl[c]
        for c in range(dc):
            pdl[c] = pdl[c] / sumexp
        pdl[yi] = pdl[yi] - 1.0

        for c in range(dc):
            ghb[c] = ghb[c] + pdl[c]
        for j in range(dm):
            g = pz[j]
            row = pghw + j * dc
            for c in range(dc):
                row[c] = row[c] + g * pdl[c]

        for j in range(dm):
            s = 0.0
            row = phw + j * dc
            for c in range(dc):
                s = s + pdl[c] * row[c]
            if lam != 0.0 and anchor_mask[yi] != 0:
                s = s + (2.0 * lam) * (pz[j] - panc[yi * dm + j])
            pdz[j] = s

        for j in range(dm):
            gfb[j] = gfb[j] + pdz[j]
        for k in range(dh):
            g = ph[k]
            if g != 0.0:
                row = pgfw + k * dm
                for j in range(dm):
                    row[j] = row[j] + g * pdz[j]

        # relu subgradient at exactly 0 is 0
        for k in range(dh):
            if ph[k] > 0.0:
                s = 0.0
                row = pfw + k * dm
                for j in range(dm):
                    s = s + pdz[j] * row[j]
                pdh[k] = s
            else:
                pdh[k] = 0.0

        for k in range(dh):
            gbb[k] = gbb[k] + pdh[k]
        for a in range(din):
            g = px[i * din + a]
            row = pgbw + a * dh
            for k in range(dh):
                row[k] = row[k] + g * pdh[k]

    return gbw_arr, gbb_arr, gfw_arr, gfb_arr, ghw_arr, ghb_arr


def sgd_update(
    double[::1] param,
    double[::1] grad,
    double[::1] velocity,
    double lr,
    double momentum,
    double weight_decay,
):
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    out_p = np.empty(n, dtype=np.float64)
    out_v = np.empty(n, dtype=np.float64)
    cdef double[::1] p = out_p
    cdef double[::1] v = out_v
    cdef double vi

    for i in range(n):
        vi = momentum * velocity[i] + (grad[i] + weight_decay * param[i])
        v[i] = vi
        p[i] = param[i] - lr * vi
    return out_p, out_v
