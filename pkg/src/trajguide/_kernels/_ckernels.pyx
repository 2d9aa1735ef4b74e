# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled editing and compositing kernels.

Arithmetic order mirrors ``_fallback.py``; build with ``-ffp-contract=off``
so no multiply-add gets fused and both backends agree bit for bit.
"""

from libc.stdlib cimport abs as iabs


def spatial_edit(const double[:, :, ::1] attn, const double[:, ::1] weight,
                 const double[:, ::1] inject, const long long[::1] tokens,
                 double[:, :, ::1] out):
    cdef Py_ssize_t nf = attn.shape[0], npix = attn.shape[1], ntok = attn.shape[2]
    cdef Py_ssize_t nsel = tokens.shape[0]
    cdef Py_ssize_t f, p, i, k
    cdef double wv, sv
    with nogil:
        for f in range(nf):
            for p in range(npix):
                for i in range(ntok):
                    out[f, p, i] = attn[f, p, i]
                wv = weight[f, p]
                sv = inject[f, p]
                for k in range(nsel):
                    i = tokens[k]
                    out[f, p, i] = attn[f, p, i] * wv + sv


def temporal_edit(const double[:, :, ::1] attn, const unsigned char[:, ::1] masks,
                  const double[:, ::1] gauss, double c_w, double c_m,
                  double[:, :, ::1] out):
    cdef Py_ssize_t npix = attn.shape[0], nf = attn.shape[1]
    cdef Py_ssize_t p, i, j
    cdef double d, coef, g, gi, gj, wv, sv
    cdef bint inside
    with nogil:
        for p in range(npix):
            for i in range(nf):
                for j in range(nf):
                    inside = masks[i, p] != 0 or masks[j, p] != 0
                    if inside:
                        d = <double>iabs(<int>(i - j)) / <double>nf
                        coef = c_m * (1.0 - 2.0 * d)
                        gi = gauss[i, p]
                        gj = gauss[j, p]
                        g = gi if gi >= gj else gj
                        wv = 1.0
                        sv = coef * g
                    else:
                        wv = c_w
                        sv = 0.0
                    out[p, i, j] = attn[p, i, j] * wv + sv


def composite(const double[:, :, ::1] z, const double[:, :, :, ::1] subjects,
              const unsigned char[:, :, ::1] masks, double w,
              double[:, :, ::1] out):
    cdef Py_ssize_t nr = subjects.shape[0], nf = z.shape[0], nc = z.shape[1], npix = z.shape[2]
    cdef Py_ssize_t f, c, p, r
    cdef long long n
    cdef double acc, one_minus = 1.0 - w
    with nogil:
        for f in range(nf):
            for c in range(nc):
                for p in range(npix):
                    acc = 0.0
                    n = 0
                    for r in range(nr):
                        if masks[r, f, p] != 0:
                            acc = acc + (w * z[f, c, p] + one_minus * subjects[r, f, c, p])
                            n += 1
                    if n > 0:
                        out[f, c, p] = acc / <double>n
                    else:
                        out[f, c, p] = z[f, c, p]
