# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: same-padded 2-D cross-correlation (forward and
both adjoints) and two-pass connected-component labelling.

Interface mirrors _kernels_py so the backend selector can swap them freely.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


# The convolution loops are organised as shift-and-accumulate over kernel
# taps so the inner column loop is contiguous and branch-free: boundary
# handling reduces to clipping the row/column ranges per tap.


def conv2d_forward(cnp.float64_t[:, :, ::1] x not None,
                   cnp.float64_t[:, :, :, ::1] w not None,
                   cnp.float64_t[::1] b not None):
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t h = x.shape[1], wid = x.shape[2]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t o, i, r, c, dy, dx, r0, r1, c0, c1, off_r, off_c
    cdef double wv
    out_arr = np.empty((cout, h, wid), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] out = out_arr
    for o in range(cout):
        wv = b[o]
        for r in range(h):
            for c in range(wid):
                out[o, r, c] = wv
        for i in range(cin):
            for dy in range(kh):
                off_r = dy - ph
                r0 = -off_r if off_r < 0 else 0
                r1 = h - off_r if off_r > 0 else h
                for dx in range(kw):
                    wv = w[o, i, dy, dx]
                    if wv == 0.0:
                        continue
                    off_c = dx - pw
                    c0 = -off_c if off_c < 0 else 0
                    c1 = wid - off_c if off_c > 0 else wid
                    for r in range(r0, r1):
                        for c in range(c0, c1):
                            out[o, r, c] += wv * x[i, r + off_r, c + off_c]
    return out_arr


def conv2d_grad_weights(cnp.float64_t[:, :, ::1] x not None,
                        cnp.float64_t[:, :, ::1] gy not None,
                        Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t cin = x.shape[0], cout = gy.shape[0]
    cdef Py_ssize_t h = x.shape[1], wid = x.shape[2]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t o, i, r, c, dy, dx, r0, r1, c0, c1, off_r, off_c
    cdef double acc
    gw_arr = np.zeros((cout, cin, kh, kw), dtype=np.float64)
    gb_arr = np.zeros(cout, dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] gw = gw_arr
    cdef cnp.float64_t[::1] gb = gb_arr
    for o in range(cout):
        acc = 0.0
        for r in range(h):
            for c in range(wid):
                acc += gy[o, r, c]
        gb[o] = acc
        for i in range(cin):
            for dy in range(kh):
                off_r = dy - ph
                r0 = -off_r if off_r < 0 else 0
                r1 = h - off_r if off_r > 0 else h
                for dx in range(kw):
                    off_c = dx - pw
                    c0 = -off_c if off_c < 0 else 0
                    c1 = wid - off_c if off_c > 0 else wid
                    acc = 0.0
                    for r in range(r0, r1):
                        for c in range(c0, c1):
                            acc += gy[o, r, c] * x[i, r + off_r, c + off_c]
                    gw[o, i, dy, dx] = acc
    return gw_arr, gb_arr


def conv2d_grad_input(cnp.float64_t[:, :, ::1] gy not None,
                      cnp.float64_t[:, :, :, ::1] w not None):
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1]
    cdef Py_ssize_t kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t h = gy.shape[1], wid = gy.shape[2]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t o, i, r, c, dy, dx, r0, r1, c0, c1, off_r, off_c
    cdef double wv
    gx_arr = np.zeros((cin, h, wid), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] gx = gx_arr
    for i in range(cin):
        for o in range(cout):
            for dy in range(kh):
                off_r = dy - ph
                r0 = -off_r if off_r < 0 else 0
                r1 = h - off_r if off_r > 0 else h
                for dx in range(kw):
                    wv = w[o, i, dy, dx]
                    if wv == 0.0:
                        continue
                    off_c = dx - pw
                    c0 = -off_c if off_c < 0 else 0
                    c1 = wid - off_c if off_c > 0 else wid
                    for r in range(r0, r1):
                        for c in range(c0, c1):
                            gx[i, r + off_r, c + off_c] += wv * gy[o, r, c]
    return gx_arr


def label_components(cnp.uint8_t[:, ::1] mask not None, int connectivity):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t i, j, k
    cdef int nxt = 1, lab, best, root, n
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] labels = labels_arr
    parent_arr = np.zeros(h * w + 1, dtype=np.int32)
    cdef cnp.int32_t[::1] parent = parent_arr
    cdef int neigh[4]
    cdef int nn, r0

    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            nn = 0
            if i > 0 and labels[i - 1, j]:
                neigh[nn] = labels[i - 1, j]; nn += 1
            if j > 0 and labels[i, j - 1]:
                neigh[nn] = labels[i, j - 1]; nn += 1
            if connectivity == 8 and i > 0:
                if j > 0 and labels[i - 1, j - 1]:
                    neigh[nn] = labels[i - 1, j - 1]; nn += 1
                if j < w - 1 and labels[i - 1, j + 1]:
                    neigh[nn] = labels[i - 1, j + 1]; nn += 1
            if nn == 0:
                labels[i, j] = nxt
                parent[nxt] = nxt
                nxt += 1
            else:
                best = 0
                for k in range(nn):
                    root = neigh[k]
                    while parent[root] != root:
                        root = parent[root]
                    neigh[k] = root
                    if best == 0 or root < best:
                        best = root
                labels[i, j] = best
                for k in range(nn):
                    parent[neigh[k]] = best

    remap_arr = np.zeros(nxt, dtype=np.int32)
    cdef cnp.int32_t[::1] remap = remap_arr
    n = 0
    for i in range(h):
        for j in range(w):
            lab = labels[i, j]
            if not lab:
                continue
            root = lab
            while parent[root] != root:
                root = parent[root]
            if remap[root] == 0:
                n += 1
                remap[root] = n
            labels[i, j] = remap[root]
    return labels_arr, n
