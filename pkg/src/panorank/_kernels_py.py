"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable (or forced via
PANORANK_BACKEND=python). Shapes follow the compiled module exactly:
feature maps are (C, H, W) float64, kernels (Cout, Cin, kh, kw), and
convolutions are cross-correlations with zero padding preserving H x W.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(xp, (kh, kw), axis=(1, 2))


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw)
    return np.einsum("ihwyx,oiyx->ohw", win, w, optimize=True) + b[:, None, None]


def conv2d_grad_weights(x: np.ndarray, gy: np.ndarray, kh: int, kw: int):
    win = _windows(x, kh, kw)
    gw = np.einsum("ihwyx,ohw->oiyx", win, gy, optimize=True)
    gb = gy.sum(axis=(1, 2))
    return gw, gb


def conv2d_grad_input(gy: np.ndarray, w: np.ndarray) -> np.ndarray:
    # adjoint of a same-padded correlation: correlate the upstream gradient
    # with the spatially flipped, channel-transposed kernel
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zero = np.zeros(wt.shape[0])
    return conv2d_forward(gy, wt, zero)


def label_components(mask: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    """Two-pass union-find labelling; background 0, components 1..n in scan
    order. mask is uint8, connectivity 4 or 8."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = [0]

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    nxt = 1
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            neigh = []
            if i > 0 and labels[i - 1, j]:
                neigh.append(int(labels[i - 1, j]))
            if j > 0 and labels[i, j - 1]:
                neigh.append(int(labels[i, j - 1]))
            if connectivity == 8 and i > 0:
                if j > 0 and labels[i - 1, j - 1]:
                    neigh.append(int(labels[i - 1, j - 1]))
                if j < w - 1 and labels[i - 1, j + 1]:
                    neigh.append(int(labels[i - 1, j + 1]))
            if not neigh:
                labels[i, j] = nxt
                parent.append(nxt)
                nxt += 1
            else:
                roots = [find(x) for x in neigh]
                best = min(roots)
                labels[i, j] = best
                for r in roots:
                    parent[r] = best
    remap: dict[int, int] = {}
    n = 0
    for i in range(h):
        for j in range(w):
            lab = int(labels[i, j])
            if not lab:
                continue
            root = find(lab)
            if root not in remap:
                n += 1
                remap[root] = n
            labels[i, j] = remap[root]
    return labels, n
