"""Numpy implementation of the convolution kernels (im2col + BLAS).

Same-length / same-size cross-correlation with zero padding. Kernel extents
must be odd; that is validated by the callers in ``pulseid.tensor``.
"""

import numpy as np

BACKEND_NAME = "numpy"


def _windows1d(x: np.ndarray, k: int) -> np.ndarray:
    """Sliding windows of a zero-padded (B, C, L) array, shape (B, C, L, K)."""
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    return np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)


def conv1d_fwd(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """(B, C, L) cross-correlated with (O, C, K) -> (B, O, L)."""
    win = _windows1d(x, k.shape[2])
    return np.einsum("bclk,ock->bol", win, k, optimize=True)


def conv1d_grad_k(x: np.ndarray, g: np.ndarray, kshape) -> np.ndarray:
    """Gradient of conv1d w.r.t. the kernel; g has the output's shape."""
    win = _windows1d(x, kshape[2])
    return np.einsum("bclk,bol->ock", win, g, optimize=True)


def _windows2d(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win  # (B, C, H, W, Kh, Kw)


def conv2d_fwd(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """(B, C, H, W) cross-correlated with (O, C, Kh, Kw) -> (B, O, H, W)."""
    win = _windows2d(x, k.shape[2], k.shape[3])
    return np.einsum("bchwij,ocij->bohw", win, k, optimize=True)


def conv2d_grad_k(x: np.ndarray, g: np.ndarray, kshape) -> np.ndarray:
    win = _windows2d(x, kshape[2], kshape[3])
    return np.einsum("bchwij,bohw->ocij", win, g, optimize=True)
