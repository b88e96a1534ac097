"""Pure-numpy kernels: the fallback backend.

Same signatures and numerics as the compiled extension in _core.pyx. The conv
uses shifted-window matmuls (BLAS); the scan vectorizes everything except the
unavoidable sequential loop over L.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def conv2d_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation. x (B,H,W,Ci), w (kh,kw,Ci,Co)."""
    kh, kw = w.shape[:2]
    if kh == 1:
        return np.ascontiguousarray(x @ w[0, 0])
    b, h, ww, _ci = x.shape
    xp = np.zeros((b, h + 2, ww + 2, x.shape[3]), dtype=np.float64)
    xp[:, 1:h + 1, 1:ww + 1, :] = x
    y = np.zeros((b, h, ww, w.shape[3]), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            y += xp[:, dy:dy + h, dx:dx + ww, :] @ w[dy, dx]
    return y


def conv2d_backward(x: np.ndarray, w: np.ndarray,
                    gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    kh, kw = w.shape[:2]
    if kh == 1:
        gx = gy @ w[0, 0].T
        gw = np.einsum("bhwi,bhwo->io", x, gy)[None, None]
        return np.ascontiguousarray(gx), np.ascontiguousarray(gw)
    b, h, ww, ci = x.shape
    xp = np.zeros((b, h + 2, ww + 2, ci), dtype=np.float64)
    xp[:, 1:h + 1, 1:ww + 1, :] = x
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for dy in range(3):
        for dx in range(3):
            win = xp[:, dy:dy + h, dx:dx + ww, :]
            gw[dy, dx] = np.einsum("bhwi,bhwo->io", win, gy)
            gxp[:, dy:dy + h, dx:dx + ww, :] += gy @ w[dy, dx].T
    return np.ascontiguousarray(gxp[:, 1:h + 1, 1:ww + 1, :]), gw


def scan_forward(delta: np.ndarray, a: np.ndarray, b: np.ndarray,
                 c: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Selective-scan recurrence.

    delta, x: (B,L,C); a: (C,N); b, c: (B,L,N).
    Returns y (B,L,C) and the state trajectory h (B,L,C,N) for backward.
    """
    bs, length, ch = x.shape
    n = a.shape[1]
    da = np.exp(delta[..., None] * a)                       # (B,L,C,N)
    dbx = (delta * x)[..., None] * b[:, :, None, :]         # (B,L,C,N)
    h = np.empty((bs, length, ch, n), dtype=np.float64)
    y = np.empty((bs, length, ch), dtype=np.float64)
    state = np.zeros((bs, ch, n), dtype=np.float64)
    for t in range(length):
        state = da[:, t] * state + dbx[:, t]
        h[:, t] = state
        y[:, t] = (state * c[:, t, None, :]).sum(axis=2)
    return y, h


def scan_backward(delta: np.ndarray, a: np.ndarray, b: np.ndarray,
                  c: np.ndarray, x: np.ndarray, h: np.ndarray,
                  gy: np.ndarray) -> tuple[np.ndarray, ...]:
    bs, length, ch = x.shape
    da = np.exp(delta[..., None] * a)
    gdelta = np.zeros_like(delta)
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    gc = np.zeros_like(c)
    gx = np.zeros_like(x)
    gh_carry = np.zeros((bs, ch, a.shape[1]), dtype=np.float64)
    for t in range(length - 1, -1, -1):
        gh = gy[:, t, :, None] * c[:, t, None, :] + gh_carry
        gc[:, t] = (gy[:, t, :, None] * h[:, t]).sum(axis=1)
        hprev = h[:, t - 1] if t > 0 else 0.0
        gda = gh * hprev
        gda_da = gda * da[:, t]
        gdelta[:, t] = (gda_da * a).sum(axis=2)
        ga += np.einsum("bcn,bc->cn", gda_da, delta[:, t])
        bx = (gh * b[:, t, None, :]).sum(axis=2)
        gdelta[:, t] += bx * x[:, t]
        gb[:, t] = np.einsum("bcn,bc->bn", gh, delta[:, t] * x[:, t])
        gx[:, t] = bx * delta[:, t]
        gh_carry = gh * da[:, t]
    return gdelta, ga, gb, gc, gx
