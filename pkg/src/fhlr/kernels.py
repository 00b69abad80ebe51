"""Hot numeric kernels: 1D convolution and overlapping max-pool, fwd + bwd.

Two interchangeable backends:

  numba  -- @njit compiled loops (default when numba imports cleanly)
  numpy  -- vectorized fallback built on BLAS matmuls and stride tricks

Selection: set FHLR_BACKEND=numpy or FHLR_BACKEND=numba in the environment
before import, or call set_backend(). Both paths are single-threaded and
deterministic; they agree to float64 roundoff (different summation order).
benchmarks/bench_kernels.py times one against the other.

Convolutions are stride-1 with 'same' padding handled by the caller (inputs
arrive pre-padded; outputs have the unpadded length). Max-pool windows may
overlap (pool 8, stride 2), so the backward pass accumulates.
"""

from __future__ import annotations

import os

import numpy as np

_VALID = ("numba", "numpy")


def _initial_backend() -> str:
    choice = os.environ.get("FHLR_BACKEND", "").strip().lower()
    if choice and choice in _VALID:
        if choice == "numba" and not _numba_available():
            raise RuntimeError("FHLR_BACKEND=numba but numba is not importable")
        return choice
    if choice and choice not in _VALID:
        raise RuntimeError(f"FHLR_BACKEND must be one of {_VALID}, got {choice!r}")
    return "numba" if _numba_available() else "numpy"


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
        return True
    except ImportError:
        return False


_backend = None


def get_backend() -> str:
    global _backend
    if _backend is None:
        _backend = _initial_backend()
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}")
    if name == "numba" and not _numba_available():
        raise RuntimeError("numba backend requested but numba is not importable")
    _backend = name


# ---------------------------------------------------------------------------
# numpy fallback path

def _conv1d_fwd_numpy(xp, w, b):
    # xp: [B, Cin, Lp], w: [Cout, Cin, K] -> out [B, Cout, L], L = Lp - K + 1
    B, cin, lp = xp.shape
    cout, _, k = w.shape
    L = lp - k + 1
    patches = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [B,Cin,L,K]
    pm = patches.transpose(0, 2, 1, 3).reshape(B * L, cin * k)
    out = pm @ w.reshape(cout, cin * k).T
    return out.reshape(B, L, cout).transpose(0, 2, 1) + b[None, :, None]


def _conv1d_bwd_numpy(dy, xp, w):
    # returns (dxp, dw, db); dy [B, Cout, L]
    B, cout, L = dy.shape
    _, cin, lp = xp.shape
    k = w.shape[2]
    patches = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    pm = patches.transpose(0, 2, 1, 3).reshape(B * L, cin * k)
    dym = dy.transpose(0, 2, 1).reshape(B * L, cout)
    dw = (dym.T @ pm).reshape(cout, cin, k)
    db = dy.sum(axis=(0, 2))
    dxp = np.zeros_like(xp)
    for kk in range(k):
        # dxp[b, i, kk + l] += sum_o w[o, i, kk] * dy[b, o, l]
        dxp[:, :, kk:kk + L] += np.tensordot(dy, w[:, :, kk], axes=([1], [0])
                                             ).transpose(0, 2, 1)
    return dxp, dw, db


def _maxpool_fwd_numpy(x, pool, stride):
    B, c, L = x.shape
    lout = (L - pool) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, pool, axis=2)[:, :, ::stride, :]
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    pos = (np.arange(lout) * stride)[None, None, :] + arg
    return out, pos.astype(np.int64)


def _maxpool_bwd_numpy(dy, pos, L):
    B, c, lout = dy.shape
    # bincount over flattened (b, c, t) indices; much faster than np.add.at
    base = (np.arange(B)[:, None, None] * c + np.arange(c)[None, :, None]) * L
    flat = (base + pos).ravel()
    dx = np.bincount(flat, weights=dy.ravel(), minlength=B * c * L)
    return dx.reshape(B, c, L)


# ---------------------------------------------------------------------------
# numba path

if _numba_available():
    from numba import njit

    # fastmath reassociates the inner reductions so they vectorize; results
    # remain run-to-run deterministic, just not bit-equal to the numpy path
    @njit(cache=True, fastmath=True)
    def _conv1d_fwd_nb(xp, w, b, out):
        B, cin, lp = xp.shape
        cout, _, k = w.shape
        L = lp - k + 1
        for bi in range(B):
            for o in range(cout):
                for l in range(L):
                    out[bi, o, l] = b[o]
                for i in range(cin):
                    for kk in range(k):
                        wv = w[o, i, kk]
                        for l in range(L):
                            out[bi, o, l] += wv * xp[bi, i, l + kk]

    @njit(cache=True, fastmath=True)
    def _conv1d_bwd_nb(dy, xp, w, dxp, dw, db):
        B, cout, L = dy.shape
        _, cin, lp = xp.shape
        k = w.shape[2]
        for bi in range(B):
            for o in range(cout):
                s = 0.0
                for l in range(L):
                    s += dy[bi, o, l]
                db[o] += s
                for i in range(cin):
                    for kk in range(k):
                        acc = 0.0
                        for l in range(L):
                            acc += dy[bi, o, l] * xp[bi, i, l + kk]
                        dw[o, i, kk] += acc
                        wv = w[o, i, kk]
                        for l in range(L):
                            dxp[bi, i, l + kk] += wv * dy[bi, o, l]

    @njit(cache=True)
    def _maxpool_fwd_nb(x, pool, stride, out, pos):
        B, c, L = x.shape
        lout = (L - pool) // stride + 1
        for bi in range(B):
            for ci in range(c):
                for j in range(lout):
                    s = j * stride
                    best = x[bi, ci, s]
                    bestp = s
                    for t in range(s + 1, s + pool):
                        v = x[bi, ci, t]
                        if v > best:
                            best = v
                            bestp = t
                    out[bi, ci, j] = best
                    pos[bi, ci, j] = bestp

    @njit(cache=True)
    def _maxpool_bwd_nb(dy, pos, dx):
        B, c, lout = dy.shape
        for bi in range(B):
            for ci in range(c):
                for j in range(lout):
                    dx[bi, ci, pos[bi, ci, j]] += dy[bi, ci, j]


# ---------------------------------------------------------------------------
# public dispatch

def conv1d_forward(xp: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of a pre-padded input, [B,Cin,Lp] -> [B,Cout,L]."""
    if get_backend() == "numba":
        B, cin, lp = xp.shape
        cout, _, k = w.shape
        out = np.empty((B, cout, lp - k + 1), dtype=np.float64)
        _conv1d_fwd_nb(xp, w, b, out)
        return out
    return _conv1d_fwd_numpy(xp, w, b)


def conv1d_backward(dy: np.ndarray, xp: np.ndarray, w: np.ndarray,
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (d_input_padded, d_weights, d_bias) of conv1d_forward."""
    if get_backend() == "numba":
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        db = np.zeros(w.shape[0], dtype=np.float64)
        _conv1d_bwd_nb(dy, xp, w, dxp, dw, db)
        return dxp, dw, db
    return _conv1d_bwd_numpy(dy, xp, w)


def maxpool_forward(x: np.ndarray, pool: int, stride: int,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Overlapping max-pool; returns (pooled, absolute argmax positions)."""
    if x.shape[2] < pool:
        raise ValueError(f"length {x.shape[2]} shorter than pool size {pool}")
    if get_backend() == "numba":
        B, c, L = x.shape
        lout = (L - pool) // stride + 1
        out = np.empty((B, c, lout), dtype=np.float64)
        pos = np.empty((B, c, lout), dtype=np.int64)
        _maxpool_fwd_nb(x, pool, stride, out, pos)
        return out, pos
    return _maxpool_fwd_numpy(x, pool, stride)


def maxpool_backward(dy: np.ndarray, pos: np.ndarray, length: int) -> np.ndarray:
    """Scatter-add pooled gradients back to input positions."""
    if get_backend() == "numba":
        B, c, _ = dy.shape
        dx = np.zeros((B, c, length), dtype=np.float64)
        _maxpool_bwd_nb(dy, pos, dx)
        return dx
    return _maxpool_bwd_numpy(dy, pos, length)


def warmup() -> None:
    """Trigger numba compilation on tiny inputs (no-op on the numpy path)."""
    if get_backend() != "numba":
        return
    xp = np.zeros((1, 2, 12))
    w = np.zeros((3, 2, 4))
    b = np.zeros(3)
    out = conv1d_forward(xp, w, b)
    conv1d_backward(out, xp, w)
    x = np.zeros((1, 2, 16))
    out, pos = maxpool_forward(x, 8, 2)
    maxpool_backward(out, pos, 16)
