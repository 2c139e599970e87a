"""Dense float64 numeric primitives with explicit forward/backward pairs.

Every derivative used by the model is computed here, by hand-written
backward functions. Each primitive's backward is validated against
central finite differences in the test suite.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericError

Array = np.ndarray

POOL_MODES = ("min", "max", "mean", "sum")


def _as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def affine(x: Array, W: Array, b: Array) -> Array:
    """y = x @ W + b for x [B,n], W [n,m], b [1,m] (or [m])."""
    x, W, b = _as_f64(x), _as_f64(W), _as_f64(b)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ValueError(f"affine shape mismatch: x {x.shape} vs W {W.shape}")
    b = b.reshape(-1)
    if b.shape[0] != W.shape[1]:
        raise ValueError(f"affine bias mismatch: W {W.shape} vs b {b.shape}")
    return x @ W + b


def affine_backward(x: Array, W: Array, dy: Array):
    """Given upstream dL/dy, return (dL/dx, dL/dW, dL/db)."""
    dx = dy @ W.T
    dW = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dW, db


def sigmoid(x: Array) -> Array:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: Array) -> Array:
    x = _as_f64(x)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_backward(x: Array, dy: Array) -> Array:
    return dy * sigmoid(x)


def softmax(x: Array) -> Array:
    """Rowwise softmax, stabilized by max subtraction."""
    x = _as_f64(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(y: Array, dy: Array) -> Array:
    """Backward through softmax given its output y."""
    return y * (dy - (y * dy).sum(axis=-1, keepdims=True))


def log_softmax(x: Array) -> Array:
    x = _as_f64(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_softmax_backward(lp: Array, dy: Array) -> Array:
    return dy - np.exp(lp) * dy.sum(axis=-1, keepdims=True)


def pool(rows: Array, mode: str) -> Array:
    """Elementwise reduction of rows [K,T] -> [T].

    min/max ties are owned by the lowest row index (matters only for the
    subgradient, not the value).
    """
    rows = _as_f64(rows)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError(f"pool expects a nonempty [K,T] array, got shape {rows.shape}")
    if mode == "min":
        return rows.min(axis=0)
    if mode == "max":
        return rows.max(axis=0)
    if mode == "mean":
        return rows.mean(axis=0)
    if mode == "sum":
        return rows.sum(axis=0)
    raise ValueError(f"unknown pool mode {mode!r}, expected one of {POOL_MODES}")


def pool_backward(rows: Array, mode: str, dy: Array) -> Array:
    """Subgradient routing for pool: full credit to the first attaining row."""
    K, T = rows.shape
    drows = np.zeros_like(rows)
    if mode in ("min", "max"):
        idx = rows.argmin(axis=0) if mode == "min" else rows.argmax(axis=0)
        drows[idx, np.arange(T)] = dy
    elif mode == "mean":
        drows[:] = dy / K
    elif mode == "sum":
        drows[:] = dy
    else:
        raise ValueError(f"unknown pool mode {mode!r}")
    return drows


def cosine_sim_tau(u: Array, v: Array, tau: float) -> float:
    """Temperature-scaled cosine: (u.v) / (|u||v| tau)."""
    u, v = _as_f64(u).ravel(), _as_f64(v).ravel()
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine_sim_tau: zero-norm vector")
    return float(u @ v / (nu * nv * tau))


def cosine_sim_tau_backward(u: Array, v: Array, tau: float, dout: float):
    """Return (dL/du, dL/dv) for f = (u.v)/(|u||v| tau)."""
    u, v = _as_f64(u).ravel(), _as_f64(v).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine_sim_tau_backward: zero-norm vector")
    uh, vh = u / nu, v / nv
    c = uh @ vh
    du = dout * (vh - c * uh) / (nu * tau)
    dv = dout * (uh - c * vh) / (nv * tau)
    return du, dv


def grad_check(loss_and_grad, params: Array, h: float = 1e-5,
               n_probes: int = 100, rng_seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_and_grad(p) must return (scalar loss, gradient array of p's shape).
    Probes n_probes random coordinates; relative error is
    |a - f| / max(1e-8, |a| + |f|).
    """
    params = _as_f64(params).copy()
    loss0, grad = loss_and_grad(params)
    if not np.isfinite(loss0) or not np.all(np.isfinite(grad)):
        raise NumericError("grad_check: non-finite loss or gradient at the base point")
    rng = np.random.default_rng(rng_seed)
    n = params.size
    coords = rng.choice(n, size=min(n_probes, n), replace=False)
    flat = params.ravel()
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        lp, _ = loss_and_grad(params)
        flat[i] = orig - h
        lm, _ = loss_and_grad(params)
        flat[i] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericError(f"grad_check: non-finite loss at probe coordinate {i}")
        fd = (lp - lm) / (2.0 * h)
        a = grad.ravel()[i]
        err = abs(a - fd) / max(1e-8, abs(a) + abs(fd))
        worst = max(worst, err)
    return worst
