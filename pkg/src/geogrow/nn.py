"""Neural network building blocks with exact analytic gradients.

Pure numpy, float64, functional style: every forward returns (output, cache)
and every backward consumes (upstream gradient, cache) so the full model
gradient can be checked against finite differences to tight tolerances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Array shape does not match the layer contract."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -------------------------------------------------------------------- dense

def dense_forward(x, w, b):
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense input {x.shape} vs weight {w.shape}")
    return x @ w + b, (x, w)


def dense_backward(d_out, cache):
    x, w = cache
    return d_out @ w.T, x.T @ d_out, d_out.sum(axis=0)


def sigmoid_dense_forward(x, w, b):
    z, lin_cache = dense_forward(x, w, b)
    y = sigmoid(z)
    return y, (lin_cache, y)


def sigmoid_dense_backward(d_out, cache):
    lin_cache, y = cache
    return dense_backward(d_out * y * (1.0 - y), lin_cache)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(d_out, mask):
    return d_out * mask


def dropout_forward(x, p: float, rng: np.random.Generator | None):
    """Inverted dropout; a None rng (or p == 0) disables it."""
    if rng is None or p <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(d_out, mask):
    return d_out if mask is None else d_out * mask


# --------------------------------------------------------------- batch norm

@dataclass
class BatchNormState:
    """Running statistics, updated by exponential moving average."""
    mean: np.ndarray | None = None
    var: np.ndarray | None = None

    def update(self, batch_mean, batch_var, momentum: float = 0.9) -> None:
        if self.mean is None:
            self.mean = batch_mean.copy()
            self.var = batch_var.copy()
        else:
            self.mean = momentum * self.mean + (1.0 - momentum) * batch_mean
            self.var = momentum * self.var + (1.0 - momentum) * batch_var


def batchnorm_forward(x, gamma, beta, state: BatchNormState, train: bool,
                      eps: float = 1e-5, update_running: bool = False,
                      momentum: float = 0.9):
    if train:
        mean = x.mean(axis=0)
        var = x.var(axis=0)  # biased, as normalization uses the batch itself
        if update_running:
            state.update(mean, var, momentum)
    else:
        if state.mean is None:
            raise RuntimeError("batch norm evaluated before any training step")
        mean, var = state.mean, state.var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = gamma * x_hat + beta
    return out, (x_hat, inv_std, gamma, train)


def batchnorm_backward(d_out, cache):
    x_hat, inv_std, gamma, train = cache
    d_gamma = (d_out * x_hat).sum(axis=0)
    d_beta = d_out.sum(axis=0)
    d_xhat = d_out * gamma
    if not train:
        # Frozen statistics are constants: the normalization is affine.
        return d_xhat * inv_std, d_gamma, d_beta
    n = x_hat.shape[0]
    dx = (inv_std / n) * (n * d_xhat - d_xhat.sum(axis=0)
                          - x_hat * (d_xhat * x_hat).sum(axis=0))
    return dx, d_gamma, d_beta


# -------------------------------------------------------- softmax + CE loss

def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs, labels, eps: float = 1e-12) -> float:
    """Mean negative log-likelihood of the true class."""
    p = np.clip(probs[np.arange(len(labels)), labels], eps, 1.0)
    return float(-np.log(p).mean())


def softmax_cross_entropy_backward(probs, labels):
    """d(mean CE)/d(logits) for probs = softmax(logits)."""
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)


# ---------------------------------------------------------------------- gru

def gru_layer_forward(x_seq, wx, wh, wc, b):
    """One GRU layer over a full sequence.

    x_seq: (B, T, D). Weights: wx (D, 3H) fused [update | reset | candidate],
    wh (H, 2H) for the gates, wc (H, H) for the candidate, b (3H,).
    Update gate keeps the previous state: h = z * h_prev + (1 - z) * cand,
    with the reset applied to h_prev before its candidate matmul.
    Returns the hidden sequence (B, T, H) and the BPTT cache.
    """
    if x_seq.ndim != 3 or x_seq.shape[2] != wx.shape[0]:
        raise ShapeError(f"gru input {x_seq.shape} vs wx {wx.shape}")
    batch, steps, _ = x_seq.shape
    hidden = wc.shape[0]
    h = np.zeros((batch, hidden))
    h_seq = np.empty((batch, steps, hidden))
    step_caches = []
    for t in range(steps):
        x_t = x_seq[:, t, :]
        gx = x_t @ wx + b
        gh = h @ wh
        z = sigmoid(gx[:, :hidden] + gh[:, :hidden])
        r = sigmoid(gx[:, hidden:2 * hidden] + gh[:, hidden:2 * hidden])
        rh = r * h
        cand = np.tanh(gx[:, 2 * hidden:] + rh @ wc)
        h_new = z * h + (1.0 - z) * cand
        step_caches.append((x_t, h, z, r, rh, cand))
        h = h_new
        h_seq[:, t, :] = h
    return h_seq, (step_caches, wx, wh, wc, hidden)


def gru_layer_backward(d_h_seq, cache):
    """BPTT through one layer.

    d_h_seq: (B, T, H) upstream gradient on every hidden step (zeros where
    only the last step feeds the loss). Returns (d_x_seq, d_wx, d_wh, d_wc, d_b).
    """
    step_caches, wx, wh, wc, hidden = cache
    batch, steps, _ = d_h_seq.shape
    d_wx = np.zeros_like(wx)
    d_wh = np.zeros_like(wh)
    d_wc = np.zeros_like(wc)
    d_b = np.zeros(wx.shape[1])
    d_x_seq = np.empty((batch, steps, wx.shape[0]))
    d_h = np.zeros((batch, hidden))
    for t in range(steps - 1, -1, -1):
        x_t, h_prev, z, r, rh, cand = step_caches[t]
        d_h = d_h + d_h_seq[:, t, :]
        d_z = d_h * (h_prev - cand)
        d_cand = d_h * (1.0 - z)
        d_h_prev = d_h * z
        d_ac = d_cand * (1.0 - cand * cand)
        d_rh = d_ac @ wc.T
        d_wc += rh.T @ d_ac
        d_r = d_rh * h_prev
        d_h_prev = d_h_prev + d_rh * r
        d_az = d_z * z * (1.0 - z)
        d_ar = d_r * r * (1.0 - r)
        d_gx = np.concatenate([d_az, d_ar, d_ac], axis=1)
        d_gh = np.concatenate([d_az, d_ar], axis=1)
        d_wx += x_t.T @ d_gx
        d_b += d_gx.sum(axis=0)
        d_wh += h_prev.T @ d_gh
        d_x_seq[:, t, :] = d_gx @ wx.T
        d_h = d_h_prev + d_gh @ wh.T
    return d_x_seq, d_wx, d_wh, d_wc, d_b


def gru_init(rng: np.random.Generator, in_dim: int, hidden: int) -> dict[str, np.ndarray]:
    return {
        "wx": xavier_uniform(rng, in_dim, 3 * hidden),
        "wh": xavier_uniform(rng, hidden, 2 * hidden),
        "wc": xavier_uniform(rng, hidden, hidden),
        "b": np.zeros(3 * hidden),
    }


# --------------------------------------------------------------------- adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    t = state.t
    for key, g in grads.items():
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + eps)
