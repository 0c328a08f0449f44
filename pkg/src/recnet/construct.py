"""Building recurrent networks from feedforward approximants of H and G.

:func:`embed` wires an approximant ``h_net`` of H into the H block and
``g_net`` of G into the G block. The H block carries ``2d`` extra neurons
holding ``(sigma(x_j), sigma(-x_j))`` so the current input reaches the G
block, where ``x_j = sigma(x_j) - sigma(-x_j)`` is recovered. The scalar
output of ``h_net`` never materializes as a neuron: its output weights are
multiplied into the recurrent weights that read layer ``l1``.

The error of such a network against the true ``G(x_{k+1}, H_k(...))`` is
controlled by :func:`lemma4_bound`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .exceptions import ConfigurationError, PreconditionError
from .network import FeedforwardNet, NetConfig, RecurrentNetwork

# re-exported so callers can build approximants from here
__all__ = [
    "FeedforwardNet",
    "Lemma4Instance",
    "embed",
    "embedded_reference",
    "geometric_factor",
    "lemma4_bound",
    "measure_sup_error",
    "propagate",
    "train_feedforward",
]


def geometric_factor(lip_h: float, k: int) -> float:
    """1 + c + ... + c^(k-1), i.e. (c^k - 1)/(c - 1), with the value k at c = 1."""
    if lip_h <= 0 or k < 1:
        raise PreconditionError("need lip_h > 0 and k >= 1")
    if lip_h == 1.0:
        return float(k)
    return (lip_h**k - 1.0) / (lip_h - 1.0)


@dataclass(frozen=True)
class Lemma4Instance:
    k: int
    A: float
    lip_g: float
    lip_h: float
    sup_g_err: float
    sup_h_err: float

    def __post_init__(self):
        if self.k < 1 or self.A < 1:
            raise PreconditionError("need k >= 1 and A >= 1")
        if self.lip_g <= 1 or self.lip_h <= 1:
            raise PreconditionError("Lipschitz constants must exceed 1")
        if self.sup_g_err < 0 or self.sup_h_err < 0:
            raise PreconditionError("sup errors are nonnegative")

    @property
    def hypothesis_holds(self) -> bool:
        return geometric_factor(self.lip_h, self.k) * self.sup_h_err <= 1.0


def lemma4_bound(inst: Lemma4Instance) -> float:
    """sup|g - g_hat| + lip_g * geometric_factor(lip_h, k) * sup|h - h_hat|."""
    if not inst.hypothesis_holds:
        raise PreconditionError(
            "error propagation bound needs geometric_factor(lip_h, k) * sup_h_err <= 1"
        )
    return inst.sup_g_err + inst.lip_g * geometric_factor(inst.lip_h, inst.k) * inst.sup_h_err


def propagate(h, window):
    """States z_1..z_k of z_t = h(x_t, z_{t-1}), z_0 = 0, for a batch of windows (B, k+1, d).

    ``h`` maps ``(x (B, d), z (B,))`` to ``(B,)``. The last window entry is
    not consumed. Returns an array of shape (B, k).
    """
    window = np.asarray(window, dtype=np.float64)
    z = np.zeros(window.shape[0])
    states = []
    for t in range(window.shape[1] - 1):
        z = h(window[:, t, :], z)
        states.append(z)
    return np.stack(states, axis=1)


def _net_as_function(net: FeedforwardNet):
    def f(x, z):
        return net(np.column_stack([x, z]))

    return f


def _check_approximant(net: FeedforwardNet, d: int, label: str):
    if net.input_dim != d + 1:
        raise ConfigurationError(f"{label} must take d+1={d + 1} inputs, got {net.input_dim}")
    if len(set(net.widths)) != 1:
        raise ConfigurationError(f"{label} needs equal hidden widths, got {net.widths}")


def embed(h_net: FeedforwardNet, g_net: FeedforwardNet, k: int, d: int) -> RecurrentNetwork:
    """Recurrent network computing ``g_net(x_{k+1}, z_k)`` with ``z_t = h_net(x_t, z_{t-1})``.

    The result lives in the class with ``k1 = width(h_net) + 2d``,
    ``k2 = width(g_net)``, ``l1 = depth(h_net)``, ``l2 = depth(g_net)`` and
    hidden-layer biases enabled.
    """
    _check_approximant(h_net, d, "h_net")
    _check_approximant(g_net, d, "g_net")
    kh, kg = h_net.widths[0], g_net.widths[0]
    l1, l2 = h_net.depth, g_net.depth
    width = kh + 2 * d
    config = NetConfig(k=k, d=d, k1=width, k2=kg, l1=l1, l2=l2, hidden_bias=True)
    h_cols = slice(0, kh)

    def pair_cols(j, offset=0):
        return offset + kh + 2 * j, offset + kh + 2 * j + 1

    w_in, b_in = h_net.weights[0], h_net.biases[0]
    layer1 = np.zeros((width, d + 1))
    layer1[:kh, 0] = b_in
    layer1[:kh, 1:] = w_in[:, :d]
    for j in range(d):
        plus, minus = pair_cols(j)
        layer1[plus, 1 + j] = 1.0
        layer1[minus, 1 + j] = -1.0
    rec1 = np.zeros((width, width))
    rec1[:kh, h_cols] = np.outer(w_in[:, d], h_net.output_w)

    hidden = []
    for w, b in zip(h_net.weights[1:], h_net.biases[1:]):
        layer = np.zeros((width, width + 1))
        layer[:kh, 0] = b
        layer[:kh, 1 : 1 + kh] = w
        for j in range(d):
            for col in pair_cols(j):
                layer[col, 1 + col] = 1.0
        hidden.append(layer)

    g_in, g_b = g_net.weights[0], g_net.biases[0]
    bridge = np.zeros((kg, width + 1))
    bridge[:, 0] = g_b
    for j in range(d):
        plus, minus = pair_cols(j, offset=1)
        bridge[:, plus] = g_in[:, j]
        bridge[:, minus] = -g_in[:, j]
    hidden.append(bridge)
    rec_bridge = np.zeros((kg, width))
    rec_bridge[:, h_cols] = np.outer(g_in[:, d], h_net.output_w)

    for w, b in zip(g_net.weights[1:], g_net.biases[1:]):
        hidden.append(np.column_stack([b, w]))

    return RecurrentNetwork(config, layer1, tuple(hidden), rec1, rec_bridge, g_net.output_w.copy())


def embedded_reference(h_net: FeedforwardNet, g_net: FeedforwardNet, windows) -> np.ndarray:
    """Direct evaluation of ``g_net(x_{k+1}, z_k)`` on windows (B, k+1, d)."""
    windows = np.asarray(windows, dtype=np.float64)
    z = propagate(_net_as_function(h_net), windows)[:, -1]
    return g_net(np.column_stack([windows[:, -1, :], z]))


def _box_points(dim: int, half_width: float, samples: int, seed: int) -> np.ndarray:
    pts = qmc.Halton(d=dim, scramble=True, seed=seed).random(samples)
    pts = (2.0 * pts - 1.0) * half_width
    if dim <= 12:
        corners = np.array(np.meshgrid(*[[-half_width, half_width]] * dim, indexing="ij"))
        pts = np.vstack([corners.reshape(dim, -1).T, pts])
    return pts


def measure_sup_error(f_true, f_net, box_half_width: float, samples: int, seed: int = 0) -> float:
    """Largest |f_true - f_net| over corner points and quasi-random points of the box.

    This is a lower bound on the sup norm. ``f_true`` and ``f_net`` take
    arrays of shape (m, input_dim). The point set for ``samples = N`` is a
    prefix of the one for ``2N``.
    """
    if samples < 1:
        raise PreconditionError("samples must be at least 1")
    dim = f_net.input_dim
    pts = _box_points(dim, box_half_width, samples, seed)
    return float(np.max(np.abs(np.asarray(f_true(pts)) - np.asarray(f_net(pts)))))


def train_feedforward(func, input_dim: int, widths, box_half_width: float, samples: int = 4096,
                      steps: int = 3000, learning_rate: float = 0.01, seed: int = 0) -> FeedforwardNet:
    """Least-squares ReLU approximant of ``func`` on the box, trained with Adam.

    Stands in for an approximation-theoretic construction when an explicit
    approximant is needed.
    """
    rng = np.random.default_rng(seed)
    X = (2.0 * qmc.Halton(d=input_dim, scramble=True, seed=seed).random(samples) - 1.0) * box_half_width
    y = np.asarray(func(X), dtype=np.float64)
    net = FeedforwardNet.random(input_dim, widths, rng, scale=2.0)
    params = [*net.weights, *net.biases, net.output_w]
    params = [p.copy() for p in params]
    depth = len(widths)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2 = 0.9, 0.999
    best, best_loss = [p.copy() for p in params], math.inf
    for step in range(1, steps + 1):
        lr = learning_rate * 0.5 * (1 + math.cos(math.pi * step / steps))
        Ws, bs, out_w = params[:depth], params[depth : 2 * depth], params[-1]
        acts = [X]
        for w, b in zip(Ws, bs):
            acts.append(np.maximum(acts[-1] @ w.T + b, 0.0))
        resid = acts[-1] @ out_w - y
        loss = float(np.mean(resid**2))
        if loss < best_loss:
            best, best_loss = [p.copy() for p in params], loss
        dout = 2.0 * resid / len(y)
        grads_w, grads_b = [None] * depth, [None] * depth
        g_out = acts[-1].T @ dout
        dA = dout[:, None] * out_w[None, :]
        for li in range(depth - 1, -1, -1):
            D = dA * (acts[li + 1] > 0)
            grads_w[li] = D.T @ acts[li]
            grads_b[li] = D.sum(axis=0)
            dA = D @ Ws[li]
        grads = [*grads_w, *grads_b, g_out]
        for i, g in enumerate(grads):
            m[i] = beta1 * m[i] + (1 - beta1) * g
            v[i] = beta2 * v[i] + (1 - beta2) * g**2
            params[i] = params[i] - lr * (m[i] / (1 - beta1**step)) / (np.sqrt(v[i] / (1 - beta2**step)) + 1e-8)
    return FeedforwardNet(input_dim, tuple(best[:depth]), tuple(best[depth : 2 * depth]), best[-1])
