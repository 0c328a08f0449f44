"""Recurrent ReLU networks with two fixed recurrence sites, and plain feedforward nets.

A network of the class has ``l1`` layers of width ``k1`` (the H block)
followed by ``l2`` layers of width ``k2`` (the G block). The only recurrent
connections read layer ``l1`` at the previous time step and feed layer 1
and layer ``l1 + 1``. Inputs are passed oldest first, ``x_1, ..., x_{k+1}``.

All affine maps are evaluated by :func:`_accumulate`, which adds one column
at a time in ascending index order. Keeping that order fixed makes the
recurrent evaluation and the unfolded feedforward evaluation bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError

FORMAT_VERSION = 1


def relu(z):
    """max(z, 0), elementwise for arrays."""
    if np.isscalar(z):
        return float(z) if z > 0 else 0.0
    return np.maximum(z, 0.0)


def _accumulate(acc, v, w):
    # acc: (B, n_out), v: (B, n_in), w: (n_out, n_in); left-to-right over n_in
    for s in range(w.shape[1]):
        acc = acc + v[:, s : s + 1] * w[:, s]
    return acc


def _affine(v, w, bias=None):
    if bias is None:
        acc = np.zeros((v.shape[0], w.shape[0]))
    else:
        acc = np.broadcast_to(bias, (v.shape[0], w.shape[0])).copy()
    return _accumulate(acc, v, w)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetConfig:
    k: int
    d: int
    k1: int
    k2: int
    l1: int
    l2: int
    hidden_bias: bool = False

    def __post_init__(self):
        for name in ("k", "d", "k1", "k2", "l1", "l2"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        object.__setattr__(self, "hidden_bias", bool(self.hidden_bias))

    @property
    def n_layers(self) -> int:
        return self.l1 + self.l2

    def hidden_shapes(self) -> list[tuple[int, int]]:
        """Weight shapes for layers 2..L (bias column included when enabled)."""
        extra = 1 if self.hidden_bias else 0
        shapes = []
        for layer in range(2, self.n_layers + 1):
            rows = self.k1 if layer <= self.l1 else self.k2
            cols = self.k1 if layer <= self.l1 + 1 else self.k2
            shapes.append((rows, cols + extra))
        return shapes

    def parameter_shapes(self) -> list[tuple[int, ...]]:
        """Shapes in flattening order: layer 1, hidden layers, both recurrent maps, output."""
        return (
            [(self.k1, self.d + 1)]
            + self.hidden_shapes()
            + [(self.k1, self.k1), (self.k2, self.k1), (self.k2,)]
        )

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d": self.d,
            "k1": self.k1,
            "k2": self.k2,
            "l1": self.l1,
            "l2": self.l2,
            "hidden_bias": self.hidden_bias,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetConfig":
        return cls(**{key: data[key] for key in ("k", "d", "k1", "k2", "l1", "l2")},
                   hidden_bias=data.get("hidden_bias", False))


def count_distinct_weights(config: NetConfig) -> int:
    """Number of free parameters of one network; weights are shared over time."""
    k1, k2 = config.k1, config.k2
    count = (
        k1 * (config.d + 1)
        + (config.l1 - 1) * k1 * k1
        + k2 * k1
        + (config.l2 - 1) * k2 * k2
        + k1 * k1
        + k2 * k1
        + k2
    )
    if config.hidden_bias:
        count += (config.l1 - 1) * k1 + config.l2 * k2
    return count


@dataclass(frozen=True)
class RecurrentNetwork:
    """One member of the recurrent class.

    ``layer1_w[:, 0]`` is the bias of layer 1 (it multiplies the constant
    input coordinate). ``hidden_w[i]`` holds layer ``i + 2``; when
    ``config.hidden_bias`` is set its column 0 is a bias. ``rec_w_layer1``
    and ``rec_w_bridge`` read layer ``l1`` at time ``t - 1`` and feed layer 1
    and layer ``l1 + 1`` respectively.
    """

    config: NetConfig
    layer1_w: np.ndarray
    hidden_w: tuple
    rec_w_layer1: np.ndarray
    rec_w_bridge: np.ndarray
    output_w: np.ndarray

    def __post_init__(self):
        cfg = self.config
        object.__setattr__(self, "layer1_w", _frozen(self.layer1_w))
        object.__setattr__(self, "hidden_w", tuple(_frozen(w) for w in self.hidden_w))
        object.__setattr__(self, "rec_w_layer1", _frozen(self.rec_w_layer1))
        object.__setattr__(self, "rec_w_bridge", _frozen(self.rec_w_bridge))
        object.__setattr__(self, "output_w", _frozen(self.output_w))

        if len(self.hidden_w) != cfg.n_layers - 1:
            raise ConfigurationError(
                f"expected {cfg.n_layers - 1} hidden weight matrices, got {len(self.hidden_w)}"
            )
        for array, shape in zip(self.parameters(), cfg.parameter_shapes()):
            if array.shape != tuple(shape):
                raise ConfigurationError(f"weight shape {array.shape} does not match {shape}")
            if not np.all(np.isfinite(array)):
                raise ConfigurationError("weights must be finite")

    def parameters(self) -> list[np.ndarray]:
        return [self.layer1_w, *self.hidden_w, self.rec_w_layer1, self.rec_w_bridge, self.output_w]

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    @classmethod
    def from_flat(cls, config: NetConfig, theta) -> "RecurrentNetwork":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (count_distinct_weights(config),):
            raise ConfigurationError(
                f"parameter vector has length {theta.size}, "
                f"expected {count_distinct_weights(config)}"
            )
        arrays, offset = [], 0
        for shape in config.parameter_shapes():
            size = int(np.prod(shape))
            arrays.append(theta[offset : offset + size].reshape(shape))
            offset += size
        return cls(config, arrays[0], tuple(arrays[1:-3]), arrays[-3], arrays[-2], arrays[-1])

    @classmethod
    def zeros(cls, config: NetConfig) -> "RecurrentNetwork":
        return cls.from_flat(config, np.zeros(count_distinct_weights(config)))

    @classmethod
    def random(cls, config: NetConfig, rng: np.random.Generator, scale: float = 1.0):
        """Weights i.i.d. uniform on ``[-scale / sqrt(fan_in), scale / sqrt(fan_in)]``."""
        arrays = []
        for shape in config.parameter_shapes():
            fan_in = shape[1] if len(shape) == 2 else shape[0]
            bound = scale / np.sqrt(fan_in)
            arrays.append(rng.uniform(-bound, bound, size=shape))
        return cls(config, arrays[0], tuple(arrays[1:-3]), arrays[-3], arrays[-2], arrays[-1])

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "layer1_w": self.layer1_w.tolist(),
            "hidden_w": [w.tolist() for w in self.hidden_w],
            "rec_w_layer1": self.rec_w_layer1.tolist(),
            "rec_w_bridge": self.rec_w_bridge.tolist(),
            "output_w": self.output_w.tolist(),
            "format_version": FORMAT_VERSION,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RecurrentNetwork":
        if data.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported format_version {data.get('format_version')!r}")
        config = NetConfig.from_dict(data["config"])
        hidden = [np.array(w, dtype=np.float64).reshape(shape)
                  for w, shape in zip(data["hidden_w"], config.hidden_shapes())]
        return cls(
            config,
            np.array(data["layer1_w"], dtype=np.float64),
            tuple(hidden),
            np.array(data["rec_w_layer1"], dtype=np.float64),
            np.array(data["rec_w_bridge"], dtype=np.float64).reshape(config.k2, config.k1),
            np.array(data["output_w"], dtype=np.float64),
        )

    def save(self, path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def load(cls, path) -> "RecurrentNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ActivationTrace:
    """Post-activation values ``layers[t][l]`` for time ``t + 1`` and layer ``l + 1``."""

    layers: list = field(default_factory=list)

    def values(self, t: int, layer: int) -> np.ndarray:
        """Activations of ``layer`` (1-based) at time ``t`` (1-based)."""
        return self.layers[t - 1][layer - 1]


def check_windows(net_or_config, inputs) -> np.ndarray:
    """Coerce inputs to shape (B, k+1, d); a single window may be passed as (k+1, d)."""
    cfg = net_or_config.config if isinstance(net_or_config, RecurrentNetwork) else net_or_config
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.k + 1, cfg.d):
        raise ConfigurationError(
            f"inputs of shape {np.shape(inputs)} do not match k+1={cfg.k + 1} steps of dimension d={cfg.d}"
        )
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("inputs must be finite")
    return x


def _hidden_layer(cfg: NetConfig, w, a):
    if cfg.hidden_bias:
        return _affine(a, w[:, 1:], w[:, 0])
    return _affine(a, w)


def forward_batch(net: RecurrentNetwork, windows, full_trace: bool = False):
    """Evaluate the network on a batch of windows of shape (B, k+1, d).

    Returns ``(outputs, acts)`` where ``acts[t]`` lists the activation arrays
    computed at time ``t`` (0-based). The G block only influences the output
    at the last time step, so earlier times stop at layer ``l1`` unless
    ``full_trace`` is set.
    """
    cfg = net.config
    x = check_windows(net, windows)
    steps = cfg.k + 1
    acts = []
    prev = None
    for t in range(steps):
        pre = _affine(x[:, t, :], net.layer1_w[:, 1:], net.layer1_w[:, 0])
        if t > 0:
            pre = _accumulate(pre, prev, net.rec_w_layer1)
        a = relu(pre)
        layer_acts = [a]
        for w in net.hidden_w[: cfg.l1 - 1]:
            a = relu(_hidden_layer(cfg, w, a))
            layer_acts.append(a)
        h_out = a
        if full_trace or t == steps - 1:
            pre = _hidden_layer(cfg, net.hidden_w[cfg.l1 - 1], h_out)
            if t > 0:
                pre = _accumulate(pre, prev, net.rec_w_bridge)
            a = relu(pre)
            layer_acts.append(a)
            for w in net.hidden_w[cfg.l1 :]:
                a = relu(_hidden_layer(cfg, w, a))
                layer_acts.append(a)
        acts.append(layer_acts)
        prev = h_out
    out = _accumulate(np.zeros((x.shape[0], 1)), acts[-1][-1], net.output_w[None, :])
    return out[:, 0], acts


def forward(net: RecurrentNetwork, inputs):
    """Network output at time k+1 for one window (oldest first) and the full trace."""
    x = check_windows(net, inputs)
    if x.shape[0] != 1:
        raise ConfigurationError("forward takes a single window; use forward_batch for batches")
    out, acts = forward_batch(net, x, full_trace=True)
    trace = ActivationTrace([[layer[0].copy() for layer in step] for step in acts])
    return float(out[0]), trace


# ---------------------------------------------------------------------------
# Plain feedforward networks


@dataclass(frozen=True)
class FeedforwardNet:
    """ReLU network ``x -> output_w . sigma(W_L ... sigma(W_1 x + b_1) ... + b_L)``."""

    input_dim: int
    weights: tuple
    biases: tuple
    output_w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_frozen(b) for b in self.biases))
        object.__setattr__(self, "output_w", _frozen(self.output_w))
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("need one bias vector per layer and at least one layer")
        fan_in = self.input_dim
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != fan_in or b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer of shape {w.shape} does not chain from width {fan_in}")
            fan_in = w.shape[0]
        if self.output_w.shape != (fan_in,):
            raise ConfigurationError(f"output weights must have length {fan_in}")

    @property
    def widths(self) -> list[int]:
        return [w.shape[0] for w in self.weights]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def max_width(self) -> int:
        return max(self.widths)

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases)) + self.output_w.size

    def hidden(self, X) -> list[np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise ConfigurationError(f"expected inputs of dimension {self.input_dim}, got {X.shape[1]}")
        acts, a = [], X
        for w, b in zip(self.weights, self.biases):
            a = relu(_affine(a, w, b))
            acts.append(a)
        return acts

    def __call__(self, X) -> np.ndarray:
        """Outputs for a batch (B, input_dim) as shape (B,)."""
        a = self.hidden(X)[-1]
        return _accumulate(np.zeros((a.shape[0], 1)), a, self.output_w[None, :])[:, 0]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
            "output_w": self.output_w.tolist(),
            "format_version": FORMAT_VERSION,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeedforwardNet":
        if data.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported format_version {data.get('format_version')!r}")
        layers = data["layers"]
        return cls(
            int(data["input_dim"]),
            tuple(np.array(layer["w"], dtype=np.float64).reshape(len(layer["b"]), -1) for layer in layers),
            tuple(np.array(layer["b"], dtype=np.float64) for layer in layers),
            np.array(data["output_w"], dtype=np.float64),
        )

    @classmethod
    def random(cls, input_dim: int, widths, rng: np.random.Generator, scale: float = 1.0):
        weights, biases, fan_in = [], [], input_dim
        for width in widths:
            bound = scale / np.sqrt(fan_in + 1)
            weights.append(rng.uniform(-bound, bound, size=(width, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=width))
            fan_in = width
        return cls(input_dim, tuple(weights), tuple(biases),
                   rng.uniform(-scale, scale, size=fan_in) / np.sqrt(fan_in))


# ---------------------------------------------------------------------------
# Unfolding in time


def unfold(net: RecurrentNetwork) -> FeedforwardNet:
    """Rewrite the network as a layered feedforward net over ``concat(x_1, ..., x_{k+1})``.

    Time step ``t`` occupies layers ``(t-1)(l1+l2)+1 .. t(l1+l2)``. Inputs not
    yet consumed travel as ``(sigma(x), sigma(-x))`` pairs and are recovered as
    ``sigma(x) - sigma(-x)``. Layer-``l1`` activations are nonnegative, so one
    identity channel each carries them forward. Before the last step the G
    block is replaced by pass-through layers since it cannot reach the output.

    Each layer lays its channels out as ``[pairs for x_{t+1}..x_{k+1}, core,
    carried]``, which reproduces the recurrent summation order term by term,
    so the two evaluations agree exactly.
    """
    cfg = net.config
    d, k1, steps = cfg.d, cfg.k1, cfg.k + 1
    weights, biases = [], []

    # previous layout: offsets of each pending input, core block, carried block
    prev_raw = True
    prev_pairs = {tau: (tau - 1) * d for tau in range(1, steps + 1)}
    prev_core = (0, 0)
    prev_carried = (0, 0)
    prev_width = d * steps

    def x_columns(row_w, tau, coeffs):
        # coeffs: (rows, d) weights on x_tau
        start = prev_pairs[tau]
        for j in range(d):
            if prev_raw:
                row_w[:, start + j] = coeffs[:, j]
            else:
                row_w[:, start + 2 * j] = coeffs[:, j]
                row_w[:, start + 2 * j + 1] = -coeffs[:, j]

    def split_bias(w):
        if cfg.hidden_bias:
            return w[:, 1:], w[:, 0]
        return w, np.zeros(w.shape[0])

    for t in range(1, steps + 1):
        for layer in range(1, cfg.n_layers + 1):
            future = list(range(t + 1, steps + 1))
            in_g_block = layer > cfg.l1
            if not in_g_block:
                core_size = k1
            else:
                core_size = cfg.k2 if t == steps else k1
            carry = t == steps and steps > 1 and not in_g_block
            width = 2 * d * len(future) + core_size + (k1 if carry else 0)
            w = np.zeros((width, prev_width))
            b = np.zeros(width)

            pairs, row = {}, 0
            for tau in future:
                pairs[tau] = row
                for j in range(d):
                    if prev_raw:
                        w[row + 2 * j, prev_pairs[tau] + j] = 1.0
                        w[row + 2 * j + 1, prev_pairs[tau] + j] = -1.0
                    else:
                        w[row + 2 * j, prev_pairs[tau] + 2 * j] = 1.0
                        w[row + 2 * j + 1, prev_pairs[tau] + 2 * j + 1] = 1.0
                row += 2 * d

            core = slice(row, row + core_size)
            pc = slice(prev_core[0], prev_core[0] + prev_core[1])
            if layer == 1:
                x_block = np.zeros((core_size, prev_width))
                x_columns(x_block, t, net.layer1_w[:, 1:])
                w[core] = x_block
                b[core] = net.layer1_w[:, 0]
                if t > 1:
                    w[core, pc] = net.rec_w_layer1
            elif layer <= cfg.l1 or t == steps:
                lw, lb = split_bias(net.hidden_w[layer - 2])
                w[core, pc] = lw
                b[core] = lb
                if layer == cfg.l1 + 1 and t > 1:
                    pcar = slice(prev_carried[0], prev_carried[0] + prev_carried[1])
                    w[core, pcar] = net.rec_w_bridge
            else:
                w[core, pc] = np.eye(k1)
            row += core_size

            carried = (row, k1 if carry else 0)
            if carry:
                source = pc if layer == 1 else slice(prev_carried[0], prev_carried[0] + k1)
                w[row : row + k1, source] = np.eye(k1)
                row += k1

            weights.append(w)
            biases.append(b)
            prev_raw = False
            prev_pairs = pairs
            prev_core = (core.start, core_size)
            prev_carried = carried
            prev_width = width

    return FeedforwardNet(d * steps, tuple(weights), tuple(biases), net.output_w.copy())
