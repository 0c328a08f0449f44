"""Simulation of the dependent-data regression model.

The response at time ``t`` is ``Y_t = G(X_t, H_k(X_{t-1}, ..., X_{t-k})) + eps_t``
with ``H_k`` built by iterating ``z <- H(x, z)`` from ``z = 0`` over the
``k`` previous inputs, oldest first. ``X_t`` are i.i.d. uniform on
``[0, 1]^d`` and the noise is Gaussian.

G and H are chosen from a small catalog of families whose range bound and
Lipschitz constant in the state argument are known in closed form.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, PreconditionError

FORMAT_VERSION = 1

# RNG stream tags; each stream is an independent Philox key derived from (seed, tag)
STREAM_X = 0
STREAM_NOISE = 1


def philox(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (seed, stream) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), stream])))


# ---------------------------------------------------------------------------
# Function catalog. Every entry maps (x: (B, d), z: (B,)) -> (B,).


def _g_sine(x, z, amp=1.0, gamma=1.0, offset=0.0):
    return amp * np.sin(np.pi * x[:, 0]) + gamma * z + offset


def _g_linear(x, z, coef=1.0, gamma=0.0, offset=0.0):
    return coef * x[:, 0] + gamma * z + offset


def _g_holder(x, z, s=0.5, gamma=1.0):
    return np.abs(x[:, 0] - 0.5) ** s + gamma * z


def _h_tanh(x, z, alpha=1.0, beta=0.8):
    return alpha * np.tanh(beta * (x.mean(axis=1) + z))


def _h_zero(x, z):
    return np.zeros_like(z)


def _h_linear(x, z, coef=1.0, gamma=0.5, offset=0.0):
    return coef * x[:, 0] + gamma * z + offset


def _linear_range(p):
    # |h| <= A on [0,1]^d x [-A, A] needs |gamma| < 1
    gamma = abs(p.get("gamma", 0.5))
    if gamma >= 1.0:
        return float("inf")
    return (abs(p.get("coef", 1.0)) + abs(p.get("offset", 0.0))) / (1.0 - gamma)


def _h_holder(x, z, alpha=1.0, beta=0.8, s=0.5):
    return alpha * np.sin(beta * z + np.pi * np.abs(x.mean(axis=1) - 0.5) ** s)


G_CATALOG = {
    "sine": (_g_sine, lambda p: abs(p.get("gamma", 1.0))),
    "linear": (_g_linear, lambda p: abs(p.get("gamma", 0.0))),
    "holder": (_g_holder, lambda p: abs(p.get("gamma", 1.0))),
}

# family -> (function, Lipschitz constant in z, range bound)
H_CATALOG = {
    "tanh": (
        _h_tanh,
        lambda p: abs(p.get("alpha", 1.0) * p.get("beta", 0.8)),
        lambda p: abs(p.get("alpha", 1.0)),
    ),
    "zero": (_h_zero, lambda p: 0.0, lambda p: 0.0),
    "linear": (_h_linear, lambda p: abs(p.get("gamma", 0.5)), _linear_range),
    "holder": (
        _h_holder,
        lambda p: abs(p.get("alpha", 1.0) * p.get("beta", 0.8)),
        lambda p: abs(p.get("alpha", 1.0)),
    ),
}


@dataclass(frozen=True)
class ModelSpec:
    """Data-generating process: catalog choices for G and H plus noise and smoothness metadata.

    ``p_g``, ``p_h``, ``c_g``, ``c_h`` describe the smoothness class the
    schedule should assume; they do not change the simulated data.
    """

    d: int = 1
    k: int = 2
    g_name: str = "sine"
    g_params: dict = field(default_factory=dict)
    h_name: str = "tanh"
    h_params: dict = field(default_factory=dict)
    noise_sigma: float = 0.25
    p_g: float = 1.0
    p_h: float = 1.0
    c_g: float = 1.0
    c_h: float = 1.0
    name: str = "default"

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ConfigurationError("d and k must be positive")
        if self.g_name not in G_CATALOG:
            raise ConfigurationError(f"unknown G family {self.g_name!r}; choose from {sorted(G_CATALOG)}")
        if self.h_name not in H_CATALOG:
            raise ConfigurationError(f"unknown H family {self.h_name!r}; choose from {sorted(H_CATALOG)}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be nonnegative")

    def g(self, x, z):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return G_CATALOG[self.g_name][0](x, np.asarray(z, dtype=np.float64), **self.g_params)

    def h(self, x, z):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return H_CATALOG[self.h_name][0](x, np.asarray(z, dtype=np.float64), **self.h_params)

    @property
    def lip_g(self) -> float:
        return float(G_CATALOG[self.g_name][1](self.g_params))

    @property
    def lip_h(self) -> float:
        return float(H_CATALOG[self.h_name][1](self.h_params))

    @property
    def range_bound(self) -> float:
        """A >= 1 with |H(x, z)| <= A for x in [0,1]^d and |z| <= A (inf if none exists)."""
        return max(1.0, float(H_CATALOG[self.h_name][2](self.h_params)))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "k": self.k,
            "g": {"family": self.g_name, **self.g_params},
            "h": {"family": self.h_name, **self.h_params},
            "noise_sigma": self.noise_sigma,
            "p_g": self.p_g,
            "p_h": self.p_h,
            "c_g": self.c_g,
            "c_h": self.c_h,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        g = dict(data.get("g", {"family": "sine"}))
        h = dict(data.get("h", {"family": "tanh"}))
        return cls(
            d=int(data.get("d", 1)),
            k=int(data.get("k", 2)),
            g_name=g.pop("family"),
            g_params=g,
            h_name=h.pop("family"),
            h_params=h,
            noise_sigma=float(data.get("noise_sigma", 0.25)),
            p_g=float(data.get("p_g", 1.0)),
            p_h=float(data.get("p_h", 1.0)),
            c_g=float(data.get("c_g", 1.0)),
            c_h=float(data.get("c_h", 1.0)),
            name=str(data.get("name", "default")),
        )

    @classmethod
    def load(cls, path) -> "ModelSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_windows(spec: ModelSpec, xs, length: int) -> np.ndarray:
    x = np.asarray(xs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (length, spec.d):
        raise ConfigurationError(
            f"expected {length} vectors of dimension {spec.d}, got array of shape {np.shape(xs)}"
        )
    return x


def hk(spec: ModelSpec, xs_past):
    """State after iterating H over the k past inputs (oldest first), starting from 0.

    Accepts a single history of shape (k, d) or a batch (B, k, d).
    """
    x = _as_windows(spec, xs_past, spec.k)
    z = np.zeros(x.shape[0])
    for t in range(spec.k):
        z = spec.h(x[:, t, :], z)
    return float(z[0]) if np.ndim(xs_past) == 2 else z


def regression_fn(spec: ModelSpec, xs_window):
    """m(x_1, ..., x_{k+1}) = G(x_{k+1}, H_k(x_k, ..., x_1)) for one or a batch of windows."""
    x = _as_windows(spec, xs_window, spec.k + 1)
    z = hk(spec, x[:, :-1, :])
    m = spec.g(x[:, -1, :], z)
    return float(m[0]) if np.ndim(xs_window) == 2 else m


def bayes_risk(spec: ModelSpec) -> float:
    return float(spec.noise_sigma) ** 2


@dataclass(frozen=True)
class Dataset:
    """One simulated trajectory.

    ``usable[t]`` is False for the first ``k`` responses, which lack a full
    history and hold the noiseless value on a zero-padded window.
    """

    spec: ModelSpec
    seed: int
    xs: np.ndarray
    ys: np.ndarray
    usable: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ys)

    def windows(self):
        """Training pairs ``(windows (n-k, k+1, d), targets (n-k,))`` for t = k+1..n."""
        return make_windows(self.xs, self.k), self.ys[self.k :]

    @property
    def k(self) -> int:
        return self.spec.k

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        d = self.spec.d
        with open(out / "dataset.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *[f"x_{j + 1}" for j in range(d)], "y", "usable"])
            for t in range(self.n):
                writer.writerow([t + 1, *map(repr, self.xs[t].tolist()), repr(float(self.ys[t])),
                                 int(self.usable[t])])
        sidecar = {
            "spec_name": self.spec.name,
            "params": self.spec.to_dict(),
            "seed": int(self.seed),
            "n": self.n,
            "format_version": FORMAT_VERSION,
        }
        (out / "dataset.json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, out_dir) -> "Dataset":
        out = Path(out_dir)
        meta = json.loads((out / "dataset.json").read_text())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported format_version {meta.get('format_version')!r}")
        spec = ModelSpec.from_dict(meta["params"])
        rows = np.loadtxt(out / "dataset.csv", delimiter=",", skiprows=1, ndmin=2)
        if rows.shape[0] != meta["n"]:
            raise ConfigurationError("row count in dataset.csv does not match the sidecar")
        xs = rows[:, 1 : 1 + spec.d]
        return cls(spec, int(meta["seed"]), xs, rows[:, 1 + spec.d], rows[:, 2 + spec.d].astype(bool))


def make_windows(xs, k: int) -> np.ndarray:
    """All length-(k+1) windows of a trajectory, oldest first: shape (n-k, k+1, d)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    n = xs.shape[0]
    if n < k + 1:
        raise PreconditionError(f"need at least k+1={k + 1} observations, got {n}")
    idx = np.arange(n - k)[:, None] + np.arange(k + 1)[None, :]
    return xs[idx]


def simulate(spec: ModelSpec, n: int, seed: int) -> Dataset:
    if n < spec.k + 1:
        raise PreconditionError(f"n must be at least k+1={spec.k + 1}, got {n}")
    xs = philox(seed, STREAM_X).uniform(0.0, 1.0, size=(n, spec.d))
    eps = philox(seed, STREAM_NOISE).normal(0.0, 1.0, size=n - spec.k) * spec.noise_sigma

    padded = np.vstack([np.zeros((spec.k, spec.d)), xs])
    m = regression_fn(spec, make_windows(padded, spec.k))
    ys = m.copy()
    ys[spec.k :] += eps
    usable = np.arange(n) >= spec.k
    return Dataset(spec, int(seed), xs, ys, usable)
