"""Least-squares fitting of recurrent networks and the truncated estimate.

The exact empirical risk minimizer is out of reach, so :func:`fit` runs
several Adam restarts from random initializations and keeps the best iterate
seen by any of them. Gradients come from reverse accumulation through the
time-unfolded graph, summing the contributions of shared weights over time.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .exceptions import ConfigurationError, FitFailure, PreconditionError
from .network import NetConfig, RecurrentNetwork, check_windows, forward_batch


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    steps: int = 1500
    restarts: int = 2
    batch: str | int = "full"
    moment_decay_1: float = 0.9
    moment_decay_2: float = 0.999

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.steps < 1 or self.restarts < 1:
            raise ConfigurationError("steps and restarts must be at least 1")
        if self.batch != "full" and (not isinstance(self.batch, int) or self.batch < 1):
            raise ConfigurationError("batch must be 'full' or a positive integer")
        for beta in (self.moment_decay_1, self.moment_decay_2):
            if not 0.0 < beta < 1.0:
                raise ConfigurationError("moment decays must lie in (0, 1)")


@dataclass(frozen=True)
class EstimatorConfig:
    net: NetConfig
    c2: float = 1.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    init_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.c2 <= 0:
            raise ConfigurationError("c2 must be positive")
        if self.init_scale <= 0:
            raise ConfigurationError("init_scale must be positive")

    def to_dict(self) -> dict:
        return {
            "net": self.net.to_dict(),
            "c2": self.c2,
            "optimizer": asdict(self.optimizer),
            "init_scale": self.init_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        return cls(
            net=NetConfig.from_dict(data["net"]),
            c2=float(data.get("c2", 1.0)),
            optimizer=OptimizerConfig(**data.get("optimizer", {})),
            init_scale=float(data.get("init_scale", 2.0)),
            seed=int(data.get("seed", 0)),
        )


@dataclass
class FitReport:
    final_empirical_risk: float
    risk_per_restart: list
    chosen_restart: int
    steps_run: int
    wall_time_ms: int
    diverged_restarts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["risk_per_restart"] = [r if math.isfinite(r) else None for r in self.risk_per_restart]
        return doc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def truncate(z, beta: float):
    """Clamp to [-beta, beta]."""
    if np.isscalar(z):
        return float(min(max(z, -beta), beta))
    return np.clip(z, -beta, beta)


def beta_n(n_train: int, c2: float) -> float:
    return c2 * math.log(n_train)


def _check_data(net_config: NetConfig, data: Dataset):
    if net_config.k != data.spec.k or net_config.d != data.spec.d:
        raise ConfigurationError(
            f"network (k={net_config.k}, d={net_config.d}) does not match "
            f"data (k={data.spec.k}, d={data.spec.d})"
        )
    if data.n < net_config.k + 1:
        raise PreconditionError("dataset shorter than one window")


def _risk(net: RecurrentNetwork, windows, targets) -> float:
    out, _ = forward_batch(net, windows)
    return float(np.mean((targets - out) ** 2))


def empirical_risk(net: RecurrentNetwork, data: Dataset) -> float:
    """Mean squared residual over t = k+1..n."""
    _check_data(net.config, data)
    return _risk(net, *data.windows())


def _loss_and_grad(net: RecurrentNetwork, windows, targets):
    cfg = net.config
    steps = cfg.k + 1
    bias = cfg.hidden_bias
    out, acts = forward_batch(net, windows)
    resid = out - targets
    loss = float(np.mean(resid**2))
    dout = 2.0 * resid / len(targets)

    g_l1 = np.zeros_like(net.layer1_w)
    g_hidden = [np.zeros_like(w) for w in net.hidden_w]
    g_rec1 = np.zeros_like(net.rec_w_layer1)
    g_bridge = np.zeros_like(net.rec_w_bridge)
    last = acts[-1]
    g_out = last[-1].T @ dout

    def back_hidden(dA, a_out, a_in, idx):
        # layer idx + 2; returns (delta at pre-activation, gradient wrt a_in)
        D = dA * (a_out > 0)
        w = net.hidden_w[idx]
        if bias:
            g_hidden[idx][:, 0] += D.sum(axis=0)
            g_hidden[idx][:, 1:] += D.T @ a_in
            return D, D @ w[:, 1:]
        g_hidden[idx] += D.T @ a_in
        return D, D @ w

    d_hout = [np.zeros_like(acts[t][cfg.l1 - 1]) for t in range(steps)]

    # G block at the last step
    dA = dout[:, None] * net.output_w[None, :]
    for li in range(cfg.n_layers - 1, cfg.l1 - 1, -1):
        D, dA = back_hidden(dA, last[li], last[li - 1], li - 1)
        if li == cfg.l1 and steps > 1:
            prev = acts[-2][cfg.l1 - 1]
            g_bridge += D.T @ prev
            d_hout[-2] += D @ net.rec_w_bridge
    d_hout[-1] += dA

    # H block, newest step first
    windows = check_windows(net, windows)
    for t in range(steps - 1, -1, -1):
        dA = d_hout[t]
        layer = acts[t]
        for li in range(cfg.l1 - 1, 0, -1):
            _, dA = back_hidden(dA, layer[li], layer[li - 1], li - 1)
        D = dA * (layer[0] > 0)
        g_l1[:, 0] += D.sum(axis=0)
        g_l1[:, 1:] += D.T @ windows[:, t, :]
        if t > 0:
            g_rec1 += D.T @ acts[t - 1][cfg.l1 - 1]
            d_hout[t - 1] += D @ net.rec_w_layer1

    grad = np.concatenate(
        [g_l1.ravel(), *[g.ravel() for g in g_hidden], g_rec1.ravel(), g_bridge.ravel(), g_out.ravel()]
    )
    return loss, grad


def gradient(net: RecurrentNetwork, data: Dataset) -> np.ndarray:
    """Gradient of the empirical risk with respect to the flattened parameters."""
    _check_data(net.config, data)
    return _loss_and_grad(net, *data.windows())[1]


def _restart_seed(seed: int, restart: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & (2**64 - 1), 0x52455354, restart])


def _run_restart(config: EstimatorConfig, windows, targets, restart: int):
    """Adam from one random start; returns (best theta, best risk, steps run)."""
    opt = config.optimizer
    rng = np.random.default_rng(_restart_seed(config.seed, restart))
    theta = RecurrentNetwork.random(config.net, rng, config.init_scale).flatten()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    n_windows = len(targets)
    full = opt.batch == "full" or opt.batch >= n_windows
    eval_every = 1 if full else max(1, n_windows // opt.batch)

    best_theta, best_risk = theta.copy(), math.inf
    steps_run = 0
    for step in range(1, opt.steps + 1):
        net = RecurrentNetwork.from_flat(config.net, theta)
        if full:
            loss, grad = _loss_and_grad(net, windows, targets)
            risk = loss
        else:
            idx = rng.choice(n_windows, size=opt.batch, replace=False)
            loss, grad = _loss_and_grad(net, windows[idx], targets[idx])
            risk = _risk(net, windows, targets) if (step - 1) % eval_every == 0 else None
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            return None, math.inf, steps_run
        if risk is not None and risk < best_risk:
            best_theta, best_risk = theta.copy(), risk
        steps_run = step

        m = opt.moment_decay_1 * m + (1 - opt.moment_decay_1) * grad
        v = opt.moment_decay_2 * v + (1 - opt.moment_decay_2) * grad**2
        m_hat = m / (1 - opt.moment_decay_1**step)
        v_hat = v / (1 - opt.moment_decay_2**step)
        theta = theta - opt.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
        if not np.all(np.isfinite(theta)):
            return None, math.inf, steps_run

    final_risk = _risk(RecurrentNetwork.from_flat(config.net, theta), windows, targets)
    if math.isfinite(final_risk) and final_risk < best_risk:
        best_theta, best_risk = theta.copy(), final_risk
    if not math.isfinite(best_risk):
        return None, math.inf, steps_run
    return best_theta, best_risk, steps_run


def fit_windows(windows, targets, config: EstimatorConfig):
    """Fit on explicit (windows, targets) pairs; windows are oldest first."""
    windows = check_windows(config.net, windows)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (windows.shape[0],):
        raise ConfigurationError("need one target per window")
    start = time.perf_counter()
    risks, thetas, diverged, total_steps = [], [], [], 0
    for restart in range(config.optimizer.restarts):
        # non-finite values are detected and the restart is recorded as diverged
        with np.errstate(over="ignore", invalid="ignore"):
            theta, risk, steps = _run_restart(config, windows, targets, restart)
        total_steps += steps
        if theta is None:
            diverged.append(restart)
        risks.append(risk)
        thetas.append(theta)
    if len(diverged) == config.optimizer.restarts:
        raise FitFailure(f"all {len(diverged)} restarts diverged")
    chosen = int(np.argmin(risks))
    net = RecurrentNetwork.from_flat(config.net, thetas[chosen])
    report = FitReport(
        final_empirical_risk=float(risks[chosen]),
        risk_per_restart=[float(r) for r in risks],
        chosen_restart=chosen,
        steps_run=total_steps,
        wall_time_ms=int(round(1000 * (time.perf_counter() - start))),
        diverged_restarts=diverged,
    )
    return net, report


def fit(data: Dataset, config: EstimatorConfig):
    """Approximate least-squares fit; returns ``(network, FitReport)``."""
    _check_data(config.net, data)
    if data.n < 2 * config.net.k + 2:
        raise PreconditionError(f"need n >= 2k+2 = {2 * config.net.k + 2}, got {data.n}")
    return fit_windows(*data.windows(), config)


def predict(net: RecurrentNetwork, window, n_train: int, c2: float):
    """Truncated network output T_beta(f(window)) with beta = c2 * log(n_train).

    ``window`` is oldest first (the newest input last); a batch of windows
    returns an array.
    """
    if n_train < 2:
        raise PreconditionError("n_train must be at least 2")
    x = check_windows(net, window)
    out, _ = forward_batch(net, x)
    clipped = truncate(out, beta_n(n_train, c2))
    return float(clipped[0]) if np.ndim(window) == 2 else clipped
