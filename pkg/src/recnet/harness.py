"""Experiment orchestration: excess-risk evaluation, rate sweeps and randomized verification suites."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import construct, datagen, network, theory, training
from .datagen import ModelSpec
from .exceptions import ConfigurationError, FitFailure, PreconditionError
from .network import FeedforwardNet, NetConfig, RecurrentNetwork
from .theory import ScheduleConstants
from .training import EstimatorConfig, OptimizerConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
STREAM_EVAL = 2

SWEEP_COLUMNS = [
    "n", "replication", "seed", "l1", "l2", "k1", "k2", "empirical_risk",
    "excess_risk_mc", "bayes_risk", "total_risk_mc", "wall_time_ms",
]


def derive_seed(base_seed: int, n: int, replication: int, tag: str) -> int:
    """base_seed XOR the first 8 bytes of blake2b("n:replication:tag")."""
    digest = hashlib.blake2b(f"{n}:{replication}:{tag}".encode(), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(digest, "little")) & (2**64 - 1)


def max_workers() -> int:
    value = os.environ.get("RECNET_THREADS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def evaluate_excess_risk(net: RecurrentNetwork, spec: ModelSpec, n_train: int, c2: float,
                         test_points: int, seed: int) -> dict:
    """Monte Carlo estimate of E|m_n - m|^2 on fresh windows, plus the implied total risk."""
    if test_points < 100:
        raise PreconditionError("test_points must be at least 100")
    rng = datagen.philox(seed, STREAM_EVAL)
    windows = rng.uniform(0.0, 1.0, size=(test_points, spec.k + 1, spec.d))
    pred = training.predict(net, windows, n_train, c2)
    sq = (pred - datagen.regression_fn(spec, windows)) ** 2
    excess = float(np.mean(sq))
    return {
        "excess": excess,
        "total": excess + datagen.bayes_risk(spec),
        "std_err": float(np.std(sq, ddof=1) / math.sqrt(test_points)),
    }


# ---------------------------------------------------------------------------
# Rate sweeps


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    n_grid: tuple = (128, 256, 512, 1024, 2048)
    replications: int = 10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    init_scale: float = 2.0
    schedule_constants: ScheduleConstants = field(default_factory=ScheduleConstants)
    test_points: int = 20000
    base_seed: int = 20240601
    output_dir: str = "results"

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        object.__setattr__(self, "n_grid", grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("n_grid must be nonempty and strictly increasing")
        if grid[0] < 2 * self.model.k + 2:
            raise ConfigurationError(f"every n must be at least 2k+2 = {2 * self.model.k + 2}")
        if self.replications < 1:
            raise ConfigurationError("replications must be positive")

    def estimator_for(self, n: int, seed: int) -> EstimatorConfig:
        spec = self.model
        net = theory.schedule(n, spec.d, spec.p_g, spec.p_h, self.schedule_constants, k=spec.k)
        return EstimatorConfig(net=net, c2=self.schedule_constants.c2, optimizer=self.optimizer,
                               init_scale=self.init_scale, seed=seed)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "n_grid": list(self.n_grid),
            "replications": self.replications,
            "estimator": {"optimizer": asdict(self.optimizer), "init_scale": self.init_scale},
            "schedule_constants": asdict(self.schedule_constants),
            "test_points": self.test_points,
            "base_seed": self.base_seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        est = data.get("estimator", {})
        return cls(
            model=ModelSpec.from_dict(data.get("model", {})),
            n_grid=tuple(data.get("n_grid", cls.n_grid)),
            replications=int(data.get("replications", 10)),
            optimizer=OptimizerConfig(**est.get("optimizer", {})),
            init_scale=float(est.get("init_scale", 2.0)),
            schedule_constants=ScheduleConstants(**data.get("schedule_constants", {})),
            test_points=int(data.get("test_points", 20000)),
            base_seed=int(data.get("base_seed", 20240601)),
            output_dir=str(data.get("output_dir", "results")),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SweepRow:
    n: int
    replication: int
    seed: int
    l1: int
    l2: int
    k1: int
    k2: int
    empirical_risk: float
    excess_risk_mc: float
    bayes_risk: float
    total_risk_mc: float
    wall_time_ms: int
    failed: bool = False
    excess_std_err: float = math.nan

    def csv_values(self) -> list:
        return [repr(v) if isinstance(v, float) else v
                for v in (getattr(self, name) for name in SWEEP_COLUMNS)]


def run_replication(cfg: ExperimentConfig, n: int, replication: int) -> SweepRow:
    seed = derive_seed(cfg.base_seed, n, replication, "data")
    start = time.perf_counter()
    data = datagen.simulate(cfg.model, n, seed)
    est = cfg.estimator_for(n, derive_seed(cfg.base_seed, n, replication, "fit"))
    net_cfg = est.net
    row = dict(n=n, replication=replication, seed=seed, l1=net_cfg.l1, l2=net_cfg.l2,
               k1=net_cfg.k1, k2=net_cfg.k2, bayes_risk=datagen.bayes_risk(cfg.model))
    try:
        net, report = training.fit(data, est)
    except FitFailure as exc:
        logger.warning("fit failed for n=%d replication=%d: %s", n, replication, exc)
        return SweepRow(**row, empirical_risk=math.nan, excess_risk_mc=math.nan,
                        total_risk_mc=math.nan,
                        wall_time_ms=int(1000 * (time.perf_counter() - start)), failed=True)
    ev = evaluate_excess_risk(net, cfg.model, n, est.c2, cfg.test_points,
                              derive_seed(cfg.base_seed, n, replication, "eval"))
    return SweepRow(**row, empirical_risk=report.final_empirical_risk, excess_risk_mc=ev["excess"],
                    total_risk_mc=ev["total"],
                    wall_time_ms=int(1000 * (time.perf_counter() - start)),
                    excess_std_err=ev["std_err"])


def _run_block(cfg: ExperimentConfig, n: int) -> list[SweepRow]:
    workers = min(max_workers(), cfg.replications)
    if workers <= 1:
        return [run_replication(cfg, n, r) for r in range(cfg.replications)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=workers)(delayed(run_replication)(cfg, n, r) for r in range(cfg.replications))


def rate_sweep(cfg: ExperimentConfig, out_dir=None) -> list[SweepRow]:
    """Simulate, fit and evaluate every (n, replication); rows are appended to sweep.csv per n."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[SweepRow] = []
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for n in cfg.n_grid:
            block = _run_block(cfg, n)
            for row in block:
                writer.writerow(row.csv_values())
            fh.flush()
            rows.extend(block)
            logger.info("n=%d median excess %.4g", n,
                        float(np.nanmedian([r.excess_risk_mc for r in block])))
    summary = summarize(rows, cfg)
    (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2, allow_nan=False))
    return rows


def _json_safe(value):
    # NaN (e.g. the slope of a one-point grid) is written as null
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def _loglog_fit(ns, values):
    fit = stats.linregress(np.log(ns), np.log(values))
    return float(fit.slope), float(fit.stderr)


def summarize(rows: list[SweepRow], cfg: ExperimentConfig) -> dict:
    """Log-log slope of the median excess risk against n, next to the theoretical exponent."""
    ns = sorted({r.n for r in rows})
    medians, means, failed = [], [], 0
    for n in ns:
        vals = np.array([r.excess_risk_mc for r in rows if r.n == n and not r.failed])
        failed += sum(1 for r in rows if r.n == n and r.failed)
        medians.append(float(np.median(vals)) if vals.size else math.nan)
        means.append(float(np.mean(vals)) if vals.size else math.nan)
    usable = [i for i, m in enumerate(medians) if math.isfinite(m) and m > 0]
    slope = slope_err = mean_slope = math.nan
    if len(usable) >= 2:
        slope, slope_err = _loglog_fit([ns[i] for i in usable], [medians[i] for i in usable])
        mean_slope, _ = _loglog_fit([ns[i] for i in usable], [means[i] for i in usable])
    spec = cfg.model
    return {
        "slope": slope,
        "slope_stderr": slope_err,
        "theoretical_exponent": theory.rate_exponent(spec.d, spec.p_g, spec.p_h),
        "config_echo": cfg.to_dict(),
        "format_version": FORMAT_VERSION,
        "n_grid": ns,
        "median_excess": medians,
        "mean_excess": means,
        "mean_slope": mean_slope,
        "strictly_decreasing": all(b < a for a, b in zip(medians, medians[1:])),
        "failed_rows": failed,
        "shape_only": ["rate prefactor", "schedule constants c4..c7"],
    }


# ---------------------------------------------------------------------------
# Randomized verification suites


def _random_config(rng, max_k=4, max_l=4, max_width=6, max_d=3, hidden_bias=None) -> NetConfig:
    return NetConfig(
        k=int(rng.integers(1, max_k + 1)),
        d=int(rng.integers(1, max_d + 1)),
        k1=int(rng.integers(1, max_width + 1)),
        k2=int(rng.integers(1, max_width + 1)),
        l1=int(rng.integers(1, max_l + 1)),
        l2=int(rng.integers(1, max_l + 1)),
        hidden_bias=bool(rng.integers(2)) if hidden_bias is None else hidden_bias,
    )


def _suite_unfold(rng, inputs_per_net=50):
    cfg = _random_config(rng)
    net = RecurrentNetwork.random(cfg, rng, scale=2.0)
    ff = network.unfold(net)
    x = rng.normal(size=(inputs_per_net, cfg.k + 1, cfg.d))
    rec, _ = network.forward_batch(net, x)
    unf = ff(x.reshape(inputs_per_net, -1))
    depth_ok = ff.depth == (cfg.k + 1) * cfg.n_layers
    err = float(np.max(np.abs(rec - unf)))
    return err, err == 0.0 and depth_ok


def _activation_pattern(net, windows):
    _, acts = network.forward_batch(net, windows)
    return np.concatenate([a.ravel() > 0 for step in acts for a in step])


def _risk_extended(net: RecurrentNetwork, windows, targets) -> float:
    """Empirical risk from a separate forward pass in extended precision.

    Used as the finite-difference oracle so that rounding in the two loss
    evaluations stays well below the step size.
    """
    ld = np.longdouble
    cfg = net.config
    x = np.asarray(windows, dtype=ld)
    w1 = net.layer1_w.astype(ld)
    hidden = [w.astype(ld) for w in net.hidden_w]
    rec1, bridge = net.rec_w_layer1.astype(ld), net.rec_w_bridge.astype(ld)

    def layer(w, a):
        if cfg.hidden_bias:
            return np.maximum(a @ w[:, 1:].T + w[:, 0], 0)
        return np.maximum(a @ w.T, 0)

    prev = None
    for t in range(cfg.k + 1):
        pre = x[:, t, :] @ w1[:, 1:].T + w1[:, 0]
        if prev is not None:
            pre = pre + prev @ rec1.T
        a = np.maximum(pre, 0)
        for w in hidden[: cfg.l1 - 1]:
            a = layer(w, a)
        if t == cfg.k:
            g = hidden[cfg.l1 - 1]
            pre = a @ g[:, 1:].T + g[:, 0] if cfg.hidden_bias else a @ g.T
            if prev is not None:
                pre = pre + prev @ bridge.T
            b = np.maximum(pre, 0)
            for w in hidden[cfg.l1 :]:
                b = layer(w, b)
            out = b @ net.output_w.astype(ld)
        prev = a
    return np.mean((np.asarray(targets, dtype=ld) - out) ** 2)


def gradient_check(net: RecurrentNetwork, windows, targets, step: float = 1e-6):
    """Worst BPTT-vs-central-difference error over components whose perturbation crosses no kink.

    Relative error where |fd| >= 1e-8, absolute error otherwise. The
    differenced losses are evaluated in extended precision.
    """
    _, grad = training._loss_and_grad(net, windows, targets)
    theta = net.flatten()
    pattern = _activation_pattern(net, windows)
    worst, compared = 0.0, 0
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        plus = RecurrentNetwork.from_flat(net.config, theta + e)
        minus = RecurrentNetwork.from_flat(net.config, theta - e)
        if not (np.array_equal(_activation_pattern(plus, windows), pattern)
                and np.array_equal(_activation_pattern(minus, windows), pattern)):
            continue
        width = np.longdouble(theta[j] + step) - np.longdouble(theta[j] - step)
        fd = float((_risk_extended(plus, windows, targets) - _risk_extended(minus, windows, targets)) / width)
        diff = abs(grad[j] - fd)
        err = diff / abs(fd) if abs(fd) >= 1e-8 else diff
        worst = max(worst, err)
        compared += 1
    return worst, compared


def _random_small_net(rng, max_params=200):
    while True:
        cfg = _random_config(rng, max_k=3, max_l=3, max_width=5, max_d=2)
        if network.count_distinct_weights(cfg) <= max_params:
            return RecurrentNetwork.random(cfg, rng, scale=2.0)


def _suite_gradient(rng, tol=1e-4):
    net = _random_small_net(rng)
    cfg = net.config
    spec = ModelSpec(d=cfg.d, k=cfg.k, noise_sigma=0.25)
    data = datagen.simulate(spec, int(rng.integers(2 * cfg.k + 2, 31)), int(rng.integers(2**32)))
    worst, _ = gradient_check(net, *data.windows())
    return worst, worst <= tol


def lemma4_instance_sample(rng):
    """Random catalog (g, h), perturbed approximants with exactly known sup errors, and windows.

    Perturbations are ``delta * s`` (constant, sign s) or ``delta * sin(w * (sum(x) + z) + phase)``
    with ``w >= 1``; over ``[-2A, 2A]^{d+1}`` the sine argument spans more than
    a period, so either way the sup error equals ``delta``.
    """
    d = int(rng.integers(1, 4))
    k = int(rng.integers(1, 7))
    alpha = float(rng.uniform(1.0, 3.0))
    h_family = ["tanh", "holder"][int(rng.integers(2))]
    lip_h_target = float(rng.uniform(1.05, 2.5))
    h_params = {"alpha": alpha, "beta": lip_h_target / alpha}
    g_family = ["sine", "linear", "holder"][int(rng.integers(3))]
    gamma = float(rng.uniform(1.05, 3.0)) * (1 if rng.integers(2) else -1)
    g_params = {"gamma": gamma}
    spec = ModelSpec(d=d, k=k, g_name=g_family, g_params=g_params, h_name=h_family,
                     h_params=h_params, noise_sigma=0.0)
    A = spec.range_bound
    lip_h, lip_g = spec.lip_h, spec.lip_g
    sup_h = float(rng.uniform(0.0, 1.0)) / construct.geometric_factor(lip_h, k)
    sup_g = float(rng.uniform(0.0, 0.5))

    def perturbation(delta):
        if rng.integers(2):
            sign = 1.0 if rng.integers(2) else -1.0
            return lambda x, z: delta * sign * np.ones_like(z)
        omega = float(rng.uniform(1.0, 5.0))
        phase = float(rng.uniform(0, 2 * np.pi))
        return lambda x, z: delta * np.sin(omega * (x.sum(axis=1) + z) + phase)

    ph, pg = perturbation(sup_h), perturbation(sup_g)
    inst = construct.Lemma4Instance(k=k, A=A, lip_g=lip_g, lip_h=lip_h, sup_g_err=sup_g, sup_h_err=sup_h)

    def h_hat(x, z):
        return spec.h(x, z) + ph(x, z)

    def g_hat(x, z):
        return spec.g(x, z) + pg(x, z)

    return spec, inst, h_hat, g_hat


def lemma4_check(spec, inst, h_hat, g_hat, windows):
    """Returns (max(lhs - bound), max |z_hat_t| / (2A), max |z_t| / A) over the windows."""
    z = construct.propagate(spec.h, windows)
    z_hat = construct.propagate(h_hat, windows)
    x_last = windows[:, -1, :]
    lhs = np.abs(spec.g(x_last, z[:, -1]) - g_hat(x_last, z_hat[:, -1]))
    bound = construct.lemma4_bound(inst)
    return (float(np.max(lhs - bound)), float(np.max(np.abs(z_hat)) / (2 * inst.A)),
            float(np.max(np.abs(z)) / inst.A))


def _suite_lemma4(rng, windows_per_instance=20, slack=1e-9):
    spec, inst, h_hat, g_hat = lemma4_instance_sample(rng)
    windows = rng.uniform(0.0, 1.0, size=(windows_per_instance, spec.k + 1, spec.d))
    gap, zhat_ratio, z_ratio = lemma4_check(spec, inst, h_hat, g_hat, windows)
    return gap, gap <= slack and zhat_ratio <= 1.0 and z_ratio <= 1.0


def _random_approximant(rng, d):
    width = int(rng.integers(1, 6))
    depth = int(rng.integers(1, 4))
    return FeedforwardNet.random(d + 1, [width] * depth, rng, scale=2.0)


def _suite_embed(rng, windows_per_net=50, tol=1e-12):
    d = int(rng.integers(1, 4))
    k = int(rng.integers(1, 5))
    h_net, g_net = _random_approximant(rng, d), _random_approximant(rng, d)
    net = construct.embed(h_net, g_net, k, d)
    windows = rng.uniform(-1.0, 1.0, size=(windows_per_net, k + 1, d))
    got, _ = network.forward_batch(net, windows)
    ref = construct.embedded_reference(h_net, g_net, windows)
    err = float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)))
    return err, err <= tol


def hk_recursive(spec: ModelSpec, xs_past) -> float:
    """H_k by direct recursion on the newest argument: H_j(x_j..x_1) = H(x_j, H_{j-1}(...))."""
    xs_past = np.asarray(xs_past, dtype=np.float64)
    if len(xs_past) == 1:
        return float(spec.h(xs_past[:1], np.zeros(1))[0])
    inner = hk_recursive(spec, xs_past[:-1])
    return float(spec.h(xs_past[-1:], np.array([inner]))[0])


def _suite_datagen(rng):
    d = int(rng.integers(1, 4))
    k = int(rng.integers(1, 9))
    h_family = ["tanh", "holder"][int(rng.integers(2))]
    spec = ModelSpec(d=d, k=k, h_name=h_family,
                     h_params={"alpha": float(rng.uniform(0.5, 3)), "beta": float(rng.uniform(0.1, 2))})
    xs = rng.uniform(0.0, 1.0, size=(k, d))
    err = abs(datagen.hk(spec, xs) - hk_recursive(spec, xs))
    return err, err == 0.0


SUITES = {
    "unfold": _suite_unfold,
    "gradient": _suite_gradient,
    "lemma4": _suite_lemma4,
    "embed": _suite_embed,
    "datagen": _suite_datagen,
}


def verify(suite: str, seed: int, trials: int) -> dict:
    """Run ``trials`` randomized instances of a property suite."""
    if suite not in SUITES:
        raise ConfigurationError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    if trials < 1:
        raise PreconditionError("trials must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x5645]))
    passed = failed = 0
    worst = -math.inf
    for _ in range(trials):
        value, ok = SUITES[suite](rng)
        worst = max(worst, value)
        if ok:
            passed += 1
        else:
            failed += 1
    return {"suite": suite, "passed": passed, "failed": failed, "worst_case": worst}
