import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recnet.datagen import Dataset, ModelSpec, simulate
from recnet.exceptions import ConfigurationError, FitFailure, PreconditionError
from recnet.harness import gradient_check
from recnet.network import NetConfig, RecurrentNetwork, forward
from recnet.training import (
    EstimatorConfig,
    OptimizerConfig,
    _loss_and_grad,
    empirical_risk,
    fit,
    fit_windows,
    gradient,
    predict,
    truncate,
)

TOY = ModelSpec(d=1, k=1, g_name="linear", g_params={"coef": 1.0, "gamma": 0.0}, h_name="zero",
                noise_sigma=0.0)
TOY_NET = NetConfig(k=1, d=1, k1=4, k2=4, l1=1, l2=1)


def constant_dataset(spec, n, c):
    xs = np.random.default_rng(0).uniform(size=(n, spec.d))
    return Dataset(spec, 0, xs, np.full(n, c), np.arange(n) >= spec.k)


def naive_risk(net, data):
    k = data.spec.k
    total = 0.0
    for t in range(k, data.n):
        window = [data.xs[s] for s in range(t - k, t + 1)]
        out, _ = forward(net, window)
        total += (data.ys[t] - out) ** 2
    return total / (data.n - k)


def output_net(cfg, value):
    """Net whose output is the constant ``value`` >= 0 on every window."""
    net = RecurrentNetwork.zeros(cfg)
    layer1 = np.zeros_like(net.layer1_w)
    layer1[0, 0] = value
    hidden = tuple(np.eye(*w.shape) for w in net.hidden_w)
    out = np.zeros(cfg.k2)
    out[0] = 1.0
    return RecurrentNetwork(cfg, layer1, hidden, net.rec_w_layer1, net.rec_w_bridge, out)


class TestEmpiricalRisk:
    def test_zero_net_constant_targets(self):
        spec = ModelSpec(d=2, k=3)
        data = constant_dataset(spec, 20, 1.7)
        cfg = NetConfig(k=3, d=2, k1=3, k2=2, l1=2, l2=1)
        assert empirical_risk(RecurrentNetwork.zeros(cfg), data) == pytest.approx(1.7**2, rel=1e-15)

    def test_perfect_fit_on_one_window(self):
        spec = ModelSpec(d=1, k=2)
        data = constant_dataset(spec, 3, 0.8)
        cfg = NetConfig(k=2, d=1, k1=2, k2=2, l1=1, l2=2)
        assert empirical_risk(output_net(cfg, 0.8), data) == 0.0

    def test_matches_double_loop(self, rng):
        for _ in range(20):
            k, d = int(rng.integers(1, 4)), int(rng.integers(1, 3))
            cfg = NetConfig(k=k, d=d, k1=3, k2=3, l1=2, l2=2, hidden_bias=bool(rng.integers(2)))
            net = RecurrentNetwork.random(cfg, rng)
            data = simulate(ModelSpec(d=d, k=k), 25, int(rng.integers(1000)))
            assert empirical_risk(net, data) == pytest.approx(naive_risk(net, data), rel=1e-12, abs=1e-14)

    def test_config_mismatch(self):
        data = simulate(ModelSpec(d=1, k=2), 10, 0)
        with pytest.raises(ConfigurationError):
            empirical_risk(RecurrentNetwork.zeros(NetConfig(k=1, d=1, k1=1, k2=1, l1=1, l2=1)), data)


class TestGradient:
    def test_zero_net(self, rng):
        spec = ModelSpec(d=1, k=2)
        cfg = NetConfig(k=2, d=1, k1=3, k2=3, l1=2, l2=1)
        data = simulate(spec, 15, 4)
        grad = gradient(RecurrentNetwork.zeros(cfg), data)
        assert np.all(grad == 0.0)
        # finite differences agree away from the kink at zero pre-activation
        worst, _ = gradient_check(RecurrentNetwork.zeros(cfg), *data.windows())
        assert worst <= 1e-4

    def test_against_finite_differences(self, rng):
        for _ in range(15):
            k, d = int(rng.integers(1, 4)), int(rng.integers(1, 3))
            cfg = NetConfig(k=k, d=d, k1=int(rng.integers(1, 4)), k2=int(rng.integers(1, 4)),
                            l1=int(rng.integers(1, 3)), l2=int(rng.integers(1, 3)),
                            hidden_bias=bool(rng.integers(2)))
            net = RecurrentNetwork.random(cfg, rng, 2.0)
            data = simulate(ModelSpec(d=d, k=k), int(rng.integers(2 * k + 2, 31)), int(rng.integers(1000)))
            worst, compared = gradient_check(net, *data.windows())
            assert compared > 0
            assert worst <= 1e-4

    def test_scaling_targets(self, rng):
        cfg = NetConfig(k=2, d=1, k1=2, k2=2, l1=1, l2=1)
        net = RecurrentNetwork.random(cfg, rng)
        zero_out = RecurrentNetwork(cfg, net.layer1_w, net.hidden_w, net.rec_w_layer1, net.rec_w_bridge,
                                    np.zeros(cfg.k2))
        windows = rng.uniform(size=(10, 3, 1))
        y = rng.normal(size=10)
        _, g1 = _loss_and_grad(zero_out, windows, y)
        _, g3 = _loss_and_grad(zero_out, windows, 3.0 * y)
        np.testing.assert_allclose(g3, 3.0 * g1, rtol=1e-13, atol=1e-15)


class TestFit:
    def test_linear_toy_default_budget(self):
        data = simulate(TOY, 100, 3)
        _, report = fit(data, EstimatorConfig(net=TOY_NET))
        assert report.final_empirical_risk <= 1e-3

    def test_deterministic(self):
        data = simulate(ModelSpec(), 40, 1)
        cfg = EstimatorConfig(net=NetConfig(k=2, d=1, k1=3, k2=3, l1=1, l2=1),
                              optimizer=OptimizerConfig(steps=60, restarts=2), seed=5)
        a, ra = fit(data, cfg)
        b, rb = fit(data, cfg)
        assert np.array_equal(a.flatten(), b.flatten())
        ra.wall_time_ms = rb.wall_time_ms = 0
        assert ra == rb

    def test_more_restarts_never_worse(self):
        data = simulate(ModelSpec(), 40, 2)
        net = NetConfig(k=2, d=1, k1=3, k2=3, l1=1, l2=1)
        risks = [
            fit(data, EstimatorConfig(net=net, optimizer=OptimizerConfig(steps=50, restarts=r)))[1]
            .final_empirical_risk
            for r in (1, 2, 4)
        ]
        assert risks[0] >= risks[1] >= risks[2]

    def test_report_invariants(self):
        data = simulate(ModelSpec(), 40, 3)
        net, report = fit(data, EstimatorConfig(net=NetConfig(k=2, d=1, k1=3, k2=3, l1=1, l2=1),
                                                optimizer=OptimizerConfig(steps=40, restarts=3)))
        assert report.final_empirical_risk == min(report.risk_per_restart)
        assert report.risk_per_restart[report.chosen_restart] == report.final_empirical_risk
        assert report.steps_run == 120
        # the returned weights are the best iterate, not the last one
        assert empirical_risk(net, data) == report.final_empirical_risk

    def test_minibatch(self):
        data = simulate(TOY, 200, 3)
        cfg = EstimatorConfig(net=TOY_NET, optimizer=OptimizerConfig(steps=300, batch=32))
        _, report = fit(data, cfg)
        assert math.isfinite(report.final_empirical_risk)

    def test_all_diverged(self):
        data = simulate(ModelSpec(), 40, 3)
        cfg = EstimatorConfig(net=NetConfig(k=2, d=1, k1=3, k2=3, l1=1, l2=1),
                              optimizer=OptimizerConfig(steps=5, restarts=2))
        windows, targets = data.windows()
        targets = targets.copy()
        targets[0] = np.inf
        with pytest.raises(FitFailure):
            fit_windows(windows, targets, cfg)

    def test_too_short(self):
        data = simulate(ModelSpec(k=2), 5, 0)
        with pytest.raises(PreconditionError):
            fit(data, EstimatorConfig(net=NetConfig(k=2, d=1, k1=1, k2=1, l1=1, l2=1)))

    def test_config_round_trip(self):
        cfg = EstimatorConfig(net=TOY_NET, c2=0.5, optimizer=OptimizerConfig(batch=16), seed=9)
        assert EstimatorConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("kwargs", [{"learning_rate": 0}, {"steps": 0}, {"batch": "half"},
                                        {"moment_decay_1": 1.0}])
    def test_bad_optimizer(self, kwargs):
        with pytest.raises(ConfigurationError):
            OptimizerConfig(**kwargs)


class TestPredict:
    # c2 chosen so that beta = c2 * log(n_train) = 2
    N_TRAIN = 100
    C2 = 2.0 / math.log(100)
    CFG = NetConfig(k=1, d=1, k1=1, k2=1, l1=1, l2=1)

    @pytest.mark.parametrize("raw, expected", [(7.0, 2.0), (-5.0, -2.0), (1.0, 1.0)])
    def test_clamp_examples(self, raw, expected):
        net = output_net(self.CFG, abs(raw))
        if raw < 0:
            net = RecurrentNetwork(self.CFG, net.layer1_w, net.hidden_w, net.rec_w_layer1,
                                   net.rec_w_bridge, -net.output_w)
        assert forward(net, [[0.3], [0.4]])[0] == raw
        assert predict(net, [[0.3], [0.4]], self.N_TRAIN, self.C2) == pytest.approx(expected, abs=1e-15)

    def test_batch(self):
        net = output_net(self.CFG, 7.0)
        out = predict(net, np.zeros((3, 2, 1)), self.N_TRAIN, self.C2)
        assert out.shape == (3,)

    def test_n_train_too_small(self):
        with pytest.raises(PreconditionError):
            predict(RecurrentNetwork.zeros(self.CFG), [[0.0], [0.0]], 1, 1.0)


class TestTruncation:
    @given(st.floats(-1e9, 1e9), st.floats(0, 1e6))
    def test_idempotent_and_bounded(self, z, beta):
        once = truncate(z, beta)
        assert truncate(once, beta) == once
        assert abs(once) <= beta

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1e3))
    def test_monotone(self, z1, z2, beta):
        lo, hi = sorted((z1, z2))
        assert truncate(lo, beta) <= truncate(hi, beta)

    @given(st.floats(-1e3, 1e3), st.floats(-1, 1), st.floats(0.01, 100))
    def test_never_hurts_bounded_target(self, z, frac, beta):
        y = frac * beta
        assert (y - truncate(z, beta)) ** 2 <= (y - z) ** 2
