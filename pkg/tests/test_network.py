import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recnet.exceptions import ConfigurationError
from recnet.network import (
    FeedforwardNet,
    NetConfig,
    RecurrentNetwork,
    count_distinct_weights,
    forward,
    forward_batch,
    relu,
    unfold,
)
from recnet.theory import unfolded_stats
from recnet.training import _loss_and_grad


def scalar_recursion(x1, x2):
    """Hand evaluation of the d=k=K=L=1 net with unit weights and zero layer-1 bias."""
    f1_t1 = max(0.0 * 1 + 1.0 * x1, 0.0)
    f2_t1 = max(1.0 * f1_t1, 0.0)
    f1_t2 = max(1.0 * x2 + 1.0 * f1_t1, 0.0)
    f2_t2 = max(1.0 * f1_t2 + 1.0 * f1_t1, 0.0)
    return (f1_t1, f2_t1, f1_t2, f2_t2), 1.0 * f2_t2


def feedforward_last_only(net, x_last):
    """Evaluate the net on x_{k+1} alone, ignoring every recurrent connection."""
    cfg = net.config
    a = np.maximum(net.layer1_w[:, 0] + net.layer1_w[:, 1:] @ x_last, 0.0)
    for w in net.hidden_w:
        a = np.maximum(w[:, 1:] @ a + w[:, 0] if cfg.hidden_bias else w @ a, 0.0)
    return float(net.output_w @ a)


def random_config(rng, hidden_bias=None):
    return NetConfig(
        k=int(rng.integers(1, 5)), d=int(rng.integers(1, 4)),
        k1=int(rng.integers(1, 7)), k2=int(rng.integers(1, 7)),
        l1=int(rng.integers(1, 5)), l2=int(rng.integers(1, 5)),
        hidden_bias=bool(rng.integers(2)) if hidden_bias is None else hidden_bias,
    )


class TestRelu:
    @pytest.mark.parametrize("z, expected", [(3.5, 3.5), (-2.0, 0.0), (0.0, 0.0)])
    def test_values(self, z, expected):
        assert relu(z) == expected

    @given(st.floats(-1e6, 1e6))
    def test_identity_channel(self, x):
        assert relu(x) - relu(-x) == x


class TestForward:
    def test_zero_net_outputs_zero(self, rng):
        cfg = random_config(rng)
        out, _ = forward(RecurrentNetwork.zeros(cfg), rng.normal(size=(cfg.k + 1, cfg.d)))
        assert out == 0.0

    def test_scalar_example(self):
        cfg = NetConfig(k=1, d=1, k1=1, k2=1, l1=1, l2=1)
        net = RecurrentNetwork(cfg, [[0.0, 1.0]], ([[1.0]],), [[1.0]], [[1.0]], [1.0])
        out, trace = forward(net, [[1.0], [2.0]])
        (f1_t1, f2_t1, f1_t2, f2_t2), expected = scalar_recursion(1.0, 2.0)
        assert out == expected == 4.0
        assert trace.values(1, 1)[0] == f1_t1 == 1.0
        assert trace.values(2, 1)[0] == f1_t2 == 3.0
        assert trace.values(2, 2)[0] == f2_t2 == 4.0
        assert trace.values(1, 2)[0] == f2_t1

    @pytest.mark.parametrize("hidden_bias", [False, True])
    def test_no_recurrence_reduces_to_feedforward(self, rng, hidden_bias):
        for _ in range(20):
            cfg = random_config(rng, hidden_bias)
            theta = RecurrentNetwork.random(cfg, rng, 2.0)
            net = RecurrentNetwork(cfg, theta.layer1_w, theta.hidden_w,
                                   np.zeros((cfg.k1, cfg.k1)), np.zeros((cfg.k2, cfg.k1)), theta.output_w)
            x = rng.normal(size=(cfg.k + 1, cfg.d))
            out, _ = forward(net, x)
            assert out == pytest.approx(feedforward_last_only(net, x[-1]), rel=1e-12, abs=1e-12)
            shuffled = x.copy()
            shuffled[:-1] = rng.permutation(rng.normal(size=(cfg.k, cfg.d)))
            assert forward(net, shuffled)[0] == out

    def test_trace_nonnegative_and_shaped(self, rng):
        cfg = random_config(rng)
        _, trace = forward(RecurrentNetwork.random(cfg, rng), rng.normal(size=(cfg.k + 1, cfg.d)))
        assert len(trace.layers) == cfg.k + 1
        for step in trace.layers:
            assert [a.size for a in step] == [cfg.k1] * cfg.l1 + [cfg.k2] * cfg.l2
            assert all(np.all(a >= 0) for a in step)

    def test_layer1_homogeneity(self, rng):
        # without deep biases the H block is positively homogeneous, so the
        # recurrent input to layer 1 scales along with the feedforward part
        for _ in range(20):
            cfg = random_config(rng, hidden_bias=False)
            net = RecurrentNetwork.random(cfg, rng)
            scaled = RecurrentNetwork(cfg, 2.5 * net.layer1_w, net.hidden_w, net.rec_w_layer1,
                                      net.rec_w_bridge, net.output_w)
            x = rng.normal(size=(cfg.k + 1, cfg.d))
            _, a = forward(net, x)
            _, b = forward(scaled, x)
            for t in range(1, cfg.k + 2):
                np.testing.assert_allclose(b.values(t, 1), 2.5 * a.values(t, 1), rtol=1e-13, atol=1e-15)

    def test_pure(self, rng):
        cfg = random_config(rng)
        net = RecurrentNetwork.random(cfg, rng)
        x = rng.normal(size=(cfg.k + 1, cfg.d))
        assert forward(net, x)[0] == forward(net, x)[0]

    def test_batch_matches_single(self, rng):
        cfg = random_config(rng)
        net = RecurrentNetwork.random(cfg, rng)
        xs = rng.normal(size=(7, cfg.k + 1, cfg.d))
        batch, _ = forward_batch(net, xs)
        assert [forward(net, x)[0] for x in xs] == batch.tolist()

    def test_dimension_mismatch(self, rng):
        cfg = NetConfig(k=2, d=2, k1=2, k2=2, l1=1, l2=1)
        with pytest.raises(ConfigurationError):
            forward(RecurrentNetwork.zeros(cfg), np.zeros((2, 2)))
        with pytest.raises(ConfigurationError):
            forward(RecurrentNetwork.zeros(cfg), np.zeros((3, 1)))

    def test_weights_are_immutable(self, rng):
        net = RecurrentNetwork.random(random_config(rng), rng)
        with pytest.raises(ValueError):
            net.layer1_w[0, 0] = 1.0


class TestUnfold:
    def test_depth_example(self, rng):
        cfg = NetConfig(k=1, d=1, k1=2, k2=2, l1=2, l2=3)
        assert unfold(RecurrentNetwork.random(cfg, rng)).depth == 10

    def test_zero_net(self, rng):
        cfg = random_config(rng)
        ff = unfold(RecurrentNetwork.zeros(cfg))
        assert np.all(ff(rng.normal(size=(20, cfg.d * (cfg.k + 1)))) == 0.0)

    def test_exact_equivalence(self, rng):
        for _ in range(200):
            cfg = random_config(rng)
            net = RecurrentNetwork.random(cfg, rng, 2.0)
            ff = unfold(net)
            xs = rng.normal(size=(50, cfg.k + 1, cfg.d))
            rec, _ = forward_batch(net, xs)
            assert np.array_equal(rec, ff(xs.reshape(50, -1)))
            assert ff.depth == unfolded_stats(cfg)["layers"]

    def test_width_of_layered_unfolding(self, rng):
        for _ in range(30):
            cfg = random_config(rng)
            ff = unfold(RecurrentNetwork.random(cfg, rng))
            assert ff.max_width == max(2 * cfg.d * cfg.k + cfg.k1, 2 * cfg.k1, cfg.k2)


class TestCounting:
    def test_tiny(self):
        assert count_distinct_weights(NetConfig(k=1, d=1, k1=1, k2=1, l1=1, l2=1)) == 6

    def test_monotone_in_depth(self, rng):
        for _ in range(20):
            cfg = random_config(rng)
            deeper = NetConfig(cfg.k, cfg.d, cfg.k1, cfg.k2, 2 * cfg.l1, cfg.l2, cfg.hidden_bias)
            assert count_distinct_weights(deeper) > count_distinct_weights(cfg)

    def test_matches_trainer_vector(self, rng):
        for _ in range(20):
            cfg = random_config(rng)
            net = RecurrentNetwork.random(cfg, rng)
            _, grad = _loss_and_grad(net, rng.normal(size=(4, cfg.k + 1, cfg.d)), rng.normal(size=4))
            assert grad.size == net.flatten().size == count_distinct_weights(cfg)

    def test_hidden_bias_count(self):
        cfg = NetConfig(k=1, d=1, k1=2, k2=3, l1=2, l2=2, hidden_bias=True)
        plain = NetConfig(k=1, d=1, k1=2, k2=3, l1=2, l2=2)
        assert count_distinct_weights(cfg) - count_distinct_weights(plain) == 2 + 3 + 3


class TestSerialization:
    def test_recurrent_round_trip(self, rng, tmp_path):
        net = RecurrentNetwork.random(random_config(rng), rng)
        net.save(tmp_path / "net.json")
        doc = json.loads((tmp_path / "net.json").read_text())
        assert doc["format_version"] == 1
        assert set(doc) == {"config", "layer1_w", "hidden_w", "rec_w_layer1", "rec_w_bridge",
                            "output_w", "format_version"}
        back = RecurrentNetwork.load(tmp_path / "net.json")
        assert np.array_equal(back.flatten(), net.flatten())
        assert back.config == net.config

    def test_feedforward_round_trip(self, rng):
        ff = FeedforwardNet.random(3, [4, 4], rng)
        back = FeedforwardNet.from_dict(json.loads(json.dumps(ff.to_dict())))
        x = rng.normal(size=(5, 3))
        assert np.array_equal(ff(x), back(x))

    def test_bad_version(self, rng):
        doc = RecurrentNetwork.random(random_config(rng), rng).to_dict()
        doc["format_version"] = 2
        with pytest.raises(ConfigurationError):
            RecurrentNetwork.from_dict(doc)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unfold_equivalence_property(seed):
    rng = np.random.default_rng(seed)
    cfg = random_config(rng)
    net = RecurrentNetwork.random(cfg, rng, 3.0)
    xs = rng.normal(size=(5, cfg.k + 1, cfg.d)) * 10
    assert np.array_equal(forward_batch(net, xs)[0], unfold(net)(xs.reshape(5, -1)))
