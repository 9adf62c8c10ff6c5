import math

import numpy as np
import pytest

from taylornet.activations import ActivationKind
from taylornet.network import (
    Architecture,
    Network,
    forward_cached,
    init_from_arch,
    init_uniform,
    load,
    output_values,
    save,
)


def naive_forward(net, x):
    """Independent per-node interpreter: scalar loops, math library only."""
    values = list(x)
    for m in range(net.depth):
        nxt = []
        for i in range(net.widths[m + 1]):
            z = net.biases[m][i]
            for j in range(net.widths[m]):
                z += net.weights[m][i, j] * values[j]
            a = net.activations[m]
            if a is ActivationKind.SINE:
                nxt.append(math.sin(z))
            elif a is ActivationKind.TANH:
                nxt.append(math.tanh(z))
            elif a is ActivationKind.SIGMOID:
                nxt.append(1.0 / (1.0 + math.exp(-z)))
            elif a is ActivationKind.RELU:
                nxt.append(max(z, 0.0))
            else:
                nxt.append(z)
        values = nxt
    return values[0]


def test_seed_determinism():
    a = init_uniform([2, 8, 1], ["sine", "identity"], 0.5, seed=123)
    b = init_uniform([2, 8, 1], ["sine", "identity"], 0.5, seed=123)
    assert a.equals(b)
    c = init_uniform([2, 8, 1], ["sine", "identity"], 0.5, seed=124)
    assert not a.equals(c)


def test_uniform_bounds_scale_with_fan_in():
    net = init_uniform([1, 32, 1], ["sine", "identity"], 0.01, seed=7)
    assert np.max(np.abs(net.weights[1])) <= 0.01 / 32
    assert np.max(np.abs(net.weights[0])) <= 0.01
    big = init_uniform([1, 32, 32, 1], ["sine", "sine", "identity"], 100.0, seed=7)
    for m in range(big.depth):
        assert np.max(np.abs(big.weights[m])) <= 100.0 / big.widths[m]


def test_invalid_widths_rejected():
    with pytest.raises(ValueError):
        init_uniform([2, 0, 1], ["sine", "identity"], 1.0, seed=0)
    with pytest.raises(ValueError):
        init_uniform([2, 4, 3], ["sine", "identity"], 1.0, seed=0)
    with pytest.raises(ValueError):
        init_uniform([2, 4, 1], ["sine", "identity"], 0.0, seed=0)


def test_chain_net_sin_sin():
    net = init_uniform([1, 1, 1], ["sine", "sine"], 1.0, seed=0)
    net.weights = [np.array([[1.0]]), np.array([[1.0]])]
    net.biases = [np.zeros(1), np.zeros(1)]
    assert output_values(net, [[0.0]])[0] == pytest.approx(0.0, abs=1e-15)
    x = 0.7
    assert output_values(net, [[x]])[0] == pytest.approx(math.sin(math.sin(x)), abs=1e-15)


def test_zero_weights_give_constant_output():
    net = init_uniform([3, 4, 1], ["sine", "sine"], 1.0, seed=0)
    net.weights = [np.zeros_like(w) for w in net.weights]
    net.biases = [np.zeros_like(b) for b in net.biases]
    out = output_values(net, np.random.default_rng(0).uniform(-2, 2, (5, 3)))
    np.testing.assert_allclose(out, 0.0, atol=1e-16)


@pytest.mark.parametrize("acts", [["sine", "sine", "identity"], ["tanh", "sigmoid", "relu"]])
def test_forward_matches_naive_interpreter(acts):
    net = init_uniform([2, 5, 4, 1], acts, 3.0, seed=11)
    rng = np.random.default_rng(1)
    X = rng.uniform(-1.5, 1.5, (6, 2))
    got = output_values(net, X)
    want = np.array([naive_forward(net, x) for x in X])
    np.testing.assert_allclose(got, want, rtol=1e-15, atol=1e-15)


def test_forward_cache_consistency_and_batch_equivariance():
    net = init_uniform([2, 6, 1], ["sine", "identity"], 2.0, seed=3)
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, (8, 2))
    out, cache = forward_cached(net, X)
    from taylornet.activations import act_kth_deriv

    for m in range(net.depth):
        np.testing.assert_array_equal(
            cache.y[m], act_kth_deriv(net.activations[m], cache.z[m], 0)
        )
    perm = rng.permutation(8)
    out_perm, _ = forward_cached(net, X[perm])
    np.testing.assert_array_equal(np.asarray(out)[perm], np.asarray(out_perm))


def test_dimension_mismatch():
    net = init_uniform([3, 4, 1], ["sine", "identity"], 1.0, seed=0)
    with pytest.raises(ValueError):
        forward_cached(net, np.ones((2, 2)))


def test_save_load_round_trip(tmp_path):
    net = init_uniform([2, 7, 5, 1], ["sine", "tanh", "identity"], 1.7, seed=42)
    path = tmp_path / "model.txt"
    save(net, path)
    back = load(path)
    assert back.equals(net)


def test_handwritten_minimal_model(tmp_path):
    text = "\n".join(
        [
            "taylornet-model v1",
            "widths 1 1 1",
            "activations sine identity",
            "w0 1",
            "seed 0",
            "layer 0 weight 1",
            "layer 0 bias 0",
            "layer 1 weight 2",
            "layer 1 bias 0.5",
        ]
    )
    path = tmp_path / "tiny.txt"
    path.write_text(text + "\n")
    net = load(path)
    assert output_values(net, [[0.3]])[0] == pytest.approx(2 * math.sin(0.3) + 0.5)


def test_bad_model_files_rejected(tmp_path):
    bad_width = tmp_path / "bad.txt"
    bad_width.write_text(
        "taylornet-model v1\nwidths 1 2\nactivations sine\nw0 1\nseed 0\n"
        "layer 0 weight 1 1\nlayer 0 bias 0 0\n"
    )
    with pytest.raises(ValueError):
        load(bad_width)
    bad_act = tmp_path / "badact.txt"
    bad_act.write_text(
        "taylornet-model v1\nwidths 1 1\nactivations gelu\nw0 1\nseed 0\n"
        "layer 0 weight 1\nlayer 0 bias 0\n"
    )
    with pytest.raises(ValueError):
        load(bad_act)
    not_model = tmp_path / "junk.txt"
    not_model.write_text("hello\n")
    with pytest.raises(ValueError):
        load(not_model)


def test_small_w0_limit_behaviour():
    # as w0 -> 0 the output approaches the bias-only forward pass
    arch = Architecture.mlp(1, hidden=8, layers=3, activation="sine")
    for w0 in (1e-4, 1e-7):
        net = init_uniform(arch.widths, arch.activations, w0, seed=5)
        bias_only = Network(
            widths=list(net.widths),
            activations=list(net.activations),
            weights=[np.zeros_like(w) for w in net.weights],
            biases=[b.copy() for b in net.biases],
        )
        gap = abs(output_values(net, [[0.9]])[0] - output_values(bias_only, [[0.9]])[0])
        assert gap < 10 * w0


def test_architecture_helper():
    arch = Architecture.mlp(2, hidden=64, layers=5)
    assert arch.widths == [2, 64, 64, 64, 64, 1]
    assert arch.activations[-1] is ActivationKind.IDENTITY
    assert all(a is ActivationKind.SINE for a in arch.activations[:-1])
    net = init_from_arch(arch, seed=1)
    assert net.depth == 5
