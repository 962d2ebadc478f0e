import numpy as np
import pytest

from selfimpute import autodiff as ad

from oracles import central_difference, probe_objective, random_instance, sampled_gradient_errors


def grad_of(fn, *values):
    tensors = [ad.Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for v in values]
    with ad.Tape() as tape:
        out = fn(*tensors)
    grads = ad.backward(tape, out)
    return [grads[t] for t in tensors]


def test_square_gradient():
    (g,) = grad_of(lambda w: ad.total(w * w), 3.0)
    assert g == 6.0


def test_abs_subgradient_at_zero_is_zero():
    (g,) = grad_of(lambda w: ad.total(ad.absolute(w)), [0.0, -2.0, 5.0])
    np.testing.assert_array_equal(g, [0.0, -1.0, 1.0])


def test_non_scalar_output_rejected():
    w = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        out = w * 2.0
    with pytest.raises(ValueError):
        ad.backward(tape, out)


def test_no_recording_outside_a_tape():
    w = ad.Tensor(np.ones(3), requires_grad=True)
    out = ad.total(w * w)
    assert out.value == 3.0


def test_reused_input_accumulates():
    (g,) = grad_of(lambda w: ad.total(w * w + w), [1.0, 2.0])
    np.testing.assert_array_equal(g, [3.0, 5.0])


def test_broadcast_gradient_is_reduced():
    a, b = grad_of(lambda a, b: ad.total(a * b), np.ones((2, 3)), np.arange(3.0))
    np.testing.assert_array_equal(a, np.tile(np.arange(3.0), (2, 1)))
    np.testing.assert_array_equal(b, [2.0, 2.0, 2.0])


def _numeric(fn, value, eps=1e-6):
    value = np.asarray(value, dtype=np.float64)
    out = np.zeros_like(value)
    for idx in np.ndindex(value.shape):
        up, down = value.copy(), value.copy()
        up[idx] += eps
        down[idx] -= eps
        out[idx] = (float(fn(up).value) - float(fn(down).value)) / (2 * eps)
    return out


PRIMITIVES = {
    "exp": lambda x: ad.total(ad.exp(x)),
    "tanh": lambda x: ad.total(ad.tanh(x) * np.arange(12.0).reshape(3, 4)),
    "silu": lambda x: ad.total(ad.silu(x) * np.arange(12.0).reshape(3, 4)),
    "take": lambda x: ad.total(ad.take(x, [3, 0, 0, 2]) * np.arange(12.0).reshape(3, 4)),
    "concat": lambda x: ad.total(ad.concat([x, x * 2.0]) * np.arange(24.0).reshape(3, 8)),
    "pad_edge": lambda x: ad.total(ad.pad_edge(ad.reshape(x, (1, 3, 4)), 2, 3) * np.arange(27.0).reshape(1, 3, 9)),
    "reshape": lambda x: ad.total(ad.reshape(x, (4, 3)) * np.arange(12.0).reshape(4, 3)),
    "mean": lambda x: ad.mean(x * x),
    "where": lambda x: ad.total(ad.where(np.arange(12).reshape(3, 4) % 2 == 0, x * x, 1.0)),
    "time_affine": lambda x: ad.total(
        ad.time_affine(ad.reshape(x, (1, 3, 4)), np.arange(16.0).reshape(4, 4) / 7, np.ones(4)) * np.arange(12.0).reshape(3, 4)
    ),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    fn = PRIMITIVES[name]
    x = np.random.default_rng(1).normal(size=(3, 4))
    (g,) = grad_of(fn, x)
    np.testing.assert_allclose(g, _numeric(lambda v: fn(ad.Tensor(v)), x), rtol=1e-6, atol=1e-8)


def test_conv1d_gradients():
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=(2, 3, 9)), rng.normal(size=(4, 3, 5)), rng.normal(size=4)
    probe = rng.normal(size=(2, 4, 5))
    fn = lambda x, w, b: ad.total(ad.conv1d(x, w, b) * probe)  # noqa: E731
    gx, gw, gb = grad_of(fn, x, w, b)
    np.testing.assert_allclose(gx, _numeric(lambda v: fn(ad.Tensor(v), w, b), x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gw, _numeric(lambda v: fn(x, ad.Tensor(v), b), w), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gb, _numeric(lambda v: fn(x, w, ad.Tensor(v)), b), rtol=1e-6, atol=1e-8)


def test_conv1d_matches_direct_sum():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(1, 2, 7)), rng.normal(size=(3, 2, 3)), rng.normal(size=3)
    out = ad.conv1d(x, w, b).value
    expected = np.array([[[b[o] + sum(w[o, c, k] * x[0, c, t + k] for c in range(2) for k in range(3))
                           for t in range(5)] for o in range(3)]])
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_tape_replay_is_bit_exact():
    model, x, weights, _ = random_instance(0, d=2)
    params = {k: ad.Tensor(v, requires_grad=True) for k, v in model.params.items()}
    with ad.Tape() as tape:
        probe_objective(model, x, weights, params)
    assert len(tape) > 0
    assert tape.replay()


@pytest.mark.parametrize("head", ["reconstruction", "bidirectional"])
def test_network_gradients_match_finite_differences(head):
    model, x, weights, rng = random_instance(4, d=2, head=head)
    rows = sampled_gradient_errors(model, lambda p: probe_objective(model, x, weights, p), 40, rng)
    worst = max(r[-1] for r in rows)
    assert worst < 1e-4, max(rows, key=lambda r: r[-1])


def test_central_difference_restores_parameters():
    model, x, weights, _ = random_instance(5, d=1)
    before = {k: v.copy() for k, v in model.params.items()}
    name = "main.decoder.W"
    central_difference(model, lambda p: probe_objective(model, x, weights, p), name, (0, 1))
    assert all(np.array_equal(before[k], model.params[k]) for k in before)
