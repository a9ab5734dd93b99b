import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pisampler.autodiff import (AdamState, MLPSpec, ParameterStore, Tape, adam_step,
                                backprop, clip_vector, fourier_time_features, init_mlp,
                                mlp_forward)
from pisampler.errors import ConfigurationError, TrainingError, UsageError

from conftest import central_diff, rel_err


def _net(sizes, activation="tanh", seed=0):
    spec = MLPSpec(tuple(sizes), activation)
    store = ParameterStore(spec.shapes("mlp"))
    init_mlp(store, spec, "mlp", np.random.default_rng(seed))
    return spec, store


def _forward_value(spec, store, x):
    tape = Tape(record=False)
    return mlp_forward(store, spec, tape.input(x), tape).value


def test_zero_network_outputs_zero():
    spec = MLPSpec((3, 4, 2))
    store = ParameterStore(spec.shapes("mlp"))
    out = _forward_value(spec, store, np.ones((5, 3)))
    assert np.array_equal(out, np.zeros((5, 2)))


def test_single_linear_layer():
    spec = MLPSpec((1, 1))
    store = ParameterStore(spec.shapes("mlp"))
    store.set("mlp.0.w", [[2.0]])
    store.set("mlp.0.b", [1.0])
    assert _forward_value(spec, store, np.array([[3.0]]))[0, 0] == 7.0


def test_forward_matches_straight_line_evaluation(gen):
    spec, store = _net((3, 5, 2))
    x = gen.normal(size=(4, 3))
    h = np.tanh(x @ store.view("mlp.0.w") + store.view("mlp.0.b"))
    ref = h @ store.view("mlp.1.w") + store.view("mlp.1.b")
    np.testing.assert_allclose(_forward_value(spec, store, x), ref, rtol=0, atol=1e-14)


def test_forward_is_bit_deterministic(gen):
    spec, store = _net((2, 8, 8, 3), "silu")
    x = gen.normal(size=(6, 2))
    assert np.array_equal(_forward_value(spec, store, x), _forward_value(spec, store, x))


def test_shape_mismatch_is_configuration_error():
    spec, store = _net((3, 2))
    with pytest.raises(ConfigurationError):
        _forward_value(spec, store, np.ones((2, 4)))


def test_identity_net_gradient():
    tape = Tape()
    x = tape.input(np.array([[1.5]]))
    pg, ig = tape.backprop(x, np.ones((1, 1)))
    assert pg.size == 0
    assert ig[0][0, 0] == 1.0


def test_product_rule_parameter_gradient():
    store = ParameterStore([("w", (1,))], [2.0])
    tape = Tape()
    out = tape.sum(tape.scale(tape.parameter(store, "w"), 3.0))
    pg, _ = backprop(tape, None, out)
    assert pg[0] == 3.0


def test_tape_reuse_is_usage_error():
    tape = Tape()
    out = tape.sum(tape.input(np.ones(3)))
    tape.backprop(out)
    with pytest.raises(UsageError):
        tape.backprop(out)


@pytest.mark.parametrize("activation", ["tanh", "silu", "relu"])
def test_mlp_gradient_matches_finite_differences(activation, gen):
    spec, store = _net((2, 3, 1), activation, seed=3)
    x = gen.normal(size=(4, 2))

    def loss(flat):
        s = ParameterStore(spec.shapes("mlp"), flat)
        return float(np.sum(_forward_value(spec, s, x) ** 2))

    tape = Tape()
    out = tape.sqnorm(mlp_forward(store, spec, tape.input(x), tape))
    pg, _ = tape.backprop(tape.sum(out))
    assert rel_err(pg, central_diff(loss, store.flat)) <= 1e-6


def _primitive_cases():
    def affine(t, a, b):
        return t.affine(a, b)

    def concat(t, a, b):
        return t.concat([a, b])

    def clip(t, a, b):
        return t.clip_rows(t.mul(a, b), 0.5)

    return {
        "affine": (affine, (3, 2), (2, 4)),
        "add": (lambda t, a, b: t.add(a, b), (3, 2), (3, 2)),
        "sub": (lambda t, a, b: t.sub(a, b), (3, 2), (3, 2)),
        "mul": (lambda t, a, b: t.mul(a, b), (3, 2), (1, 2)),
        "tanh": (lambda t, a, b: t.mul(t.tanh(a), b), (3, 2), (3, 2)),
        "silu": (lambda t, a, b: t.mul(t.silu(a), b), (3, 2), (3, 2)),
        "concat": (concat, (3, 2), (3, 1)),
        "sqnorm": (lambda t, a, b: t.add(t.sqnorm(a), t.sum(b, axis=1)), (3, 2), (3, 2)),
        "mean": (lambda t, a, b: t.mean(t.mul(a, b)), (3, 2), (3, 2)),
        "take_row": (lambda t, a, b: t.mul(t.take_row(a, 1), b), (3, 2), (4, 2)),
        "clip_rows": (clip, (3, 2), (3, 2)),
    }


@pytest.mark.parametrize("name", sorted(_primitive_cases()))
def test_primitive_gradients(name, gen):
    fn, sa, sb = _primitive_cases()[name]
    a0, b0 = gen.normal(size=sa), gen.normal(size=sb)

    def value(a, b):
        t = Tape(record=False)
        return float(np.sum(fn(t, t.input(a), t.input(b)).value))

    tape = Tape()
    out = fn(tape, tape.input(a0), tape.input(b0))
    _, (ga, gb) = tape.backprop(tape.sum(out))
    fa = central_diff(lambda v: value(v.reshape(sa), b0), a0.ravel())
    fb = central_diff(lambda v: value(a0, v.reshape(sb)), b0.ravel())
    assert rel_err(ga.ravel(), fa) <= 1e-5
    assert rel_err(gb.ravel(), fb) <= 1e-5


def test_adam_zero_gradient_keeps_params():
    store = ParameterStore([("p", (3,))], [1.0, 2.0, 3.0])
    state = AdamState.zeros(3)
    for _ in range(5):
        adam_step(state, store, np.zeros(3))
    assert state.t == 5
    assert np.array_equal(store.flat, [1.0, 2.0, 3.0])


def test_adam_first_step():
    store = ParameterStore([("p", (1,))], [0.0])
    state = AdamState.zeros(1, lr=0.1)
    adam_step(state, store, np.ones(1))
    assert store.flat[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-14)


def test_adam_matches_scalar_oracle():
    store = ParameterStore([("p", (1,))], [0.5])
    state = AdamState.zeros(1, lr=0.01)
    p, m, v = 0.5, 0.0, 0.0
    for t in range(1, 4):
        adam_step(state, store, np.ones(1))
        m = 0.9 * m + 0.1
        v = 0.999 * v + 0.001
        p -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert store.flat[0] == pytest.approx(p, abs=1e-15)


def test_adam_rejects_non_finite():
    store = ParameterStore([("p", (2,))])
    state = AdamState.zeros(2)
    adam_step(state, store, np.ones(2))
    with pytest.raises(TrainingError) as info:
        adam_step(state, store, np.array([1.0, np.nan]))
    assert info.value.step == 2


def test_fourier_features():
    f0 = fourier_time_features(0.0, 3)
    assert np.array_equal(f0, [0, 0, 0, 1, 1, 1])
    np.testing.assert_allclose(fourier_time_features(2.0, 3, horizon=2.0), f0, atol=1e-12)
    np.testing.assert_allclose(fourier_time_features(0.25, 2), [1, 0, 0, -1], atol=1e-12)
    assert fourier_time_features(np.linspace(0, 1, 5), 4).shape == (5, 8)
    with pytest.raises(ConfigurationError):
        fourier_time_features(0.0, 0)


def test_clip_vector_examples():
    assert np.array_equal(clip_vector([0.3, 0.4], 1.0), [0.3, 0.4])
    np.testing.assert_allclose(clip_vector([3.0, 4.0], 1.0), [0.6, 0.8])
    assert np.array_equal(clip_vector([3.0, 4.0], 5.0), [3.0, 4.0])
    with pytest.raises(ConfigurationError):
        clip_vector([1.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8), st.floats(1e-3, 1e3))
def test_clip_vector_properties(v, max_norm):
    v = np.array(v)
    out = clip_vector(v, max_norm)
    assert np.linalg.norm(out) <= max_norm * (1 + 1e-12) or np.array_equal(out, v)
    if np.linalg.norm(v) > max_norm:
        np.testing.assert_allclose(out * np.linalg.norm(v) / max_norm, v, rtol=1e-9, atol=1e-9)


def test_parameter_store_layout():
    store = ParameterStore([("a", (2, 3)), ("b", (3,))])
    assert store.size == 9
    assert store.slice("b") == slice(6, 9)
    store.set("a", np.arange(6))
    assert store.view("a")[1, 2] == 5
    with pytest.raises(ConfigurationError):
        ParameterStore([("a", (1,)), ("a", (2,))])
    with pytest.raises(ConfigurationError):
        ParameterStore([("a", (2,))], [1.0])


def test_zero_last_init():
    spec = MLPSpec((2, 4, 3))
    store = ParameterStore(spec.shapes("h"))
    init_mlp(store, spec, "h", np.random.default_rng(0), zero_last=True)
    assert not np.any(store.view("h.1.w")) and not np.any(store.view("h.1.b"))
    assert np.all(np.abs(store.view("h.0.w")) <= 1 / np.sqrt(2))
