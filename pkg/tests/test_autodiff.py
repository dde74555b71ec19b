"""Tape primitives: values, adjoints vs central finite differences, errors."""

import numpy as np
import pytest

from sgground.autodiff import (
    MLP,
    NonDeterministicBuilder,
    NonFiniteValue,
    PRIMITIVES,
    ShapeMismatch,
    Tape,
    grad_check,
)

RNG = np.random.default_rng(20240811)


def leaf_pair(tape, shapes):
    return {name: tape.leaf(RNG.normal(size=s), trainable=True, name=name)
            for name, s in shapes.items()}


# -- value identities ---------------------------------------------------------


def test_matmul_identity():
    tape = Tape()
    a = tape.constant(np.eye(3))
    b = tape.constant(RNG.normal(size=(3, 4)))
    out = tape.apply_primitive("matmul", [a, b])
    assert np.array_equal(out.value, b.value)


def test_softmax_uniform_row():
    tape = Tape()
    out = tape.softmax_row(tape.constant([[1.0, 1.0, 1.0]]))
    assert np.allclose(out.value, [[1 / 3, 1 / 3, 1 / 3]], atol=0, rtol=0)


def test_softmax_rows_sum_to_one_and_positive():
    tape = Tape()
    x = tape.constant(RNG.normal(size=(40, 7)) * 10)
    y = tape.softmax_row(x).value
    assert np.all(np.abs(y.sum(axis=1) - 1.0) < 1e-9)
    assert np.all(y > 0)


def test_cosine_orthogonal_and_self():
    tape = Tape()
    a = tape.constant([[1.0, 0.0]])
    b = tape.constant([[0.0, 1.0]])
    assert tape.cosine_similarity(a, b).value[0, 0] == 0.0
    v = tape.constant(RNG.normal(size=(1, 6)))
    self_sim = tape.cosine_similarity(v, v).value[0, 0]
    assert abs(self_sim - 1.0) < 1e-9


def test_cosine_range_random():
    tape = Tape()
    a = tape.constant(RNG.normal(size=(15, 8)))
    b = tape.constant(RNG.normal(size=(11, 8)))
    c = tape.cosine_similarity(a, b).value
    assert np.all(c <= 1.0) and np.all(c >= -1.0)


def test_clamp_and_log_chain():
    tape = Tape()
    x = tape.constant([[0.0, 0.5, 2.0]])
    y = tape.log(tape.clamp(x, 1e-7, 1.0 - 1e-7))
    assert y.value[0, 1] == np.log(0.5)
    assert y.value[0, 0] == np.log(1e-7)


def test_shape_mismatch_is_structured():
    tape = Tape()
    a = tape.constant(np.zeros((2, 3)))
    b = tape.constant(np.zeros((2, 3)))
    with pytest.raises(ShapeMismatch) as err:
        tape.matmul(a, b)
    assert err.value.primitive == "matmul"
    assert err.value.shapes == ((2, 3), (2, 3))


def test_non_finite_rejected():
    tape = Tape()
    with pytest.raises(NonFiniteValue):
        tape.constant([[np.nan, 1.0]])
    x = tape.constant([[-1.0, 1.0]])
    with pytest.raises(NonFiniteValue):
        tape.log(x)


def test_backward_requires_scalar_root():
    tape = Tape()
    x = tape.leaf(np.ones((2, 2)), trainable=True, name="x")
    with pytest.raises(Exception, match="1x1"):
        tape.backward(x)


# -- analytic backward cases ----------------------------------------------------


def test_backward_matmul_sum_outer_structure():
    # root = sum(x @ w): d root / d w = column-broadcast of x sums
    tape = Tape()
    x_val = RNG.normal(size=(3, 4))
    x = tape.constant(x_val)
    w = tape.leaf(RNG.normal(size=(4, 2)), trainable=True, name="w")
    root = tape.sum_all(tape.matmul(x, w))
    grads = tape.backward(root)
    expected = np.repeat(x_val.sum(axis=0, keepdims=True).T, 2, axis=1)
    assert np.allclose(grads["w"], expected, atol=1e-12)


def test_backward_unreachable_leaf_zero():
    tape = Tape()
    used = tape.leaf(np.ones((1, 3)), trainable=True, name="used")
    unused = tape.leaf(np.ones((2, 2)), trainable=True, name="unused")
    grads = tape.backward(tape.sum_all(used))
    assert np.array_equal(grads["unused"], np.zeros((2, 2)))
    assert np.array_equal(grads["used"], np.ones((1, 3)))


def test_backward_is_linear_in_root():
    # grad(f + g) = grad f + grad g on the shared leaf
    x_val = RNG.normal(size=(2, 3))

    def grad_of(build):
        tape = Tape()
        x = tape.leaf(x_val, trainable=True, name="x")
        return tape.backward(build(tape, x))["x"]

    f = lambda t, x: t.sum_all(t.mul(x, x))
    g = lambda t, x: t.sum_all(t.relu(x))
    fg = lambda t, x: t.add(f(t, x), g(t, x))
    assert np.allclose(grad_of(fg), grad_of(f) + grad_of(g), atol=1e-10)


def test_log_clamp_cosine_self_gradient_matches_fd():
    # root = ln(clamp(cos(a, b))) at a = b: finite-difference oracle
    base = RNG.normal(size=(1, 5))

    def build(tape, leaves):
        c = tape.cosine_similarity(leaves["a"], leaves["b"])
        return tape.log(tape.clamp(c, 1e-7, 1.0 - 1e-7))

    report = grad_check(build, {"a": base, "b": base.copy()})
    assert report.worst < 1e-4


# -- finite-difference checks per primitive -------------------------------------


def _scalarize(tape, node):
    return tape.sum_all(tape.mul(node, node))


def _random_builder(kind, rng):
    """Random shapes/values and a builder reducing the primitive to a scalar."""
    n, m, k = (int(rng.integers(1, 5)) for _ in range(3))
    if kind == "matmul":
        point = {"a": rng.normal(size=(n, k)), "b": rng.normal(size=(k, m))}
        fn = lambda t, lv: t.matmul(lv["a"], lv["b"])
    elif kind in ("add", "elementwise_mul"):
        shape_b = (n, m) if rng.random() < 0.5 else ((1, m) if rng.random() < 0.5 else (n, 1))
        point = {"a": rng.normal(size=(n, m)), "b": rng.normal(size=shape_b)}
        fn = lambda t, lv: t.apply_primitive(kind, [lv["a"], lv["b"]])
    elif kind == "concat_columns":
        point = {"a": rng.normal(size=(n, m)), "b": rng.normal(size=(n, k))}
        fn = lambda t, lv: t.concat_columns([lv["a"], lv["b"]])
    elif kind == "relu":
        point = {"a": rng.normal(size=(n, m))}
        fn = lambda t, lv: t.relu(lv["a"])
    elif kind == "softmax_row":
        point = {"a": rng.normal(size=(n, m))}
        fn = lambda t, lv: t.softmax_row(lv["a"])
    elif kind == "cosine_similarity":
        point = {"a": rng.normal(size=(n, k + 1)), "b": rng.normal(size=(m, k + 1))}
        fn = lambda t, lv: t.cosine_similarity(lv["a"], lv["b"])
    elif kind == "natural_log":
        point = {"a": rng.uniform(0.2, 3.0, size=(n, m))}
        fn = lambda t, lv: t.log(lv["a"])
    elif kind == "mean_of_rows":
        point = {"a": rng.normal(size=(n, m))}
        fn = lambda t, lv: t.mean_of_rows(lv["a"])
    elif kind == "sum":
        point = {"a": rng.normal(size=(n, m))}
        fn = lambda t, lv: t.sum_all(lv["a"])
    elif kind == "scalar_affine":
        point = {"a": rng.normal(size=(n, m))}
        fn = lambda t, lv: t.affine(lv["a"], 1.7, -0.3)
    elif kind == "clamp":
        point = {"a": rng.normal(size=(n, m)) * 2}
        fn = lambda t, lv: t.clamp(lv["a"], -1.0, 1.0)
    elif kind == "transpose":
        point = {"a": rng.normal(size=(n, m))}
        fn = lambda t, lv: t.transpose(lv["a"])
    elif kind == "gather_rows":
        idx = rng.integers(0, n, size=m + 2)
        point = {"a": rng.normal(size=(n, m))}
        fn = lambda t, lv: t.gather_rows(lv["a"], idx)
    elif kind == "scatter_add_rows":
        idx = rng.integers(0, k + 1, size=n)
        point = {"a": rng.normal(size=(n, m))}
        fn = lambda t, lv: t.scatter_add_rows(lv["a"], idx, k + 1)
    else:
        raise AssertionError(kind)
    return point, fn


@pytest.mark.parametrize("kind", PRIMITIVES)
def test_primitive_gradients_match_finite_differences(kind):
    """100 random shapes/values per primitive, rel err < 1e-4 off kink points."""
    rng = np.random.default_rng(hash(kind) % 2**32)
    for trial in range(100):
        point, fn = _random_builder(kind, rng)
        report = grad_check(lambda t, lv: _scalarize(t, fn(t, lv)), point)
        assert report.worst < 1e-4, f"{kind} trial {trial}: {report.max_rel_err}"


def test_grad_check_linear_map_tight():
    w_val = RNG.normal(size=(3, 2))

    def build(tape, leaves):
        x = tape.constant(RNG_FIXED)
        return tape.sum_all(tape.matmul(x, leaves["w"]))

    report = grad_check(build, {"w": w_val})
    assert report.worst < 1e-10


RNG_FIXED = np.random.default_rng(7).normal(size=(4, 3))


def test_grad_check_flags_relu_kink():
    point = {"x": np.array([[0.3, 0.0, -0.4]])}

    def build(tape, leaves):
        return tape.sum_all(tape.relu(leaves["x"]))

    report = grad_check(build, point)
    assert (0, 1) in report.excluded.get("x", [])
    assert report.worst < 1e-10  # remaining coordinates exact


def test_grad_check_rejects_nondeterministic_builder():
    state = {"n": 0.0}

    def build(tape, leaves):
        state["n"] += 1.0
        return tape.sum_all(tape.affine(leaves["x"], 1.0, state["n"]))

    with pytest.raises(NonDeterministicBuilder):
        grad_check(build, {"x": np.ones((1, 2))})


def test_mlp_gradients():
    mlp = MLP.init(np.random.default_rng(3), 5, 8, 4)
    x_val = RNG.normal(size=(6, 5))
    point = {"w1": mlp.w1, "b1": mlp.b1, "w2": mlp.w2, "b2": mlp.b2}

    def build(tape, leaves):
        x = tape.constant(x_val)
        h = tape.relu(tape.add(tape.matmul(x, leaves["w1"]), leaves["b1"]))
        out = tape.add(tape.matmul(h, leaves["w2"]), leaves["b2"])
        return _scalarize(tape, out)

    report = grad_check(build, point)
    assert report.worst < 1e-4
