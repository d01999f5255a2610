import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tetmotion.diff import ops
from tetmotion.diff.checkpoint import load_checkpoint, save_checkpoint
from tetmotion.diff.layers import DenseLayer, GruCell, bind, gru_step
from tetmotion.diff.optim import adam, optimizer_step, sgd
from tetmotion.diff.tape import Tape
from tetmotion.errors import ContractViolation, InvalidArgument, NumericError


def test_square_gradient():
    tape = Tape()
    x = tape.variable(3.0, name="x")
    assert tape.backward(x * x)["x"] == 6.0


def test_product_plus_tanh_gradient():
    tape = Tape()
    x = tape.variable(1.0, name="x")
    y = tape.variable(2.0, name="y")
    g = tape.backward(x * y + ops.tanh(x))
    assert g["x"] == pytest.approx(2 + 1 - np.tanh(1.0) ** 2, abs=1e-12)
    assert g["x"] == pytest.approx(2.41997, abs=1e-5)
    assert g["y"] == 1.0


def test_untouched_leaf_gets_zero():
    tape = Tape()
    x = tape.variable([1.0, 2.0], name="x")
    unused = tape.variable(np.ones((2, 2)), name="u")
    g = tape.backward(ops.sum(x))
    assert np.array_equal(g[unused], np.zeros((2, 2)))


def test_backward_rejects_foreign_and_non_scalar_roots():
    a, b = Tape(), Tape()
    x = a.variable(1.0)
    with pytest.raises(ContractViolation):
        b.backward(x)
    with pytest.raises(ContractViolation):
        a.backward(a.variable([1.0, 2.0]))
    with pytest.raises(ContractViolation):
        ops.add(x, b.variable(1.0))


_UNARY = [ops.tanh, ops.sigmoid, ops.neg, ops.square, lambda n: ops.recip(ops.add(ops.square(n), 1.0))]
_BINARY = [ops.add, ops.sub, ops.mul]


def _random_dag(rng, x_values):
    """Build a 50-node expression over two scalar inputs; returns a function of the tape."""
    plan = []
    for i in range(48):
        if rng.random() < 0.4:
            plan.append(("u", rng.integers(len(_UNARY)), rng.integers(0, i + 2)))
        else:
            plan.append(("b", rng.integers(len(_BINARY)), rng.integers(0, i + 2), rng.integers(0, i + 2)))

    def build(tape, xs):
        nodes = list(xs)
        for step in plan:
            if step[0] == "u":
                nodes.append(_UNARY[step[1]](nodes[step[2]]))
            else:
                nodes.append(_BINARY[step[1]](nodes[step[2]], nodes[step[3]]))
            # keep magnitudes tame so FD stays meaningful
            nodes[-1] = ops.tanh(nodes[-1]) if abs(float(nodes[-1].value)) > 5 else nodes[-1]
        return ops.sum(ops.concat([ops.reshape(n, (1,)) for n in nodes[-10:]]))

    return build


@pytest.mark.parametrize("seed", range(10))
def test_random_dag_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    xv = rng.uniform(-1, 1, 2)
    build = _random_dag(rng, xv)
    tape = Tape()
    xs = [tape.variable(v, name=f"x{i}") for i, v in enumerate(xv)]
    root = build(tape, xs)
    g = tape.backward(root)

    def f(v):
        t = Tape()
        return float(build(t, [t.constant(a) for a in v]).value)

    for i in range(2):
        h = 1e-6
        xp, xm = xv.copy(), xv.copy()
        xp[i] += h
        xm[i] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        assert abs(float(g[f"x{i}"]) - fd) <= 1e-6 * max(1.0, abs(fd))


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_backward_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    xv = rng.normal(size=4)

    def grads(fa, fb):
        tape = Tape()
        x = tape.variable(xv, name="x")
        f = ops.sum(ops.tanh(x))
        g = ops.sum(ops.mul(ops.sigmoid(x), x))
        return tape.backward(ops.add(ops.mul(f, fa), ops.mul(g, fb)))["x"]

    assert np.allclose(grads(a, b), a * grads(1.0, 0.0) + b * grads(0.0, 1.0), atol=1e-12)


def test_combine_adjoint_matches_dense_matrix(rng):
    x = rng.normal(size=(6, 3))
    idx = rng.integers(0, 6, size=(10, 2))
    w = rng.normal(size=(10, 2))
    mat = np.zeros((10, 6))
    for i in range(10):
        for j in range(2):
            mat[i, idx[i, j]] += w[i, j]
    cot = rng.normal(size=(10, 3))
    tape = Tape()
    xn = tape.variable(x, name="x")
    out = ops.combine(xn, idx, w)
    assert np.allclose(out.value, mat @ x, atol=1e-14)
    g = tape.backward(ops.sum(ops.mul(out, cot)))["x"]
    assert np.allclose(g, mat.T @ cot, atol=1e-14)


def test_gru_zero_parameters_halve_hidden():
    cell = GruCell(*(np.zeros((4, 7)) for _ in range(3)), *(np.zeros(4) for _ in range(3)))
    h = np.array([0.2, -1.0, 3.0, 0.5])
    assert np.array_equal(gru_step(cell, np.ones(3), h), [0.5 * h])
    assert np.array_equal(gru_step(cell, np.zeros(3), np.zeros(4)), np.zeros((1, 4)))


def test_gru_matches_closed_form(rng):
    cell = GruCell.create(rng, 3, 5)
    for k in ("b_z", "b_r", "b_h"):
        setattr(cell, k, rng.normal(size=5))
    x, h = rng.normal(size=3), rng.normal(size=5)
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    z = sig(cell.w_z @ np.r_[x, h] + cell.b_z)
    r = sig(cell.w_r @ np.r_[x, h] + cell.b_r)
    cand = np.tanh(cell.w_h @ np.r_[x, r * h] + cell.b_h)
    assert np.allclose(gru_step(cell, x, h)[0], (1 - z) * h + z * cand, atol=1e-14)


def test_gru_dimension_mismatch(rng):
    cell = GruCell.create(rng, 3, 5)
    with pytest.raises(InvalidArgument):
        gru_step(cell, np.ones(4), np.ones(5))
    with pytest.raises(InvalidArgument):
        gru_step(cell, np.ones((2, 3)), np.ones((3, 5)))


def test_gru_weight_gradients_match_finite_differences(rng):
    cell = GruCell.create(rng, 3, 4)
    for k in ("b_z", "b_r", "b_h"):
        setattr(cell, k, rng.normal(size=4))
    x, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    w = rng.normal(size=(2, 4))
    params = cell.params("gru")

    def f(p):
        tape = Tape()
        bound = bind(tape, p, trainable=False)
        out = cell.forward(tape.constant(x), tape.constant(h), bound, "gru")
        return float((out.value * w).sum())

    tape = Tape()
    bound = bind(tape, params)
    out = cell.forward(tape.constant(x), tape.constant(h), bound, "gru")
    g = tape.backward(ops.sum(ops.mul(out, w))).named()
    worst = 0.0
    for name, value in params.items():
        for i in np.ndindex(value.shape):
            pp = {k: v.copy() for k, v in params.items()}
            pm = {k: v.copy() for k, v in params.items()}
            pp[name][i] += 1e-6
            pm[name][i] -= 1e-6
            fd = (f(pp) - f(pm)) / 2e-6
            worst = max(worst, abs(g[name][i] - fd) / max(abs(fd), 1e-7, abs(g[name][i])))
    assert worst < 1e-5


def test_dense_layer_forward_and_checks(rng):
    layer = DenseLayer.create(rng, 3, 2, "relu")
    x = rng.normal(size=(5, 3))
    tape = Tape()
    out = layer.forward(tape.constant(x), bind(tape, layer.params("l")), "l")
    assert np.allclose(out.value, np.maximum(x @ layer.weight.T + layer.bias, 0))
    with pytest.raises(InvalidArgument):
        layer.forward(tape.constant(np.ones((1, 4))), bind(tape, layer.params("l")), "l")
    with pytest.raises(InvalidArgument):
        DenseLayer.create(rng, 3, 2, "softplus")
    assert np.all(DenseLayer.create(rng, 3, 2, zero=True).weight == 0)


def test_initialisation_is_seed_deterministic():
    a = GruCell.create(np.random.default_rng(5), 6, 8)
    b = GruCell.create(np.random.default_rng(5), 6, 8)
    for k in GruCell._NAMES:
        assert getattr(a, k).tobytes() == getattr(b, k).tobytes()
    assert np.abs(a.w_z).max() <= 1 / np.sqrt(14)


def test_sgd_examples():
    p = {"p": np.array(1.0)}
    assert optimizer_step(sgd(0.1, 0.0, 0.0), p, {"p": np.array(1.0)})["p"] == pytest.approx(0.9)
    st_ = sgd(0.01, 0.99, 0.0)
    p = {"p": np.array(0.0)}
    p = optimizer_step(st_, p, {"p": np.array(1.0)})
    p = optimizer_step(st_, p, {"p": np.array(1.0)})
    assert p["p"] == pytest.approx(-0.0299, abs=1e-15)


def test_adam_first_step():
    p = optimizer_step(adam(1e-3), {"p": np.array(0.3)}, {"p": np.array(1.0)})
    assert abs(p["p"] - (0.3 - 1e-3)) < 1e-9


def test_optimizer_rejects_bad_gradients():
    params = {"w": np.zeros(3)}
    with pytest.raises(NumericError) as info:
        optimizer_step(sgd(), params, {"w": np.array([0.0, np.nan, 1.0])})
    assert info.value.name == "w"
    with pytest.raises(InvalidArgument):
        optimizer_step(sgd(), params, {"w": np.zeros(4)})
    with pytest.raises(InvalidArgument):
        optimizer_step(sgd(), params, {"v": np.zeros(3)})


@pytest.mark.parametrize("make", [sgd, adam])
def test_checkpoint_round_trip_is_exact(tmp_path, rng, make):
    params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}
    opt = make()
    for _ in range(3):
        params = optimizer_step(opt, params, {k: rng.normal(size=v.shape) for k, v in params.items()})
    save_checkpoint(tmp_path / "c.tmcf", params, opt, {"kind": "gru"})
    loaded, opt2, meta = load_checkpoint(tmp_path / "c.tmcf")
    assert meta == {"kind": "gru"}
    assert opt2.hyperparameters() == opt.hyperparameters()
    for k in params:
        assert loaded[k].tobytes() == params[k].tobytes()
    g = {k: np.ones_like(v) for k, v in params.items()}
    assert all(optimizer_step(opt, params, g)[k].tobytes() == optimizer_step(opt2, loaded, g)[k].tobytes()
               for k in params)
    # both optimizers have now taken the same extra step
    save_checkpoint(tmp_path / "d.tmcf", loaded, opt2, meta)
    save_checkpoint(tmp_path / "e.tmcf", params, opt, {"kind": "gru"})
    assert (tmp_path / "d.tmcf").read_bytes() == (tmp_path / "e.tmcf").read_bytes()
