"""Tensor engine: forward values, tape semantics, gradients vs finite differences."""

import numpy as np
import pytest

from pft import numerics as nm
from pft.numerics import NumericError, ShapeError, Tape, TapeError, Tensor
from pft.optim import Adam, ReduceLROnPlateau

from _oracles import assert_grads_close, finite_difference


def scalar_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce an op output to a scalar with fixed random weights (non-degenerate grads)."""
    return nm.sum(nm.mul(out, Tensor(weights)))


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------


def test_relu_values():
    out = nm.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_log_softmax_uniform():
    out = nm.log_softmax(Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [-np.log(2.0)] * 2, atol=1e-12)


def test_log_softmax_rows_normalize(rng):
    logits = rng.normal(0, 3, size=(50, 7))
    out = nm.log_softmax(Tensor(logits))
    sums = np.exp(out.data).sum(axis=1)
    assert np.all(np.abs(sums - 1.0) <= 1e-12)


def test_mean_over_axis_rows():
    out = nm.mean_over_axis(Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), axis=1)
    assert np.array_equal(out.data, [2.0, 5.0])


def test_std_population_formula():
    x = Tensor([[1.0], [3.0]])
    out = nm.std_over_axis(x, axis=0)
    assert np.allclose(out.data, np.sqrt(1.0 + nm.STD_EPS), atol=1e-15)


def test_forward_op_dispatch():
    out = nm.forward_op("add", Tensor([1.0]), Tensor([2.0]))
    assert out.data[0] == 3.0
    cat = nm.forward_op("concat", Tensor([1.0]), Tensor([2.0]), axis=0)
    assert np.array_equal(cat.data, [1.0, 2.0])
    with pytest.raises(ValueError, match="unknown op"):
        nm.forward_op("conv2d", Tensor([1.0]))


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        nm.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError, match="std_over_axis"):
        nm.std_over_axis(Tensor([[1.0, 2.0]]), axis=0)
    with pytest.raises(ShapeError, match="reshape"):
        nm.reshape(Tensor([1.0, 2.0]), (3,))


def test_nonfinite_raises():
    with pytest.raises(NumericError, match="log"):
        nm.log(Tensor([-1.0]))
    with pytest.raises(NumericError, match="exp"):
        nm.exp(Tensor([1e9]))


# ---------------------------------------------------------------------------
# tape and backward semantics
# ---------------------------------------------------------------------------


def test_backward_square_sum():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = nm.sum(nm.square(w))
    tape.backward(loss)
    assert np.array_equal(w.grad, [2.0, 4.0])


def test_backward_dead_relu():
    w = Tensor([-3.0], requires_grad=True)
    with Tape() as tape:
        loss = nm.sum(nm.relu(w))
    tape.backward(loss)
    assert np.array_equal(w.grad, [0.0])


def test_leaf_reuse_accumulates():
    # loss = w*a + w*b + w*w -> dloss/dw = a + b + 2w
    w = Tensor([2.0], requires_grad=True)
    a, b = Tensor([3.0]), Tensor([5.0])
    with Tape() as tape:
        loss = nm.sum(nm.add(nm.add(nm.mul(w, a), nm.mul(w, b)), nm.mul(w, w)))
    tape.backward(loss)
    assert np.array_equal(w.grad, [3.0 + 5.0 + 4.0])


def test_backward_contract_errors():
    w = Tensor([[1.0, 2.0]], requires_grad=True)
    with Tape() as tape:
        out = nm.square(w)
    with pytest.raises(TapeError, match="scalar"):
        tape.backward(out)
    with Tape() as tape:
        loss = nm.sum(nm.square(w))
    tape.backward(loss)
    with pytest.raises(TapeError, match="consumed"):
        tape.backward(loss)
    other = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        _ = nm.square(other)
    with pytest.raises(TapeError, match="not produced under this tape"):
        tape.backward(loss)


def test_nested_tapes_rejected():
    with Tape():
        with pytest.raises(TapeError, match="nested"):
            with Tape():
                pass


def test_no_recording_without_grad_or_tape():
    w = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        nm.square(Tensor([1.0]))          # no operand requires grad
    assert len(tape) == 0
    nm.square(w)                           # no active tape
    with Tape() as tape:
        nm.square(w)
    assert len(tape) == 1


def test_grad_present_iff_requires_grad():
    t = Tensor([1.0, 2.0], requires_grad=True)
    assert t.grad is not None and t.grad.shape == t.data.shape
    t.set_requires_grad(False)
    assert t.grad is None
    t.set_requires_grad(True)
    assert np.array_equal(t.grad, [0.0, 0.0])


def test_determinism_bit_identical():
    def run():
        r = np.random.default_rng(123)
        x = Tensor(r.normal(size=(4, 3)), requires_grad=True)
        w = Tensor(r.normal(size=(3, 2)), requires_grad=True)
        with Tape() as tape:
            loss = nm.sum(nm.square(nm.log_softmax(nm.matmul(x, w))))
        tape.backward(loss)
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


# ---------------------------------------------------------------------------
# finite-difference oracle, per op
# ---------------------------------------------------------------------------


def _gradcheck(build, arrays, label):
    """build() -> scalar Tensor from the live arrays; compare AD grads to FD."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build(tensors)
    tape.backward(loss)
    analytic = [t.grad.copy() for t in tensors]

    def fn():
        return build([Tensor(a) for a in arrays]).item()

    numeric = finite_difference(fn, arrays)
    assert_grads_close(analytic, numeric, label=label)


CASES = 100


def _op_case(kind, case, rng):
    """(input arrays, op closure) for one seeded gradcheck case."""
    rows = int(rng.integers(2, 5))
    cols = int(rng.integers(2, 5))
    if kind == "matmul":
        inner = int(rng.integers(2, 5))
        return ([rng.normal(size=(rows, inner)), rng.normal(size=(inner, cols))],
                lambda ts: nm.matmul(ts[0], ts[1]))
    if kind in ("add", "sub", "mul"):
        op = getattr(nm, kind)
        second = (cols,) if case % 3 == 0 else (rows, cols)  # bias-style broadcast sometimes
        return ([rng.normal(size=(rows, cols)), rng.normal(size=second)],
                lambda ts: op(ts[0], ts[1]))
    if kind == "mul_scalar":
        c = float(rng.normal())
        return [rng.normal(size=(rows, cols))], lambda ts: nm.mul_scalar(ts[0], c)
    if kind == "relu":
        base = rng.normal(size=(rows, cols))
        base[np.abs(base) < 1e-3] = 0.1  # keep FD away from the kink
        return [base], lambda ts: nm.relu(ts[0])
    if kind == "reshape":
        return [rng.normal(size=(rows, cols))], lambda ts: nm.reshape(ts[0], (rows * cols,))
    if kind == "concat":
        return ([rng.normal(size=(rows, cols)), rng.normal(size=(rows, cols))],
                lambda ts: nm.concat(ts, axis=case % 2))
    if kind == "mean_over_axis":
        return [rng.normal(size=(rows, cols))], lambda ts: nm.mean_over_axis(ts[0], axis=case % 2)
    if kind == "std_over_axis":
        # near-zero spread makes the curvature too large for FD at h=1e-5
        base = rng.normal(size=(rows, cols))
        while min(base.std(axis=0).min(), base.std(axis=1).min()) < 0.25:
            base = rng.normal(size=(rows, cols))
        return [base], lambda ts: nm.std_over_axis(ts[0], axis=case % 2)
    if kind == "log_softmax":
        return [rng.normal(size=(rows, cols))], lambda ts: nm.log_softmax(ts[0])
    if kind == "exp":
        return [rng.normal(size=(rows, cols))], lambda ts: nm.exp(ts[0])
    if kind == "log":
        return [rng.uniform(0.2, 3.0, size=(rows, cols))], lambda ts: nm.log(ts[0])
    if kind == "sum":
        return [rng.normal(size=(rows, cols))], lambda ts: nm.sum(ts[0])
    if kind == "square":
        return [rng.normal(size=(rows, cols))], lambda ts: nm.square(ts[0])
    raise AssertionError(f"unhandled op {kind}")


@pytest.mark.parametrize("kind", nm.op_kinds())
def test_gradcheck_each_op(kind):
    import zlib

    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for case in range(CASES):
        arrays, make = _op_case(kind, case, rng)
        out_shape = make([Tensor(a) for a in arrays]).shape
        weights = np.random.default_rng(10_000 + case).normal(size=out_shape)

        def build(ts):
            out = make(ts)
            if out.shape == ():
                return nm.mul_scalar(out, 1.7)
            return scalar_loss(out, weights)

        _gradcheck(build, arrays, label=f"{kind}[{case}]")


def test_gradcheck_three_layer_mlp():
    for case in range(CASES):
        rng = np.random.default_rng(1000 + case)
        batch, d_in, d_h, d_out = 3, 4, 5, 3
        x = rng.normal(size=(batch, d_in))
        arrays = [rng.normal(size=(d_in, d_h)), rng.normal(size=(d_h,)),
                  rng.normal(size=(d_h, d_h)), rng.normal(size=(d_h,)),
                  rng.normal(size=(d_h, d_out)), rng.normal(size=(d_out,))]
        labels = rng.integers(0, d_out, size=batch)
        mask = np.zeros((batch, d_out))
        mask[np.arange(batch), labels] = 1.0

        def build(ts):
            h1 = nm.relu(nm.add(nm.matmul(Tensor(x), ts[0]), ts[1]))
            h2 = nm.relu(nm.add(nm.matmul(h1, ts[2]), ts[3]))
            logits = nm.add(nm.matmul(h2, ts[4]), ts[5])
            picked = nm.sum(nm.mul(nm.log_softmax(logits), Tensor(mask)))
            return nm.mul_scalar(picked, -1.0 / batch)

        _gradcheck(build, arrays, label=f"mlp[{case}]")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_first_step_magnitude():
    p = Tensor(np.zeros(3), requires_grad=True)
    p.grad[...] = np.array([0.5, -2.0, 10.0])
    opt = Adam([p], lr=1e-3)
    opt.step()
    # bias-corrected first step is lr * g / (|g| + eps) = lr * sign(g)
    assert np.allclose(p.data, [-1e-3, 1e-3, -1e-3], rtol=1e-6)
    assert opt.t == 1
    assert np.array_equal(p.grad, np.zeros(3))  # zeroed afterward


def test_adam_zero_grad_step():
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = Adam([p], lr=1e-3)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])
    assert opt.t == 1


def test_adam_two_steps_match_hand_recurrence():
    g = np.array([0.3, -1.2])
    p = Tensor([0.0, 0.0], requires_grad=True)
    opt = Adam([p], lr=0.01)
    expected = np.zeros(2)
    m = np.zeros(2)
    v = np.zeros(2)
    for t in (1, 2):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1 - 0.9**t)
        v_hat = v / (1 - 0.999**t)
        expected -= 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
        p.grad[...] = g
        opt.step()
    assert np.all(np.abs(p.data - expected) <= 1e-12)


def test_adam_missing_grad_contract():
    p = Tensor([1.0])  # requires_grad False
    opt = Adam([p], lr=1e-3)
    with pytest.raises(ValueError, match="gradient"):
        opt.step()


def test_adam_empty_warns():
    opt = Adam([], lr=1e-3)
    with pytest.warns(RuntimeWarning, match="no trainable parameters"):
        opt.step()


# ---------------------------------------------------------------------------
# plateau schedule
# ---------------------------------------------------------------------------


def _opt(lr=1.0):
    p = Tensor([0.0], requires_grad=True)
    return Adam([p], lr=lr)


def test_plateau_monotone_improvement_keeps_rate():
    opt = _opt()
    sched = ReduceLROnPlateau(opt, factor=0.5, patience=3)
    for m in [1.0, 0.9, 0.8]:
        sched.step(m)
    assert opt.lr == 1.0


def test_plateau_flat_metrics_single_halving_by_epoch5():
    opt = _opt()
    sched = ReduceLROnPlateau(opt, factor=0.5, patience=3)
    rates = [sched.step(1.0) for _ in range(5)]
    assert rates == [1.0, 1.0, 1.0, 1.0, 0.5]
    assert sched.num_reductions == 1


def test_plateau_floor_clamp():
    opt = _opt(lr=1e-4)
    sched = ReduceLROnPlateau(opt, factor=0.5, patience=3, min_lr=1e-5)
    for _ in range(20):
        sched.step(1.0)
    assert opt.lr == pytest.approx(1e-5)
    assert opt.lr >= 1e-5


def test_plateau_rate_nonincreasing(rng):
    opt = _opt()
    sched = ReduceLROnPlateau(opt, factor=0.5, patience=2, min_lr=1e-6)
    last = opt.lr
    for m in rng.normal(size=50):
        lr = sched.step(float(np.abs(m)))
        assert lr <= last
        last = lr


def test_plateau_rejects_nonfinite():
    sched = ReduceLROnPlateau(_opt(), factor=0.5, patience=3)
    with pytest.raises(ValueError, match="finite"):
        sched.step(float("nan"))
