import math

import numpy as np
import pytest

from cxrsum import numerics as N


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, component by component."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-2)
    return float(np.max(np.abs(a - b) / denom))


def check_op_gradient(build_loss, arrays: list[np.ndarray], tol: float = 1e-4):
    """Autodiff vs central differences for a scalar loss over several inputs."""
    tape = N.Tape()
    leaves = [tape.leaf(a) for a in arrays]
    loss = build_loss(tape, leaves)
    grads = N.backward(loss)
    for k, arr in enumerate(arrays):
        ad = grads[leaves[k].node_id].array

        def scalar(x, k=k):
            inputs = [x if i == k else arrays[i] for i in range(len(arrays))]
            t2 = N.Tape()
            l2 = [t2.leaf(a) for a in inputs]
            return build_loss(t2, l2).item()

        fd = fd_gradient(scalar, arrays[k].copy())
        assert rel_err(ad, fd) < tol, f"input {k}: rel err {rel_err(ad, fd)}"


def weighted_sum(tape, t, rng):
    """Random fixed projection to a scalar so any-shaped outputs can be FD-checked."""
    w = N.constant(rng.uniform(-1, 1, size=t.shape))
    prod = N.mul(t, w)
    flat = N.reshape(prod, (1, int(np.prod(t.shape))))
    ones = N.constant(np.ones((int(np.prod(t.shape)), 1)))
    return N.reshape(N.matmul(flat, ones), ())


@pytest.mark.parametrize("seed", [0, 1, 2])
class TestGradientOracle:
    """Every differentiable op vs central finite differences, step 1e-5."""

    def test_matmul(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-2, 2, (3, 4))
        b = rng.uniform(-2, 2, (4, 5))
        check_op_gradient(lambda tp, ts: weighted_sum(tp, N.matmul(ts[0], ts[1]), np.random.default_rng(seed + 10)), [a, b])

    def test_add_broadcast(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-2, 2, (4, 5))
        b = rng.uniform(-2, 2, (5,))
        check_op_gradient(lambda tp, ts: weighted_sum(tp, N.add(ts[0], ts[1]), np.random.default_rng(seed + 11)), [a, b])

    def test_mul_broadcast(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-2, 2, (4, 5))
        b = rng.uniform(-2, 2, (4, 1))
        check_op_gradient(lambda tp, ts: weighted_sum(tp, N.mul(ts[0], ts[1]), np.random.default_rng(seed + 12)), [a, b])

    def test_transpose_reshape_slice_concat(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-2, 2, (4, 6))
        b = rng.uniform(-2, 2, (4, 6))

        def loss(tp, ts):
            joined = N.concat([ts[0], ts[1]], axis=1)
            cut = N.slice_axis(joined, 1, 2, 9)
            flipped = N.transpose(cut)
            back = N.reshape(flipped, (4, 7))
            return weighted_sum(tp, back, np.random.default_rng(seed + 13))

        check_op_gradient(loss, [a, b])

    def test_softmax(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-2, 2, (3, 7))
        check_op_gradient(lambda tp, ts: weighted_sum(tp, N.softmax(ts[0], axis=-1), np.random.default_rng(seed + 14)), [a])

    def test_softmax_axis0(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-2, 2, (5, 3))
        check_op_gradient(lambda tp, ts: weighted_sum(tp, N.softmax(ts[0], axis=0), np.random.default_rng(seed + 15)), [a])

    def test_gelu(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-2, 2, (4, 5))
        check_op_gradient(lambda tp, ts: weighted_sum(tp, N.gelu(ts[0]), np.random.default_rng(seed + 16)), [a])

    def test_layer_norm(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, (4, 6))
        gain = rng.uniform(0.5, 1.5, (6,))
        bias = rng.uniform(-0.5, 0.5, (6,))
        check_op_gradient(
            lambda tp, ts: weighted_sum(tp, N.layer_norm(ts[0], ts[1], ts[2]), np.random.default_rng(seed + 17)),
            [x, gain, bias],
        )

    def test_embedding_lookup(self, seed):
        rng = np.random.default_rng(seed)
        table = rng.uniform(-2, 2, (9, 4))
        ids = rng.integers(0, 9, size=6)
        check_op_gradient(
            lambda tp, ts: weighted_sum(tp, N.embedding_lookup(ts[0], ids), np.random.default_rng(seed + 18)),
            [table],
        )

    def test_cross_entropy(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.uniform(-2, 2, (6, 5))
        targets = rng.integers(0, 5, size=6)
        targets[2] = 0  # pad position
        check_op_gradient(lambda tp, ts: N.cross_entropy(ts[0], targets, pad_id=0), [logits])


class TestMatmul:
    def test_identity(self):
        x = np.arange(6, dtype=float).reshape(3, 2)
        out = N.matmul(N.constant(np.eye(3)), N.constant(x))
        np.testing.assert_array_equal(out.array, x)

    def test_hand_product(self):
        out = N.matmul(N.constant([[1, 2], [3, 4]]), N.constant([[5], [6]]))
        np.testing.assert_array_equal(out.array, [[17], [39]])

    def test_zeros(self):
        out = N.matmul(N.constant(np.zeros((2, 3))), N.constant(np.ones((3, 4))))
        np.testing.assert_array_equal(out.array, np.zeros((2, 4)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(N.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            N.matmul(N.constant(np.ones((2, 3))), N.constant(np.ones((4, 5))))


class TestSoftmax:
    def test_symmetry(self):
        out = N.softmax(N.constant([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.array, [1 / 3] * 3, atol=1e-15)

    def test_large_values_stable(self):
        out = N.softmax(N.constant([1000.0, 0.0]), axis=0)
        assert out.array[0] == pytest.approx(1.0)
        assert out.array[1] == pytest.approx(0.0, abs=1e-300)

    def test_direct_evaluation(self):
        out = N.softmax(N.constant([1.0, 2.0, 3.0]), axis=0)
        np.testing.assert_allclose(out.array, [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        out = N.softmax(N.constant(rng.normal(size=(20, 11)) * 5), axis=-1)
        np.testing.assert_allclose(out.array.sum(axis=-1), np.ones(20), atol=1e-12)


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = np.zeros((3, 8))
        loss = N.cross_entropy(N.constant(logits), [1, 2, 3], pad_id=0)
        assert loss.item() == pytest.approx(math.log(8), abs=1e-12)

    def test_confident_correct(self):
        logits = np.zeros((2, 5))
        logits[0, 3] = 1e6
        logits[1, 1] = 1e6
        loss = N.cross_entropy(N.constant(logits), [3, 1], pad_id=0)
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(42)
        logits = rng.normal(size=(4, 5))
        targets = [2, 0, 4, 1]
        pad_id = 0
        total, count = 0.0, 0
        for t in range(4):
            if targets[t] == pad_id:
                continue
            row = logits[t]
            denom = sum(math.exp(v) for v in row)
            total += -math.log(math.exp(row[targets[t]]) / denom)
            count += 1
        expected = total / count
        loss = N.cross_entropy(N.constant(logits), targets, pad_id=pad_id)
        assert loss.item() == pytest.approx(expected, abs=1e-12)

    def test_pad_positions_contribute_zero(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(5, 6))
        full = N.cross_entropy(N.constant(logits[:3]), [1, 2, 3], pad_id=0).item()
        padded = N.cross_entropy(N.constant(logits), [1, 2, 3, 0, 0], pad_id=0).item()
        assert padded == pytest.approx(full, abs=1e-14)

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            N.cross_entropy(N.constant(np.zeros((2, 4))), [1, 7], pad_id=0)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(6, 9))
        targets = rng.integers(1, 9, size=6)
        perm = rng.permutation(9)
        inv = np.argsort(perm)
        base = N.cross_entropy(N.constant(logits), targets, pad_id=0).item()
        permuted = N.cross_entropy(N.constant(logits[:, perm]), inv[targets], pad_id=0).item()
        assert permuted == pytest.approx(base, abs=1e-12)


class TestLayerNorm:
    def test_normalization_before_gain_bias(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(10, 16)) * 3 + 2
        out = N.layer_norm(N.constant(x), N.constant(np.ones(16)), N.constant(np.zeros(16)))
        mu = out.array.mean(axis=-1)
        var = out.array.var(axis=-1)
        assert np.abs(mu).max() < 1e-10
        assert np.abs(var - 1).max() < 1e-8


class TestBackward:
    def test_sum_gives_ones(self):
        tape = N.Tape()
        w = tape.leaf(np.array([1.0, 2.0, 3.0]))
        loss = weighted_sum(tape, w, np.random.default_rng(0))
        # replace random projection by exact ones for this case
        tape = N.Tape()
        w = tape.leaf(np.array([[1.0, 2.0, 3.0]]))
        loss = N.reshape(N.matmul(w, N.constant(np.ones((3, 1)))), ())
        grads = N.backward(loss)
        np.testing.assert_array_equal(grads[w.node_id].array, np.ones((1, 3)))

    def test_quadratic(self):
        tape = N.Tape()
        w = tape.leaf(np.array([[1.0, 2.0, 3.0]]))
        loss = N.reshape(N.matmul(N.mul(w, w), N.constant(np.ones((3, 1)))), ())
        grads = N.backward(loss)
        np.testing.assert_allclose(grads[w.node_id].array, [[2.0, 4.0, 6.0]])

    def test_non_scalar_loss_rejected(self):
        tape = N.Tape()
        w = tape.leaf(np.ones((2, 2)))
        with pytest.raises(N.ContractError):
            N.backward(N.add(w, w))

    def test_unreachable_leaf_gets_zeros(self):
        tape = N.Tape()
        used = tape.leaf(np.ones((1, 2)))
        unused = tape.leaf(np.ones((3, 4)))
        loss = N.reshape(N.matmul(used, N.constant(np.ones((2, 1)))), ())
        grads = N.backward(loss)
        np.testing.assert_array_equal(grads[unused.node_id].array, np.zeros((3, 4)))

    def test_backward_twice_bit_identical(self):
        rng = np.random.default_rng(9)
        tape = N.Tape()
        x = tape.leaf(rng.normal(size=(4, 6)))
        g = tape.leaf(np.ones(6))
        b = tape.leaf(np.zeros(6))
        h = N.gelu(N.layer_norm(x, g, b))
        loss = N.cross_entropy(N.matmul(h, N.constant(rng.normal(size=(6, 5)))), [1, 2, 3, 4], pad_id=0)
        g1 = N.backward(loss)
        g2 = N.backward(loss)
        for nid in g1:
            assert np.array_equal(g1[nid].array, g2[nid].array)

    def test_overflow_is_an_error(self):
        with pytest.raises(FloatingPointError):
            N.mul(N.constant(np.full((2, 2), 1e200)), N.constant(np.full((2, 2), 1e200)))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.zeros(2)}
        state = N.AdamState.for_params(params)
        new, state = N.adam_step(params, grads, state)
        np.testing.assert_array_equal(new["w"], params["w"])
        assert state.step == 1

    def test_first_step_closed_form(self):
        # m_hat = g, v_hat = g^2 at step 1, so the update is lr * g/(|g|+eps)
        params = {"w": np.array([0.5])}
        grads = {"w": np.array([1.0])}
        state = N.AdamState.for_params(params, lr=0.1)
        new, _ = N.adam_step(params, grads, state)
        expected = 0.5 - 0.1 * 1.0 / (1.0 + state.eps)
        assert new["w"][0] == pytest.approx(expected, abs=1e-15)

    def test_identical_params_identical_updates(self):
        params = {"a": np.array([1.0, 2.0]), "b": np.array([1.0, 2.0])}
        grads = {"a": np.array([0.3, -0.4]), "b": np.array([0.3, -0.4])}
        state = N.AdamState.for_params(params)
        new, _ = N.adam_step(params, grads, state)
        np.testing.assert_array_equal(new["a"], new["b"])

    def test_shape_mismatch(self):
        params = {"w": np.ones(3)}
        grads = {"w": np.ones(4)}
        state = N.AdamState.for_params(params)
        with pytest.raises(N.ShapeError):
            N.adam_step(params, grads, state)


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        params = {
            "embed.tok": rng.normal(size=(17, 8)),
            "enc.0.wq": rng.normal(size=(8, 8)),
            "scalarish": rng.normal(size=(1,)),
        }
        path = tmp_path / "model.cxof"
        N.save_checkpoint(path, params)
        loaded = N.load_checkpoint(path)
        assert sorted(loaded) == sorted(params)
        for k in params:
            assert loaded[k].shape == params[k].shape
            assert params[k].tobytes() == loaded[k].tobytes()

    def test_header(self, tmp_path):
        path = tmp_path / "m.cxof"
        N.save_checkpoint(path, {"w": np.zeros((2, 2))})
        blob = path.read_bytes()
        assert blob[:4] == b"CXOF"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.cxof"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(N.CheckpointError):
            N.load_checkpoint(path)

    def test_save_identical_bytes(self, tmp_path):
        rng = np.random.default_rng(2)
        params = {"a": rng.normal(size=(3, 3)), "b": rng.normal(size=(5,))}
        p1, p2 = tmp_path / "1.cxof", tmp_path / "2.cxof"
        N.save_checkpoint(p1, params)
        N.save_checkpoint(p2, params)
        assert p1.read_bytes() == p2.read_bytes()
