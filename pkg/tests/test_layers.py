import math

import numpy as np
import pytest

from argseg.errors import ConfigurationError, ContractViolation
from argseg.layers import (
    AdditiveSelfAttention,
    BiLstm,
    DenseSoftmax,
    LstmCell,
    MultiHeadSelfAttention,
    TimeDistributedLinear,
    bilstm_forward,
    choose_heads,
    lstm_cell_step,
)
from argseg.numeric import BatchTensor, grad_check


def full_batch(values):
    values = np.asarray(values, dtype=float)
    return BatchTensor(values, np.ones(values.shape[:2], dtype=bool))


# ---------------------------------------------------------------------------
# scalar-loop LSTM reference (independent of the vectorized implementation)
# ---------------------------------------------------------------------------


def scalar_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def scalar_lstm_step(cell, x, h_prev, c_prev):
    hidden = cell.hidden
    h_t = np.zeros(hidden)
    c_t = np.zeros(hidden)
    gates = {}
    for g in ("i", "f", "c", "o"):
        w, u, b = cell.w[g].value, cell.u[g].value, cell.b[g].value
        pre = np.zeros(hidden)
        for j in range(hidden):
            acc = b[j]
            for k in range(len(x)):
                acc += x[k] * w[k, j]
            for k in range(hidden):
                acc += h_prev[k] * u[k, j]
            pre[j] = acc
        gates[g] = pre
    for j in range(hidden):
        i = scalar_sigmoid(gates["i"][j])
        f = scalar_sigmoid(gates["f"][j])
        o = scalar_sigmoid(gates["o"][j])
        g = math.tanh(gates["c"][j])
        c_t[j] = f * c_prev[j] + i * g
        h_t[j] = o * math.tanh(c_t[j])
    return h_t, c_t


class TestLstmCell:
    def test_zero_parameters_fixed_point(self):
        rng = np.random.default_rng(0)
        cell = LstmCell(3, 4, rng)
        for p in cell.params():
            p.value[...] = 0.0
        h, c = lstm_cell_step(cell, np.array([1.0, -2.0, 3.0]), np.ones(4), np.ones(4))
        # candidate tanh(0) = 0 forces c_t = 0.5 * c_prev ... but with zero
        # forget bias f = 0.5, c_prev weighted; with c_prev = 0 both vanish
        h0, c0 = lstm_cell_step(cell, np.array([1.0, -2.0, 3.0]), np.zeros(4), np.zeros(4))
        assert np.array_equal(h0, np.zeros(4))
        assert np.array_equal(c0, np.zeros(4))
        assert np.allclose(c, 0.5 * np.ones(4))
        assert np.allclose(h, 0.5 * np.tanh(c))

    def test_saturated_forget_gate_carries_cell_state(self):
        rng = np.random.default_rng(1)
        cell = LstmCell(3, 4, rng)
        cell.b["f"].value[:] = 50.0  # forget gate pinned open
        cell.b["i"].value[:] = -50.0  # input gate pinned shut
        c_prev = rng.standard_normal(4)
        _, c_t = lstm_cell_step(cell, rng.standard_normal(3), rng.standard_normal(4), c_prev)
        assert np.allclose(c_t, c_prev, atol=1e-10)

    def test_matches_scalar_loop_reference(self):
        rng = np.random.default_rng(2)
        cell = LstmCell(3, 3, rng)
        x = rng.standard_normal(3)
        h_prev = rng.standard_normal(3)
        c_prev = rng.standard_normal(3)
        h, c = lstm_cell_step(cell, x, h_prev, c_prev)
        h_ref, c_ref = scalar_lstm_step(cell, x, h_prev, c_prev)
        assert np.allclose(h, h_ref, atol=1e-12)
        assert np.allclose(c, c_ref, atol=1e-12)


class TestBiLstm:
    def test_length_one_sequence(self):
        rng = np.random.default_rng(3)
        layer = BiLstm(3, 4, rng)
        x = rng.standard_normal(3)
        out, _ = layer.forward(full_batch(x[None, None, :]))
        h_f, _ = lstm_cell_step(layer.fwd, x, np.zeros(4), np.zeros(4))
        h_b, _ = lstm_cell_step(layer.bwd, x, np.zeros(4), np.zeros(4))
        assert np.allclose(out.values[0, 0], np.concatenate([h_f, h_b]), atol=1e-12)

    def test_palindrome_with_tied_directions(self):
        rng = np.random.default_rng(4)
        layer = BiLstm(3, 4, rng)
        for pf, pb in zip(layer.fwd.params(), layer.bwd.params()):
            pb.value[...] = pf.value
        seq = rng.standard_normal((2, 3))
        palindrome = np.stack([seq[0], seq[1], seq[1], seq[0]])
        out, _ = layer.forward(full_batch(palindrome[None]))
        h = 4
        for t in range(4):
            mirrored = 4 - 1 - t
            swapped = np.concatenate(
                [out.values[0, mirrored, h:], out.values[0, mirrored, :h]]
            )
            assert np.allclose(out.values[0, t], swapped, atol=1e-12)

    def test_matches_unrolled_scalar_reference(self):
        rng = np.random.default_rng(5)
        layer = BiLstm(3, 4, rng)
        seq = rng.standard_normal((3, 3))
        out, _ = layer.forward(full_batch(seq[None]))

        h = np.zeros(4)
        c = np.zeros(4)
        fwd_states = []
        for t in range(3):
            h, c = scalar_lstm_step(layer.fwd, seq[t], h, c)
            fwd_states.append(h)
        h = np.zeros(4)
        c = np.zeros(4)
        bwd_states = [None] * 3
        for t in range(2, -1, -1):
            h, c = scalar_lstm_step(layer.bwd, seq[t], h, c)
            bwd_states[t] = h
        for t in range(3):
            expected = np.concatenate([fwd_states[t], bwd_states[t]])
            assert np.allclose(out.values[0, t], expected, atol=1e-12)

    def test_zero_parameters_give_zero_output(self):
        rng = np.random.default_rng(6)
        layer = BiLstm(3, 4, rng)
        for p in layer.params():
            p.value[...] = 0.0
        out, _ = layer.forward(full_batch(rng.standard_normal((2, 5, 3))))
        assert not out.values.any()

    def test_trailing_padding_matches_unpadded_run(self):
        rng = np.random.default_rng(7)
        layer = BiLstm(3, 4, rng)
        short = rng.standard_normal((3, 3))
        long_ = rng.standard_normal((5, 3))
        padded = BatchTensor.from_rows([short, long_])
        out_padded, _ = layer.forward(padded)
        out_short, _ = layer.forward(full_batch(short[None]))
        assert np.allclose(out_padded.values[0, :3], out_short.values[0], atol=1e-12)
        assert not out_padded.values[0, 3:].any()

    def test_functional_form_matches_layer(self):
        rng = np.random.default_rng(8)
        layer = BiLstm(3, 2, rng)
        x = BatchTensor.from_rows([rng.standard_normal((4, 3)), rng.standard_normal((2, 3))])
        out_layer, _ = layer.forward(x)
        out_fn = bilstm_forward(layer.fwd, layer.bwd, x)
        assert np.array_equal(out_layer.values, out_fn.values)


class TestAdditiveAttention:
    def test_identical_tokens_reproduced(self):
        rng = np.random.default_rng(9)
        layer = AdditiveSelfAttention(3, rng, attn_dim=5)
        token = rng.standard_normal(3)
        x = full_batch(np.tile(token, (1, 4, 1)))
        out, _ = layer.forward(x)
        assert np.allclose(out.values, token, atol=1e-12)

    def test_zero_score_vector_gives_mean(self):
        rng = np.random.default_rng(10)
        layer = AdditiveSelfAttention(3, rng, attn_dim=5)
        layer.v_score.value[...] = 0.0
        vals = rng.standard_normal((1, 4, 3))
        out, _ = layer.forward(full_batch(vals))
        assert np.allclose(out.values[0], np.tile(vals[0].mean(axis=0), (4, 1)), atol=1e-12)

    def test_matches_double_loop_reference(self):
        rng = np.random.default_rng(11)
        layer = AdditiveSelfAttention(3, rng, attn_dim=4)
        vals = rng.standard_normal((1, 4, 3))
        out, _ = layer.forward(full_batch(vals))

        w_t, w_x = layer.w_query.value, layer.w_key.value
        b_h, v_a = layer.b_hidden.value, layer.v_score.value[:, 0]
        b_v = layer.b_score.value[0]
        x = vals[0]
        expected = np.zeros_like(x)
        for t in range(4):
            scores = np.empty(4)
            for s in range(4):
                scores[s] = v_a @ np.tanh(x[t] @ w_t + x[s] @ w_x + b_h) + b_v
            e = np.exp(scores - scores.max())
            alpha = e / e.sum()
            for s in range(4):
                expected[t] += alpha[s] * x[s]
        assert np.allclose(out.values[0], expected, atol=1e-12)

    def test_all_padding_row_rejected(self):
        rng = np.random.default_rng(12)
        layer = AdditiveSelfAttention(3, rng)
        values = np.zeros((2, 3, 3))
        mask = np.ones((2, 3), dtype=bool)
        mask[1, :] = False
        with pytest.raises(ContractViolation):
            layer.forward(BatchTensor(values, mask))

    def test_padded_queries_and_keys_inert(self):
        rng = np.random.default_rng(13)
        layer = AdditiveSelfAttention(3, rng, attn_dim=4)
        short = rng.standard_normal((2, 3))
        padded = BatchTensor.from_rows([short, rng.standard_normal((4, 3))])
        out_padded, cache = layer.forward(padded)
        out_short, _ = layer.forward(full_batch(short[None]))
        assert np.allclose(out_padded.values[0, :2], out_short.values[0], atol=1e-12)
        alpha = cache[4]
        assert not alpha[0, :, 2:].any()
        assert not alpha[0, 2:, :].any()


class TestMultiHeadAttention:
    def test_zero_query_uniform_attention(self):
        rng = np.random.default_rng(14)
        layer = MultiHeadSelfAttention(4, 2, rng)
        layer.w_q.value[...] = 0.0
        vals = rng.standard_normal((1, 5, 4))
        out, _ = layer.forward(full_batch(vals))
        v = vals[0] @ layer.w_v.value
        expected = np.tile(v.mean(axis=0), (5, 1)) @ layer.w_o.value
        assert np.allclose(out.values[0], expected, atol=1e-12)

    def test_singleton_sequence(self):
        rng = np.random.default_rng(15)
        layer = MultiHeadSelfAttention(4, 2, rng)
        vals = rng.standard_normal((1, 1, 4))
        out, _ = layer.forward(full_batch(vals))
        expected = vals[0] @ layer.w_v.value @ layer.w_o.value
        assert np.allclose(out.values[0], expected, atol=1e-12)

    def test_matches_per_head_explicit_loop(self):
        rng = np.random.default_rng(16)
        layer = MultiHeadSelfAttention(4, 2, rng)
        vals = rng.standard_normal((1, 3, 4))
        out, _ = layer.forward(full_batch(vals))

        x = vals[0]
        q_all = x @ layer.w_q.value
        k_all = x @ layer.w_k.value
        v_all = x @ layer.w_v.value
        dk = 2
        heads = []
        for h in range(2):
            q = q_all[:, h * dk : (h + 1) * dk]
            k = k_all[:, h * dk : (h + 1) * dk]
            v = v_all[:, h * dk : (h + 1) * dk]
            ctx = np.zeros((3, dk))
            for t in range(3):
                scores = np.array([q[t] @ k[s] / math.sqrt(dk) for s in range(3)])
                e = np.exp(scores - scores.max())
                alpha = e / e.sum()
                for s in range(3):
                    ctx[t] += alpha[s] * v[s]
            heads.append(ctx)
        expected = np.concatenate(heads, axis=1) @ layer.w_o.value
        assert np.allclose(out.values[0], expected, atol=1e-12)

    def test_single_head_equals_unsliced_attention(self):
        rng = np.random.default_rng(17)
        layer = MultiHeadSelfAttention(4, 1, rng)
        vals = rng.standard_normal((1, 3, 4))
        out, _ = layer.forward(full_batch(vals))

        x = vals[0]
        q = x @ layer.w_q.value
        k = x @ layer.w_k.value
        v = x @ layer.w_v.value
        scores = q @ k.T / math.sqrt(4)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        alpha = e / e.sum(axis=1, keepdims=True)
        expected = alpha @ v @ layer.w_o.value
        assert np.allclose(out.values[0], expected, atol=1e-12)

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ConfigurationError, match="heads"):
            MultiHeadSelfAttention(5, 2, np.random.default_rng(0))


class TestChooseHeads:
    def test_reference_dimensions(self):
        assert choose_heads(300) == 6
        assert choose_heads(3072) == 6
        assert choose_heads(4196) == 4

    def test_one_always_divides(self):
        assert choose_heads(7) == 1
        assert choose_heads(1) == 1

    def test_cap_respected(self):
        assert choose_heads(12, cap=5) == 4
        assert choose_heads(12, cap=2) == 2

    def test_domain_errors(self):
        with pytest.raises(ConfigurationError):
            choose_heads(0)
        with pytest.raises(ConfigurationError):
            choose_heads(4, cap=0)


class TestDenseSoftmax:
    def test_zero_weights_uniform(self):
        rng = np.random.default_rng(18)
        layer = DenseSoftmax(4, rng)
        layer.w.value[...] = 0.0
        layer.b.value[...] = 0.0
        out, _ = layer.forward(full_batch(rng.standard_normal((2, 3, 4))))
        assert np.allclose(out.values, 1.0 / 3.0, atol=1e-15)

    def test_bias_dominance(self):
        rng = np.random.default_rng(19)
        layer = DenseSoftmax(4, rng)
        layer.w.value[...] = 0.0
        layer.b.value[...] = np.array([10.0, 0.0, -10.0])
        out, _ = layer.forward(full_batch(rng.standard_normal((1, 2, 4))))
        assert (out.values[..., 0] > 0.9999).all()

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(20)
        layer = DenseSoftmax(5, rng)
        out, _ = layer.forward(full_batch(rng.standard_normal((3, 4, 5))))
        assert np.abs(out.values.sum(axis=2) - 1.0).max() <= 1e-9

    def test_padded_tokens_emit_uniform(self):
        rng = np.random.default_rng(21)
        layer = DenseSoftmax(3, rng)
        x = BatchTensor.from_rows([rng.standard_normal((1, 3)), rng.standard_normal((3, 3))])
        out, _ = layer.forward(x)
        assert np.allclose(out.values[0, 1:], 1.0 / 3.0, atol=1e-15)


class TestAttentionInvariants:
    @pytest.mark.parametrize("kind", ["additive", "multi_head"])
    def test_permutation_equivariance(self, kind):
        for trial in range(10):
            rng = np.random.default_rng(100 + trial)
            if kind == "additive":
                layer = AdditiveSelfAttention(6, rng, attn_dim=4)
            else:
                layer = MultiHeadSelfAttention(6, 3, rng)
            vals = rng.standard_normal((1, 5, 6))
            out, _ = layer.forward(full_batch(vals))
            perm = rng.permutation(5)
            out_perm, _ = layer.forward(full_batch(vals[:, perm]))
            assert np.abs(out.values[:, perm] - out_perm.values).max() <= 1e-9

    @pytest.mark.parametrize("kind", ["additive", "multi_head"])
    def test_weights_row_stochastic_and_zero_on_padding(self, kind):
        for trial in range(10):
            rng = np.random.default_rng(200 + trial)
            if kind == "additive":
                layer = AdditiveSelfAttention(4, rng, attn_dim=3)
            else:
                layer = MultiHeadSelfAttention(4, 2, rng)
            x = BatchTensor.from_rows(
                [rng.standard_normal((5, 4)), rng.standard_normal((3, 4))]
            )
            _, cache = layer.forward(x)
            alpha = cache[4] if kind == "additive" else cache[5]
            valid = alpha[1, ..., :3, :]  # rows of the shorter sequence
            sums = valid[..., :3].sum(axis=-1)
            assert np.abs(sums - 1.0).max() <= 1e-9
            assert not alpha[1, ..., 3:].any()  # padded keys
            assert not alpha[1, ..., 3:, :].any()  # padded queries


LAYER_BUILDERS = [
    ("linear", lambda rng: (TimeDistributedLinear(4, 3, rng), 4)),
    ("bilstm", lambda rng: (BiLstm(4, 5, rng), 4)),
    ("additive", lambda rng: (AdditiveSelfAttention(4, rng, attn_dim=5), 4)),
    ("multi_head", lambda rng: (MultiHeadSelfAttention(6, 2, rng), 6)),
    ("dense_softmax", lambda rng: (DenseSoftmax(4, rng), 4)),
]


@pytest.mark.parametrize("name,builder", LAYER_BUILDERS)
def test_gradients_across_seeds(name, builder):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        layer, width = builder(rng)
        values = rng.standard_normal((2, 3, width)) * 0.5
        mask = np.ones((2, 3), dtype=bool)
        mask[-1, -1] = False
        values[~mask] = 0.0
        err = grad_check(layer, BatchTensor(values, mask), 1e-3, rng)
        assert err < 1e-4, f"{name} seed {seed}: {err:.3e}"


def test_single_step_cell_gradients():
    # one timestep exercises the bare cell equations, no recurrence
    rng = np.random.default_rng(30)
    layer = BiLstm(4, 5, rng)
    x = full_batch(rng.standard_normal((2, 1, 4)) * 0.5)
    assert grad_check(layer, x, 1e-3, rng) < 1e-4


def test_multi_head_gradients_at_reference_shape():
    rng = np.random.default_rng(31)
    layer = MultiHeadSelfAttention(6, 2, rng)
    x = full_batch(rng.standard_normal((2, 3, 6)) * 0.5)
    assert grad_check(layer, x, 1e-3, rng) < 1e-4
