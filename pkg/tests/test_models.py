import numpy as np
import pytest

from argseg.errors import ConfigurationError, FormatError
from argseg.layers import (
    AdditiveSelfAttention,
    BiLstm,
    DenseSoftmax,
    MultiHeadSelfAttention,
    TimeDistributedLinear,
)
from argseg.models import (
    ArchitectureId,
    ModelSpec,
    build_model,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
)
from argseg.numeric import BatchTensor, grad_check, softmax_rows

# 2 directions x 4 gates x (W + U + b) for the BiLSTM, then the 3-way head
SB_PARAM_COUNT = 2 * 4 * (300 * 64 + 64 * 64 + 64) + (128 * 3 + 3)


def toy_batch(rng, features, batch=2, time=3, scale=0.5):
    values = rng.standard_normal((batch, time, features)) * scale
    mask = np.ones((batch, time), dtype=bool)
    mask[-1, -1] = False
    values[~mask] = 0.0
    return BatchTensor(values, mask)


class TestBuildModel:
    def test_sb_parameter_count_closed_form(self):
        model = build_model(ModelSpec(ArchitectureId.SB, input_dim=300, hidden=64))
        total = sum(p.value.size for p in model.params())
        assert total == SB_PARAM_COUNT == 187267

    def test_bl_i_first_layer_is_six_head_attention(self):
        model = build_model(ModelSpec(ArchitectureId.BL_I, input_dim=300, hidden=8))
        first = model.layers[0]
        assert isinstance(first, MultiHeadSelfAttention)
        assert first.heads == 6

    def test_bl_e_attention_heads_follow_divisor_rule(self):
        model = build_model(ModelSpec(ArchitectureId.BL_E, input_dim=300, hidden=8))
        attn = [l for l in model.layers if isinstance(l, MultiHeadSelfAttention)]
        assert len(attn) == 1
        assert attn[0].dim == 4 and attn[0].heads == 4

    def test_same_seed_bit_identical(self):
        spec = ModelSpec(ArchitectureId.BL_I, input_dim=12, hidden=5, seed=99)
        a = build_model(spec)
        b = build_model(spec)
        for pa, pb in zip(a.params(), b.params()):
            assert pa.name == pb.name
            assert np.array_equal(pa.value, pb.value)

    @pytest.mark.parametrize("arch,expected", [
        (ArchitectureId.BL, [BiLstm, TimeDistributedLinear, BiLstm, DenseSoftmax]),
        (ArchitectureId.BL_I, [MultiHeadSelfAttention, BiLstm, TimeDistributedLinear,
                               BiLstm, DenseSoftmax]),
        (ArchitectureId.BL_E, [BiLstm, TimeDistributedLinear, MultiHeadSelfAttention,
                               BiLstm, DenseSoftmax]),
        (ArchitectureId.SB, [BiLstm, DenseSoftmax]),
        (ArchitectureId.SB_I, [AdditiveSelfAttention, BiLstm, DenseSoftmax]),
    ])
    def test_layer_stacks(self, arch, expected):
        model = build_model(ModelSpec(arch, input_dim=12, hidden=4))
        assert [type(l) for l in model.layers] == expected

    def test_sb_is_prefix_of_bl(self):
        sb = build_model(ModelSpec(ArchitectureId.SB, input_dim=12, hidden=4, seed=5))
        bl = build_model(ModelSpec(ArchitectureId.BL, input_dim=12, hidden=4, seed=5))
        for p_sb, p_bl in zip(sb.layers[0].params(), bl.layers[0].params()):
            assert np.array_equal(p_sb.value, p_bl.value)

    def test_attention_field_fixed_by_family(self):
        spec = ModelSpec(ArchitectureId.SB_I, input_dim=8)
        assert spec.attention == "additive"
        spec = ModelSpec(ArchitectureId.BL_E, input_dim=8)
        assert spec.attention == "multi_head"
        with pytest.raises(ConfigurationError):
            ModelSpec(ArchitectureId.SB_I, input_dim=8, attention="multi_head")

    def test_incompatible_attention_dim_reported(self):
        with pytest.raises(ConfigurationError, match="heads"):
            # 7-dim inter-stage space with a forced 4-head requirement
            MultiHeadSelfAttention(7, 4, np.random.default_rng(0))


class TestForward:
    def test_distribution_contract(self):
        rng = np.random.default_rng(0)
        for arch in ArchitectureId:
            model = build_model(ModelSpec(arch, input_dim=6, hidden=4, seed=3))
            batch = toy_batch(rng, 6)
            out, _ = model.forward(batch)
            sums = out.values.sum(axis=2)
            assert np.abs(sums - 1.0).max() <= 1e-9

    def test_sb_equals_manual_composition(self):
        rng = np.random.default_rng(1)
        model = build_model(ModelSpec(ArchitectureId.SB, input_dim=6, hidden=4, seed=7))
        batch = toy_batch(rng, 6)
        out, _ = model.forward(batch)
        bilstm, head = model.layers
        mid, _ = bilstm.forward(batch)
        expected, _ = head.forward(mid)
        assert np.array_equal(out.values, expected.values)

    def test_bl_without_bridge_is_two_stacked_bilstms(self):
        spec = ModelSpec(ArchitectureId.BL, input_dim=6, hidden=4,
                         inter_stage_dim=None, seed=11)
        model = build_model(spec)
        assert [type(l) for l in model.layers] == [BiLstm, BiLstm, DenseSoftmax]
        rng = np.random.default_rng(2)
        batch = toy_batch(rng, 6)
        out, _ = model.forward(batch)
        a, _ = model.layers[0].forward(batch)
        b, _ = model.layers[1].forward(a)
        c, _ = model.layers[2].forward(b)
        assert np.array_equal(out.values, c.values)

    def test_all_padding_entry_contributes_nothing(self):
        from argseg.training import masked_cross_entropy

        rng = np.random.default_rng(3)
        model = build_model(ModelSpec(ArchitectureId.SB, input_dim=5, hidden=3, seed=1))
        rows = [rng.standard_normal((4, 5)), rng.standard_normal((2, 5))]
        batch = BatchTensor.from_rows(rows)
        gold = np.zeros((2, 4), dtype=np.int64)

        padded_values = np.concatenate([batch.values, np.zeros((1, 4, 5))])
        padded_mask = np.concatenate([batch.mask, np.zeros((1, 4), dtype=bool)])
        padded_gold = np.concatenate([gold, np.zeros((1, 4), dtype=np.int64)])

        out1, _ = model.forward(batch)
        loss1, _ = masked_cross_entropy(out1, gold, batch.mask)
        out2, _ = model.forward(BatchTensor(padded_values, padded_mask))
        loss2, _ = masked_cross_entropy(out2, padded_gold, padded_mask)
        assert loss1 == pytest.approx(loss2, abs=1e-15)


class TestPredictLabels:
    def test_argmax_and_tie_break(self):
        probs = np.array([[[0.1, 0.7, 0.2], [1 / 3, 1 / 3, 1 / 3]]])
        assert np.argmax(probs[0, 0]) == 1  # I
        assert np.argmax(probs[0, 1]) == 0  # exact tie -> B

        rng = np.random.default_rng(4)
        model = build_model(ModelSpec(ArchitectureId.SB, input_dim=4, hidden=3, seed=0))
        head = model.layers[-1]
        head.w.value[...] = 0.0
        head.b.value[...] = 0.0  # uniform output everywhere
        batch = toy_batch(rng, 4)
        labels = predict_labels(model, batch)
        assert (labels[batch.mask] == 0).all()  # ties resolve to B

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((6, 3)) * 3
        base = np.argmax(softmax_rows(logits), axis=1)
        for transform in (lambda z: 2 * z + 1, lambda z: z**3, np.tanh):
            assert np.array_equal(np.argmax(softmax_rows(transform(logits)), axis=1), base)


@pytest.mark.parametrize("arch", list(ArchitectureId))
def test_full_model_gradients(arch):
    for seed in (0, 1):
        rng = np.random.default_rng(10 + seed)
        model = build_model(
            ModelSpec(arch, input_dim=4, hidden=3, inter_stage_dim=4, attn_dim=4, seed=seed)
        )
        err = grad_check(model, toy_batch(rng, 4), 1e-3, rng)
        assert err < 1e-4, f"{arch.value} seed {seed}: {err:.3e}"


class TestCheckpoint:
    def test_byte_exact_roundtrip(self, tmp_path):
        model = build_model(ModelSpec(ArchitectureId.BL_E, input_dim=8, hidden=3, seed=21))
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        restored = load_checkpoint(p1)
        save_checkpoint(restored, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_restored_model_predicts_identically(self, tmp_path):
        rng = np.random.default_rng(6)
        model = build_model(ModelSpec(ArchitectureId.SB_I, input_dim=5, hidden=4, seed=2))
        for p in model.params():  # move away from the seeded init
            p.value += rng.standard_normal(p.value.shape) * 0.1
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        restored = load_checkpoint(path)
        batch = toy_batch(rng, 5)
        out_a, _ = model.forward(batch)
        out_b, _ = restored.forward(batch)
        assert np.array_equal(out_a.values, out_b.values)

    def test_truncated_file_rejected(self, tmp_path):
        model = build_model(ModelSpec(ArchitectureId.SB, input_dim=4, hidden=2, seed=0))
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        data = path.read_bytes()
        (tmp_path / "bad.ckpt").write_bytes(data[:-17])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOT-A-CHECKPOINT 1\nend-header\n")
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)
