import numpy as np
import pytest

from hit import tensor as T
from hit.encoders import EncoderConfig, LayerTrace, TextEncoder, VideoEncoder, pack_text, pack_video
from hit.errors import ConfigError, DegenerateInputError
from hit.heads import (
    ModalityTower,
    ProjectionHead,
    aggregate,
    extract_feature_level,
    extract_semantic_level,
)
from hit.tensor import Tensor, backward, no_grad


def trace_of(tokens, mask=None, has_cls=False, depth=1):
    tokens = Tensor(np.asarray(tokens, dtype=float))
    mask = np.ones(tokens.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return LayerTrace([tokens] * (depth + 1), mask, has_cls)


class TestAggregate:
    def test_max(self):
        out = aggregate(Tensor([[1.0, 5.0], [3.0, 2.0]]), [1, 1], "max")
        assert out.data.tolist() == [3.0, 5.0]

    def test_cls_is_token_zero(self):
        tokens = Tensor(np.arange(6.0).reshape(3, 2))
        assert aggregate(tokens, [1, 1, 1], "cls", has_cls=True).data.tolist() == [0.0, 1.0]

    def test_cls_without_framing(self):
        with pytest.raises(ConfigError):
            aggregate(Tensor(np.ones((2, 2))), [1, 1], "cls", has_cls=False)

    def test_single_token_all_methods_agree(self):
        tok = Tensor([[0.3, -1.2]])
        outs = [aggregate(tok, [1], m, has_cls=True).data for m in ("mean", "max", "cls")]
        for out in outs:
            np.testing.assert_array_equal(out, [0.3, -1.2])

    def test_identical_tokens_mean_equals_max(self):
        tok = Tensor(np.tile([1.5, -2.0, 0.25], (4, 1)))
        np.testing.assert_allclose(aggregate(tok, [1] * 4, "mean").data, aggregate(tok, [1] * 4, "max").data)


class TestExtract:
    def test_identity_head_mean(self):
        out = extract_feature_level(trace_of([[2.0, 0.0], [4.0, 0.0]]))
        np.testing.assert_allclose(out.data, [1.0, 0.0])

    def test_unit_norm(self):
        rng = np.random.default_rng(0)
        head = ProjectionHead(6, 10, 4, rng).eval()
        trace = LayerTrace([Tensor(rng.normal(size=(3, 5, 6)))] * 3, np.ones((3, 5), dtype=bool))
        for fn in (extract_feature_level, extract_semantic_level):
            norms = np.linalg.norm(fn(trace, head=head).data, axis=1)
            assert np.all(np.abs(norms - 1.0) < 1e-10)

    def test_single_layer_taps_share_trace(self):
        trace = trace_of(np.random.default_rng(1).normal(size=(3, 4)), depth=1)
        assert trace.layer(1) is trace.layer(-1)

    def test_masked_perturbation(self):
        rng = np.random.default_rng(2)
        tokens = rng.normal(size=(4, 3))
        mask = [1, 1, 0, 0]
        a = extract_semantic_level(trace_of(tokens, mask)).data
        tokens[2:] += 100.0
        b = extract_semantic_level(trace_of(tokens, mask)).data
        assert np.max(np.abs(a - b)) < 1e-10

    def test_empty_mask(self):
        with pytest.raises(DegenerateInputError):
            extract_feature_level(trace_of(np.ones((2, 2)), [0, 0]))


class TestProjectionHead:
    def test_batchnorm_eval_batch_independent(self):
        rng = np.random.default_rng(3)
        head = ProjectionHead(6, 16, 4, rng)
        for _ in range(5):
            head(Tensor(rng.normal(size=(8, 6))))
        head.eval()
        batch = rng.normal(size=(7, 6))
        with no_grad():
            together = head(Tensor(batch)).data
            alone = head(Tensor(batch[2:3])).data
        assert np.max(np.abs(together[2] - alone[0])) < 1e-8

    def test_running_stats_momentum(self):
        rng = np.random.default_rng(4)
        head = ProjectionHead(3, 5, 2, rng)
        x = Tensor(rng.normal(size=(4, 3)))
        h = head.lin1(x).data
        head(x)
        np.testing.assert_allclose(head.bn.running_mean, 0.1 * h.mean(axis=0), atol=1e-15)
        np.testing.assert_allclose(head.bn.running_var, 0.9 + 0.1 * h.var(axis=0, ddof=1), atol=1e-15)

    def test_training_needs_two_rows(self):
        head = ProjectionHead(3, 5, 2, np.random.default_rng(5))
        with pytest.raises(Exception):
            head(Tensor(np.ones((1, 3))))


class TestTower:
    def make(self, rng):
        cfg = EncoderConfig(num_layers=2, num_heads=2, hidden=8, intermediate=8, max_seq=8, vocab_size=12)
        return ModalityTower(TextEncoder(cfg, rng), [1, -1], 12, 4, "mean", rng), cfg

    def test_eight_heads_for_two_levels(self):
        rng = np.random.default_rng(0)
        vcfg = EncoderConfig(num_layers=2, num_heads=2, hidden=8, intermediate=8, num_experts=1, tokens_per_expert=2, input_dim=8)
        heads = 0
        for _role in ("q", "k"):
            heads += len(self.make(rng)[0].heads)
            heads += len(ModalityTower(VideoEncoder(vcfg, rng), [1, -1], 12, 4, "mean", rng).heads)
        assert heads == 8

    def test_head_isolation(self):
        rng = np.random.default_rng(1)
        tower, cfg = self.make(rng)
        feature, semantic = tower(pack_text([[3, 4], [5, 6, 7], [8]], cfg))
        backward(T.sum(T.mul(feature, rng.normal(size=feature.shape))))
        for p in tower.head1.parameters():
            assert not np.any(p.grad)
        assert any(np.any(p.grad) for p in tower.head0.parameters())

    def test_tap_out_of_range(self):
        cfg = EncoderConfig(num_layers=2, num_heads=2, hidden=8, intermediate=8, max_seq=8, vocab_size=12)
        with pytest.raises(ConfigError):
            ModalityTower(TextEncoder(cfg, None), [3], 4, 4, "mean", None)

    def test_cls_aggregation_on_framed_video(self):
        rng = np.random.default_rng(2)
        cfg = EncoderConfig(num_layers=1, num_heads=2, hidden=8, intermediate=8, num_experts=2, tokens_per_expert=2, input_dim=3, cls_framing=True)
        tower = ModalityTower(VideoEncoder(cfg, rng), [1], 6, 4, "cls", rng)
        raw = [[rng.normal(size=(2, 3)), rng.normal(size=(1, 3))] for _ in range(2)]
        (out,) = tower(pack_video(raw, cfg))
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-12)
