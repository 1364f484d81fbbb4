import numpy as np
import pytest

from src.core.config import AblationConfig, FusionSection
from src.core.errors import ConfigError, DimensionError
from src.models.fusion_head import MAB, MLKA, ChannelLayerNorm, ChannelSqueeze, FusionHead, RefineBranches
from src.tensor import Tensor, grad_check, ops


def f32(rng, shape):
    return Tensor(rng.standard_normal(shape), dtype="float32")


def f64(rng, shape):
    return Tensor(rng.standard_normal(shape), dtype="float64")


def probe(y: Tensor, seed: int = 4) -> Tensor:
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return ops.sum(ops.mul(y, Tensor(w, dtype=y.dtype)))


def test_mab_with_zero_lambdas_is_identity(rng):
    mab = MAB(8, FusionSection(lambda_init=0.0), rng)
    x = f32(rng, (2, 8, 5, 5))
    np.testing.assert_array_equal(mab(x).data, x.data)


def test_mab_with_nonzero_lambdas_changes_input(rng):
    mab = MAB(8, FusionSection(lambda_init=0.5), rng)
    x = f32(rng, (2, 8, 5, 5))
    assert not np.array_equal(mab(x).data, x.data)


def test_mab_gradients_reach_the_lambdas(rng):
    mab = MAB(4, FusionSection(lambda_init=0.3, mlka_kernels=[3, 5]), np.random.default_rng(0)).astype("float64")
    x = f64(rng, (2, 4, 5, 5))
    report = grad_check(lambda: probe(mab(x)), mab.named_parameters(), sample=4)
    assert report.errors["lambda1"] < 1e-6 and report.errors["lambda2"] < 1e-6
    assert report.max_rel_error < 1e-6, report.errors


def test_mab_input_gradient_at_zero_lambdas(rng):
    mab = MAB(4, FusionSection(lambda_init=0.0), np.random.default_rng(0)).astype("float64")
    report = grad_check(lambda t: probe(mab(t)), f64(rng, (1, 4, 4, 4)))
    assert report.max_rel_error < 1e-6


def test_channel_layer_norm_normalizes_each_location(rng):
    norm = ChannelLayerNorm(6).astype("float64")
    out = norm(f64(rng, (2, 6, 3, 3))).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-3)


def test_mlka_attention_map_shape(rng):
    mlka = MLKA(4, rng, kernels=(3, 5, 7))
    a = f32(rng, (1, 4, 9, 9))
    assert mlka.attention_map(a).shape == (1, 4, 9, 9)
    assert mlka(a).shape == (1, 4, 9, 9)
    assert [dw.weight.shape for dw in mlka.spatial] == [(4, 1, 3, 3), (4, 1, 5, 5), (4, 1, 7, 7)]


def test_channel_squeeze_scales_each_channel(rng):
    sq = ChannelSqueeze(8, 4, rng).astype("float64")
    x = f64(rng, (2, 8, 3, 3))
    gate = sq.gate(x).data
    assert gate.shape == (2, 8)
    assert np.all((gate > 0) & (gate < 1))
    np.testing.assert_allclose(sq(x).data, x.data * gate[:, :, None, None], atol=1e-14)


def test_channel_squeeze_rejects_indivisible_ratio(rng):
    with pytest.raises(ConfigError):
        ChannelSqueeze(6, 4, rng)


def test_channel_squeeze_gradients(rng):
    sq = ChannelSqueeze(8, 2, np.random.default_rng(0)).astype("float64")
    x = f64(rng, (2, 8, 3, 3))
    assert grad_check(lambda: probe(sq(x)), sq.named_parameters()).max_rel_error < 1e-6
    assert grad_check(lambda t: probe(sq(t)), x).max_rel_error < 1e-6


def test_refine_branches_without_dense(rng):
    refine = RefineBranches(0, 8, FusionSection(), rng)
    f_t = f32(rng, (1, 8, 2, 2))
    f_d, out = refine(None, f_t)
    assert f_d is None and refine.dense is None
    np.testing.assert_array_equal(out.data, f_t.data)


def test_head_outputs_logits_and_features(rng):
    cfg = FusionSection(grid=2, fused_dim=16)
    head = FusionHead(12, 8, cfg, 5, rng).eval()
    logits, feats = head(f32(rng, (3, 12, 8, 8)), f32(rng, (3, 8, 2, 2)), return_features=True)
    assert logits.shape == (3, 5)
    assert feats.shape == (3, 16)
    np.testing.assert_allclose(logits.data, feats.data @ head.classifier.weight.data.T + head.classifier.bias.data,
                               rtol=1e-5, atol=1e-6)


def test_head_without_dense_branch(rng):
    head = FusionHead(0, 8, FusionSection(fused_dim=16), 5, rng, AblationConfig(disable_dense_branch=True))
    assert head.fuse.weight.shape == (16, 8, 1, 1)
    assert head(None, f32(rng, (2, 8, 2, 2)), rng=np.random.default_rng(0)).shape == (2, 5)


def test_head_without_squeeze_has_no_gate_parameters(rng):
    head = FusionHead(12, 8, FusionSection(), 5, rng, AblationConfig(disable_squeeze=True))
    assert not any("squeeze" in name for name in head.named_parameters())


def test_head_rejects_missing_dense_features(rng):
    head = FusionHead(12, 8, FusionSection(), 5, rng)
    with pytest.raises(DimensionError):
        head(None, f32(rng, (1, 8, 2, 2)))


def test_head_rejects_wrong_dense_width(rng):
    head = FusionHead(12, 8, FusionSection(), 5, rng)
    with pytest.raises(DimensionError):
        head(f32(rng, (1, 10, 4, 4)), f32(rng, (1, 8, 2, 2)))


def test_head_dropout_follows_the_given_generator(rng):
    head = FusionHead(4, 8, FusionSection(fused_dim=32, dropout=0.5), 5, rng)
    f_d, f_t = f32(rng, (2, 4, 4, 4)), f32(rng, (2, 8, 2, 2))
    a = head(f_d, f_t, rng=np.random.default_rng(3)).data
    b = head(f_d, f_t, rng=np.random.default_rng(3)).data
    c = head(f_d, f_t, rng=np.random.default_rng(4)).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_head_gradients(rng):
    head = FusionHead(4, 8, FusionSection(grid=2, fused_dim=6, dropout=0.0, squeeze_ratio=2), 3,
                      np.random.default_rng(0)).astype("float64")
    f_d, f_t = f64(rng, (2, 4, 5, 5)), f64(rng, (2, 8, 3, 3))
    report = grad_check(lambda: probe(head(f_d, f_t)), head.named_parameters(), sample=6)
    assert report.max_rel_error < 1e-6, report.errors
