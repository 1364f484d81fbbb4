import math

import numpy as np
import pytest

from src.core.config import full_preset
from src.core.errors import ContractError, DimensionError
from src.models.swin_branch import (
    MASK_VALUE,
    AttentionParams,
    PatchMerging,
    SwinBlock,
    SwinBranch,
    attention_counter,
    build_shift_mask,
    effective_window,
    mhsa,
    patch_partition,
    patch_unpartition,
    relative_position_index,
    sw_msa,
    w_msa,
    window_partition,
    window_reverse,
)
from src.tensor import Tensor, grad_check, ops


def attention_params(rng, d, heads, M, dtype, scale=0.3):
    """Random weights large enough that the outputs are O(0.1), not O(1e-4)."""
    def mat():
        return Tensor(rng.standard_normal((d, d)) * scale / math.sqrt(d), dtype=dtype)
    table = Tensor(rng.standard_normal(((2 * M - 1) ** 2, heads)) * 0.5, dtype=dtype)
    return AttentionParams(mat(), mat(), mat(), mat(), heads, table, relative_position_index(M))


def region_attention_oracle(x, p, M, s):
    """
    Shifted-window attention computed token by token on the unshifted map: a
    query attends to keys that fall in the same offset window and came from the
    same region of the map.
    """
    H, W, d = x.shape
    h = p.num_heads
    dk = d // h
    wq, wk, wv, wo = (np.asarray(t.data, dtype=np.float64) for t in (p.w_q, p.w_k, p.w_v, p.w_o))
    table = np.asarray(p.bias_table.data, dtype=np.float64)
    q, k, v = x @ wq.T, x @ wk.T, x @ wv.T

    def region(i, n):
        return 0 if i < n - M else (1 if i < n - s else 2)

    info = {}
    for i in range(H):
        for j in range(W):
            si, sj = (i - s) % H, (j - s) % W
            info[(i, j)] = ((si // M, sj // M), (region(si, H), region(sj, W)), (si % M, sj % M))

    out = np.zeros_like(x)
    for a, (win_a, lab_a, (ya, xa)) in info.items():
        keys = [b for b, (win_b, lab_b, _) in info.items() if win_b == win_a and lab_b == lab_a]
        heads = []
        for hd in range(h):
            sl = slice(hd * dk, (hd + 1) * dk)
            logits = []
            for b in keys:
                yb, xb = info[b][2]
                rel = (ya - yb + M - 1) * (2 * M - 1) + (xa - xb + M - 1)
                logits.append(q[a][sl] @ k[b][sl] / math.sqrt(dk) + table[rel, hd])
            w = np.exp(np.array(logits) - max(logits))
            w /= w.sum()
            heads.append(sum(wi * v[b][sl] for wi, b in zip(w, keys)))
        out[a] = np.concatenate(heads) @ wo.T
    return out


# ── Shifted-window attention ─────────────────────────────────────────────

def test_sw_msa_matches_region_oracle_float32():
    rng = np.random.default_rng(0)
    M, d, heads = 4, 8, 2
    p = attention_params(rng, d, heads, M, "float32")
    x = rng.standard_normal((1, 8, 8, d)).astype(np.float32)
    got = sw_msa(Tensor(x, dtype="float32"), p, M).data[0]
    expected = region_attention_oracle(x[0].astype(np.float64), p, M, M // 2)
    assert np.max(np.abs(got - expected)) <= 1e-6


def test_sw_msa_matches_region_oracle_float64():
    rng = np.random.default_rng(1)
    M, d, heads = 4, 8, 2
    p = attention_params(rng, d, heads, M, "float64", scale=1.0)
    x = rng.standard_normal((1, 8, 8, d))
    got = sw_msa(Tensor(x, dtype="float64"), p, M).data[0]
    np.testing.assert_allclose(got, region_attention_oracle(x[0], p, M, M // 2), atol=1e-10)


def test_zero_shift_is_plain_window_attention(rng):
    p = attention_params(rng, 4, 2, 2, "float64")
    x = Tensor(rng.standard_normal((2, 4, 4, 4)), dtype="float64")
    np.testing.assert_array_equal(sw_msa(x, p, 2, 0).data, w_msa(x, p, 2).data)


def test_w_msa_does_not_mix_windows(rng):
    p = attention_params(rng, 4, 1, 2, "float64")
    x = rng.standard_normal((1, 4, 4, 4))
    base = w_msa(Tensor(x, dtype="float64"), p, 2).data
    bumped = x.copy()
    bumped[0, 0, 0] += 1.0  # lives in the top-left window
    out = w_msa(Tensor(bumped, dtype="float64"), p, 2).data
    np.testing.assert_array_equal(out[0, 2:, :], base[0, 2:, :])
    np.testing.assert_array_equal(out[0, :, 2:], base[0, :, 2:])


def test_shift_mask_small_map():
    mask = build_shift_mask(4, 4, 2, 1)
    assert mask.shape == (4, 4, 4)
    # top-left window lies inside one region
    assert np.all(mask[0] == 0.0)
    # bottom-right window holds four different regions
    assert np.all(np.diag(mask[3]) == 0.0)
    assert np.all(mask[3][~np.eye(4, dtype=bool)] == MASK_VALUE)
    # top-right window: columns 2 and 3 come from different regions
    same = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1]], dtype=bool)
    np.testing.assert_array_equal(mask[1] == 0.0, same)


def test_shift_mask_is_symmetric():
    mask = build_shift_mask(8, 8, 4, 2)
    np.testing.assert_array_equal(mask, mask.transpose(0, 2, 1))


def test_shift_mask_rejects_other_shifts():
    with pytest.raises(ContractError):
        build_shift_mask(8, 8, 4, 1)


def test_w_msa_rejects_indivisible_map(rng):
    p = attention_params(rng, 4, 1, 3, "float64")
    with pytest.raises(DimensionError):
        w_msa(Tensor(rng.standard_normal((1, 4, 4, 4)), dtype="float64"), p, 3)


# ── Multi-head attention ─────────────────────────────────────────────────

def test_mhsa_three_tokens_matches_loop_oracle():
    rng = np.random.default_rng(2)
    T, d, h = 3, 4, 2
    dk = d // h
    ws = [rng.standard_normal((d, d)) for _ in range(4)]
    x = rng.standard_normal((1, T, d))
    p = AttentionParams(*(Tensor(w, dtype="float64") for w in ws), num_heads=h)
    got = mhsa(Tensor(x, dtype="float64"), p).data[0]

    wq, wk, wv, wo = ws
    q, k, v = x[0] @ wq.T, x[0] @ wk.T, x[0] @ wv.T
    expected = np.zeros((T, d))
    for t in range(T):
        concat = []
        for hd in range(h):
            sl = slice(hd * dk, (hd + 1) * dk)
            scores = [q[t, sl] @ k[u, sl] / math.sqrt(dk) for u in range(T)]
            e = [math.exp(sc - max(scores)) for sc in scores]
            concat.append(sum(e[u] / sum(e) * v[u, sl] for u in range(T)))
        expected[t] = np.concatenate(concat) @ wo.T
    assert np.max(np.abs(got - expected)) <= 1e-10


def test_masked_attention_rows(rng):
    T, d = 4, 4
    p = attention_params(rng, d, 2, 2, "float64")
    mask = np.zeros((1, T, T))
    mask[0, 0, 1:] = MASK_VALUE
    mask[0, 2, 3] = MASK_VALUE
    _, attn = mhsa(Tensor(rng.standard_normal((3, T, d)), dtype="float64"), p, mask, return_attention=True)
    a = attn.data
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(a[:, :, 0, 1:] <= 1e-12)
    assert np.all(a[:, :, 2, 3] <= 1e-12)
    np.testing.assert_allclose(a[:, :, 0, 0], 1.0, atol=1e-12)


def test_mhsa_rejects_indivisible_heads(rng):
    p = AttentionParams(*(Tensor(np.eye(5)) for _ in range(4)), num_heads=2)
    with pytest.raises(DimensionError):
        mhsa(Tensor(rng.standard_normal((1, 3, 5))), p)


def test_relative_position_index():
    idx = relative_position_index(2)
    assert idx.shape == (4, 4)
    assert idx.min() >= 0 and idx.max() < 9
    assert np.all(np.diag(idx) == 4)
    # token 0 at (0,0), token 3 at (1,1): relative (−1,−1) and (+1,+1)
    assert idx[0, 3] == 0 and idx[3, 0] == 8


# ── Attention cost ───────────────────────────────────────────────────────

def test_doubling_windows_doubles_attention_macs(rng):
    M, d = 4, 8
    p = attention_params(rng, d, 2, M, "float32")
    with attention_counter() as small:
        w_msa(Tensor(rng.standard_normal((1, 8, 8, d)), dtype="float32"), p, M)
    with attention_counter() as large:
        w_msa(Tensor(rng.standard_normal((1, 8, 16, d)), dtype="float32"), p, M)
    assert small.calls["attention"] == 4
    assert large.calls["attention"] == 8
    assert large.by_kind["attention"] == 2 * small.by_kind["attention"]
    assert small.by_kind["attention"] == 2 * 4 * (M * M) ** 2 * d


# ── Patches, windows, merging ────────────────────────────────────────────

def test_patch_partition_layout(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    tokens = patch_partition(Tensor(x, dtype="float64"), 4)
    assert tokens.shape == (2, 4, 48)
    np.testing.assert_array_equal(tokens.data[1, 1], x[1, :, 0:4, 4:8].transpose(1, 2, 0).reshape(-1))
    back = patch_unpartition(tokens, 8, 8, 4, 3)
    np.testing.assert_array_equal(back.data, x)


def test_window_partition_inverse(rng):
    x = Tensor(rng.standard_normal((2, 8, 12, 3)), dtype="float64")
    wins = window_partition(x, 4)
    assert wins.shape == (2 * 6, 16, 3)
    np.testing.assert_array_equal(wins.data[1], x.data[0, 0:4, 4:8].reshape(16, 3))
    np.testing.assert_array_equal(window_reverse(wins, 4, 8, 12).data, x.data)


def test_patch_merging_order(rng):
    d = 2
    merge = PatchMerging(d, rng)
    merge.reduction.weight.assign(np.eye(4 * d)[:2 * d])
    x = rng.standard_normal((1, 4, 4, d)).astype(np.float32)
    out = merge(Tensor(x, dtype="float32"))
    assert out.shape == (1, 2, 2, 2 * d)
    # first 2d outputs pick the top-left then the top-right neighbour
    np.testing.assert_array_equal(out.data[0, 1, 0], np.concatenate([x[0, 2, 0], x[0, 2, 1]]))


def test_effective_window():
    assert effective_window(16, 4) == (4, 2)
    assert effective_window(4, 4) == (4, 0)
    assert effective_window(2, 4) == (2, 0)


# ── Blocks and branch ────────────────────────────────────────────────────

def test_swin_block_gradients(rng):
    block = SwinBlock(4, 2, 2, 1, np.random.default_rng(0)).astype("float64")
    x = Tensor(rng.standard_normal((1, 4, 4, 4)), dtype="float64")
    w = np.random.default_rng(9).standard_normal((1, 4, 4, 4))

    def loss():
        return ops.sum(ops.mul(block(x), Tensor(w, dtype="float64")))

    report = grad_check(loss, block.named_parameters(), sample=5)
    assert report.max_rel_error < 1e-6, report.errors
    report = grad_check(lambda t: ops.sum(ops.mul(block(t), Tensor(w, dtype="float64"))), x)
    assert report.max_rel_error < 1e-6


def test_desk_branch_stage_shapes(rng, desk_config):
    branch = SwinBranch(desk_config.model.swin, 64, rng)
    out = branch(Tensor(rng.standard_normal((1, 3, 64, 64)), dtype="float32"))
    assert out.shape == (1, 128, 2, 2)
    assert branch.stage_shapes == [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]
    assert [s for _, s in branch.shape_trace(64, 64)][1:] == branch.stage_shapes


def test_full_preset_shape_schedule():
    cfg = full_preset().model.swin
    branch = SwinBranch(cfg, 224, np.random.default_rng(0))
    C = 96
    assert branch.shape_trace(224, 224) == [
        ("patch_embed", (C, 56, 56)),
        ("stage1", (C, 56, 56)),
        ("stage2", (2 * C, 28, 28)),
        ("stage3", (4 * C, 14, 14)),
        ("stage4", (8 * C, 7, 7)),
    ]
    assert branch.embed.weight.shape == (C, 48)
    assert patch_partition(Tensor(np.zeros((1, 3, 224, 224)), dtype="float32")).shape == (1, 56 * 56, 48)


@pytest.mark.slow
def test_full_preset_forward():
    branch = SwinBranch(full_preset().model.swin, 224, np.random.default_rng(0))
    out = branch(Tensor(np.random.default_rng(1).random((1, 3, 224, 224)), dtype="float32"))
    assert out.shape == (1, 768, 7, 7)
    assert branch.stage_shapes == [(96, 56, 56), (192, 28, 28), (384, 14, 14), (768, 7, 7)]
