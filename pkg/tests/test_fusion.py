import numpy as np
import pytest

import newsfusion.numerics as nm
from newsfusion import fusion
from newsfusion.corpus import EntityMention, NewsPost
from newsfusion.fusion import (
    ConsistencyVector,
    FuseParams,
    concat_multimodal,
    consistency_vector,
    consistency_vector_tensor,
    entity_similarity,
    fuse,
    masked_mean,
    mct_layer,
    multi_head_attention,
    register_block,
    register_mct_layer,
)
from newsfusion.numerics import ParameterStore, Tensor


def _block(d=8, heads=2, seed=0, dtype=np.float64):
    store = ParameterStore(dtype=dtype)
    params = register_block(store, "blk", d, heads, np.random.default_rng(seed))
    return store, params


def _mct(d=8, heads=2, seed=0, dtype=np.float64):
    store = ParameterStore(dtype=dtype)
    params = register_mct_layer(store, "a", "b", d, heads, np.random.default_rng(seed))
    return store, params


def test_register_block_rejects_indivisible_width():
    store = ParameterStore()
    with pytest.raises(ValueError, match="divisible"):
        register_block(store, "x", 10, 4, np.random.default_rng(0))


def test_attention_single_key_gives_projected_row():
    store, params = _block()
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(5, 8)))
    b_row = rng.normal(size=(1, 8))
    out = multi_head_attention(params, a, Tensor(b_row), [True]).data
    wv, bv = store.value("blk.attn.wv"), store.value("blk.attn.bv")
    wo, bo = store.value("blk.attn.wo"), store.value("blk.attn.bo")
    expected = (b_row @ wv + bv) @ wo + bo
    for row in out:
        np.testing.assert_allclose(row, expected[0], atol=1e-12)


def test_mct_shapes():
    store, params = _mct(d=16, heads=4)
    rng = np.random.default_rng(2)
    out = mct_layer(
        Tensor(rng.normal(size=(5, 16))), np.ones(5, bool),
        Tensor(rng.normal(size=(3, 16))), np.ones(3, bool),
        params,
    )
    assert out.stream_a.shape == (5, 16)
    assert out.stream_b.shape == (3, 16)


def test_mct_fully_masked_stream_is_error():
    store, params = _mct()
    a, b = Tensor(np.zeros((2, 8))), Tensor(np.zeros((2, 8)))
    with pytest.raises(ValueError, match="masked"):
        mct_layer(a, np.ones(2, bool), b, np.zeros(2, bool), params)


def _set_identity_attention(store, prefix, d):
    for w in ("wq", "wk", "wv", "wo"):
        store.set_value(f"{prefix}.attn.{w}", np.eye(d))
    store.set_value(f"{prefix}.ffn.w2", np.zeros((fusion.FFN_WIDTH_FACTOR * d, d)))


def test_mct_matches_cross_attention_oracle():
    # 1 head, identity projections, zero FFN, norms in pass-through mode
    d = 4
    store, params = _mct(d=d, heads=1)
    for prefix in ("a", "b"):
        _set_identity_attention(store, prefix, d)
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, d)), rng.normal(size=(2, d))
    out = mct_layer(
        Tensor(a), np.ones(3, bool), Tensor(b), np.ones(2, bool),
        params, ln_passthrough=True,
    )

    def cross(q, kv):
        res = np.zeros_like(q)
        for i in range(len(q)):
            logits = kv @ q[i] / np.sqrt(d)
            w = np.exp(logits - logits.max())
            w /= w.sum()
            res[i] = q[i] + w @ kv
        return res

    np.testing.assert_allclose(out.stream_a.data, cross(a, b), atol=1e-10)
    np.testing.assert_allclose(out.stream_b.data, cross(b, a), atol=1e-10)


def test_mct_permutation_equivariant_over_keys():
    store, params = _mct(d=8, heads=2, seed=5)
    rng = np.random.default_rng(6)
    a = Tensor(rng.normal(size=(4, 8)))
    b = rng.normal(size=(5, 8))
    mask = np.array([True, True, False, True, True])
    perm = np.array([3, 0, 4, 1, 2])
    out1 = mct_layer(a, np.ones(4, bool), Tensor(b), mask, params).stream_a.data
    out2 = mct_layer(a, np.ones(4, bool), Tensor(b[perm]), mask[perm], params).stream_a.data
    np.testing.assert_allclose(out1, out2, atol=1e-12)


def test_mct_gradients_pass_finite_differences():
    store, params = _mct(d=8, heads=2, seed=7)
    rng = np.random.default_rng(8)
    a = Tensor(rng.normal(size=(3, 8)))
    b = Tensor(rng.normal(size=(2, 8)))
    cot_a, cot_b = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(2, 8)))

    def loss_fn():
        out = mct_layer(a, np.ones(3, bool), b, np.ones(2, bool), params)
        return nm.reduce_sum(out.stream_a * cot_a) + nm.reduce_sum(out.stream_b * cot_b)

    report = nm.grad_check(store, loss_fn)
    assert report.passed, nm.format_report(report)


def test_masked_mean_single_row():
    x = Tensor(np.array([[1.0, 2.0], [9.0, 9.0]]))
    out = masked_mean(x, [True, False])
    np.testing.assert_array_equal(out.data, [1.0, 2.0])


def test_masked_mean_two_rows():
    out = masked_mean(Tensor([[0.0, 2.0], [2.0, 0.0]]), [True, True])
    np.testing.assert_array_equal(out.data, [1.0, 1.0])


def test_masked_mean_matches_loop_oracle():
    rng = np.random.default_rng(9)
    x = rng.integers(-5, 6, size=(7, 4)).astype(np.float64)
    mask = np.array([True, False, True, True, False, False, True])
    total = np.zeros(4)
    for i in range(7):
        if mask[i]:
            total += x[i]
    expected = total / mask.sum()
    out = masked_mean(Tensor(x), mask)
    np.testing.assert_array_equal(out.data, expected)


def test_masked_mean_all_masked_is_error():
    with pytest.raises(ValueError, match="zero rows"):
        masked_mean(Tensor(np.ones((2, 3))), [False, False])


# -- fuse -----------------------------------------------------------------


def _fuse_setup(d=8, heads=2, seed=0, depth=1):
    store = ParameterStore(dtype=np.float64)
    rng = np.random.default_rng(seed)
    stage1 = [register_mct_layer(store, f"co_ve{k}.text", f"co_ve{k}.ent", d, heads, rng) for k in range(depth)]
    stage2 = [register_mct_layer(store, f"co_vf{k}.text", f"co_vf{k}.vis", d, heads, rng) for k in range(depth)]
    store.create("ve_sentinel", rng.uniform(-0.1, 0.1, size=d))
    return store, FuseParams(stage1=stage1, stage2=stage2, store=store)


def test_fuse_output_shapes():
    d = 8
    store, params = _fuse_setup(d=d)
    rng = np.random.default_rng(1)
    res = fuse(
        Tensor(rng.normal(size=(4, d))), np.ones(4, bool),
        Tensor(rng.normal(size=(2, d))), np.ones(2, bool),
        Tensor(rng.normal(size=(6, d))), params,
    )
    assert res.x_t.shape == (d,) and res.x_ve.shape == (d,) and res.x_v.shape == (d,)


def test_fuse_passthrough_reduces_to_means():
    d = 8
    store, params = _fuse_setup(d=d)
    rng = np.random.default_rng(2)
    h_t, h_ve, h_v = rng.normal(size=(4, d)), rng.normal(size=(2, d)), rng.normal(size=(6, d))
    t_mask = np.array([True, True, True, False])
    res = fuse(
        Tensor(h_t), t_mask, Tensor(h_ve), np.ones(2, bool), Tensor(h_v), params,
        use_stage1=False, use_stage2=False,
    )
    np.testing.assert_allclose(res.x_t.data, h_t[:3].mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(res.x_ve.data, h_ve.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(res.x_v.data, h_v.mean(axis=0), atol=1e-12)


def test_fuse_matches_module_composition():
    d = 8
    store, params = _fuse_setup(d=d, seed=4)
    rng = np.random.default_rng(5)
    h_t, h_ve, h_v = Tensor(rng.normal(size=(4, d))), Tensor(rng.normal(size=(2, d))), Tensor(rng.normal(size=(6, d)))
    t_mask, ve_mask, v_mask = np.ones(4, bool), np.ones(2, bool), np.ones(6, bool)

    res = fuse(h_t, t_mask, h_ve, ve_mask, h_v, params)

    s1 = mct_layer(h_t, t_mask, h_ve, ve_mask, params.stage1[0])
    s2 = mct_layer(s1.stream_a, t_mask, h_v, v_mask, params.stage2[0])
    np.testing.assert_array_equal(res.x_ve.data, masked_mean(s1.stream_b, ve_mask).data)
    np.testing.assert_array_equal(res.x_t.data, masked_mean(s2.stream_a, t_mask).data)
    np.testing.assert_array_equal(res.x_v.data, masked_mean(s2.stream_b, v_mask).data)


def test_fuse_empty_entity_stream_uses_sentinel():
    d = 8
    store, params = _fuse_setup(d=d)
    rng = np.random.default_rng(6)
    h_t, h_v = Tensor(rng.normal(size=(3, d))), Tensor(rng.normal(size=(5, d)))
    res = fuse(h_t, np.ones(3, bool), None, None, h_v, params, use_stage1=False, use_stage2=False)
    np.testing.assert_allclose(res.x_ve.data, store.value("ve_sentinel"), atol=1e-12)
    # with the co-attention active it still runs without error
    res2 = fuse(h_t, np.ones(3, bool), Tensor(np.zeros((0, d))), np.zeros(0, bool), h_v, params)
    assert res2.x_ve.shape == (d,)


def test_fuse_deterministic_without_dropout():
    d = 8
    store, params = _fuse_setup(d=d, seed=8)
    rng = np.random.default_rng(9)
    args = (
        Tensor(rng.normal(size=(4, d))), np.ones(4, bool),
        Tensor(rng.normal(size=(2, d))), np.ones(2, bool),
        Tensor(rng.normal(size=(6, d))),
    )
    a = fuse(*args, params)
    b = fuse(*args, params)
    np.testing.assert_array_equal(a.x_t.data, b.x_t.data)


# -- entity similarity ---------------------------------------------------------


def _lookup_embedder(table):
    return lambda m: np.asarray(table[" ".join(m.surface)], dtype=np.float64)


def _mention(surface, kind="person", conf=1.0):
    return EntityMention(surface=list(surface), kind=kind, confidence=conf)


def test_similarity_empty_side_is_one():
    emb = _lookup_embedder({})
    assert entity_similarity([], [_mention(["x"])], lambda m: np.ones(2)) == 1.0
    assert entity_similarity([_mention(["x"])], [], lambda m: np.ones(2)) == 1.0


def test_similarity_identical_surface_full_confidence():
    emb = _lookup_embedder({"obama": np.array([0.3, -0.7, 0.1])})
    s = entity_similarity([_mention(["obama"])], [_mention(["obama"], conf=1.0)], emb)
    assert abs(s - 1.0) < 1e-12


def test_similarity_hand_case():
    emb = _lookup_embedder({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])})
    textual = [_mention(["a"]), _mention(["b"])]
    visual = [_mention(["b"], conf=0.5)]
    assert abs(entity_similarity(textual, visual, emb) - 0.5) < 1e-12


def test_similarity_zero_vector_counts_as_zero():
    emb = _lookup_embedder({"z": np.zeros(3), "a": np.ones(3)})
    s = entity_similarity([_mention(["z"])], [_mention(["a"], conf=0.9)], emb)
    assert s == 0.0


def test_similarity_matches_bruteforce_on_random_instances():
    rng = np.random.default_rng(10)
    for _ in range(1000):
        n_t, n_v = rng.integers(1, 5), rng.integers(1, 5)
        table = {f"t{i}": rng.normal(size=4) for i in range(n_t)}
        table.update({f"v{i}": rng.normal(size=4) for i in range(n_v)})
        emb = _lookup_embedder(table)
        textual = [_mention([f"t{i}"]) for i in range(n_t)]
        visual = [_mention([f"v{i}"], conf=float(rng.uniform(0.05, 1.0))) for i in range(n_v)]

        # independent oracle: full pairwise cosine matrix, then max of rows
        pair = np.zeros((n_t, n_v))
        for i, t in enumerate(textual):
            for j, v in enumerate(visual):
                et, ev = emb(t), emb(v)
                pair[i, j] = v.confidence * (et @ ev) / (np.linalg.norm(et) * np.linalg.norm(ev))
        expected = pair.sum(axis=1).max()

        got = entity_similarity(textual, visual, emb)
        assert abs(got - expected) < 1e-12
        assert abs(got) <= sum(v.confidence for v in visual) + 1e-12
        assert abs(got) <= len(visual) + 1e-12


def test_consistency_vector_no_entities():
    post = NewsPost(id="p", text=["t"], label=0)
    v = consistency_vector(post, lambda m: np.ones(3))
    assert (v.person, v.location, v.context) == (1.0, 1.0, 1.0)


def test_consistency_vector_mixed_kinds():
    table = {
        "obama": np.array([1.0, 0.0]),
        "paris": np.array([0.0, 1.0]),
        "war": np.array([1.0, 1.0]),
        "peace": np.array([-1.0, -1.0]),
    }
    emb = _lookup_embedder(table)
    post = NewsPost(
        id="p", text=["t"], label=0,
        textual_entities=[_mention(["obama"], "person"), _mention(["war"], "context")],
        visual_entities=[
            _mention(["obama"], "person", conf=0.95),
            _mention(["peace"], "context", conf=1.0),
        ],
    )
    v = consistency_vector(post, emb)
    assert abs(v.person - 0.95) < 1e-12
    assert v.location == 1.0  # no locations on either side
    assert abs(v.context - (-1.0)) < 1e-12


def test_consistency_vector_order_invariant():
    rng = np.random.default_rng(11)
    table = {f"e{i}": rng.normal(size=3) for i in range(6)}
    emb = _lookup_embedder(table)
    textual = [_mention([f"e{i}"], "location") for i in range(3)]
    visual = [_mention([f"e{i}"], "location", conf=0.5) for i in range(3, 6)]
    post1 = NewsPost(id="p", text=[], label=0, textual_entities=textual, visual_entities=visual)
    post2 = NewsPost(
        id="p", text=[], label=0,
        textual_entities=list(reversed(textual)), visual_entities=list(reversed(visual)),
    )
    v1, v2 = consistency_vector(post1, emb), consistency_vector(post2, emb)
    assert v1.as_array().tolist() == v2.as_array().tolist()


def test_consistency_clamp_knob():
    # three perfectly aligned visual entities push the raw sum to 3
    table = {"x": np.array([1.0, 0.0])}
    emb = _lookup_embedder(table)
    post = NewsPost(
        id="p", text=[], label=0,
        textual_entities=[_mention(["x"], "person")],
        visual_entities=[_mention(["x"], "person", conf=1.0)] * 3,
    )
    clamped = consistency_vector(post, emb)
    raw = consistency_vector(post, emb, clamp=False)
    assert clamped.person == 1.0
    assert abs(raw.person - 3.0) < 1e-12


def test_consistency_tensor_route_matches_float_route():
    rng = np.random.default_rng(12)
    table = {f"w{i}": rng.normal(size=4) for i in range(8)}
    emb_np = _lookup_embedder(table)
    emb_t = lambda m: Tensor(emb_np(m))
    for trial in range(20):
        kinds = ["person", "location", "context"]
        textual = [
            _mention([f"w{rng.integers(8)}"], kinds[rng.integers(3)])
            for _ in range(rng.integers(0, 4))
        ]
        visual = [
            _mention([f"w{rng.integers(8)}"], kinds[rng.integers(3)], conf=float(rng.uniform(0.1, 1.0)))
            for _ in range(rng.integers(0, 4))
        ]
        post = NewsPost(id="p", text=[], label=0, textual_entities=textual, visual_entities=visual)
        want = consistency_vector(post, emb_np).as_array()
        got = consistency_vector_tensor(post, emb_t).data
        np.testing.assert_allclose(got, want, atol=1e-12)


# -- concatenation ----------------------------------------------------------


def test_concat_multimodal_fixed_order():
    out = concat_multimodal(
        Tensor([1.0, 2.0]), Tensor([3.0, 4.0]), Tensor([5.0, 6.0]), Tensor([1.0, 1.0, 1.0])
    )
    np.testing.assert_array_equal(out.data, [1, 2, 3, 4, 5, 6, 1, 1, 1])


def test_concat_multimodal_width_and_roundtrip():
    rng = np.random.default_rng(13)
    d = 5
    xs = [rng.normal(size=d) for _ in range(3)] + [rng.normal(size=3)]
    out = concat_multimodal(*[Tensor(x) for x in xs]).data
    assert out.shape == (3 * d + 3,)
    np.testing.assert_array_equal(out[:d], xs[0])
    np.testing.assert_array_equal(out[d:2 * d], xs[1])
    np.testing.assert_array_equal(out[2 * d:3 * d], xs[2])
    np.testing.assert_array_equal(out[3 * d:], xs[3])


def test_concat_multimodal_width_mismatch():
    with pytest.raises(ValueError):
        concat_multimodal(Tensor([1.0, 2.0]), Tensor([1.0]), Tensor([1.0, 2.0]), Tensor([1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        concat_multimodal(Tensor([1.0]), Tensor([1.0]), Tensor([1.0]), Tensor([1.0, 1.0]))
