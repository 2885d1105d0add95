import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kercnn import ek_de, head, ik_en, roi
from kercnn.ek_de import AttributeQuerySet, PartDetection
from kercnn.errors import DimensionError, NoCandidatesError, ValidationError
from kercnn.knowledge import KnowledgeGraph, build_from_pairs
from kercnn.numerics import grad_check, layer_norm, mlp, ops
from kercnn.roi import Box


def example_kg():
    return build_from_pairs([(0, {0, 1}), (0, {0}), (1, {2})], ["shirt", "skirt"], ["a", "b", "c"])


def f64(params):
    return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}


def test_query_example():
    w_a = np.arange(12, dtype=np.float64).reshape(4, 3)
    q = ek_de.attribute_queries(np.array([1.0, 0.0]), example_kg(), w_a)
    assert q.candidate_indices == [0, 1]
    np.testing.assert_allclose(q.c_star, [2 / 3, 1 / 3, 0])
    np.testing.assert_allclose(q.q_u, w_a[:, :2] * [2 / 3, 1 / 3])


def test_identity_knowledge_uniform_class():
    kg = KnowledgeGraph(np.eye(4), list("pqrs"), list("abcd"))
    q = ek_de.attribute_queries(np.full(4, 0.25), kg, np.ones((2, 4)))
    assert q.candidate_indices == [0, 1, 2, 3]
    np.testing.assert_allclose(q.c_star, 0.25)


def test_threshold_one_has_no_candidates():
    with pytest.raises(NoCandidatesError) as info:
        ek_de.attribute_queries(np.array([1.0, 0.0]), example_kg(), np.ones((2, 3)), tau=1.0)
    np.testing.assert_allclose(info.value.c_star, [2 / 3, 1 / 3, 0])


def test_query_rejects_non_distribution():
    with pytest.raises(ValidationError):
        ek_de.attribute_queries(np.array([0.7, 0.7]), example_kg(), np.ones((2, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 0.5), st.floats(0, 0.5))
def test_candidate_monotonic_in_tau(seed, t1, t2):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 3, (3, 6)).astype(float)
    g = np.divide(counts, counts.sum(1, keepdims=True), out=np.zeros_like(counts),
                  where=counts.sum(1, keepdims=True) > 0)
    kg = KnowledgeGraph(g, list("pqr"), list("abcdef"))
    c_u = rng.dirichlet(np.ones(3))
    lo, hi = sorted((t1, t2))
    try:
        big = set(ek_de.attribute_queries(c_u, kg, np.ones((2, 6)), lo).candidate_indices)
    except NoCandidatesError:
        big = set()
    try:
        small = set(ek_de.attribute_queries(c_u, kg, np.ones((2, 6)), hi).candidate_indices)
    except NoCandidatesError:
        small = set()
    assert small <= big
    if lo == 0:
        assert big == {c for c in range(6) if (c_u[:, None] * g)[:, c].sum() > 0}


def test_class_rep_zero_knowledge():
    rng = np.random.default_rng(0)
    kg = np.zeros((2, 3))
    f_h = rng.standard_normal((4, 5))
    out = ek_de.class_conditioned_rep(np.array([0.5, 0.5]), kg, rng.standard_normal((4, 2)),
                                      rng.standard_normal((4, 4)), f_h)
    assert out.shape == (4, 8)
    np.testing.assert_array_equal(out[:, :5], f_h)
    np.testing.assert_array_equal(out[:, 5:], 0)


def test_class_rep_matches_direct_formula():
    rng = np.random.default_rng(1)
    kg = example_kg()
    c_u = np.array([0.3, 0.7])
    w_b, w_c, f_h = rng.standard_normal((4, 2)), rng.standard_normal((4, 4)), rng.standard_normal((4, 5))
    out = ek_de.class_conditioned_rep(c_u, kg, w_b, w_c, f_h)
    direct = np.maximum(w_c @ (w_b @ (np.diag(c_u) @ kg.g)), 0)
    np.testing.assert_allclose(out[:, 5:], direct, atol=1e-12)
    with pytest.raises(DimensionError):
        ek_de.class_conditioned_rep(c_u, kg, w_b, w_c, np.ones((3, 5)))


def identity_decoder(d, hidden):
    rng = np.random.default_rng(5)
    p = {}
    for n in "qkvo":
        p[f"dec.msa.w{n}"] = np.eye(d)
        p[f"dec.msa.b{n}"] = np.zeros(d)
    p["dec.ln.gain"] = rng.standard_normal(d)
    p["dec.ln.shift"] = rng.standard_normal(d)
    p["dec.mlp.w1"] = rng.standard_normal((hidden, d))
    p["dec.mlp.b1"] = rng.standard_normal(hidden)
    p["dec.mlp.w2"] = rng.standard_normal((d, hidden))
    p["dec.mlp.b2"] = rng.standard_normal(d)
    return p


def test_decode_single_key_is_mlp_of_layer_norm():
    p = identity_decoder(4, 6)
    q = np.random.default_rng(0).standard_normal((4, 1))
    tok = np.array([[1.0], [-2.0], [0.5], [3.0]])
    out = ek_de.decode(q, tok, p, heads=2)
    ln = layer_norm(tok.T, p["dec.ln.gain"], p["dec.ln.shift"], 1e-5).T
    expect = mlp(ln, p, prefix="dec.mlp.")
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_decode_shape_and_residual_flag():
    rng = np.random.default_rng(2)
    p = f64(ek_de.init_params(rng, 8, 3, 5))
    q, f_hat = rng.standard_normal((8, 3)), rng.standard_normal((8, 7))
    assert ek_de.decode(q, f_hat, p, 4).shape == (8, 3)
    assert not np.allclose(ek_de.decode(q, f_hat, p, 4, residual=True), ek_de.decode(q, f_hat, p, 4))


def query_set(q_u, n_attributes=None):
    k = q_u.shape[1]
    return AttributeQuerySet(list(range(k)), q_u, np.ones(n_attributes or k))


def test_predict_examples():
    pred = ek_de.predict(query_set(np.array([[1.0], [0.0]])), np.array([[0.0], [5.0]]))
    assert pred.probabilities[0] == 0.5
    pred = ek_de.predict(query_set(np.array([[1.0], [1.0]])),
                         np.array([[math.log(3) / 2], [math.log(3) / 2]]))
    assert pred.probabilities[0] == pytest.approx(0.75, abs=1e-15)
    with pytest.raises(DimensionError):
        ek_de.predict(query_set(np.ones((2, 2))), np.ones((2, 3)))


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_predict_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    # logits stay well inside the range where float64 sigmoid is below 1
    q, f = rng.normal(size=(8, 4)), rng.normal(size=(8, 4))
    p = ek_de.predict(query_set(q), f).probabilities
    assert np.all((p > 0) & (p < 1))


def test_predict_permutation_invariant():
    rng = np.random.default_rng(3)
    q, f = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
    base = ek_de.predict(AttributeQuerySet([0, 2, 3, 5, 6], q, np.ones(8)), f)
    perm = rng.permutation(5)
    cand = [base.candidate_indices[i] for i in perm]
    moved = ek_de.predict(AttributeQuerySet(cand, q[:, perm], np.ones(8)), f[:, perm])
    np.testing.assert_array_equal(moved.dense, base.dense)
    assert base.positive() == {c for c, p in zip(base.candidate_indices, base.probabilities) if p > 0.5}


def test_baseline_head():
    rng = np.random.default_rng(0)
    p = f64(ek_de.init_baseline(rng, 4, 9, 6, hidden=5))
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    f_u = rng.standard_normal((4, 9))
    np.testing.assert_array_equal(ek_de.baseline_head(f_u, zero), np.zeros(6))
    assert ek_de.baseline_head(f_u, p).shape == (6,)
    assert ek_de.baseline_head(rng.standard_normal((3, 4, 9)), p).shape == (3, 6)
    with pytest.raises(DimensionError):
        ek_de.baseline_head(np.ones((4, 4)), p)


def test_part_detection_validation():
    with pytest.raises(ValidationError):
        PartDetection(Box(0, 0, 1, 1), np.array([0.5, 0.6])).validate()
    with pytest.raises(ValidationError):
        PartDetection(Box(0, 0, 1, 1), np.array([1.0, 0.0]), score=1.5).validate()
    assert PartDetection(Box(0, 0, 1, 1), np.array([0.2, 0.8])).validate().part_class == 1


# -- gradients ---------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_class_rep_gradient(seed):
    rng = np.random.default_rng(seed)
    kg = example_kg()
    c_u = rng.dirichlet(np.ones(2))
    r = rng.standard_normal((4, 8))
    inputs = {"w_b": rng.standard_normal((4, 2)), "w_c": rng.standard_normal((4, 4)),
              "f_h": rng.standard_normal((4, 5))}
    rep = grad_check(lambda p: ops.sum(ops.mul(
        ek_de.class_conditioned_rep(c_u, kg, p["w_b"], p["w_c"], p["f_h"]), r)), inputs)
    assert rep.passed, rep.per_input


@pytest.mark.parametrize("seed", range(5))
def test_decode_and_predict_gradient(seed):
    rng = np.random.default_rng(seed)
    inputs = f64(ek_de.init_params(rng, 8, 3, 5, mlp_hidden=12))
    inputs["dec.mlp.w2"] = rng.standard_normal(inputs["dec.mlp.w2"].shape) * 0.3
    inputs.update(q=rng.standard_normal((8, 3)), f_hat=rng.standard_normal((8, 6)))
    target = (rng.uniform(size=3) > 0.5).astype(float)[None]

    def f(p):
        out = ek_de.decode(p["q"], p["f_hat"], p, 4)
        prob = ops.sigmoid(ek_de.similarity(p["q"], out))
        return ops.bce(ops.reshape(prob, (1, 3)), target, np.ones((1, 3)))

    rep = grad_check(f, inputs)
    assert rep.passed, rep.per_input


@pytest.mark.parametrize("seed", range(5))
def test_baseline_gradient(seed):
    rng = np.random.default_rng(seed)
    inputs = f64(ek_de.init_baseline(rng, 4, 9, 3, hidden=5))
    inputs["base.fc2.w"] = rng.standard_normal((3, 5))
    for k in [k for k in inputs if k.endswith(".b")]:
        # nonzero biases keep every relu input off its kink
        inputs[k] = rng.standard_normal(inputs[k].shape)
    inputs["f_u"] = rng.standard_normal((2, 4, 9))
    r = rng.standard_normal((2, 3))
    rep = grad_check(lambda p: ops.sum(ops.mul(ek_de.baseline_head(p["f_u"], p), r)), inputs)
    assert rep.passed, rep.per_input


def ke_instance(seed):
    rng = np.random.default_rng(seed)
    kg = KnowledgeGraph(normalise(rng.integers(0, 3, (3, 5)).astype(float) + np.eye(3, 5)),
                        list("pqr"), list("abcde"))
    params = f64(ik_en.init_params(rng, 8))
    params.update(f64(ek_de.init_params(rng, 8, 3, 5, mlp_hidden=12)))
    params["dec.mlp.w2"] = 0.3 * rng.standard_normal(params["dec.mlp.w2"].shape)
    fmap = rng.standard_normal((8, 10, 10))
    det = PartDetection(Box(2.5, 3, 3, 2.5), np.eye(3)[seed % 3], gt_index=4)
    return kg, params, fmap, Box(1, 1, 8, 8), det


def normalise(c):
    return c / c.sum(axis=1, keepdims=True)


@pytest.mark.parametrize("seed", range(5))
def test_ke_forward_gradient(seed):
    kg, params, fmap, person, det = ke_instance(seed)
    rng = np.random.default_rng(100 + seed)

    def f(p):
        pred = ek_de.ke_forward(fmap, person, det, kg, p, heads=4, size_u=3, size_v=3)
        r = rng.standard_normal(len(pred.candidate_indices))
        rng.bit_generator.state = state
        return ops.sum(ops.mul(pred.probabilities, r))

    state = rng.bit_generator.state
    rep = grad_check(f, params)
    assert rep.passed, rep.per_input


def test_ke_forward_is_the_composition():
    kg, params, fmap, person, det = ke_instance(7)
    pred = ek_de.ke_forward(fmap, person, det, kg, params, heads=4, size_u=3, size_v=3)
    f_v, f_u = roi.pair_regions(fmap, person, det.box, 3, 3)
    f_h = ik_en.encode(ik_en.flatten_spatial(f_u), ik_en.flatten_spatial(f_v), det.box, person, params)
    q = ek_de.attribute_queries(det.c_u, kg, params["ek.Wa"])
    f_hat = ek_de.class_conditioned_rep(det.c_u, kg, params["ek.Wb"], params["ek.Wc"], f_h)
    chained = ek_de.predict(q, ek_de.decode(q, f_hat, params, 4))
    assert pred.candidate_indices == chained.candidate_indices
    np.testing.assert_array_equal(pred.dense, chained.dense)
    off = np.setdiff1d(np.arange(5), pred.candidate_indices)
    assert np.all(pred.dense[off] == 0)


def test_ke_forward_no_candidates_names_part():
    kg, params, fmap, person, det = ke_instance(1)
    with pytest.raises(NoCandidatesError) as info:
        ek_de.ke_forward(fmap, person, det, kg, params, tau=1.0, size_u=3, size_v=3)
    assert info.value.part == 4


@pytest.mark.parametrize("seed", range(3))
def test_batched_head_matches_per_part(seed):
    kg, params, fmap, person, det = ke_instance(seed)
    cfg = head.HeadConfig("ke_full", 8, 3, 5, size_u=3, size_v=3, heads=4)
    f_v, f_u = roi.pair_regions(fmap, person, det.box, 3, 3)
    batch = head.PartBatch(ik_en.flatten_spatial(f_u)[None], ik_en.flatten_spatial(f_v)[None],
                           ik_en.geometry_vector(det.box, person).reshape(1, 4, 1),
                           det.c_u[None], np.zeros((1, 5)))
    prob, mask = head.forward(cfg, params, batch, kg)
    single = ek_de.ke_forward(fmap, person, det, kg, params, heads=4, size_u=3, size_v=3)
    np.testing.assert_array_equal(np.flatnonzero(mask[0]), single.candidate_indices)
    np.testing.assert_allclose((prob * mask)[0], single.dense, atol=1e-12)
