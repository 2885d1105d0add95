"""Finite-difference checks for every differentiable operation of the head.

Each case builds a random float64 instance from a seed and projects the
operation's output onto a fixed random tensor, so every output coordinate
contributes to the checked scalar.
"""
import time

import numpy as np

from . import ek_de, ik_en, train
from .ek_de import AttributeQuerySet, PartDetection
from .knowledge import KnowledgeGraph
from .numerics import grad_check, kernels, layers, ops
from .roi import Box


def _f64(params):
    return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}


def _project(out, r):
    return ops.sum(ops.mul(out, r))


def _kg(rng, n, c):
    counts = rng.integers(0, 3, (n, c)).astype(float) + np.eye(n, c)
    return KnowledgeGraph(counts / counts.sum(axis=1, keepdims=True),
                          [f"p{i}" for i in range(n)], [f"a{j}" for j in range(c)])


def _shift_biases(rng, params):
    # zero biases can sit exactly on a relu kink, where the two-sided difference is meaningless
    for k in params:
        if k.endswith(("b", "b1", "b2", ".b")) and params[k].ndim == 1:
            params[k] = rng.standard_normal(params[k].shape)
    return params


def case_matmul(rng):
    r = rng.standard_normal((4, 3))
    return (lambda p: _project(ops.matmul(p["a"], p["b"]), r),
            {"a": rng.standard_normal((4, 5)), "b": rng.standard_normal((5, 3))})


def case_softmax(rng):
    r = rng.standard_normal((4, 6))
    return lambda p: _project(ops.softmax(p["x"], axis=-2), r), {"x": rng.standard_normal((4, 6))}


def case_pointwise(rng):
    r = rng.standard_normal((5, 4))
    x = rng.standard_normal((5, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep relu inputs off the kink
    return (lambda p: ops.add(_project(ops.pointwise(p["x"], "relu"), r),
                              _project(ops.pointwise(p["x"], "sigmoid"), r)), {"x": x})


def case_layer_norm(rng):
    r = rng.standard_normal((6, 3))
    return (lambda p: _project(ops.layer_norm(p["x"], p["g"], p["s"], 1e-5, axis=-2), r),
            {"x": rng.standard_normal((6, 3)), "g": rng.standard_normal((6, 1)),
             "s": rng.standard_normal((6, 1))})


def case_msa(rng):
    params = _shift_biases(rng, _f64(layers.init_msa(rng, 8)))
    params.update(q=rng.standard_normal((8, 3)), kv=rng.standard_normal((8, 5)))
    r = rng.standard_normal((8, 3))
    return lambda p: _project(layers.msa(p["q"], p["kv"], p["kv"], p, 2), r), params


def case_mlp(rng):
    params = _shift_biases(rng, _f64(layers.init_mlp(rng, 6, 12, zero_out=False)))
    params["x"] = rng.standard_normal((6, 4))
    r = rng.standard_normal((6, 4))
    return lambda p: _project(layers.mlp(p["x"], p), r), params


def case_visual_context(rng):
    params = _f64(ik_en.init_params(rng, 8))
    params.update(f_u=rng.standard_normal((8, 9)), f_v=rng.standard_normal((8, 9)))
    r = rng.standard_normal((8, 9))
    return lambda p: _project(ik_en.visual_context(p["f_u"], p["f_v"], p), r), params


def case_geometry_context(rng):
    part = Box(*rng.uniform(2, 6, 2), *rng.uniform(1, 4, 2))
    person = Box(*rng.uniform(0, 2, 2), *rng.uniform(6, 10, 2))
    r = rng.standard_normal((8, 1))
    return (lambda p: _project(ik_en.geometry_context(part, person, p["ws"]), r),
            {"ws": rng.standard_normal((8, 4))})


def case_encode(rng):
    params = _f64(ik_en.init_params(rng, 8))
    params.update(f_u=rng.standard_normal((8, 4)), f_v=rng.standard_normal((8, 9)))
    part, person = Box(2, 3, 4, 5), Box(0, 0, 8, 10)
    r = rng.standard_normal((8, 5))
    return lambda p: _project(ik_en.encode(p["f_u"], p["f_v"], part, person, p), r), params


def case_class_conditioned_rep(rng):
    kg = _kg(rng, 3, 5)
    c_u = rng.dirichlet(np.ones(3))
    r = rng.standard_normal((8, 9))
    inputs = {"wb": rng.standard_normal((8, 3)), "wc": rng.standard_normal((8, 8)),
              "f_h": rng.standard_normal((8, 4))}
    return (lambda p: _project(ek_de.class_conditioned_rep(c_u, kg, p["wb"], p["wc"], p["f_h"]), r),
            inputs)


def case_decode(rng):
    params = _f64(ek_de.init_params(rng, 8, 3, 5, mlp_hidden=12))
    params["dec.mlp.w2"] = 0.3 * rng.standard_normal(params["dec.mlp.w2"].shape)
    params = _shift_biases(rng, params)
    params.update(q=rng.standard_normal((8, 3)), f_hat=rng.standard_normal((8, 6)))
    r = rng.standard_normal((8, 3))
    return lambda p: _project(ek_de.decode(p["q"], p["f_hat"], p, 4), r), params


def case_predict(rng):
    r = rng.standard_normal(4)

    def f(p):
        q = AttributeQuerySet([0, 1, 2, 3], p["q"], np.ones(4))
        return _project(ek_de.predict(q, p["f"]).probabilities, r)
    return f, {"q": rng.standard_normal((6, 4)), "f": rng.standard_normal((6, 4))}


def case_baseline_head(rng):
    params = _shift_biases(rng, _f64(ek_de.init_baseline(rng, 4, 9, 3, hidden=5)))
    params["base.fc2.w"] = rng.standard_normal((3, 5))
    params["f_u"] = rng.standard_normal((2, 4, 9))
    r = rng.standard_normal((2, 3))
    return lambda p: _project(ek_de.baseline_head(p["f_u"], p), r), params


def case_bce_loss(rng):
    y = (rng.uniform(size=(3, 5)) < 0.5).astype(float)
    mask = (rng.uniform(size=(3, 5)) < 0.8).astype(float)
    mask[:, 0] = 1
    return (lambda p: train.bce_loss(ops.sigmoid(p["z"]), y, mask),
            {"z": rng.standard_normal((3, 5))})


def case_ke_forward(rng):
    kg = _kg(rng, 3, 5)
    params = _f64(ik_en.init_params(rng, 8))
    params.update(_f64(ek_de.init_params(rng, 8, 3, 5, mlp_hidden=12)))
    params["dec.mlp.w2"] = 0.3 * rng.standard_normal(params["dec.mlp.w2"].shape)
    params = _shift_biases(rng, params)
    fmap = rng.standard_normal((8, 10, 10))
    det = PartDetection(Box(2.5, 3, 3, 2.5), np.eye(3)[int(rng.integers(3))])
    person = Box(1, 1, 8, 8)
    targets = set(rng.choice(5, size=2, replace=False).tolist())

    def f(p):
        pred = ek_de.ke_forward(fmap, person, det, kg, p, heads=4, size_u=3, size_v=3)
        return train.bce_loss(pred, targets)
    return f, params


CASES = {
    "matmul": case_matmul, "softmax": case_softmax, "pointwise": case_pointwise,
    "layer_norm": case_layer_norm, "msa": case_msa, "mlp": case_mlp,
    "visual_context": case_visual_context, "geometry_context": case_geometry_context,
    "encode": case_encode, "class_conditioned_rep": case_class_conditioned_rep,
    "decode": case_decode, "predict": case_predict, "baseline_head": case_baseline_head,
    "bce_loss": case_bce_loss, "ke_forward": case_ke_forward,
}


def _sign_flipped_sigmoid(x):
    y = kernels.sigmoid(ops.value(x))
    return ops._emit(y, (x,), lambda g: (-kernels.sigmoid_backward(g, y),))


def negative_control(seed=0, tolerance=1e-4):
    """A sigmoid whose backward pass has the wrong sign; must fail the check."""
    rng = np.random.default_rng([seed, 0xBAD])
    r = rng.standard_normal(6)
    return grad_check(lambda p: _project(_sign_flipped_sigmoid(p["x"]), r),
                      {"x": rng.standard_normal(6)}, tolerance=tolerance)


def run_suite(seeds=range(5), tolerance=1e-4, names=None):
    """Check every case on every seed.

    Returns ``{name: {"max_rel_error", "passed", "seeds"}}`` plus the negative
    control under ``"negative_control"`` (where ``passed`` means it was caught).
    """
    results = {}
    for name in names or CASES:
        worst, ok = 0.0, True
        for seed in seeds:
            f, inputs = CASES[name](np.random.default_rng([seed, 0x6C]))
            rep = grad_check(f, inputs, tolerance=tolerance)
            worst = max(worst, rep.max_rel_error)
            ok &= rep.passed
        results[name] = {"max_rel_error": worst, "passed": bool(ok), "seeds": len(list(seeds))}
    control = negative_control(tolerance=tolerance)
    results["negative_control"] = {"max_rel_error": control.max_rel_error,
                                   "passed": not control.passed, "seeds": 1}
    return results


def timed_suite(seeds=range(5), tolerance=1e-4):
    start = time.perf_counter()
    results = run_suite(seeds, tolerance)
    return results, time.perf_counter() - start
