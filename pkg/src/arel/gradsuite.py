"""Finite-difference checks for every differentiable operation and the composed model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ndtensor as nd
from .attention import causal_mask_matrix, multihead_attention
from .credit_head import total_loss
from .model import ArelConfig, ArelModel


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _scalar(out: nd.Tensor, proj: np.ndarray) -> nd.Tensor:
    # random linear functional so every output entry gets a distinct upstream grad
    return nd.tsum(nd.mul(out, proj))


def _unary(op):
    def case(rng):
        x = nd.parameter(_away_from_zero(rng, (3, 4)))
        proj = rng.normal(size=(3, 4))
        return (lambda: _scalar(op(x), proj)), [x]
    return case


def _binary(op, positive_b=False):
    def case(rng):
        a = nd.parameter(rng.normal(size=(2, 3, 4)))
        b_data = rng.normal(size=(3, 1))
        if positive_b:
            b_data = np.abs(b_data) + 0.5
        b = nd.parameter(b_data)
        proj = rng.normal(size=(2, 3, 4))
        return (lambda: _scalar(op(a, b), proj)), [a, b]
    return case


def _reduce(op):
    def case(rng):
        x = nd.parameter(rng.normal(size=(2, 3, 4)))
        axis = [None, 0, 1, -1, (0, 2)][rng.integers(5)]
        keep = bool(rng.integers(2))
        out_shape = op(nd.as_tensor(x.data), axis=axis, keepdims=keep).shape
        proj = rng.normal(size=out_shape)
        return (lambda: _scalar(op(x, axis=axis, keepdims=keep), proj)), [x]
    return case


def _shape_case(rng):
    x = nd.parameter(rng.normal(size=(2, 3, 4)))
    proj = rng.normal(size=(4, 6))
    proj2 = rng.normal(size=(4, 3, 2))
    proj3 = rng.normal(size=(2, 4, 3))
    return (lambda: nd.add(nd.add(_scalar(nd.reshape(x, (4, 6)), proj),
                                  _scalar(nd.transpose(x, (2, 1, 0)), proj2)),
                           _scalar(nd.transpose_last_two(x), proj3))), [x]


def _getitem_case(rng):
    x = nd.parameter(rng.normal(size=(4, 5)))
    idx = (np.array([0, 2, 2, 3]), slice(1, 4))
    proj = rng.normal(size=(4, 3))
    return (lambda: _scalar(nd.getitem(x, idx), proj)), [x]


def _broadcast_case(rng):
    x = nd.parameter(rng.normal(size=(3, 1)))
    proj = rng.normal(size=(2, 3, 4))
    return (lambda: _scalar(nd.broadcast_to(x, (2, 3, 4)), proj)), [x]


def _matmul_case(rng):
    a = nd.parameter(rng.normal(size=(2, 3, 4)))
    b = nd.parameter(rng.normal(size=(4, 5)))
    proj = rng.normal(size=(2, 3, 5))
    return (lambda: _scalar(nd.matmul(a, b), proj)), [a, b]


def _linear_case(rng):
    x = nd.parameter(rng.normal(size=(2, 3, 4)))
    w = nd.parameter(rng.normal(size=(4, 5)))
    b = nd.parameter(rng.normal(size=5))
    proj = rng.normal(size=(2, 3, 5))
    return (lambda: _scalar(nd.linear(x, w, b), proj)), [x, w, b]


def _softmax_case(rng):
    x = nd.parameter(rng.normal(size=(2, 4, 4)))
    mask = causal_mask_matrix(4)
    proj = rng.normal(size=(2, 4, 4))
    return (lambda: _scalar(nd.softmax_lastdim(x, mask), proj)), [x]


def _layer_norm_case(rng):
    x = nd.parameter(rng.normal(size=(3, 5)))
    g = nd.parameter(rng.normal(size=5))
    b = nd.parameter(rng.normal(size=5))
    proj = rng.normal(size=(3, 5))
    return (lambda: _scalar(nd.layer_norm(x, g, b), proj)), [x, g, b]


def _attention_case(rng):
    D, H, T = 8, 2, 4
    x = nd.parameter(rng.normal(size=(2, T, D)))
    wq, wk, wv = (nd.parameter(rng.normal(size=(D, D)) / np.sqrt(D)) for _ in range(3))
    proj = rng.normal(size=(2, T, D))
    mask = causal_mask_matrix(T)
    return (lambda: _scalar(multihead_attention(x, wq, wk, wv, H, mask)[0], proj)), [x, wq, wk, wv]


def _model_case(rng, regularizer="variance"):
    # small enough that central differences over every parameter stay cheap
    cfg = ArelConfig(obs_dim=3, d_model=4, heads=2, depth=int(rng.integers(1, 3)), t_max=3, ff_mult=1,
                     head_hidden=4)
    model = ArelModel(cfg, seed=int(rng.integers(1 << 30)))
    obs = rng.normal(size=(2, 3, 2, 3))
    R = rng.normal(size=2)
    params = list(model.parameters().values())
    return (lambda: total_loss(model(obs), R, regularizer, omega=20.0)), params


def _model_l1_case(rng):
    return _model_case(rng, "l1")


def _model_l2_case(rng):
    return _model_case(rng, "l2")


CASES: dict[str, Callable] = {
    "add": _binary(nd.add), "sub": _binary(nd.sub), "mul": _binary(nd.mul), "div": _binary(nd.div, True),
    "relu": _unary(nd.relu), "square": _unary(nd.square), "abs": _unary(nd.tabs), "exp": _unary(nd.exp),
    "sum": _reduce(nd.tsum), "mean": _reduce(nd.mean), "shape": _shape_case, "getitem": _getitem_case,
    "broadcast_to": _broadcast_case, "matmul": _matmul_case, "linear": _linear_case,
    "softmax_masked": _softmax_case, "layer_norm": _layer_norm_case, "attention": _attention_case,
    "model_variance": _model_case, "model_l1": _model_l1_case, "model_l2": _model_l2_case,
}
COMPOSED = ("model_variance", "model_l1", "model_l2")


KINK_MARGIN = 1e-4


def _smooth_instance(name: str, rng: np.random.Generator, attempts: int = 20):
    """Draw an instance whose relu/abs inputs all stay ``KINK_MARGIN`` away from 0."""
    for _ in range(attempts):
        fn, inputs = CASES[name](rng)
        with nd.no_grad(), nd.record_kink_margin() as margin:
            fn()
        if margin[0] >= KINK_MARGIN:
            return fn, inputs
    raise RuntimeError(f"{name}: no kink-free instance in {attempts} draws")


def run(instances: int = 105, seed: int = 0, h: float = 1e-5, tol: float = 1e-4, composed_every: int = 7) -> dict:
    """Cycle through the cases; composed-model cases run on every ``composed_every``-th slot."""
    rng = np.random.default_rng(seed)
    simple = [k for k in CASES if k not in COMPOSED]
    results: dict[str, float] = {}
    order = []
    s = c = 0
    for i in range(instances):
        if composed_every and i % composed_every == composed_every - 1:
            order.append(COMPOSED[c % len(COMPOSED)])
            c += 1
        else:
            order.append(simple[s % len(simple)])
            s += 1
    failures = []
    for name in order:
        fn, inputs = _smooth_instance(name, rng)
        err = nd.gradcheck(fn, inputs, h)
        results[name] = max(results.get(name, 0.0), err)
        if not err <= tol:
            failures.append({"op": name, "relative_error": err})
    return {"instances": instances, "tolerance": tol, "h": h, "worst_by_op": results,
            "failures": failures, "passed": not failures}
