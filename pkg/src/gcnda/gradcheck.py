"""Finite-difference checks of every backward pass, layer by layer and end to end."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import model as M
from . import tensor as T

TOLERANCE = 1e-5


def _linear_probe(out_shape, rng) -> np.ndarray:
    # random upstream weights turn a tensor-valued op into a scalar loss
    return rng.normal(size=out_shape)


def check_conv(rng: np.random.Generator) -> float:
    x = rng.normal(size=(7, 2))
    k = rng.normal(size=(2, 3, 2))
    b = rng.normal(size=2)
    r = _linear_probe((7, 2), rng)
    gx, gk, gb = T.conv1d_same_backward(x, k, r)
    return T.grad_check(lambda: float(np.sum(T.conv1d_same(x, k, b) * r)), {"x": x, "k": k, "b": b}, {"x": gx, "k": gk, "b": gb})


def check_conv_even(rng: np.random.Generator) -> float:
    x = rng.normal(size=(2, 6, 3))
    k = rng.normal(size=(3, 4, 3))
    b = rng.normal(size=3)
    r = _linear_probe((2, 6, 3), rng)
    gx, gk, gb = T.conv1d_same_backward(x, k, r)
    return T.grad_check(lambda: float(np.sum(T.conv1d_same(x, k, b) * r)), {"x": x, "k": k, "b": b}, {"x": gx, "k": gk, "b": gb})


def check_dense(rng: np.random.Generator) -> float:
    x = rng.normal(size=4)
    w = rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    r = _linear_probe(3, rng)
    gx, gw, gb = T.dense_backward(x, w, r)
    return T.grad_check(lambda: float(T.dense(x, w, b) @ r), {"x": x, "w": w, "b": b}, {"x": gx, "w": gw, "b": gb})


def check_activation(kind: str, rng: np.random.Generator) -> float:
    x = rng.normal(size=(5, 4))
    if kind == "relu":
        # keep clear of the kink so the central difference is valid
        x = np.where(x >= 0, np.maximum(x, 1e-4), np.minimum(x, -1e-4))
    r = _linear_probe(x.shape, rng)
    g = T.activation_backward(kind, x, T.activation(kind, x), r)
    return T.grad_check(lambda: float(np.sum(T.activation(kind, x) * r)), {"x": x}, {"x": g})


def check_mul(rng: np.random.Generator) -> float:
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    r = _linear_probe(a.shape, rng)
    ga, gb = T.elementwise_mul_backward(a, b, r)
    return T.grad_check(lambda: float(np.sum(T.elementwise_mul(a, b) * r)), {"a": a, "b": b}, {"a": ga, "b": gb})


def check_maxpool(rng: np.random.Generator) -> float:
    # distinct values so the argmax is stable under the perturbation
    x = rng.permutation(48).reshape(8, 6) * 0.1 + rng.normal(size=(8, 6)) * 1e-3
    r = _linear_probe(6, rng)
    _, arg = T.maxpool_time(x)
    g = T.maxpool_time_backward(arg, 8, r)
    return T.grad_check(lambda: float(T.maxpool_time(x)[0] @ r), {"x": x}, {"x": g})


def check_dropout(rng: np.random.Generator) -> float:
    x = rng.normal(size=(4, 5))
    r = _linear_probe(x.shape, rng)
    seed = int(rng.integers(2**31))
    _, mask = T.dropout(x, 0.5, T.make_rng(seed), True)
    g = T.dropout_backward(mask, 0.5, r)
    return T.grad_check(lambda: float(np.sum(T.dropout(x, 0.5, T.make_rng(seed), True)[0] * r)), {"x": x}, {"x": g})


def check_bce(rng: np.random.Generator) -> float:
    p = rng.uniform(0.05, 0.95, size=6)
    y = rng.integers(0, 2, size=6).astype(float)
    return T.grad_check(lambda: T.bce_loss(p, y), {"p": p}, {"p": T.bce_loss_grad(p, y)})


def check_model(gate: str, rng: np.random.Generator, train_embeddings: bool = True) -> float:
    """Whole-network check on a tiny model (N=6, d=3, F=2, h=2) in training mode.

    Dropout masks are reproduced on every evaluation by reseeding. The
    frozen embedding row 0 is left out of the check.
    """
    emb = rng.normal(size=(9, 3))
    emb[0] = 0.0
    params = M.init_model(gate, emb, rng, kernel_sizes=(2,), filters=2, train_embeddings=train_embeddings)
    for br in params.branches:
        br.bias[:] = rng.normal(size=br.bias.shape) * 0.1
    x = rng.integers(0, 9, size=(3, 6))
    y = np.array([0, 1, 1])
    seed = int(rng.integers(2**31))

    def loss() -> float:
        probs, _ = M.forward(params, x, True, T.make_rng(seed))
        return T.bce_loss(probs, y)

    _, cache = M.forward(params, x, True, T.make_rng(seed))
    grads = M.backward(params, cache, y)
    inputs = params.trainable()
    if train_embeddings:
        inputs["embedding"] = params.embedding[1:]
        grads["embedding"] = grads["embedding"][1:]
    return T.grad_check(loss, inputs, grads)


def suite() -> dict[str, Callable[[np.random.Generator], float]]:
    checks: dict[str, Callable[[np.random.Generator], float]] = {
        "conv1d_same": check_conv,
        "conv1d_same(even h, batched)": check_conv_even,
        "dense": check_dense,
        "elementwise_mul": check_mul,
        "maxpool_time": check_maxpool,
        "dropout": check_dropout,
        "bce_loss": check_bce,
    }
    for kind in T.ACTIVATIONS:
        checks[f"activation[{kind}]"] = lambda rng, kind=kind: check_activation(kind, rng)
    for gate in M.GateKind:
        checks[f"model[{gate.value}]"] = lambda rng, gate=gate: check_model(gate, rng)
    return checks


def run_suite(seeds=(0, 1, 2)) -> dict[str, float]:
    """Worst relative error of each check over ``seeds``."""
    results = {}
    for name, check in suite().items():
        results[name] = max(check(T.make_rng(seed)) for seed in seeds)
    return results
