"""Gated convolutional sentence classifier.

Embedding -> parallel conv branches, each with a main and a gate
convolution whose activations are multiplied -> max over time -> concat ->
dropout -> dense -> sigmoid.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import DTYPE, ShapeError

KEEP_EMBED = 0.5
KEEP_DENSE = 0.8
PAD_LABEL = "<pad>"


class GateKind(str, Enum):
    GLU = "glu"
    GTU = "gtu"
    GTRU = "gtru"
    NONE = "none"

    @property
    def activations(self) -> tuple[str, str | None]:
        """(main activation, gate activation); NONE has no gate."""
        return _GATE_ACTIVATIONS[self]

    @property
    def gated(self) -> bool:
        return self is not GateKind.NONE


_GATE_ACTIVATIONS = {
    GateKind.GLU: ("identity", "sigmoid"),
    GateKind.GTU: ("tanh", "sigmoid"),
    GateKind.GTRU: ("tanh", "relu"),
    GateKind.NONE: ("relu", None),
}


class UnsupportedOperation(RuntimeError):
    pass


@dataclass
class ConvBranch:
    """Filters of one height. Main and gate filters live in one array so a
    single matmul computes both; ``w_main`` and ``w_gate`` are views into it."""

    h: int
    kernels: np.ndarray  # [F, h, d], or [2F, h, d] main then gate
    bias: np.ndarray
    gated: bool

    @property
    def filters(self) -> int:
        return self.kernels.shape[0] // 2 if self.gated else self.kernels.shape[0]

    @property
    def w_main(self) -> np.ndarray:
        return self.kernels[: self.filters]

    @property
    def b_main(self) -> np.ndarray:
        return self.bias[: self.filters]

    @property
    def w_gate(self) -> np.ndarray | None:
        return self.kernels[self.filters :] if self.gated else None

    @property
    def b_gate(self) -> np.ndarray | None:
        return self.bias[self.filters :] if self.gated else None


@dataclass
class GcnParams:
    gate: GateKind
    branches: list[ConvBranch]
    dense_w: np.ndarray  # [len(branches) * F, 1]
    dense_b: np.ndarray  # [1]
    embedding: np.ndarray  # [B, d]
    train_embeddings: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def filters(self) -> int:
        return self.branches[0].filters

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def kernel_sizes(self) -> list[int]:
        return [b.h for b in self.branches]

    def tensors(self) -> dict[str, np.ndarray]:
        """Every stored tensor in checkpoint order, embedding last."""
        out = {}
        for br in self.branches:
            out[f"conv{br.h}.kernels"] = br.kernels
            out[f"conv{br.h}.bias"] = br.bias
        out["dense.w"] = self.dense_w
        out["dense.b"] = self.dense_b
        out["embedding"] = self.embedding
        return out

    def trainable(self) -> dict[str, np.ndarray]:
        out = self.tensors()
        if not self.train_embeddings:
            del out["embedding"]
        return out

    def num_parameters(self, include_embedding: bool = False) -> int:
        tensors = self.tensors()
        if not include_embedding:
            del tensors["embedding"]
        return sum(t.size for t in tensors.values())

    def copy(self) -> "GcnParams":
        branches = [ConvBranch(b.h, b.kernels.copy(), b.bias.copy(), b.gated) for b in self.branches]
        return replace(
            self,
            branches=branches,
            dense_w=self.dense_w.copy(),
            dense_b=self.dense_b.copy(),
            embedding=self.embedding.copy(),
            meta=dict(self.meta),
        )


def parameter_count(gate: GateKind, filters: int, embed_dim: int, kernel_sizes: Sequence[int]) -> int:
    """Closed-form count of non-embedding trainable scalars."""
    per_branch = sum(h * embed_dim * filters + filters for h in kernel_sizes)
    conv = per_branch * (2 if GateKind(gate).gated else 1)
    return conv + len(kernel_sizes) * filters + 1


def init_model(
    gate: GateKind | str,
    embeddings: np.ndarray,
    rng: np.random.Generator,
    *,
    kernel_sizes: Sequence[int] = (3, 4, 5),
    filters: int = 100,
    train_embeddings: bool = False,
    meta: dict | None = None,
) -> GcnParams:
    """Glorot-uniform kernels and dense weights, zero biases.

    Draw order is fixed (per branch: main then gate; then dense) so a seed
    reproduces the parameters exactly.
    """
    gate = GateKind(gate)
    embeddings = np.array(embeddings, dtype=DTYPE)
    d = embeddings.shape[1]
    branches = []
    for h in kernel_sizes:
        parts = [T.glorot_uniform(rng, h * d, filters, (filters, h, d))]
        if gate.gated:
            parts.append(T.glorot_uniform(rng, h * d, filters, (filters, h, d)))
        kernels = np.concatenate(parts)
        branches.append(ConvBranch(h, kernels, np.zeros(kernels.shape[0], dtype=DTYPE), gate.gated))
    width = filters * len(kernel_sizes)
    dense_w = T.glorot_uniform(rng, width, 1, (width, 1))
    return GcnParams(
        gate,
        branches,
        dense_w,
        np.zeros(1, dtype=DTYPE),
        embeddings,
        train_embeddings=train_embeddings,
        meta=dict(meta or {}),
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _as_batch(batch, max_len: int | None = None) -> np.ndarray:
    arr = np.asarray(batch, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"batch must be [B, N] indices, got shape {arr.shape}")
    if max_len is not None and arr.shape[1] != max_len:
        raise ShapeError(f"every example must have length {max_len}, got {arr.shape[1]}")
    return arr


def forward(
    params: GcnParams,
    batch,
    training: bool = False,
    rng: np.random.Generator | None = None,
    keep_embed: float = KEEP_EMBED,
    keep_dense: float = KEEP_DENSE,
    max_len: int | None = None,
) -> tuple[np.ndarray, dict]:
    """Return per-example probabilities and the cache needed by ``backward``.

    ``batch`` is an int array ``[B, N]`` of vocabulary indices (a single
    ``[N]`` row is also accepted). Dropout is applied only when ``training``.
    """
    idx = _as_batch(batch, max_len)
    if training and rng is None:
        raise ValueError("training mode needs an rng for dropout")
    f_act, g_act = params.gate.activations
    nf = params.filters

    emb = params.embedding[idx]  # [B, N, d]
    p, embed_mask = T.dropout(emb, keep_embed, rng, training)

    pooled, branch_cache = [], []
    for br in params.branches:
        z = T.conv1d_same(p, br.kernels, br.bias)  # [B, N, F or 2F]
        z_main = z[..., :nf]
        c = T.activation(f_act, z_main)
        if g_act is None:
            g, s, z_gate = c, None, None
        else:
            z_gate = z[..., nf:]
            s = T.activation(g_act, z_gate)
            g = T.elementwise_mul(c, s)
        values, argmax = T.maxpool_time(g)
        pooled.append(values)
        branch_cache.append({"z_main": z_main, "c": c, "z_gate": z_gate, "s": s, "argmax": argmax})

    concat = np.concatenate(pooled, axis=-1)  # [B, nb*F]
    concat_d, dense_mask = T.dropout(concat, keep_dense, rng, training)
    logits = T.dense(concat_d, params.dense_w, params.dense_b)[:, 0]
    probs = T.sigmoid(logits)
    cache = {
        "idx": idx,
        "p": p,
        "embed_mask": embed_mask,
        "branches": branch_cache,
        "concat_d": concat_d,
        "dense_mask": dense_mask,
        "logits": logits,
        "probs": probs,
        "keep_embed": keep_embed if training else 1.0,
        "keep_dense": keep_dense if training else 1.0,
    }
    return probs, cache


def backward(params: GcnParams, cache: dict, labels) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean binary cross-entropy.

    Keys match ``params.trainable()``.
    """
    y = np.asarray(labels, dtype=DTYPE).reshape(-1)
    probs = cache["probs"]
    if y.shape != probs.shape:
        raise ValueError(f"{y.size} labels for a cached batch of {probs.size}")
    dprob = T.bce_loss_grad(probs, y)
    dlogits = T.activation_backward("sigmoid", cache["logits"], probs, dprob)
    return backward_logits(params, cache, dlogits)


def backward_logits(params: GcnParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate an arbitrary upstream gradient on the logits."""
    dlogits = np.asarray(dlogits, dtype=DTYPE).reshape(-1)
    if dlogits.shape != cache["logits"].shape:
        raise ValueError("upstream gradient does not match the cached batch")
    f_act, g_act = params.gate.activations
    nf = params.filters
    grads: dict[str, np.ndarray] = {}

    d_concat_d, grads["dense.w"], grads["dense.b"] = T.dense_backward(
        cache["concat_d"], params.dense_w, dlogits[:, None]
    )
    d_concat = T.dropout_backward(cache["dense_mask"], cache["keep_dense"], d_concat_d)

    p = cache["p"]
    n = p.shape[-2]
    need_dp = params.train_embeddings
    dp = np.zeros_like(p) if need_dp else None
    for k, (br, bc) in enumerate(zip(params.branches, cache["branches"])):
        dg = T.maxpool_time_backward(bc["argmax"], n, d_concat[:, k * nf : (k + 1) * nf])
        if g_act is None:
            dz = T.activation_backward(f_act, bc["z_main"], bc["c"], dg)
        else:
            dc, ds = T.elementwise_mul_backward(bc["c"], bc["s"], dg)
            dz = np.empty(dg.shape[:-1] + (2 * nf,), dtype=DTYPE)
            dz[..., :nf] = T.activation_backward(f_act, bc["z_main"], bc["c"], dc)
            dz[..., nf:] = T.activation_backward(g_act, bc["z_gate"], bc["s"], ds)
        dpi, grads[f"conv{br.h}.kernels"], grads[f"conv{br.h}.bias"] = T.conv1d_same_backward(
            p, br.kernels, dz, input_grad=need_dp
        )
        if need_dp:
            dp += dpi

    if need_dp:
        demb = T.dropout_backward(cache["embed_mask"], cache["keep_embed"], dp)
        g_emb = np.zeros_like(params.embedding)
        np.add.at(g_emb, cache["idx"].reshape(-1), demb.reshape(-1, demb.shape[-1]))
        g_emb[0] = 0.0  # pad/unknown row is frozen at zero
        grads["embedding"] = g_emb
    return {name: grads[name] for name in params.trainable()}


def predict_logits(params: GcnParams, batch, batch_size: int = 256) -> np.ndarray:
    """Inference-mode logits, computed in chunks of ``batch_size``."""
    idx = _as_batch(batch)
    out = [forward(params, idx[i : i + batch_size])[1]["logits"] for i in range(0, len(idx), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=DTYPE)


def predict_proba(params: GcnParams, batch, batch_size: int = 256) -> np.ndarray:
    return T.sigmoid(predict_logits(params, batch, batch_size))


def predict(params: GcnParams, batch, batch_size: int = 256) -> np.ndarray:
    """Labels in {0, 1}: 1 iff the logit is >= 0, i.e. probability >= 0.5."""
    return (predict_logits(params, batch, batch_size) >= 0).astype(np.int64)


# ---------------------------------------------------------------------------
# gate inspection
# ---------------------------------------------------------------------------


@dataclass
class GateMap:
    h: int
    ngrams: list[str]
    activations: np.ndarray  # [N, F]
    mean: np.ndarray  # [N]


def _ngram_labels(tokens: Sequence[str], n: int, h: int) -> list[str]:
    before = (h - 1) // 2
    labels = []
    for i in range(n):
        words = []
        for j in range(i - before, i - before + h):
            words.append(tokens[j] if 0 <= j < len(tokens) else PAD_LABEL)
        labels.append(" ".join(words))
    return labels


def gate_activations(params: GcnParams, indices, tokens: Sequence[str] | None = None) -> list[GateMap]:
    """Inference-mode gate outputs g(conv_gate(P)) for one example, per branch.

    Row i of a branch corresponds to the h-gram window centred as in the
    convolution; positions outside ``tokens`` are labelled ``<pad>``.
    """
    if not params.gate.gated:
        raise UnsupportedOperation("gate activations are undefined for the non-gated model")
    idx = _as_batch(indices)
    if idx.shape[0] != 1:
        raise ShapeError("gate_activations takes a single example")
    _, cache = forward(params, idx)
    n = idx.shape[1]
    tokens = list(tokens) if tokens is not None else [str(i) if i else PAD_LABEL for i in idx[0]]
    tokens = tokens[:n]
    maps = []
    for br, bc in zip(params.branches, cache["branches"]):
        acts = bc["s"][0].copy()
        maps.append(GateMap(br.h, _ngram_labels(tokens, n, br.h), acts, acts.mean(axis=1)))
    return maps


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"GCNC"
VERSION = 1


class CheckpointError(ValueError):
    pass


class MagicMismatchError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def save_checkpoint(params: GcnParams, path) -> None:
    """Write ``GCNC`` magic, a version byte, a u32-length-prefixed JSON header,
    then every tensor as little-endian float64 in ``params.tensors()`` order."""
    tensors = params.tensors()
    header = {
        "gate": params.gate.value,
        "kernel_sizes": params.kernel_sizes,
        "filters": params.filters,
        "embed_dim": params.embed_dim,
        "vocab_rows": params.embedding.shape[0],
        "train_embeddings": params.train_embeddings,
        "meta": params.meta,
        "tensors": [[name, list(t.shape)] for name, t in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(blob)))
        fh.write(blob)
        for t in tensors.values():
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> GcnParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise MagicMismatchError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    if len(data) < 9:
        raise TruncatedCheckpointError(f"{path}: file ends inside the preamble")
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version} is not supported")
    offset = 9 + hlen
    if len(data) < offset:
        raise TruncatedCheckpointError(f"{path}: file ends inside the header")
    header = json.loads(data[9:offset].decode("utf-8"))

    arrays = {}
    for name, shape in header["tensors"]:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if len(data) < offset + nbytes:
            raise TruncatedCheckpointError(f"{path}: file ends inside tensor {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset).astype(DTYPE).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes after the last tensor")

    gate = GateKind(header["gate"])
    branches = []
    for h in header["kernel_sizes"]:
        branches.append(ConvBranch(h, arrays[f"conv{h}.kernels"], arrays[f"conv{h}.bias"], gate.gated))
    return GcnParams(
        gate,
        branches,
        arrays["dense.w"],
        arrays["dense.b"],
        arrays["embedding"],
        train_embeddings=header["train_embeddings"],
        meta=header["meta"],
    )
