"""Two-layer graph convolution branches with hand-written backward passes.

Both architectures share one layer form,

    H = sum_k  T_k @ X @ Theta_k  (+ bias)

where ``T`` is the list of propagation matrices: ``[A_hat]`` for a plain GCN
(renormalized adjacency) and ``[T_0(L~), ..., T_K(L~)]`` for a Chebyshev GCN.
Layer 1 is followed by ReLU and inverted dropout; layer 2 emits raw logits.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .fileutil import atomic_write_text
from .matrixcore import ShapeError, as_matrix
from .popgraph import normalize_adjacency, scaled_laplacian

ARCHS = ("gcn", "cheb")
PROB_FLOOR = 1e-12

CHECKPOINT_FORMAT = "popgnn-checkpoint"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    """Backward was called with a cache from before the last parameter update."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationOperator:
    mats: tuple[np.ndarray, ...]
    identity: tuple[bool, ...]

    def __len__(self):
        return len(self.mats)

    @property
    def n_nodes(self) -> int:
        return self.mats[0].shape[0]


def cheb_basis(l_tilde, k: int) -> list[np.ndarray]:
    """[T_0, ..., T_k] of a rescaled Laplacian via the three-term recurrence."""
    l_tilde = as_matrix(l_tilde, "L~")
    n = l_tilde.shape[0]
    if l_tilde.shape != (n, n):
        raise ShapeError(f"cheb_basis: L~ must be square, got {l_tilde.shape}")
    if k < 0:
        raise ValueError(f"Chebyshev order must be >= 0, got {k}")
    basis = [np.eye(n)]
    if k >= 1:
        basis.append(l_tilde.copy())
    for _ in range(2, k + 1):
        basis.append(2.0 * (l_tilde @ basis[-1]) - basis[-2])
    return basis


def gcn_propagation(a) -> PropagationOperator:
    return PropagationOperator((normalize_adjacency(a, "renorm_self_loops"),), (False,))


def cheb_propagation(a, k: int, lambda_max: str | float = "power") -> PropagationOperator:
    basis = cheb_basis(scaled_laplacian(a, lambda_max), k)
    return PropagationOperator(tuple(basis), (True,) + (False,) * k)


def propagation_for(arch: str, a, k_order: int = 3) -> PropagationOperator:
    if arch == "gcn":
        return gcn_propagation(a)
    if arch == "cheb":
        return cheb_propagation(a, k_order)
    raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHS}")


@dataclass
class Layer:
    weights: list[np.ndarray]
    bias: np.ndarray | None = None


@dataclass
class BranchModel:
    arch: str
    k_order: int
    hidden: int
    layers: list[Layer]
    dropout_rate: float = 0.5
    version: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.hidden < 1:
            raise ValueError("hidden size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if len(self.layers) != 2:
            raise ValueError("a branch has exactly two layers")
        n_terms = 1 if self.arch == "gcn" else self.k_order + 1
        for layer in self.layers:
            if len(layer.weights) != n_terms:
                raise ValueError(f"{self.arch} layer needs {n_terms} weight blocks, got {len(layer.weights)}")

    @property
    def n_classes(self) -> int:
        return self.layers[1].weights[0].shape[1]

    def parameters(self) -> list[tuple[str, np.ndarray, bool]]:
        """(name, array, is_weight_matrix) in a fixed order shared with :func:`backward`."""
        out = []
        for li, layer in enumerate(self.layers):
            for k, w in enumerate(layer.weights):
                out.append((f"layer{li}.theta{k}", w, True))
            if layer.bias is not None:
                out.append((f"layer{li}.bias", layer.bias, False))
        return out

    def touch(self) -> None:
        """Mark parameters as updated so older forward caches are rejected."""
        self.version += 1


def init_branch(
    arch: str,
    n_features: int,
    hidden: int,
    n_classes: int,
    rng: np.random.Generator,
    k_order: int = 3,
    dropout_rate: float = 0.5,
    use_bias: bool = True,
) -> BranchModel:
    """Glorot-uniform weight blocks, zero biases."""
    n_terms = 1 if arch == "gcn" else k_order + 1
    layers = []
    for fan_in, fan_out in ((n_features, hidden), (hidden, n_classes)):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = [rng.uniform(-limit, limit, size=(fan_in, fan_out)) for _ in range(n_terms)]
        layers.append(Layer(weights, np.zeros(fan_out) if use_bias else None))
    return BranchModel(arch, k_order, hidden, layers, dropout_rate)


@dataclass
class DualBranchModel:
    """Independent branches (one per modality) whose softmax outputs are averaged.

    A single-branch instance is used for the single-modality baselines.
    """

    branches: list[BranchModel]
    seed: int = 0

    def __post_init__(self):
        if not self.branches:
            raise ValueError("model needs at least one branch")
        classes = {b.n_classes for b in self.branches}
        if len(classes) != 1:
            raise ValueError(f"branches disagree on class count: {sorted(classes)}")

    @property
    def branch0(self) -> BranchModel:
        return self.branches[0]

    @property
    def branch1(self) -> BranchModel:
        return self.branches[1]


@dataclass
class ForwardCache:
    branch: BranchModel
    version: int
    prop: PropagationOperator
    x: np.ndarray
    pre1: np.ndarray
    mask: np.ndarray | None
    h1: np.ndarray
    logits: np.ndarray = field(repr=False)


def _propagate(prop: PropagationOperator, x: np.ndarray, weights: list[np.ndarray], bias) -> np.ndarray:
    out = None
    for t, is_eye, w in zip(prop.mats, prop.identity, weights):
        xw = x @ w
        term = xw if is_eye else t @ xw
        out = term if out is None else out + term
    if bias is not None:
        out = out + bias
    return out


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(branch: BranchModel, prop: PropagationOperator, x, dropout=None) -> tuple[np.ndarray, ForwardCache]:
    """Logits of one branch.

    ``dropout`` is None (evaluation), a ``numpy.random.Generator`` to draw a
    fresh mask from, or an explicit multiplier array.
    """
    x = as_matrix(x, "node features")
    if x.shape[0] != prop.n_nodes:
        raise ShapeError(f"forward: {x.shape[0]} feature rows for a {prop.n_nodes}-node graph")
    l0, l1 = branch.layers
    if x.shape[1] != l0.weights[0].shape[0]:
        raise ShapeError(f"forward: features have {x.shape[1]} columns, layer expects {l0.weights[0].shape[0]}")
    if len(prop) != len(l0.weights):
        raise ShapeError(f"forward: {len(prop)} propagation matrices for {len(l0.weights)} weight blocks")

    pre1 = _propagate(prop, x, l0.weights, l0.bias)
    h1 = np.maximum(pre1, 0.0)
    mask = None
    if isinstance(dropout, np.random.Generator):
        if branch.dropout_rate > 0:
            mask = dropout_mask(h1.shape, branch.dropout_rate, dropout)
    elif dropout is not None:
        mask = np.asarray(dropout, dtype=np.float64)
        if mask.shape != h1.shape:
            raise ShapeError(f"dropout mask {mask.shape} does not match hidden {h1.shape}")
    if mask is not None:
        h1 = h1 * mask
    logits = _propagate(prop, h1, l1.weights, l1.bias)
    return logits, ForwardCache(branch, branch.version, prop, x, pre1, mask, h1, logits)


def backward(cache: ForwardCache, grad_logits) -> list[np.ndarray]:
    """Gradients for every entry of ``cache.branch.parameters()``, same order."""
    branch = cache.branch
    if cache.version != branch.version:
        raise StaleCacheError(
            f"forward cache is from parameter version {cache.version}, branch is at {branch.version}"
        )
    dz = as_matrix(grad_logits, "grad_logits")
    if dz.shape != cache.logits.shape:
        raise ShapeError(f"backward: gradient {dz.shape} vs logits {cache.logits.shape}")
    prop = cache.prop
    l0, l1 = branch.layers

    # T_k are symmetric for every operator built here, but keep the transpose general
    back = [dz if eye else t.T @ dz for t, eye in zip(prop.mats, prop.identity)]
    g_w2 = [cache.h1.T @ b for b in back]
    g_b2 = dz.sum(axis=0) if l1.bias is not None else None
    dh1 = None
    for b, w in zip(back, l1.weights):
        term = b @ w.T
        dh1 = term if dh1 is None else dh1 + term
    if cache.mask is not None:
        dh1 = dh1 * cache.mask
    dpre1 = dh1 * (cache.pre1 > 0)

    back1 = [dpre1 if eye else t.T @ dpre1 for t, eye in zip(prop.mats, prop.identity)]
    g_w1 = [cache.x.T @ b for b in back1]
    g_b1 = dpre1.sum(axis=0) if l0.bias is not None else None

    grads = list(g_w1)
    if g_b1 is not None:
        grads.append(g_b1)
    grads.extend(g_w2)
    if g_b2 is not None:
        grads.append(g_b2)
    return grads


def softmax_rows(logits) -> np.ndarray:
    z = as_matrix(logits, "logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def late_fuse(*probs) -> np.ndarray:
    """Average of per-branch class probabilities."""
    if not probs:
        raise ValueError("late_fuse needs at least one probability matrix")
    first = as_matrix(probs[0], "probs")
    for p in probs[1:]:
        if np.shape(p) != first.shape:
            raise ShapeError(f"late_fuse: shape mismatch {first.shape} vs {np.shape(p)}")
    if len(probs) == 1:
        return first.copy()
    if len(probs) == 2:
        return 0.5 * (first + as_matrix(probs[1]))
    return sum(as_matrix(p) for p in probs) / len(probs)


def _masked_rows(labels, mask, n: int) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if labels.shape != (n,) or mask.shape != (n,):
        raise ShapeError(f"labels {labels.shape} / mask {mask.shape} vs {n} nodes")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("cross entropy: mask selects no nodes")
    y = labels[rows].astype(np.int64)
    if np.any(y < 0):
        raise ValueError("cross entropy: masked node without a label")
    return rows, y


def masked_cross_entropy(probs, labels, mask) -> float:
    """Mean of -log p[label] over masked nodes, probabilities floored at 1e-12."""
    p = as_matrix(probs, "probs")
    rows, y = _masked_rows(labels, mask, p.shape[0])
    picked = np.maximum(p[rows, y], PROB_FLOOR)
    return float(-np.log(picked).mean())


def cross_entropy_grad(probs, labels, mask) -> np.ndarray:
    """d(masked CE of softmax(logits)) / d logits."""
    p = as_matrix(probs, "probs")
    rows, y = _masked_rows(labels, mask, p.shape[0])
    g = np.zeros_like(p)
    g[rows] = p[rows]
    g[rows, y] -= 1.0
    return g / rows.size


def fused_cross_entropy_grads(branch_probs: list[np.ndarray], labels, mask) -> list[np.ndarray]:
    """Per-branch logit gradients of masked CE applied to the late-fused probabilities."""
    fused = late_fuse(*branch_probs)
    rows, y = _masked_rows(labels, mask, fused.shape[0])
    scale = 1.0 / (len(branch_probs) * rows.size)
    grads = []
    for p in branch_probs:
        dp = np.zeros_like(p)
        dp[rows, y] = -scale / np.maximum(fused[rows, y], PROB_FLOOR)
        dot = (dp * p).sum(axis=1, keepdims=True)
        grads.append(p * (dp - dot))
    return grads


def predict_proba(model: DualBranchModel, props, xs) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-branch softmax outputs (dropout off) and their late fusion."""
    branch_probs = [softmax_rows(forward(b, p, x)[0]) for b, p, x in zip(model.branches, props, xs)]
    return branch_probs, late_fuse(*branch_probs)


# -- checkpoints --------------------------------------------------------------

def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.ravel(order="C")]}


def _decode_array(d: dict) -> np.ndarray:
    shape = tuple(d["shape"])
    data = np.array([float.fromhex(v) for v in d["data"]], dtype=np.float64)
    if data.size != int(np.prod(shape)):
        raise CheckpointError(f"array payload has {data.size} values for shape {shape}")
    return data.reshape(shape)


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_payload(model: DualBranchModel) -> dict:
    branches = []
    for b in model.branches:
        branches.append({
            "arch": b.arch,
            "k_order": b.k_order,
            "hidden": b.hidden,
            "dropout": b.dropout_rate,
            "layers": [
                {
                    "weights": [_encode_array(w) for w in layer.weights],
                    "bias": None if layer.bias is None else _encode_array(layer.bias),
                }
                for layer in b.layers
            ],
        })
    return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "seed": model.seed, "branches": branches}


def dumps_checkpoint(model: DualBranchModel) -> str:
    payload = checkpoint_payload(model)
    doc = dict(payload, sha256=hashlib.sha256(_canonical(payload)).hexdigest())
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def loads_checkpoint(text: str) -> DualBranchModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    digest = doc.pop("sha256", None)
    if digest != hashlib.sha256(_canonical(doc)).hexdigest():
        raise CheckpointError("checkpoint checksum mismatch")
    branches = []
    for b in doc["branches"]:
        layers = [
            Layer(
                [_decode_array(w) for w in layer["weights"]],
                None if layer["bias"] is None else _decode_array(layer["bias"]),
            )
            for layer in b["layers"]
        ]
        branches.append(BranchModel(b["arch"], b["k_order"], b["hidden"], layers, b["dropout"]))
    return DualBranchModel(branches, seed=doc["seed"])


def save_checkpoint(model: DualBranchModel, path) -> None:
    atomic_write_text(path, dumps_checkpoint(model))


def load_checkpoint(path) -> DualBranchModel:
    with open(path, encoding="utf-8") as fh:
        return loads_checkpoint(fh.read())
