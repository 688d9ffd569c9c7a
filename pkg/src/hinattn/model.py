"""Hierarchical attention over path instances and meta paths.

Row-vector convention throughout: a structural feature row ``a`` (length N)
is transformed as ``a @ W_f`` with ``W_f`` of shape (N, d).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diff as D
from .diff import Tensor

FUSIONS = ("attention", "avg", "max")
TASK_MODES = ("single", "multi")


@dataclass
class HyperParams:
    n_targets: int
    n_labels: int
    n_paths: int
    d: int = 128
    k: int = 64
    sample_size: int = 20
    task_mode: str = "single"
    fusion: str = "attention"
    mlp_depth: int = 1

    def __post_init__(self):
        for name in ("n_targets", "n_labels", "n_paths", "d", "k", "sample_size", "mlp_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.task_mode not in TASK_MODES:
            raise ValueError(f"task_mode must be one of {TASK_MODES}, got {self.task_mode!r}")


@dataclass
class ModelParams:
    """Named parameter arrays.

    Per meta path ``m``: ``W_f.m`` (N, d), extra MLP layers ``W_f.m.1``...
    (d, d) when depth > 1, and ``W_C.m`` (2d, d). Shared: ``W_p`` (d, k),
    ``b_p`` (k,), preference vectors ``P`` (N, k), classifier ``W_cls``
    (d, L) and ``b_cls`` (L,).
    """
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def shapes(hp: HyperParams) -> dict[str, tuple[int, ...]]:
        out = {}
        for m in range(hp.n_paths):
            out[f"W_f.{m}"] = (hp.n_targets, hp.d)
            for layer in range(1, hp.mlp_depth):
                out[f"W_f.{m}.{layer}"] = (hp.d, hp.d)
            out[f"W_C.{m}"] = (2 * hp.d, hp.d)
        out["W_p"] = (hp.d, hp.k)
        out["b_p"] = (hp.k,)
        out["P"] = (hp.n_targets, hp.k)
        out["W_cls"] = (hp.d, hp.n_labels)
        out["b_cls"] = (hp.n_labels,)
        return out

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def check(self, hp: HyperParams) -> None:
        want = self.shapes(hp)
        if list(want) != list(self.arrays):
            raise ValueError("parameter names do not match hyperparameters")
        for k, shape in want.items():
            if self.arrays[k].shape != shape:
                raise ValueError(f"{k}: shape {self.arrays[k].shape} != {shape}")
            if not np.all(np.isfinite(self.arrays[k])):
                raise ValueError(f"{k}: non-finite entries")

    def __getitem__(self, key):
        return self.arrays[key]


def _as_tensor(x):
    return x if isinstance(x, Tensor) else D.const(x)


def transform(features, w_f, extra=()) -> Tensor:
    """Map structural feature rows into the d-dimensional space."""
    if sp.issparse(features):
        rows, cols = features.shape
        # dense BLAS wins once rows are moderately filled
        if features.nnz > 0.05 * rows * cols:
            z = D.matmul(features.toarray(), w_f)
        else:
            z = D.spmm(features, w_f)
    else:
        z = D.matmul(_as_tensor(features), w_f)
    for w in extra:
        z = D.matmul(D.tanh(z), w)
    return z


def attend(z_self, z_nbrs, mask=None):
    """Instance attention on already-transformed features.

    ``z_self`` is (..., d), ``z_nbrs`` (..., K, d), ``mask`` (..., K) or None.
    Returns ``(alpha (..., K), h_agg (..., d))``.
    """
    z_self, z_nbrs = _as_tensor(z_self), _as_tensor(z_nbrs)
    lead, d = z_self.shape[:-1], z_self.shape[-1]
    if z_nbrs.shape[-1] != d:
        raise ValueError(f"neighbor dim {z_nbrs.shape[-1]} != {d}")
    K = z_nbrs.shape[-2]
    if K == 0:
        return D.const(np.zeros(lead + (0,))), D.tanh(np.zeros(lead + (d,)))
    u = D.reshape(D.l2_normalize(z_self), lead + (1, d))
    s = D.sum_(D.mul(u, D.l2_normalize(z_nbrs)), axis=-1)
    alpha = D.softmax(s, axis=-1, mask=mask)
    weighted = D.mul(D.reshape(alpha, lead + (K, 1)), z_nbrs)
    return alpha, D.tanh(D.sum_(weighted, axis=-2))


def instance_attention(a_self, a_neighbors, w_f, mask=None, extra=()):
    """Attention weights over neighbors and the aggregated neighbor embedding.

    ``a_self`` is one feature row (N,), ``a_neighbors`` is (K, N); batched
    leading dimensions are also accepted. An empty neighbor list gives an
    empty ``alpha`` and a zero aggregate.
    """
    a_neighbors = a_neighbors.toarray() if sp.issparse(a_neighbors) else a_neighbors
    a_self = a_self.toarray().ravel() if sp.issparse(a_self) else a_self
    w_f = _as_tensor(w_f)
    if np.shape(a_self)[-1] != w_f.shape[0]:
        raise ValueError(f"feature length {np.shape(a_self)[-1]} != W_f rows {w_f.shape[0]}")
    z_self = transform(a_self, w_f, extra)
    if np.shape(a_neighbors)[-2] == 0:
        return attend(z_self, np.zeros(np.shape(a_neighbors)[:-1] + (w_f.shape[1],)))
    return attend(z_self, transform(a_neighbors, w_f, extra), mask)


def combine(h_agg, z_self, w_c) -> Tensor:
    """Project ``[h_agg ; z_self]`` with ``w_c`` (2d, d)."""
    cat = D.concat([h_agg, z_self], axis=-1)
    w_c = _as_tensor(w_c)
    if cat.shape[-1] != w_c.shape[0]:
        raise ValueError(f"concatenation width {cat.shape[-1]} != W_C rows {w_c.shape[0]}")
    return D.matmul(cat, w_c)


def metapath_embedding(i: int, features, neighbors, w_f, w_c, extra=()):
    """Meta-path specific embedding of target ``i``; returns ``(h, alpha)``."""
    features = sp.csr_matrix(features)
    nbrs = np.asarray(neighbors, dtype=np.int64)
    a_self = features[i].toarray().ravel()
    a_nbrs = features[nbrs].toarray() if len(nbrs) else np.zeros((0, features.shape[1]))
    alpha, h_agg = instance_attention(a_self, a_nbrs, w_f, extra=extra)
    return combine(h_agg, transform(a_self, _as_tensor(w_f), extra), w_c), alpha


def metapath_attention(h_list, p, w_p, b_p, gamma_override=None):
    """Weights over meta paths and the fused embedding.

    ``h_list`` holds M tensors of shape (..., d); ``p`` is (..., k).
    Returns ``(gamma (..., M), h (..., d))``. With ``gamma_override`` the
    given weights replace the learned ones.
    """
    if len(h_list) == 0:
        raise ValueError("need at least one meta path embedding")
    h_list = [_as_tensor(h) for h in h_list]
    w_p = _as_tensor(w_p)
    if h_list[0].shape[-1] != w_p.shape[0]:
        raise ValueError(f"embedding dim {h_list[0].shape[-1]} != W_p rows {w_p.shape[0]}")
    hs = D.stack(h_list, axis=-2)                       # (..., M, d)
    if gamma_override is None:
        t = D.tanh(D.add(D.matmul(hs, w_p), b_p))      # (..., M, k)
        p = _as_tensor(p)
        pn = D.reshape(D.l2_normalize(p), p.shape[:-1] + (1, p.shape[-1]))
        scores = D.sum_(D.mul(pn, D.l2_normalize(t)), axis=-1)
        gamma = D.softmax(scores, axis=-1)
    else:
        gamma = D.const(np.broadcast_to(gamma_override, hs.shape[:-1]).copy())
    weights = D.reshape(gamma, gamma.shape + (1,))
    return gamma, D.sum_(D.mul(weights, hs), axis=-2)


def fuse_variants(h_list, mode: str) -> Tensor:
    if len(h_list) == 0:
        raise ValueError("cannot fuse an empty list")
    if mode == "avg":
        return D.mean(D.stack(h_list, axis=-2), axis=-2)
    if mode == "max":
        return D.maximum(h_list)
    raise ValueError(f"unknown fusion mode {mode!r}")


def classify(h, w_cls, b_cls, task_mode: str = "single") -> Tensor:
    w_cls = _as_tensor(w_cls)
    h = _as_tensor(h)
    if h.shape[-1] != w_cls.shape[0]:
        raise ValueError(f"embedding dim {h.shape[-1]} != W_cls rows {w_cls.shape[0]}")
    logits = D.add(D.matmul(h, w_cls), b_cls)
    if task_mode == "single":
        return D.softmax(logits, axis=-1)
    if task_mode == "multi":
        return D.sigmoid(logits)
    raise ValueError(f"unknown task mode {task_mode!r}")


def cross_entropy_loss(scores, labels, task_mode: str = "single") -> Tensor:
    """Summed cross-entropy; ``labels`` is a binary (S, L) matrix."""
    Y = np.asarray(labels, dtype=np.float64)
    scores = _as_tensor(scores)
    if Y.shape != scores.shape:
        raise ValueError(f"labels {Y.shape} and scores {scores.shape} differ in shape")
    empty = np.flatnonzero(Y.reshape(len(Y), -1).sum(axis=1) == 0) if Y.ndim > 1 else []
    if len(empty):
        raise ValueError(f"batch row {int(empty[0])} has no label")
    if task_mode == "single":
        return D.mul(D.sum_(D.mul(Y, D.log(scores))), -1.0)
    if task_mode == "multi":
        pos = D.mul(Y, D.log(scores))
        neg = D.mul(1.0 - Y, D.log(D.sub(1.0, scores)))
        return D.mul(D.sum_(D.add(pos, neg)), -1.0)
    raise ValueError(f"unknown task mode {task_mode!r}")


# --- batched forward -----------------------------------------------------------

def pad_neighbors(lists) -> tuple[np.ndarray, np.ndarray]:
    """Stack ragged index lists into (S, K) indices plus a validity mask."""
    K = max((len(x) for x in lists), default=0)
    idx = np.zeros((len(lists), K), dtype=np.int64)
    mask = np.zeros((len(lists), K), dtype=bool)
    for r, x in enumerate(lists):
        idx[r, :len(x)] = x
        mask[r, :len(x)] = True
    return idx, mask


@dataclass
class Forward:
    alphas: list        # per path: (S, K) Tensor
    masks: list         # per path: (S, K) bool
    neighbors: list     # per path: (S, K) int
    h_paths: list       # per path: (S, d) Tensor
    gamma: Tensor | None
    h: Tensor
    scores: Tensor


def forward(params, hp: HyperParams, features, nodes, neighbor_lists,
            gamma_override=None) -> Forward:
    """Run both attention layers and the classifier for a batch of targets.

    ``params`` maps names to arrays or leaf tensors. ``features`` is the
    per-path list of normalized adjacency matrices; ``neighbor_lists`` is,
    per path, one (possibly sampled) neighbor index list per batch node.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    S = len(nodes)
    alphas, masks, nbr_idx, h_paths = [], [], [], []
    for m in range(hp.n_paths):
        A = features[m]
        w_f = params[f"W_f.{m}"]
        extra = [params[f"W_f.{m}.{l}"] for l in range(1, hp.mlp_depth)]
        idx, mask = pad_neighbors(neighbor_lists[m])
        K = idx.shape[1]
        # transform each distinct row once; sampled neighborhoods overlap heavily
        uniq, inv = np.unique(np.concatenate([nodes, idx.ravel()]), return_inverse=True)
        z_u = transform(A[uniq], w_f, extra)
        z_self = D.gather_rows(z_u, inv[:S])
        if K:
            z_n = D.reshape(D.gather_rows(z_u, inv[S:]), (S, K, hp.d))
        else:
            z_n = np.zeros((S, 0, hp.d))
        alpha, h_agg = attend(z_self, z_n, mask)
        h_paths.append(combine(h_agg, z_self, params[f"W_C.{m}"]))
        alphas.append(alpha)
        masks.append(mask)
        nbr_idx.append(idx)
    gamma = None
    if hp.fusion == "attention" or gamma_override is not None:
        p = D.gather_rows(params["P"], nodes)
        gamma, h = metapath_attention(h_paths, p, params["W_p"], params["b_p"], gamma_override)
    else:
        h = fuse_variants(h_paths, hp.fusion)
    scores = classify(h, params["W_cls"], params["b_cls"], hp.task_mode)
    return Forward(alphas, masks, nbr_idx, h_paths, gamma, h, scores)
