"""Semi-supervised minibatch training with Adam and validation early stopping."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import diff as D
from .evaluation import micro_macro_f1
from .graph import GraphFormatError, TypedGraph, check_labels_on_target, label_matrix
from .metapath import compile_paths
from .model import FUSIONS, Forward, HyperParams, ModelParams, cross_entropy_loss, forward

log = logging.getLogger(__name__)

# named random sub-streams derived from the single config seed
STREAMS = {"init": 0, "shuffle": 1, "sampling": 2, "eval": 3, "split": 4}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name]])


# config file key -> TrainConfig field
CONFIG_KEYS = {
    "learning_rate": "learning_rate", "batch_size": "batch_size", "dim": "d",
    "pref_dim": "k", "sample_size": "sample_size", "max_epochs": "max_epochs",
    "patience": "patience", "seed": "seed", "fusion": "fusion",
    "task_mode": "task_mode", "train_frac": "train_frac", "val_frac": "val_frac",
}


@dataclass
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 512
    d: int = 128
    k: int = 64
    sample_size: int = 20
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    fusion: str = "attention"
    task_mode: str = "auto"          # auto | single | multi
    train_frac: float = 0.2
    val_frac: float = 0.1
    clip_norm: float | None = 5.0
    mlp_depth: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for name in ("batch_size", "d", "k", "sample_size", "max_epochs", "patience", "mlp_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        if self.task_mode not in ("auto", "single", "multi"):
            raise ValueError("task_mode must be auto, single or multi")
        if not (0 < self.train_frac < 1 and 0 < self.val_frac < 1):
            raise ValueError("train_frac and val_frac must lie in (0, 1)")
        if self.train_frac + self.val_frac >= 1:
            raise ValueError("train_frac + val_frac must be < 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")

    @classmethod
    def from_mapping(cls, values: dict, base: "TrainConfig | None" = None) -> "TrainConfig":
        kw = asdict(base) if base is not None else {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key not in CONFIG_KEYS:
                raise ValueError(f"unknown config key {key!r}")
            name = CONFIG_KEYS[key]
            kind = types[name]
            try:
                if kind == "int":
                    kw[name] = int(raw)
                elif kind == "float":
                    kw[name] = float(raw)
                else:
                    kw[name] = str(raw)
            except ValueError:
                raise ValueError(f"bad value for {key}: {raw!r}") from None
        return cls(**kw)

    def to_file_mapping(self) -> dict:
        return {key: getattr(self, name) for key, name in CONFIG_KEYS.items()}


def read_config_file(path) -> dict:
    """Parse ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key, value = (s.strip() for s in line.split(sep, 1))
                    break
            else:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value
    return out


def xavier_uniform(rng, shape) -> np.ndarray:
    fan_in, fan_out = (1, shape[0]) if len(shape) == 1 else shape[:2]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(hp: HyperParams, seed: int) -> ModelParams:
    """Xavier-uniform weights, zero biases, Xavier rows (fan 1, k) for ``P``."""
    rng = rng_stream(seed, "init")
    arrays = {}
    for name, shape in ModelParams.shapes(hp).items():
        if name.startswith("b_"):
            arrays[name] = np.zeros(shape)
        elif name == "P":
            bound = np.sqrt(6.0 / (1 + hp.k))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            arrays[name] = xavier_uniform(rng, shape)
    return ModelParams(arrays)


def sample_neighbors(neighbors, sample_size: int, rng) -> np.ndarray:
    """All neighbors if there are at most ``sample_size``, else a uniform
    sample without replacement (returned sorted)."""
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    neighbors = np.asarray(neighbors, dtype=np.int64)
    if len(neighbors) <= sample_size:
        return neighbors.copy()
    pick = rng.choice(len(neighbors), size=sample_size, replace=False)
    return np.sort(neighbors[pick])


def sample_batch(neighbor_sets, nodes, sample_size, rng):
    return [[sample_neighbors(nbrs[i], sample_size, rng) for i in nodes] for nbrs in neighbor_sets]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """Bias-corrected Adam update of ``params`` in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def clip_global_norm(grads: dict, max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def batch_loss(params, hp: HyperParams, features, neighbor_lists, nodes, Y):
    """Forward pass and summed loss for ``nodes``; ``params`` are arrays or tensors."""
    fw = forward(params, hp, features, nodes, neighbor_lists)
    return cross_entropy_loss(fw.scores, Y[nodes], hp.task_mode), fw


def train_step(params: ModelParams, hp: HyperParams, features, neighbor_lists, nodes, Y,
               state: AdamState, lr: float, clip_norm=5.0) -> float:
    leaves = {k: D.leaf(v, name=k) for k, v in params.arrays.items()}
    loss, _ = batch_loss(leaves, hp, features, neighbor_lists, nodes, Y)
    value = float(loss.value)
    if not np.isfinite(value):
        raise D.NumericalError(f"non-finite loss {value}")
    names = list(leaves)
    grads = dict(zip(names, D.backward(loss, [leaves[k] for k in names])))
    if clip_norm is not None:
        clip_global_norm(grads, clip_norm)
    adam_step(params.arrays, grads, state, lr)
    return value


@dataclass
class Inference:
    embeddings: np.ndarray       # (n, d)
    gamma: np.ndarray            # (n, M)
    path_embeddings: np.ndarray  # (M, n, d)
    scores: np.ndarray           # (n, L)


def infer(params: ModelParams, hp: HyperParams, features, neighbor_sets, nodes, seed: int,
          batch_size: int = 512) -> Inference:
    """Deterministic evaluation pass; neighbors are sampled from the ``eval`` stream."""
    rng = rng_stream(seed, "eval")
    nodes = np.asarray(nodes, dtype=np.int64)
    H, G, HP, SC = [], [], [], []
    for lo in range(0, len(nodes), batch_size):
        chunk = nodes[lo:lo + batch_size]
        fw = forward(params.arrays, hp, features, chunk,
                     sample_batch(neighbor_sets, chunk, hp.sample_size, rng))
        H.append(fw.h.value)
        G.append(fw.gamma.value if fw.gamma is not None
                 else np.full((len(chunk), hp.n_paths), 1.0 / hp.n_paths))
        HP.append(np.stack([h.value for h in fw.h_paths]))
        SC.append(fw.scores.value)
    if not H:
        return Inference(np.zeros((0, hp.d)), np.zeros((0, hp.n_paths)),
                         np.zeros((hp.n_paths, 0, hp.d)), np.zeros((0, hp.n_labels)))
    return Inference(np.concatenate(H), np.concatenate(G), np.concatenate(HP, axis=1),
                     np.concatenate(SC))


def stratified_split(Y: np.ndarray, train_frac: float, val_frac: float, rng):
    """Per-class split of labeled rows. Multi-label rows are stratified by their
    lowest label index. Every class keeps at least one training node."""
    labeled = np.flatnonzero(Y.sum(axis=1) > 0)
    key = np.argmax(Y[labeled] > 0, axis=1)
    train, val, test = [], [], []
    for c in np.unique(key):
        members = labeled[key == c]
        members = members[rng.permutation(len(members))]
        n = len(members)
        n_train = max(1, int(round(train_frac * n)))
        n_val = min(int(round(val_frac * n)), n - n_train)
        train.extend(members[:n_train])
        val.extend(members[n_train:n_train + n_val])
        test.extend(members[n_train + n_val:])
    return {k: np.sort(np.array(v, dtype=np.int64)) for k, v in
            (("train", train), ("val", val), ("test", test))}


def resolve_task_mode(Y: np.ndarray, requested: str) -> str:
    if requested != "auto":
        return requested
    counts = Y.sum(axis=1)
    return "single" if np.all(counts[counts > 0] == 1) else "multi"


@dataclass
class TrainedModel:
    params: ModelParams
    hyper: HyperParams
    embeddings: np.ndarray
    gamma: np.ndarray
    path_embeddings: np.ndarray
    path_names: list
    target_ids: list
    label_names: list
    Y: np.ndarray
    split: dict
    config: TrainConfig
    log: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def trained(self) -> bool:
        return len(self.log) > 0


def _evaluate_split(params, hp, features, neighbor_sets, Y, nodes, seed):
    if len(nodes) == 0:
        return None, None
    inf = infer(params, hp, features, neighbor_sets, nodes, seed)
    loss = float(cross_entropy_loss(inf.scores, Y[nodes], hp.task_mode).value)
    rep = micro_macro_f1(inf.scores, Y[nodes], hp.task_mode)
    return rep.micro_f1, loss


def fit(features, neighbor_sets, Y: np.ndarray, config: TrainConfig, split=None,
        path_names=None, target_ids=None, label_names=None) -> TrainedModel:
    """Train on precompiled per-path features and neighbor sets.

    ``Y`` is the binary (N_T, L) label matrix; unlabeled rows are all zero.
    """
    Y = np.asarray(Y, dtype=np.float64)
    n, L = Y.shape
    M = len(features)
    if M < 1:
        raise GraphFormatError("at least one meta path is required")
    if not np.any(Y.sum(axis=1) > 0):
        raise GraphFormatError("no labeled target nodes")
    task_mode = resolve_task_mode(Y, config.task_mode)
    if split is None:
        split = stratified_split(Y, config.train_frac, config.val_frac,
                                 rng_stream(config.seed, "split"))
    train_nodes = np.asarray(split["train"], dtype=np.int64)
    if len(train_nodes) == 0:
        raise GraphFormatError("training split is empty")
    hp = HyperParams(n_targets=n, n_labels=L, n_paths=M, d=config.d, k=config.k,
                     sample_size=config.sample_size, task_mode=task_mode,
                     fusion=config.fusion, mlp_depth=config.mlp_depth)
    params = init_params(hp, config.seed)
    state = AdamState()
    shuffle_rng = rng_stream(config.seed, "shuffle")
    sample_rng = rng_stream(config.seed, "sampling")

    history = []
    best = (-1.0, np.inf)
    best_params, best_epoch, stale = params.copy(), 0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = train_nodes[shuffle_rng.permutation(len(train_nodes))]
        total = 0.0
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            batch = order[lo:lo + config.batch_size]
            nbrs = sample_batch(neighbor_sets, batch, hp.sample_size, sample_rng)
            try:
                total += train_step(params, hp, features, nbrs, batch, Y, state,
                                    config.learning_rate, config.clip_norm)
            except D.NumericalError as exc:
                raise D.NumericalError(f"epoch {epoch}, batch {b}: {exc}") from None
        val_f1, val_loss = _evaluate_split(params, hp, features, neighbor_sets, Y,
                                           split["val"], config.seed)
        entry = {"epoch": epoch, "train_loss": total / len(train_nodes),
                 "val_micro_f1": val_f1, "val_loss": val_loss}
        history.append(entry)
        log.debug("epoch %d loss %.6f val_f1 %s", epoch, entry["train_loss"], val_f1)
        if val_f1 is None:
            best_params, best_epoch = params.copy(), epoch
            continue
        # ties on F1 are broken by validation loss
        if val_f1 > best[0] or (val_f1 == best[0] and val_loss < best[1]):
            best = (val_f1, val_loss)
            best_params, best_epoch, stale = params.copy(), epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    all_nodes = np.arange(n)
    inf = infer(best_params, hp, features, neighbor_sets, all_nodes, config.seed)
    return TrainedModel(
        params=best_params, hyper=hp, embeddings=inf.embeddings, gamma=inf.gamma,
        path_embeddings=inf.path_embeddings,
        path_names=list(path_names) if path_names else [f"path{m}" for m in range(M)],
        target_ids=list(target_ids) if target_ids else [str(i) for i in range(n)],
        label_names=list(label_names) if label_names else [str(l) for l in range(L)],
        Y=Y, split={k: np.asarray(v, dtype=np.int64) for k, v in split.items()},
        config=config, log=history, best_epoch=best_epoch)


def train(graph: TypedGraph, metapaths, config: TrainConfig, target_type: str | None = None,
          cache_dir=None) -> TrainedModel:
    """Compile ``metapaths`` on ``graph`` and train on its labels."""
    target_type = target_type or graph.label_type
    if target_type is None:
        raise GraphFormatError("no labeled nodes and no target type given")
    targets, compiled = compile_paths(graph, metapaths, target_type, cache_dir)
    check_labels_on_target(graph, targets)
    Y = label_matrix(graph, targets)
    return fit([c.features for c in compiled], [c.neighbors for c in compiled], Y, config,
               path_names=[c.path.name for c in compiled],
               target_ids=[graph.node_ids[i] for i in targets.node_indices],
               label_names=graph.label_names)
