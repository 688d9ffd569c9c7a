"""Meta paths and their path-instance count matrices between target nodes."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import GraphFormatError, TargetSet, TypedGraph, select_target

INT64_MAX = np.iinfo(np.int64).max


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class MetaPath:
    types: tuple[str, ...]

    @property
    def name(self) -> str:
        if all(len(t) == 1 for t in self.types):
            return "".join(self.types)
        return ",".join(self.types)

    def __len__(self) -> int:
        return len(self.types)

    def is_palindrome(self) -> bool:
        return self.types == self.types[::-1]


def parse_metapath(spec: str, schema, target_type: str) -> MetaPath:
    """Parse ``"APA"`` or ``"A,P,A"`` into a validated :class:`MetaPath`.

    Single-letter form is used only when the spec has no commas.
    """
    spec = spec.strip()
    types = tuple(t.strip() for t in spec.split(",")) if "," in spec else tuple(spec)
    if len(types) < 2:
        raise GraphFormatError(f"meta path {spec!r} needs at least two types")
    for t in types:
        if t not in schema.node_types:
            raise GraphFormatError(f"meta path {spec!r}: unknown node type {t!r}")
    if types[0] != target_type or types[-1] != target_type:
        raise GraphFormatError(
            f"meta path {spec!r} must start and end with target type {target_type!r}")
    for a, b in zip(types, types[1:]):
        if not schema.connects(a, b):
            raise GraphFormatError(f"meta path {spec!r}: no schema edge between {a!r} and {b!r}")
    return MetaPath(types)


def biadjacency(graph: TypedGraph, src_type: str, dst_type: str) -> sp.csr_matrix:
    """Edge-multiplicity matrix from ``src_type`` nodes to ``dst_type`` nodes.

    Rows and columns follow node-file order within each type. All edge types
    between the two node types are merged.
    """
    src = graph.nodes_of_type(src_type)
    dst = graph.nodes_of_type(dst_type)
    pos_src = {int(v): i for i, v in enumerate(src)}
    pos_dst = {int(v): i for i, v in enumerate(dst)}
    rows, cols = [], []
    for s, d in graph.edges:
        s, d = int(s), int(d)
        if s in pos_src and d in pos_dst:
            rows.append(pos_src[s])
            cols.append(pos_dst[d])
        if s != d and d in pos_src and s in pos_dst:
            rows.append(pos_src[d])
            cols.append(pos_dst[s])
    data = np.ones(len(rows), dtype=np.int64)
    m = sp.coo_matrix((data, (rows, cols)), shape=(len(src), len(dst)), dtype=np.int64)
    return m.tocsr()


def _checked_product(left: sp.csr_matrix, right: sp.csr_matrix) -> sp.csr_matrix:
    # cheap bound first; exact float re-check only when the bound is loose
    row_sum = left.astype(np.float64).sum(axis=1).max() if left.nnz else 0.0
    rmax = right.max() if right.nnz else 0
    if float(row_sum) * float(rmax) >= INT64_MAX:
        approx = left.astype(np.float64) @ right.astype(np.float64)
        if approx.nnz and approx.max() >= float(INT64_MAX) / 2:
            raise OverflowError("path count exceeds 64-bit integer range")
    return (left @ right).tocsr()


def commuting_matrix(graph: TypedGraph, path: MetaPath) -> sp.csr_matrix:
    """Sparse (N_T, N_T) int64 matrix of path-instance counts, diagonal included."""
    mats = [biadjacency(graph, a, b) for a, b in zip(path.types, path.types[1:])]
    out = mats[0]
    for m in mats[1:]:
        out = _checked_product(out, m)
    out = out.astype(np.int64).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def enumerate_bruteforce(graph: TypedGraph, path: MetaPath, src: int, dst: int,
                         budget: int = 10**6, adjacency=None) -> int:
    """Count path instances from target ``src`` to target ``dst`` by exhaustive DFS.

    ``src`` and ``dst`` are dense target indices. Test oracle only; raises
    :class:`BudgetExceeded` past ``budget`` partial paths.
    """
    targets = graph.nodes_of_type(path.types[0])
    adj = adjacency if adjacency is not None else graph.adjacency_lists()
    types = graph.node_types
    start, goal = int(targets[src]), int(targets[dst])
    last = len(path.types) - 1
    count = 0
    expanded = 0
    stack = [(start, 0)]
    while stack:
        v, depth = stack.pop()
        expanded += 1
        if expanded > budget:
            raise BudgetExceeded(f"more than {budget} partial paths")
        if depth == last:
            if v == goal:
                count += 1
            continue
        want = path.types[depth + 1]
        for u in adj[v]:
            if types[u] == want:
                stack.append((u, depth + 1))
    return count


def bruteforce_matrix(graph: TypedGraph, path: MetaPath, budget: int = 10**6) -> np.ndarray:
    n = len(graph.nodes_of_type(path.types[0]))
    adj = graph.adjacency_lists()
    out = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            out[i, j] = enumerate_bruteforce(graph, path, i, j, budget, adjacency=adj)
    return out


def normalize_rows(counts) -> sp.csr_matrix:
    """L1-normalize every nonzero row; zero rows stay zero."""
    m = sp.csr_matrix(counts, dtype=np.float64)
    sums = np.asarray(abs(m).sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    out = sp.diags(scale) @ m
    return sp.csr_matrix(out)


def neighbor_sets(counts) -> list[np.ndarray]:
    """Per row: sorted column indices with a positive count, excluding the row itself."""
    m = sp.csr_matrix(counts)
    out = []
    for i in range(m.shape[0]):
        lo, hi = m.indptr[i], m.indptr[i + 1]
        cols = m.indices[lo:hi][m.data[lo:hi] > 0]
        out.append(np.sort(cols[cols != i]).astype(np.int64))
    return out


@dataclass
class CompiledPath:
    path: MetaPath
    counts: sp.csr_matrix
    features: sp.csr_matrix
    neighbors: list[np.ndarray]


def compile_path(graph: TypedGraph, path: MetaPath, cache_dir=None) -> CompiledPath:
    if cache_dir is not None:
        counts = cached_commuting_matrix(graph, path, cache_dir)
    else:
        counts = commuting_matrix(graph, path)
    return CompiledPath(path, counts, normalize_rows(counts), neighbor_sets(counts))


def compile_paths(graph: TypedGraph, specs, target_type: str, cache_dir=None):
    targets = select_target(graph, target_type)
    paths = [parse_metapath(s, graph.schema, target_type) for s in specs]
    if not paths:
        raise GraphFormatError("at least one meta path is required")
    # repeated meta paths are allowed; each gets its own parameters
    return targets, [compile_path(graph, p, cache_dir) for p in paths]


# Sidecar cache: one .npz per (graph fingerprint, path name) holding the CSR
# arrays of the count matrix plus both keys for verification.

def cache_file(cache_dir, graph: TypedGraph, path: MetaPath) -> Path:
    safe = path.name.replace(",", "-")
    return Path(cache_dir) / f"{graph.fingerprint()}__{safe}.npz"


def save_counts(file, counts: sp.csr_matrix, graph_hash: str, path_name: str) -> None:
    with open(file, "wb") as fh:
        np.savez(fh, data=counts.data, indices=counts.indices, indptr=counts.indptr,
                 shape=np.array(counts.shape, dtype=np.int64),
                 graph_hash=np.array(graph_hash), path_name=np.array(path_name))


def load_counts(file, graph_hash: str, path_name: str) -> sp.csr_matrix:
    with np.load(file, allow_pickle=False) as z:
        if str(z["graph_hash"]) != graph_hash or str(z["path_name"]) != path_name:
            raise ValueError(f"cache file {file} does not match graph/path")
        return sp.csr_matrix((z["data"], z["indices"], z["indptr"]),
                             shape=tuple(z["shape"]))


def cached_commuting_matrix(graph: TypedGraph, path: MetaPath, cache_dir) -> sp.csr_matrix:
    f = cache_file(cache_dir, graph, path)
    if f.exists():
        return load_counts(f, graph.fingerprint(), path.name)
    counts = commuting_matrix(graph, path)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    save_counts(f, counts, graph.fingerprint(), path.name)
    return counts
