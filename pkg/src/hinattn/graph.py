"""Typed heterogeneous graph model and TSV ingestion.

Three plain-text files describe a graph:

* nodes:  ``node_id<TAB>type_name``
* edges:  ``src_id<TAB>dst_id<TAB>edge_type``
* labels: ``node_id<TAB>label[,label...]``

Lines starting with ``#`` and blank lines are skipped in every file.
Edges are undirected: each stored edge is traversable in both orientations.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphFormatError(ValueError):
    """Raised for malformed or inconsistent graph data."""


@dataclass(frozen=True)
class Schema:
    node_types: tuple[str, ...]
    edge_types: tuple[str, ...]
    # (src_type, edge_type, dst_type); stored in both orientations
    triples: frozenset[tuple[str, str, str]]

    def connects(self, a: str, b: str) -> bool:
        return any(s == a and d == b for s, _, d in self.triples)

    @classmethod
    def infer(cls, node_types, edges) -> "Schema":
        """Smallest schema admitting ``edges``; ``edges`` is (src_type, etype, dst_type)."""
        triples = set()
        etypes = []
        for s, e, d in edges:
            triples.add((s, e, d))
            triples.add((d, e, s))
            if e not in etypes:
                etypes.append(e)
        return cls(tuple(node_types), tuple(etypes), frozenset(triples))


@dataclass(frozen=True)
class TargetSet:
    target_type: str
    # graph node index of each target, position = dense target index
    node_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.node_indices)

    @property
    def target_indices(self) -> np.ndarray:
        return np.arange(len(self.node_indices))


@dataclass
class TypedGraph:
    node_ids: list[str]
    node_types: list[str]
    # int array of shape (E, 2) and a parallel list of edge types
    edges: np.ndarray
    edge_types: list[str]
    schema: Schema
    labels: dict[int, frozenset[int]] = field(default_factory=dict)
    label_names: list[str] = field(default_factory=list)
    _index: dict[str, int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.validate()

    def validate(self) -> None:
        index = {}
        for i, nid in enumerate(self.node_ids):
            if nid in index:
                raise GraphFormatError(f"duplicate node id {nid!r}")
            index[nid] = i
        self._index = index
        if len(self.node_types) != len(self.node_ids):
            raise GraphFormatError("node_types and node_ids differ in length")
        for t in set(self.node_types):
            if t not in self.schema.node_types:
                raise GraphFormatError(f"node type {t!r} not in schema")
        n = len(self.node_ids)
        if len(self.edge_types) != len(self.edges):
            raise GraphFormatError("edge_types and edges differ in length")
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= n):
            raise GraphFormatError("edge endpoint out of range")
        for (s, d), e in zip(self.edges, self.edge_types):
            triple = (self.node_types[s], e, self.node_types[d])
            if triple not in self.schema.triples:
                raise GraphFormatError(f"edge triple {triple} not in schema")
        label_types = {self.node_types[i] for i in self.labels}
        if len(label_types) > 1:
            raise GraphFormatError(
                f"labeled nodes span several types: {sorted(label_types)}")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_labels(self) -> int:
        return len(self.label_names)

    @property
    def label_type(self) -> str | None:
        for i in self.labels:
            return self.node_types[i]
        return None

    def index_of(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise GraphFormatError(f"unknown node id {node_id!r}") from None

    def nodes_of_type(self, type_name: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.node_types) if t == type_name],
                        dtype=np.int64)

    def adjacency_lists(self) -> list[list[int]]:
        """Undirected adjacency in edge-file order; self-loops appear once."""
        adj = [[] for _ in range(self.n_nodes)]
        for s, d in self.edges:
            adj[s].append(int(d))
            if s != d:
                adj[d].append(int(s))
        return adj

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for nid, t in zip(self.node_ids, self.node_types):
            h.update(f"{nid}\t{t}\n".encode())
        h.update(b"--\n")
        for (s, d), e in zip(self.edges, self.edge_types):
            h.update(f"{s}\t{d}\t{e}\n".encode())
        return h.hexdigest()[:16]


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def load_graph(nodes_path, edges_path, labels_path=None, target_type=None) -> TypedGraph:
    """Read and validate a graph from the TSV file set.

    If ``target_type`` is given, labels on any other node type are rejected.
    Otherwise all labeled nodes must share a single type.
    """
    node_ids, node_types, index = [], [], {}
    for lineno, cols in _rows(nodes_path):
        if len(cols) != 2 or not cols[0] or not cols[1]:
            raise GraphFormatError(f"{nodes_path}:{lineno}: expected 'node_id<TAB>type'")
        nid, t = cols
        if nid in index:
            raise GraphFormatError(f"{nodes_path}:{lineno}: duplicate node id {nid!r}")
        index[nid] = len(node_ids)
        node_ids.append(nid)
        node_types.append(t)

    edges, edge_types, triples = [], [], []
    for lineno, cols in _rows(edges_path):
        if len(cols) != 3 or not all(cols):
            raise GraphFormatError(f"{edges_path}:{lineno}: expected 'src<TAB>dst<TAB>edge_type'")
        src, dst, et = cols
        for nid in (src, dst):
            if nid not in index:
                raise GraphFormatError(f"{edges_path}:{lineno}: unknown node id {nid!r}")
        s, d = index[src], index[dst]
        edges.append((s, d))
        edge_types.append(et)
        triples.append((node_types[s], et, node_types[d]))

    labels, label_names, label_index = {}, [], {}
    if labels_path is not None:
        for lineno, cols in _rows(labels_path):
            if len(cols) != 2 or not cols[0] or not cols[1]:
                raise GraphFormatError(f"{labels_path}:{lineno}: expected 'node_id<TAB>labels'")
            nid, raw = cols
            if nid not in index:
                raise GraphFormatError(f"{labels_path}:{lineno}: unknown node id {nid!r}")
            i = index[nid]
            if target_type is not None and node_types[i] != target_type:
                raise GraphFormatError(
                    f"{labels_path}:{lineno}: label on node {nid!r} of non-target type "
                    f"{node_types[i]!r}")
            if i in labels:
                raise GraphFormatError(f"{labels_path}:{lineno}: node {nid!r} labeled twice")
            ls = set()
            for name in raw.split(","):
                name = name.strip()
                if not name:
                    raise GraphFormatError(f"{labels_path}:{lineno}: empty label")
                if name not in label_index:
                    label_index[name] = len(label_names)
                    label_names.append(name)
                ls.add(label_index[name])
            labels[i] = frozenset(ls)

    seen_types = list(dict.fromkeys(node_types))
    schema = Schema.infer(seen_types, triples)
    return TypedGraph(node_ids, node_types, np.array(edges, dtype=np.int64).reshape(-1, 2),
                      edge_types, schema, labels, label_names)


def write_graph(graph: TypedGraph, nodes_path, edges_path, labels_path=None) -> None:
    """Write ``graph`` in the TSV formats read by :func:`load_graph`."""
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for nid, t in zip(graph.node_ids, graph.node_types):
            fh.write(f"{nid}\t{t}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for (s, d), e in zip(graph.edges, graph.edge_types):
            fh.write(f"{graph.node_ids[s]}\t{graph.node_ids[d]}\t{e}\n")
    if labels_path is not None:
        with open(labels_path, "w", encoding="utf-8") as fh:
            for i in sorted(graph.labels):
                names = ",".join(graph.label_names[l] for l in sorted(graph.labels[i]))
                fh.write(f"{graph.node_ids[i]}\t{names}\n")


def select_target(graph: TypedGraph, type_name: str) -> TargetSet:
    if type_name not in graph.schema.node_types:
        raise GraphFormatError(f"unknown node type {type_name!r}")
    idx = graph.nodes_of_type(type_name)
    if len(idx) == 0:
        raise GraphFormatError(f"no nodes of type {type_name!r}")
    return TargetSet(type_name, idx)


def label_matrix(graph: TypedGraph, targets: TargetSet) -> np.ndarray:
    """Binary (N_T, L) matrix of target labels; unlabeled rows are all zero."""
    Y = np.zeros((len(targets), graph.n_labels), dtype=np.float64)
    for t, i in enumerate(targets.node_indices):
        for l in graph.labels.get(int(i), ()):
            Y[t, l] = 1.0
    return Y


def check_labels_on_target(graph: TypedGraph, targets: TargetSet) -> None:
    lt = graph.label_type
    if lt is not None and lt != targets.target_type:
        raise GraphFormatError(
            f"labels are on type {lt!r} but target type is {targets.target_type!r}")
