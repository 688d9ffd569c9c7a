"""Synthetic HINs whose class structure is visible only through meta paths.

Target nodes (type ``T``) get classes round-robin. Every planted path ``m``
has its own content type ``C<m>`` whose nodes are split round-robin into one
pool per class. A target links to each content node of its own class pool
with probability ``intra`` and to every other content node with ``inter``.
The meta path for plant ``m`` is ``T,C<m>,T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Schema, TypedGraph, write_graph

TARGET = "T"


@dataclass(frozen=True)
class PathPlant:
    content: int = 20
    intra: float = 0.8
    inter: float = 0.05

    @property
    def informative(self) -> bool:
        return self.intra > self.inter


@dataclass
class SynthConfig:
    n_target: int = 300
    n_classes: int = 2
    paths: list = field(default_factory=lambda: [PathPlant(20, 0.8, 0.05),
                                                 PathPlant(20, 0.3, 0.3)])
    seed: int = 0

    def __post_init__(self):
        if self.n_target < 1 or self.n_classes < 1:
            raise ValueError("need at least one target node and one class")
        if not self.paths:
            raise ValueError("need at least one planted path")
        for p in self.paths:
            if p.content < 1:
                raise ValueError("each planted path needs content nodes")
            if not (0 <= p.inter <= 1 and 0 <= p.intra <= 1):
                raise ValueError("probabilities must lie in [0, 1]")


def generate_planted_hin(config: SynthConfig):
    """Return ``(graph, labels, metapath_specs)``; ``labels`` maps node index to label set."""
    rng = np.random.default_rng(config.seed)
    n, C = config.n_target, config.n_classes
    classes = np.arange(n) % C
    node_ids = [f"t{i}" for i in range(n)]
    node_types = [TARGET] * n
    edges, edge_types, specs, triples = [], [], [], []
    for m, plant in enumerate(config.paths):
        ctype = f"C{m}"
        base = len(node_ids)
        node_ids += [f"c{m}_{j}" for j in range(plant.content)]
        node_types += [ctype] * plant.content
        pools = np.arange(plant.content) % C
        prob = np.where(classes[:, None] == pools[None, :], plant.intra, plant.inter)
        hit = rng.random((n, plant.content)) < prob
        etype = f"{TARGET}-{ctype}"
        for i, j in zip(*np.nonzero(hit)):
            edges.append((int(i), base + int(j)))
            edge_types.append(etype)
        triples.append((TARGET, etype, ctype))
        specs.append(f"{TARGET},{ctype},{TARGET}")
    schema = Schema.infer([TARGET] + [f"C{m}" for m in range(len(config.paths))], triples)
    labels = {i: frozenset([int(classes[i])]) for i in range(n)}
    graph = TypedGraph(node_ids, node_types, np.array(edges, dtype=np.int64).reshape(-1, 2),
                       edge_types, schema, labels, [str(c) for c in range(C)])
    return graph, labels, specs


def write_dataset(graph: TypedGraph, specs, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {k: out / f"{k}.tsv" for k in ("nodes", "edges", "labels")}
    write_graph(graph, files["nodes"], files["edges"], files["labels"])
    files["metapaths"] = out / "metapaths.txt"
    files["metapaths"].write_text("".join(s + "\n" for s in specs), encoding="utf-8")
    return files
