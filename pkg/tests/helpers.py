import numpy as np

from hinattn.graph import Schema, TypedGraph


def make_graph(nodes, edges, labels=None, label_names=None):
    """nodes: list of (id, type); edges: list of (src_id, dst_id, etype)."""
    ids = [n for n, _ in nodes]
    types = [t for _, t in nodes]
    pos = {n: i for i, n in enumerate(ids)}
    e = np.array([(pos[s], pos[d]) for s, d, _ in edges], dtype=np.int64).reshape(-1, 2)
    ets = [t for _, _, t in edges]
    schema = Schema.infer(list(dict.fromkeys(types)),
                          [(types[pos[s]], t, types[pos[d]]) for s, d, t in edges])
    lab = {pos[k]: frozenset(v) for k, v in (labels or {}).items()}
    names = label_names or sorted({str(l) for v in (labels or {}).values() for l in v})
    return TypedGraph(ids, types, e, ets, schema, lab, names)


def toy_two_authors():
    """a1-p1, a2-p1 plus isolated papers p2, p3."""
    return make_graph(
        [("a1", "A"), ("a2", "A"), ("p1", "P"), ("p2", "P"), ("p3", "P")],
        [("a1", "p1", "writes"), ("a2", "p1", "writes")])


def random_hin(rng, n_nodes=30, n_types=2, p_edge=0.15, allow_same_type=True):
    """Random typed graph; every node type exists and edge types name the type pair."""
    type_names = [chr(ord("A") + t) for t in range(n_types)]
    types = [type_names[t] for t in range(n_types)]
    types += [type_names[int(rng.integers(n_types))] for _ in range(n_nodes - n_types)]
    types = [types[i] for i in rng.permutation(n_nodes)]
    nodes = [(f"n{i}", t) for i, t in enumerate(types)]
    edges = []
    for i in range(n_nodes):
        for j in range(i, n_nodes):
            if i == j:
                continue
            if not allow_same_type and types[i] == types[j]:
                continue
            if rng.random() < p_edge:
                a, b = sorted((types[i], types[j]))
                edges.append((f"n{i}", f"n{j}", f"{a}{b}"))
    return make_graph(nodes, edges)


def random_metapath(rng, graph, length):
    """Random palindromic-or-not type walk over the schema starting and ending at one type,
    or None if none is found."""
    types = list(graph.schema.node_types)
    for _ in range(200):
        start = types[int(rng.integers(len(types)))]
        seq = [start]
        ok = True
        for step in range(length - 1):
            remaining = length - 1 - step
            nxt = [b for b in types if graph.schema.connects(seq[-1], b)]
            if remaining == 1:
                nxt = [b for b in nxt if b == start]
            if not nxt:
                ok = False
                break
            seq.append(nxt[int(rng.integers(len(nxt)))])
        if ok:
            return seq
    return None


def tiny_planted(n_target=10, seed=0, content=4):
    """Compiled 2-path planted HIN: (features, neighbor_sets, Y)."""
    from hinattn.graph import label_matrix
    from hinattn.metapath import compile_paths
    from hinattn.synth import PathPlant, SynthConfig, generate_planted_hin

    cfg = SynthConfig(n_target=n_target, seed=seed,
                      paths=[PathPlant(content, 0.8, 0.05), PathPlant(content, 0.3, 0.3)])
    g, _, specs = generate_planted_hin(cfg)
    targets, compiled = compile_paths(g, specs, "T")
    return ([c.features for c in compiled], [c.neighbors for c in compiled],
            label_matrix(g, targets))
