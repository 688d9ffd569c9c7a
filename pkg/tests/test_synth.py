import numpy as np
import pytest

from hinattn.graph import label_matrix, load_graph, select_target
from hinattn.metapath import commuting_matrix, normalize_rows, parse_metapath
from hinattn.synth import PathPlant, SynthConfig, generate_planted_hin, write_dataset


def counts(graph, spec):
    return commuting_matrix(graph, parse_metapath(spec, graph.schema, "T")).toarray()


def test_perfect_plant_is_block_diagonal():
    g, labels, specs = generate_planted_hin(SynthConfig(n_target=40, paths=[PathPlant(10, 1.0, 0.0)]))
    A = counts(g, specs[0])
    cls = np.array([next(iter(labels[i])) for i in range(40)])
    assert np.all(A[cls[:, None] != cls[None, :]] == 0)
    assert np.all(A[cls[:, None] == cls[None, :]] == 5)


def _within_minus_cross(seed):
    g, labels, specs = generate_planted_hin(
        SynthConfig(n_target=60, paths=[PathPlant(20, 0.3, 0.3)], seed=seed))
    A = counts(g, specs[0]).astype(float)
    cls = np.arange(60) % 2
    same = cls[:, None] == cls[None, :]
    off = ~np.eye(60, dtype=bool)
    return A[same & off].mean() - A[~same].mean()


def test_noise_plant_has_no_block_structure():
    d = np.array([_within_minus_cross(s) for s in range(30)])
    se = d.std(ddof=1) / np.sqrt(len(d))
    assert abs(d.mean()) < 3 * se


def test_deterministic_and_valid():
    a = generate_planted_hin(SynthConfig(seed=7))[0]
    b = generate_planted_hin(SynthConfig(seed=7))[0]
    assert a.node_ids == b.node_ids and a.edges.tobytes() == b.edges.tobytes()
    a.validate()
    assert a.label_type == "T" and len(select_target(a, "T")) == 300
    assert generate_planted_hin(SynthConfig(seed=8))[0].edges.tobytes() != a.edges.tobytes()


@pytest.mark.parametrize("kw", [dict(n_target=0), dict(paths=[]),
                                dict(paths=[PathPlant(0, 0.5, 0.5)]),
                                dict(paths=[PathPlant(5, 1.5, 0.0)])])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


def test_nearest_centroid_recovers_classes():
    g, _, specs = generate_planted_hin(SynthConfig())
    X = normalize_rows(counts(g, specs[0])).toarray()
    y = label_matrix(g, select_target(g, "T")).argmax(axis=1)
    idx = np.random.default_rng(0).permutation(300)
    fit_on, score_on = idx[:150], idx[150:]
    cents = np.stack([X[fit_on][y[fit_on] == c].mean(axis=0) for c in (0, 1)])
    dist = ((X[score_on][:, None, :] - cents[None]) ** 2).sum(axis=2)
    assert (dist.argmin(axis=1) == y[score_on]).mean() >= 0.9


def test_write_dataset_round_trip(tmp_path):
    g, _, specs = generate_planted_hin(SynthConfig(n_target=30))
    files = write_dataset(g, specs, tmp_path)
    h = load_graph(files["nodes"], files["edges"], files["labels"])
    assert h.node_ids == g.node_ids and h.labels == g.labels
    assert files["metapaths"].read_text().split() == specs
