import numpy as np
import pytest

from hinattn.evaluation import (
    attention_report, box_stats, export_embeddings, micro_macro_f1, read_embeddings,
)
from hinattn.train import TrainConfig, fit
from helpers import tiny_planted


def confusion_f1(pred, truth):
    """Per-class and pooled F1 by explicit loops; indicator matrices in."""
    n, L = truth.shape
    per, TP, FP, FN = [], 0, 0, 0
    for c in range(L):
        tp = fp = fn = 0
        for i in range(n):
            if pred[i, c] and truth[i, c]:
                tp += 1
            elif pred[i, c]:
                fp += 1
            elif truth[i, c]:
                fn += 1
        per.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)
        TP, FP, FN = TP + tp, FP + fp, FN + fn
    micro = 2 * TP / (2 * TP + FP + FN) if TP + FP + FN else 0.0
    return micro, sum(per) / L


def test_perfect_predictions():
    y = np.array([0, 1, 2, 1])
    r = micro_macro_f1(y, y, n_labels=3)
    assert r.micro_f1 == r.macro_f1 == 1.0


def test_two_class_example():
    r = micro_macro_f1(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]), n_labels=2)
    assert r.micro_f1 == 0.75
    assert abs(r.macro_f1 - (2 / 3 + 0.8) / 2) < 1e-15
    assert abs(r.macro_f1 - 0.7333) < 1e-4


def test_all_one_class_on_balanced_data():
    truth = np.arange(8) % 4
    r = micro_macro_f1(np.zeros(8, dtype=int), truth, n_labels=4)
    assert r.micro_f1 == 0.25
    assert r.f1[1:] == [0.0, 0.0, 0.0]


def test_argmax_tie_goes_to_lowest_index():
    r = micro_macro_f1(np.array([[0.5, 0.5]]), np.array([[1, 0]]))
    assert r.micro_f1 == 1.0


def test_multilabel_threshold():
    scores = np.array([[0.5, 0.49, 0.9]])
    truth = np.array([[1, 0, 1]])
    assert micro_macro_f1(scores, truth, "multi").micro_f1 == 1.0
    assert micro_macro_f1(scores, truth, "multi", threshold=0.6).micro_f1 == pytest.approx(2 / 3)


def test_empty_and_misaligned():
    with pytest.raises(ValueError):
        micro_macro_f1(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        micro_macro_f1(np.eye(3), np.eye(2))


@pytest.mark.parametrize("mode", ["single", "multi"])
def test_matches_bruteforce(mode):
    rng = np.random.default_rng(0 if mode == "single" else 1)
    for _ in range(200):
        n, L = int(rng.integers(1, 15)), int(rng.integers(1, 6))
        if mode == "single":
            p, t = rng.integers(L, size=n), rng.integers(L, size=n)
            P, T = np.eye(L, dtype=bool)[p], np.eye(L, dtype=bool)[t]
            r = micro_macro_f1(p, t, n_labels=L)
        else:
            P, T = rng.random((n, L)) < 0.4, rng.random((n, L)) < 0.4
            r = micro_macro_f1(P.astype(float), T.astype(float), "multi")
        assert (r.micro_f1, r.macro_f1) == confusion_f1(P, T)


def test_box_stats():
    s = box_stats([1.0, 2.0, 3.0, 4.0, 5.0])
    assert (s["min"], s["q1"], s["median"], s["q3"], s["max"], s["mean"]) == (1, 2, 3, 4, 5, 3)


def _cfg(**kw):
    base = dict(d=8, k=4, max_epochs=60, patience=1000, learning_rate=0.01)
    base.update(kw)
    return TrainConfig(**base)


def test_single_path_gamma_exactly_one():
    feats, nbrs, Y = tiny_planted(n_target=40)
    m = fit(feats[:1], nbrs[:1], Y, _cfg(max_epochs=5))
    rep = attention_report(m, steps=20)
    assert all(v == 1.0 for k, v in rep.gamma_stats[0].items())
    assert rep.rank_correlation is None


def test_report_recomputes_from_gamma_and_duplicates_match():
    feats, nbrs, Y = tiny_planted(n_target=100, seed=1)
    for seed in range(4):
        m = fit([feats[0], feats[0]], [nbrs[0], nbrs[0]], Y, _cfg(d=32, k=16, seed=seed))
        rep = attention_report(m, steps=50)
        for j, st in enumerate(rep.gamma_stats):
            assert st == box_stats(m.gamma[:, j])
        assert abs(rep.gamma_stats[0]["mean"] - rep.gamma_stats[1]["mean"]) < 0.1
    q = rep.gamma_stats[0]
    assert q["min"] <= q["q1"] <= q["median"] <= q["q3"] <= q["max"]
    assert len(rep.as_table()) == 3


def test_untrained_model_rejected():
    feats, nbrs, Y = tiny_planted(n_target=20)
    m = fit(feats, nbrs, Y, _cfg(max_epochs=1))
    m.log = []
    with pytest.raises(ValueError, match="trained"):
        attention_report(m)


def test_export_round_trip(tmp_path):
    feats, nbrs, Y = tiny_planted(n_target=3, content=2)
    Y[:, 0] = 1
    Y[:, 1] = 0
    m = fit(feats, nbrs, Y, _cfg(d=2, max_epochs=2, train_frac=0.4, val_frac=0.3))
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    export_embeddings(m, a)
    export_embeddings(m, b)
    lines = a.read_text().splitlines()
    assert len(lines) == 3 and all(len(l.split("\t")) == 3 for l in lines)
    assert a.read_bytes() == b.read_bytes()
    ids, X = read_embeddings(a)
    assert ids == m.target_ids
    assert X.tobytes() == m.embeddings.tobytes()


def test_report_flags_fully_isolated_nodes():
    feats, nbrs, Y = tiny_planted(n_target=30)
    m = fit(feats, nbrs, Y, _cfg(max_epochs=2))
    m.path_embeddings[:, 4] = 0.0
    m.path_embeddings[0, 5] = 0.0
    notes = attention_report(m, steps=5).notes
    assert notes == ["1 node(s) have no path instances under any meta path"]
