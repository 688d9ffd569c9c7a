"""Classification metrics, per-meta-path attention analysis, embedding export."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import diff as D
from .model import classify, cross_entropy_loss


@dataclass
class MetricReport:
    micro_f1: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    n_eval: int

    def as_lines(self, label_names=None) -> list[str]:
        names = label_names or [str(i) for i in range(len(self.f1))]
        lines = [f"micro_f1: {self.micro_f1:.17g}", f"macro_f1: {self.macro_f1:.17g}",
                 f"n_eval: {self.n_eval}"]
        for name, p, r, f in zip(names, self.precision, self.recall, self.f1):
            lines += [f"class.{name}.precision: {p:.17g}", f"class.{name}.recall: {r:.17g}",
                      f"class.{name}.f1: {f:.17g}"]
        return lines


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def to_indicator(values, task_mode: str, n_labels: int | None = None,
                 threshold: float = 0.5) -> np.ndarray:
    """Binary (n, L) decision matrix from scores, one-hot rows or class indices."""
    a = np.asarray(values)
    if task_mode == "single":
        if a.ndim == 1:
            L = n_labels if n_labels is not None else int(a.max()) + 1
            out = np.zeros((len(a), L), dtype=bool)
            out[np.arange(len(a)), a.astype(np.int64)] = True
            return out
        # argmax picks the lowest index on ties
        out = np.zeros(a.shape, dtype=bool)
        out[np.arange(len(a)), np.argmax(a, axis=1)] = True
        return out
    if task_mode == "multi":
        return a >= threshold
    raise ValueError(f"unknown task mode {task_mode!r}")


def micro_macro_f1(predictions, truths, task_mode: str = "single", n_labels: int | None = None,
                   threshold: float = 0.5) -> MetricReport:
    """Micro-F1 from pooled counts and macro-F1 as the unweighted per-class mean.

    Classes with no support and no predictions contribute F1 = 0.
    """
    if len(predictions) == 0:
        raise ValueError("empty evaluation set")
    if n_labels is None:
        shapes = [np.ndim(x) == 2 and np.shape(x)[1] for x in (predictions, truths)]
        n_labels = next((s for s in shapes if s), None)
    P = to_indicator(predictions, task_mode, n_labels, threshold)
    T = to_indicator(truths, task_mode, n_labels, threshold)
    if P.shape != T.shape:
        raise ValueError(f"predictions {P.shape} and truths {T.shape} do not align")
    tp = (P & T).sum(axis=0).astype(float)
    fp = (P & ~T).sum(axis=0).astype(float)
    fn = (~P & T).sum(axis=0).astype(float)
    precision = [t / (t + f) if t + f else 0.0 for t, f in zip(tp, fp)]
    recall = [t / (t + f) if t + f else 0.0 for t, f in zip(tp, fn)]
    per_class = [_f1(a, b, c) for a, b, c in zip(tp, fp, fn)]
    return MetricReport(micro_f1=_f1(tp.sum(), fp.sum(), fn.sum()),
                        macro_f1=float(np.mean(per_class)), precision=precision,
                        recall=recall, f1=per_class, n_eval=len(P))


def evaluate_model(model, nodes=None, threshold: float = 0.5) -> MetricReport:
    """Score the stored embeddings with the trained classifier on ``nodes``
    (default: the test split)."""
    nodes = model.split["test"] if nodes is None else np.asarray(nodes)
    p = model.params
    scores = classify(model.embeddings[nodes], p["W_cls"], p["b_cls"], model.hyper.task_mode)
    return micro_macro_f1(scores.value, model.Y[nodes], model.hyper.task_mode,
                          n_labels=model.hyper.n_labels, threshold=threshold)


def box_stats(x) -> dict:
    x = np.asarray(x, dtype=np.float64)
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return {"min": float(x.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(x.max()), "mean": float(x.mean())}


def fit_affine_classifier(X, Y, task_mode: str, steps: int = 300, lr: float = 0.01):
    """Full-batch Adam fit of a zero-initialized affine classifier."""
    from .train import AdamState, adam_step

    params = {"W": np.zeros((X.shape[1], Y.shape[1])), "b": np.zeros(Y.shape[1])}
    state = AdamState()
    for _ in range(steps):
        W, b = D.leaf(params["W"]), D.leaf(params["b"])
        loss = cross_entropy_loss(classify(X, W, b, task_mode), Y, task_mode)
        gW, gb = D.backward(loss, [W, b])
        adam_step(params, {"W": gW, "b": gb}, state, lr)
    return params["W"], params["b"]


@dataclass
class AttentionReport:
    path_names: list[str]
    gamma_stats: list[dict]
    single_path_f1: list[float]
    rank_correlation: float | None
    n_nodes: int
    notes: list[str] = field(default_factory=list)

    def as_lines(self) -> list[str]:
        lines = [f"n_nodes: {self.n_nodes}",
                 "rank_correlation: " + ("nan" if self.rank_correlation is None
                                         else f"{self.rank_correlation:.17g}")]
        for name, st, f in zip(self.path_names, self.gamma_stats, self.single_path_f1):
            lines.append(f"path.{name}.single_path_micro_f1: {f:.17g}")
            for k in ("min", "q1", "median", "q3", "max", "mean"):
                lines.append(f"path.{name}.gamma_{k}: {st[k]:.17g}")
        lines += [f"note: {n}" for n in self.notes]
        return lines

    def as_table(self) -> list[str]:
        head = "path\tsingle_path_micro_f1\tgamma_min\tgamma_q1\tgamma_median\tgamma_q3\tgamma_max\tgamma_mean"
        rows = [head]
        for name, st, f in zip(self.path_names, self.gamma_stats, self.single_path_f1):
            vals = [f] + [st[k] for k in ("min", "q1", "median", "q3", "max", "mean")]
            rows.append(name + "\t" + "\t".join(f"{v:.17g}" for v in vals))
        return rows


def attention_report(model, split=None, steps: int = 300, lr: float = 0.01) -> AttentionReport:
    """Compare per-path usefulness with the learned meta-path weights.

    For every path a fresh affine classifier is fit on that path's frozen
    embeddings over the training split and scored on the test split.
    """
    if not getattr(model, "trained", False):
        raise ValueError("model has not been trained")
    split = split or model.split
    train, test = split["train"], split["test"]
    if len(test) == 0:
        test = train
    mode = model.hyper.task_mode
    f1s = []
    for m in range(len(model.path_names)):
        X = model.path_embeddings[m]
        W, b = fit_affine_classifier(X[train], model.Y[train], mode, steps, lr)
        scores = classify(X[test], W, b, mode).value
        f1s.append(micro_macro_f1(scores, model.Y[test], mode, n_labels=model.Y.shape[1]).micro_f1)
    gamma = model.gamma
    stats_ = [box_stats(gamma[:, m]) for m in range(gamma.shape[1])]
    means = [s["mean"] for s in stats_]
    rho = None
    if len(f1s) >= 2 and np.ptp(means) > 0 and np.ptp(f1s) > 0:
        rho = float(stats.spearmanr(means, f1s).statistic)
    notes = []
    if model.hyper.fusion != "attention":
        notes.append(f"fusion={model.hyper.fusion}: weights are uniform, not learned")
    # zero features under a path give an exactly zero path embedding
    isolated = int(np.all(model.path_embeddings == 0, axis=(0, 2)).sum())
    if isolated:
        notes.append(f"{isolated} node(s) have no path instances under any meta path")
    return AttentionReport(list(model.path_names), stats_, f1s, rho, gamma.shape[0], notes)


def export_embeddings(model, path) -> None:
    """One line per target node: id, then d tab-separated values (17 significant digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        for nid, row in zip(model.target_ids, model.embeddings):
            fh.write(nid + "\t" + "\t".join(f"{v:.17g}" for v in row) + "\n")


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            cols = line.rstrip("\n").split("\t")
            ids.append(cols[0])
            rows.append([float(c) for c in cols[1:]])
    return ids, np.array(rows)
