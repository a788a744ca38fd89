"""Syntactic probing on frozen representations and the dependency-vs-
constituency dominance analysis over eta-ablated students.

Probes are linear softmax classifiers over detached top-layer token
representations; the backbone is never part of the computation graph, so its
parameters cannot move.
"""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import tensor as T
from .distill import ce_sum
from .syntax_data import DataError
from .tensor import Adam, Tensor

PROBE_KINDS = ("constituent-labeling", "dependency-labeling")


def token_reps(model, enc) -> np.ndarray:
    """Detached top-layer representations; the frozen backbone stays out of
    any tape."""
    return model.reps(enc.main).mat.data.copy()


def constituent_instances(model, data):
    """One instance per labeled span of the original tree: feature
    [r_end - r_start; r_start; r_end], target the span's label id."""
    codec = model.codec
    feats, labels = [], []
    for enc in data:
        if enc.raw.con is None:
            raise DataError("constituent probing needs constituency annotation")
        reps = token_reps(model, enc)
        for i, j, label in enc.raw.con.spans():
            a, b = reps[i], reps[j - 1]
            feats.append(np.concatenate([b - a, a, b]))
            labels.append(codec.con_labels.stoi[label])
    return np.stack(feats), np.array(labels, dtype=np.int64)


def dependency_instances(model, data):
    """One instance per non-root arc: feature [r_head; r_dep], target the
    arc's relation label id."""
    feats, labels = [], []
    for enc in data:
        if enc.main.heads is None:
            raise DataError("dependency probing needs dependency annotation")
        reps = token_reps(model, enc)
        for i, h in enumerate(enc.main.heads):
            if h == 0:
                continue
            feats.append(np.concatenate([reps[h - 1], reps[i]]))
            labels.append(int(enc.main.dep_label_ids[i]))
    return np.stack(feats), np.array(labels, dtype=np.int64)


def _instances(model, data, kind):
    if kind == "constituent-labeling":
        return constituent_instances(model, data)
    if kind == "dependency-labeling":
        return dependency_instances(model, data)
    raise ValueError(f"unknown probe task {kind!r}; expected one of {PROBE_KINDS}")


def majority_accuracy(labels) -> float:
    labels = np.asarray(labels)
    return 100.0 * float(np.bincount(labels).max()) / len(labels)


def probe_train_eval(model, kind, train_data, eval_data, *, iters=400,
                     batch=64, lr=1e-2, seed=0) -> float:
    """Train a linear probe on frozen representations; returns held-out
    accuracy in percent."""
    x_tr, y_tr = _instances(model, train_data, kind)
    x_ev, y_ev = _instances(model, eval_data, kind)
    n_classes = int(max(y_tr.max(), y_ev.max())) + 1
    rng = np.random.default_rng(seed)
    dtype = x_tr.dtype
    w = T.xavier((x_tr.shape[1], n_classes), rng, dtype=dtype)
    b = T.zeros((n_classes,), dtype=dtype, requires_grad=True)
    opt = Adam([w, b], lr=lr)
    for _ in range(iters):
        take = min(batch, len(x_tr))
        idx = rng.choice(len(x_tr), size=take, replace=False)
        opt.zero_grad()
        with T.Tape() as tape:
            logits = T.add(T.matmul(Tensor(x_tr[idx]), w), b)
            loss = T.scale(ce_sum(logits, y_tr[idx]), 1.0 / take)
            tape.backward(loss)
        opt.step()
    pred = (x_ev @ w.data + b.data).argmax(axis=1)
    return 100.0 * float((pred == y_ev).mean())


# ---------------------------------------------------------------------------
# eta-ablation dominance analysis

def example_scores(model, data) -> np.ndarray:
    """Per-example correctness in [0, 1]: 0/1 for classification, the token
    accuracy for tagging (per-example F1 is ill-defined)."""
    from .train import predict

    preds = predict(model, data)
    scores = np.zeros(len(data))
    for i, enc in enumerate(data):
        if model.task == "tag":
            scores[i] = float(np.mean(np.asarray(preds[i]) == np.asarray(enc.tag_ids)))
        else:
            scores[i] = float(preds[i] == enc.label)
    return scores


def dominance_scores(full_scores, dep_only_scores, con_only_scores) -> np.ndarray:
    """Per-example dependency dominance in [0, 1].

    The drop under removing dependency injection (the eta=0, constituency-only
    student) is compared with the drop under removing constituency (eta=1).
    Equal drops give 0.5; a pure dependency-side drop gives 1.0.
    """
    full = np.asarray(full_scores, dtype=np.float64)
    drop_dep = np.maximum(0.0, full - np.asarray(con_only_scores, dtype=np.float64))
    drop_con = np.maximum(0.0, full - np.asarray(dep_only_scores, dtype=np.float64))
    total = drop_dep + drop_con
    out = np.full(len(full), 0.5)
    nz = total > 0
    out[nz] = drop_dep[nz] / total[nz]
    return out


def syntax_distribution(full_model, dep_only_model, con_only_model, data):
    """Dominance scores plus a histogram summary for the plot pipeline."""
    scores = dominance_scores(
        example_scores(full_model, data),
        example_scores(dep_only_model, data),
        example_scores(con_only_model, data),
    )
    counts, edges = np.histogram(scores, bins=10, range=(0.0, 1.0))
    summary = {
        "n": int(len(scores)),
        "mean_dominance": float(scores.mean()),
        "dep_leaning_share": float((scores > 0.5).mean()),
        "bins": [{"lo": float(edges[k]), "hi": float(edges[k + 1]),
                  "count": int(counts[k])} for k in range(len(counts))],
    }
    return scores, summary


def write_distribution(out_dir, scores, summary):
    """CSV histogram plus a JSON summary, consumed by external plotting."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "dominance_hist.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for row in summary["bins"]:
            writer.writerow([row["lo"], row["hi"], row["count"]])
    json_path = os.path.join(out_dir, "dominance_summary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return csv_path, json_path
