"""Accuracy breakdowns, cross-dataset transfer and count-feature export."""

import csv
import json

import numpy as np

from .errors import KeyMapError
from .events import spike_count_vector, standardize
from .train import RasterDataset, forward, select_logits


def accuracy(preds, labels):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in shape")
    return float(np.mean(preds == labels)) if labels.size else 0.0


def per_speaker_accuracy(preds, labels, speakers, holdout=()):
    """speaker id -> {"accuracy", "n", "held_out"}."""
    preds, labels, speakers = map(np.asarray, (preds, labels, speakers))
    held = {int(s) for s in holdout}
    out = {}
    for s in np.unique(speakers):
        m = speakers == s
        out[int(s)] = {"accuracy": accuracy(preds[m], labels[m]), "n": int(m.sum()),
                       "held_out": int(s) in held}
    return out


def confusion(preds, labels, n_class):
    cm = np.zeros((n_class, n_class), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return cm


def per_class_accuracy(preds, labels, n_class):
    cm = confusion(preds, labels, n_class)
    tot = cm.sum(axis=1)
    return {c: (float(cm[c, c] / tot[c]) if tot[c] else None) for c in range(n_class)}


def network_scores(spec, params, kind="max_over_time", beta=40.0, batch=256, mode="binary"):
    """Scoring function container -> (N, n_class) selected readout values."""
    def score(container):
        data = RasterDataset.from_container(container, spec, mode)
        out = []
        for start in range(0, len(data), batch):
            X, _ = data.batch(np.arange(start, min(start + batch, len(data))))
            out.append(select_logits(forward(spec, params, X, beta).u_r, kind)[0])
        return np.concatenate(out) if out else np.zeros((0, spec.n_class))
    return score


def cross_dataset_eval(score_fn, source_keys, target, normalize=str):
    """Accuracy of a source-trained model on the classes both datasets share.

    Target labels are mapped into the source label space by key name and
    predictions are restricted to the shared classes.
    """
    src = {normalize(k): i for i, k in enumerate(source_keys)}
    tgt_to_src = {}
    for j, k in enumerate(target.keys):
        if normalize(k) in src:
            tgt_to_src[j] = src[normalize(k)]
    if not tgt_to_src:
        raise KeyMapError("source and target datasets share no class names")
    shared_src = np.array(sorted(set(tgt_to_src.values())), dtype=np.int64)
    idx = np.array([i for i, y in enumerate(target.labels) if int(y) in tgt_to_src], dtype=np.int64)
    y_src = np.array([tgt_to_src[int(target.labels[i])] for i in idx], dtype=np.int64)
    scores = np.asarray(score_fn(target.subset(idx)))
    preds = shared_src[np.argmax(scores[:, shared_src], axis=1)] if idx.size else np.zeros(0, np.int64)
    return {"accuracy": accuracy(preds, y_src), "n": int(idx.size),
            "chance": 1.0 / shared_src.size,
            "shared": [source_keys[i] for i in shared_src]}


def report(preds, labels, speakers, n_class, holdout=()):
    return {
        "overall": accuracy(preds, labels),
        "per_speaker": {str(k): v for k, v in per_speaker_accuracy(preds, labels, speakers, holdout).items()},
        "per_class": {str(k): v for k, v in per_class_accuracy(preds, labels, n_class).items()},
        "confusion": confusion(preds, labels, n_class).tolist(),
    }


def write_report(path, rep):
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)


def count_matrix(container, n_units, idx=None):
    idx = range(len(container)) if idx is None else idx
    return np.array([spike_count_vector(container.samples[i], n_units) for i in idx]).reshape(-1, n_units)


def export_count_features(container, split, path, n_units, part="test"):
    """CSV of z-scored spike-count vectors plus label, one row per sample of ``part``.

    ``split`` is (train, val, test); scaling statistics come from train only.
    """
    train_idx, val_idx, test_idx = split
    rows = {"train": train_idx, "val": val_idx, "test": test_idx}[part]
    stats_X = count_matrix(container, n_units, train_idx)
    X, _ = standardize(count_matrix(container, n_units, rows), stats_X)
    labels = container.labels[np.asarray(rows, dtype=np.int64)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(n_units)] + ["label"])
        for x, y in zip(X, labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
    return X, labels
