"""Link-prediction metrics, split evaluation and impact recovery."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata, spearmanr

from .errors import InsufficientTruth, UndefinedMetric
from .impact import ImpactKind, ImpactParams, pdf
from .model import link_probability


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    return scores, labels


def auc_roc(scores, labels):
    """Area under the ROC curve as the normalised Mann-Whitney U statistic (ties count 1/2)."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC-ROC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scores, labels):
    """Average precision, with tied scores forming one threshold.

    ``AP = sum_k (R_k - R_{k-1}) P_k`` over distinct score thresholds in
    descending order; no interpolation.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetric("AUC-PR needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    seen = last + 1
    gained = np.diff(np.r_[0, tp])
    return float(np.sum(gained * (tp / seen)) / n_pos)


def score_dyads(network, params, variant, dyads):
    """Event probability ``Lambda / (1 + Lambda)`` for each ``(target, source)`` row."""
    dyads = np.asarray(dyads, dtype=np.int64).reshape(-1, 2)
    return link_probability(network, params, variant, dyads[:, 0], dyads[:, 1])


@dataclass
class EvalReport:
    auc_roc: float
    auc_pr: float
    variant: str
    dim: int
    n_test_pos: int
    n_test_neg: int
    recovery: dict | None = None
    runtime_ms: float = 0.0

    def to_dict(self, timing=False):
        d = asdict(self)
        if not timing:
            d.pop("runtime_ms")
        return d

    def write_json(self, path):
        """Metrics only; wall-clock time is left out so reruns compare byte for byte."""
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def csv_row(self, dataset=""):
        return [self.variant, self.dim, dataset, repr(self.auc_pr), repr(self.auc_roc)]


CSV_HEADER = ["model", "D", "dataset", "auc_pr", "auc_roc"]


def append_csv(path, rows):
    """Append rows shaped like the paper's results table, writing a header for new files."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        if new:
            out.writerow(CSV_HEADER)
        out.writerows(rows)


def evaluate(split, params, variant, truth=None):
    """Score the split's held-out dyads with a model trained on ``split.train_network``."""
    start = time.perf_counter()
    dyads, labels = split.dyads_and_labels()
    scores = score_dyads(split.train_network, params, variant, dyads)
    rec = recovery_stats(split.train_network, params, truth) if truth is not None else None
    return EvalReport(auc_roc(scores, labels), auc_pr(scores, labels), variant.value, params.dim,
                      len(split.test_positives), len(split.test_negatives), rec,
                      1000.0 * (time.perf_counter() - start))


def recovery_stats(network, params, truth, min_kappa=5, grid_points=100, min_targets=10):
    """Agreement between fitted and planted target quantities.

    Spearman correlation of ``exp(alpha_i)`` with the planted citation
    budget, and the mean L1 distance between fitted and planted impact
    densities on an evenly spaced age grid over ``(0, T]``; both over
    targets whose planted budget is at least ``min_kappa``.
    """
    nodes = np.asarray(truth.target_nodes)
    kappa = truth.kappa[nodes]
    sel = np.flatnonzero(kappa >= min_kappa)
    if len(sel) < min_targets:
        raise InsufficientTruth(f"only {len(sel)} targets with kappa >= {min_kappa}")
    mass = np.exp(params.alpha[sel])
    # undefined for constant input; None keeps the JSON report standard
    rho = float(spearmanr(mass, kappa[sel]).statistic) if np.ptp(mass) > 0 and np.ptp(kappa[sel]) > 0 else None
    T = network.horizon
    grid = np.linspace(T / grid_points, T, grid_points)
    step = grid[1] - grid[0]
    planted = pdf(ImpactKind(truth.impact), _col(truth.impact_params(nodes[sel])), grid)
    l1 = None
    if params.kind is not ImpactKind.CONSTANT:
        fitted = pdf(params.kind, _col(params.impact.take(sel)), grid)
        l1 = float(np.mean(np.sum(np.abs(fitted - planted), axis=1) * step))
    return {"spearman_alpha_kappa": rho, "mean_impact_L1": l1, "n_targets": int(len(sel))}


def _col(p):
    """Reshape per-node impact parameters to broadcast against a grid on the last axis."""
    def c(v):
        if v is None or np.ndim(v) == 0:
            return v
        v = np.asarray(v)
        return v[:, None] if v.ndim == 1 else v[:, None, :]
    return ImpactParams(*(c(getattr(p, f)) for f in (
        "mu", "log_sigma", "lower", "upper", "mixture_logits", "mixture_mu", "mixture_log_sigma")))
