"""Ranking metrics, drift statistics and representation-collapse diagnostics."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, UndefinedMetricError


def auc(scores, labels):
    """Mann-Whitney AUC with midrank ties: P(s+ > s-) + 0.5 P(s+ = s-)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise DimensionError("scores and labels differ in length")
    value = kernels.midrank_auc(scores, labels)
    if value != value:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    return float(value)


@dataclass
class GaucResult:
    value: float
    n_groups: int
    n_skipped: int

    def __float__(self):
        return self.value


def gauc_detail(scores, labels, group_ids):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    group_ids = np.asarray(group_ids, dtype=np.int64).reshape(-1)
    weighted, weight, n_groups, skipped = kernels.grouped_auc(scores, labels, group_ids)
    if weight == 0:
        raise UndefinedMetricError(f"no group with both classes ({n_groups} groups, all skipped)")
    return GaucResult(float(weighted / weight), int(n_groups), int(skipped))


def gauc(scores, labels, group_ids):
    """Group-size-weighted mean of per-group AUC over groups with both classes."""
    return gauc_detail(scores, labels, group_ids).value


def coefficient_of_variation(series):
    """Population std / mean."""
    x = np.asarray(series, dtype=np.float64)
    mean = x.mean()
    if mean == 0:
        raise UndefinedMetricError("coefficient of variation undefined for zero mean")
    return float(x.std() / mean)


def _kl2(p, m):
    nz = p > 0
    return float(np.sum(p[nz] * np.log2(p[nz] / m[nz])))


def jsd(p, q):
    """Base-2 Jensen-Shannon divergence, in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError("distributions must share a support")
    if (p < 0).any() or (q < 0).any():
        raise ValueError("negative probability mass")
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("empty distribution")
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)
    value = 0.5 * _kl2(p, m) + 0.5 * _kl2(q, m)
    return float(min(max(value, 0.0), 1.0))


def histogram(values, n_values):
    """Normalized counts of integer ids 0..n_values-1."""
    counts = np.bincount(np.asarray(values, dtype=np.int64).reshape(-1), minlength=n_values)[:n_values]
    return counts / max(counts.sum(), 1)


def ridge_fit(x, y, ridge=1e-6):
    """Closed-form ridge map with intercept: returns (W, b) minimizing
    ||x W + b - y||^2 + ridge ||W||^2."""
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    gram = xc.T @ xc + ridge * np.eye(x.shape[1])
    W = np.linalg.solve(gram, xc.T @ (y - y_mean))
    return W, y_mean - x_mean @ W


def view_variance(z_views):
    """Mean over samples of the trace of the across-view covariance.

    ``z_views`` has shape (J, n, d)."""
    z = np.asarray(z_views, dtype=np.float64)
    if z.ndim != 3 or z.shape[0] < 2:
        raise DimensionError("need (J >= 2, n, d) latents")
    return float(z.var(axis=0).sum(axis=1).mean())


def collapse_probe(z_views, e, holdout=0.5, ridge=1e-6):
    """Return ``(view_variance, probe_error)``.

    ``z_views`` (J, n, d) are latents of J views of n samples, ``e`` (n, w)
    the embedded inputs. The probe is a ridge regression from the per-sample
    mean latent to ``e``, fit on the first part of the samples and scored by
    held-out MSE on the rest.
    """
    z = np.asarray(z_views, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    vv = view_variance(z)
    zm = z.mean(axis=0)
    n = zm.shape[0]
    cut = int(round(n * (1.0 - holdout)))
    if cut < 1 or cut >= n:
        raise DimensionError("probe needs both a fit and a held-out part")
    W, b = ridge_fit(zm[:cut], e[:cut], ridge)
    err = float(np.mean((zm[cut:] @ W + b - e[cut:]) ** 2))
    return vv, err


@dataclass
class MetricReport:
    auc: list = field(default_factory=list)
    gauc: list = field(default_factory=list)
    gauc_groups: list = field(default_factory=list)
    gauc_skipped: list = field(default_factory=list)
    view_variance: float = None
    probe_error: float = None

    def rows(self):
        out = []
        for k, v in enumerate(self.auc):
            out.append((f"auc.task{k}", v))
        for k, v in enumerate(self.gauc):
            out.append((f"gauc.task{k}", v))
            out.append((f"gauc.task{k}.groups", self.gauc_groups[k]))
            out.append((f"gauc.task{k}.skipped", self.gauc_skipped[k]))
        if self.view_variance is not None:
            out.append(("collapse.view_variance", self.view_variance))
            out.append(("collapse.probe_error", self.probe_error))
        return out


def ranking_report(scores, labels, groups):
    """AUC and GAUC for every task column of ``scores``/``labels``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        scores = scores[:, None]
        labels = labels.reshape(-1, 1)
    rep = MetricReport()
    for k in range(scores.shape[1]):
        try:
            rep.auc.append(auc(scores[:, k], labels[:, k]))
        except UndefinedMetricError:
            rep.auc.append(float("nan"))
        try:
            g = gauc_detail(scores[:, k], labels[:, k], groups)
            rep.gauc.append(g.value)
            rep.gauc_groups.append(g.n_groups)
            rep.gauc_skipped.append(g.n_skipped)
        except UndefinedMetricError:
            rep.gauc.append(float("nan"))
            rep.gauc_groups.append(len(np.unique(groups)))
            rep.gauc_skipped.append(len(np.unique(groups)))
    return rep


# -- drift profiling ------------------------------------------------------

def stat_drift_table(spans, schema):
    """Per statistical feature: the series of span means and its CV, plus the
    mean absolute change of the span mean between consecutive spans."""
    rows = []
    for f in schema.stat:
        means = np.array([float(np.mean(s.features[f.name])) for s in spans])
        cv = coefficient_of_variation(means) if means.mean() != 0 else float("nan")
        for t, m in enumerate(means):
            rows.append({"feature": f.name, "kind": "stat", "span": t, "stat": "mean", "value": float(m)})
        for t in range(1, len(means)):
            rows.append({"feature": f.name, "kind": "stat", "span": t, "stat": "abs_drift",
                         "value": float(abs(means[t] - means[t - 1]))})
        rows.append({"feature": f.name, "kind": "stat", "span": None, "stat": "cv", "value": cv})
    return rows


def entity_cv(spans, schema):
    """Per statistical feature: distribution of per-entity CV across spans.

    Entity = user for user-side features, item for item-side. Returns rows
    with median and 90th percentile of the per-entity CV."""
    rows = []
    for f in schema.stat:
        key = "user" if f.side == "user" else "item"
        series = {}
        for s in spans:
            ids = getattr(s, key)
            vals = s.features[f.name]
            uniq, inv = np.unique(ids, return_inverse=True)
            sums = np.bincount(inv, weights=vals)
            cnt = np.bincount(inv)
            for u, v in zip(uniq.tolist(), (sums / cnt).tolist()):
                series.setdefault(u, []).append(v)
        cvs = [coefficient_of_variation(v) for v in series.values() if len(v) == len(spans) and np.mean(v) != 0]
        if cvs:
            rows.append({"feature": f.name, "kind": "stat", "span": None, "stat": "entity_cv_median",
                         "value": float(np.median(cvs))})
            rows.append({"feature": f.name, "kind": "stat", "span": None, "stat": "entity_cv_p90",
                         "value": float(np.percentile(cvs, 90))})
    return rows


def cate_drift_table(spans, schema):
    """Per categorical feature: JSD between adjacent spans and from span 0."""
    rows = []
    for f in schema.cate:
        hists = [histogram(s.features[f.name], f.vocab_size + 1) for s in spans]
        for t in range(1, len(hists)):
            rows.append({"feature": f.name, "kind": "cate", "span": t, "stat": "jsd_adjacent",
                         "value": jsd(hists[t - 1], hists[t])})
            rows.append({"feature": f.name, "kind": "cate", "span": t, "stat": "jsd_from_first",
                         "value": jsd(hists[0], hists[t])})
    return rows
