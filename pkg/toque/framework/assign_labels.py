import warnings
from typing import List, Tuple
import numpy as np
import pandas as pd
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .DatasetState import DatasetState, ClusterReport, OOD_LABEL, UNLABELED, PROMOTION_COLUMNS
from ._supporting_fn import ValidationError, warn, debug


def cluster_class_rates(clusters: np.ndarray, state: DatasetState, K: int = None,
                        tau: float = None) -> List[ClusterReport]:
    '''
    Per-cluster class proportions: members labeled y over all members of the cluster.

    clusters follows the sample order of `state` (labeled, then unlabeled).
    Labels are the base labels plus the promotions held by `state`.
    Unlabeled members only enlarge the denominator. Empty clusters get no report.
    Given tau, each report carries the promotion decision of `promote`.
    '''
    if tau is not None:
        _check_tau(tau)
    clusters = np.asarray(clusters)
    if clusters.shape != (state.N,):
        raise ValidationError("Expected {} cluster indices, got {}.".format(state.N, clusters.shape))
    if clusters.size and (clusters.min() < 0 or (K is not None and clusters.max() >= K)):
        raise ValidationError("Cluster indices must lie in [0, {}).".format(K if K is not None else "K"))
    clusters = clusters.astype(int)
    labels = state.label_vector()
    ids = state.sample_ids

    reports = []
    for k in np.unique(clusters):
        in_k = clusters == k
        members_labels = labels[in_k]
        counts = np.bincount(members_labels[members_labels != UNLABELED], minlength=state.M)
        reports.append(ClusterReport(k, ids[in_k], counts / in_k.sum(), tau=tau))
    if K is not None and len(reports) < K:
        debug("{} of {} clusters are empty.".format(K - len(reports), K))
    return reports


def reports_to_frame(reports: List[ClusterReport]) -> pd.DataFrame:
    return pd.DataFrame.from_records([r.to_dict() for r in reports])


def _check_tau(tau: float):
    if not 0 < tau < 1:
        raise ValidationError("tau must lie in (0, 1), got {!r}.".format(tau))
    if tau < 0.5:
        raise ValidationError("tau must be at least 0.5 so the dominant class is unique, got {!r}.".format(tau))


def promote(reports: List[ClusterReport], tau: float, state: DatasetState) -> DatasetState:
    '''
    Every unlabeled member of a cluster whose dominant class rate is strictly
    above tau joins the effective labeled set with that class as pseudo-label.
    Promotions replace whatever `state` held, so calling this twice on the same
    reports is a no-op. The reports are left as they are.
    '''
    _check_tau(tau)
    unlabeled = set(state.unlabeled_ids.tolist())
    rows = []
    for report in reports:
        if not report.passes(tau):
            continue
        for sample_id in report.members:
            if int(sample_id) in unlabeled:
                rows.append((int(sample_id), report.dominant_class, report.cluster_id))
    promotions = pd.DataFrame.from_records(rows, columns=PROMOTION_COLUMNS)
    if len(promotions):
        promotions = promotions.sort_values("sample_id", kind="mergesort")
    return state.with_promotions(promotions)


def assignment_accuracy(state: DatasetState) -> Tuple[int, int, float]:
    '''
    Promotions whose pseudo-label matches the hidden ID class. OOD promotions are wrong.
    '''
    promotions = state.epoch_promotions
    total = len(promotions)
    if total == 0:
        return(0, 0, 1.0)
    truth = state.hidden_truth().loc[promotions.sample_id.to_numpy(dtype=int)].to_numpy()
    pseudo = promotions.pseudo_label.to_numpy(dtype=int)
    correct = int(np.sum((truth != OOD_LABEL) & (truth == pseudo)))
    return(correct, total, correct / total)


def kmeans_baseline(features: np.ndarray, K: int, iters: int = 50, seed: int = 0) -> np.ndarray:
    '''
    Lloyd iterations with k-means++ seeding over encoder features.
    '''
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ValidationError("Features must be an N x d matrix.")
    if K < 1:
        raise ValidationError("K must be positive.")
    if features.shape[0] < K:
        raise ValidationError("k-means needs N >= K, got N={} and K={}.".format(features.shape[0], K))
    if iters < 1:
        raise ValidationError("k-means needs at least one iteration.")
    km = KMeans(
        n_clusters=K,
        init="k-means++",
        n_init=1,
        max_iter=iters,
        random_state=seed,
        algorithm="lloyd",
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        labels = km.fit_predict(features)
    for w in caught:
        if issubclass(w.category, ConvergenceWarning):
            warn("k-means: {}".format(w.message))
    return labels.astype(int)
