from typing import Dict, Iterable, List
import math
import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import average_precision_score

from ..framework._supporting_fn import ValidationError, warn

FPR_LEVELS = (1e-4, 1e-3, 1e-2, 1e-1)


class ScoreReport:
    def __init__(self, fpr_at_tpr95: float, auroc: float, aupr_in: float, aupr_out: float,
                 ccr_at_fpr: Dict[float, float], acc: float, unresolved_levels: List[float] = None):
        self.fpr_at_tpr95 = fpr_at_tpr95
        self.auroc = auroc
        self.aupr_in = aupr_in
        self.aupr_out = aupr_out
        self.ccr_at_fpr = dict(sorted(ccr_at_fpr.items()))
        self.acc = acc
        # FPR levels finer than 1 / n_ood, reported with CCR 0
        self.unresolved_levels = [] if unresolved_levels is None else list(unresolved_levels)

    def to_dict(self) -> Dict:
        return {
            "fpr_at_tpr95": self.fpr_at_tpr95,
            "auroc": self.auroc,
            "aupr_in": self.aupr_in,
            "aupr_out": self.aupr_out,
            "ccr_at_fpr": {repr(n): v for n, v in self.ccr_at_fpr.items()},
            "acc": self.acc,
            "unresolved_fpr_levels": [repr(n) for n in self.unresolved_levels],
        }

    def __repr__(self):
        return("ScoreReport(FPR@95={:.4f}, AUROC={:.4f}, AUPR-In={:.4f}, AUPR-Out={:.4f}, ACC={:.4f})".format(
            self.fpr_at_tpr95, self.auroc, self.aupr_in, self.aupr_out, self.acc))


def _as_scores(scores, name) -> np.ndarray:
    scores = np.asarray(scores, dtype=float).ravel()
    if len(scores) == 0:
        raise ValidationError("{} scores are empty.".format(name))
    if not np.all(np.isfinite(scores)):
        raise ValidationError("{} scores contain non-finite values.".format(name))
    return scores


def fpr_at_tpr(id_scores: np.ndarray, ood_scores: np.ndarray, tpr: float = 0.95) -> float:
    '''
    Fraction of OOD scores >= theta, theta the largest threshold keeping TPR >= tpr.
    '''
    n_required = max(int(math.ceil(tpr * len(id_scores) - 1e-9)), 1)
    theta = np.sort(id_scores)[::-1][n_required - 1]
    return float(np.mean(ood_scores >= theta))


def auroc(id_scores: np.ndarray, ood_scores: np.ndarray) -> float:
    '''Mann-Whitney statistic: P(id > ood) + 0.5 P(id == ood).'''
    n_id, n_ood = len(id_scores), len(ood_scores)
    ranks = rankdata(np.concatenate((id_scores, ood_scores)), method="average")
    u = ranks[:n_id].sum() - n_id * (n_id + 1) / 2.0
    return float(u / (n_id * n_ood))


def aupr(positive_scores: np.ndarray, negative_scores: np.ndarray) -> float:
    '''Step-summed area under precision-recall, positives scoring high.'''
    y = np.concatenate((np.ones(len(positive_scores)), np.zeros(len(negative_scores))))
    s = np.concatenate((positive_scores, negative_scores))
    return float(average_precision_score(y, s))


def ccr_at_fpr(id_scores, ood_scores, id_correct, level: float):
    '''
    Share of all ID samples accepted at FPR <= level and classified correctly.
    Returns (ccr, resolved); resolved is False when 1 / level exceeds the OOD count,
    and the CCR of an unresolved level is 0.
    '''
    n_ood = len(ood_scores)
    allowed = int(math.floor(level * n_ood + 1e-9))
    if allowed < 1:
        return(0.0, False)
    if allowed >= n_ood:
        accepted = np.ones(len(id_scores), dtype=bool)
    else:
        cut = np.sort(ood_scores)[::-1][allowed]
        accepted = id_scores > cut
    return(float(np.mean(accepted & id_correct)), True)


def detection_metrics(
    id_scores,
    ood_scores,
    id_predictions,
    id_truth,
    fpr_levels: Iterable[float] = FPR_LEVELS,
) -> ScoreReport:
    id_scores = _as_scores(id_scores, "ID")
    ood_scores = _as_scores(ood_scores, "OOD")
    id_predictions = np.asarray(id_predictions).ravel()
    id_truth = np.asarray(id_truth).ravel()
    if not (len(id_predictions) == len(id_truth) == len(id_scores)):
        raise ValidationError("ID predictions and truth must align with the ID scores.")
    id_correct = id_predictions == id_truth

    ccr = {}
    unresolved = []
    for level in fpr_levels:
        if not 0 < level < 1:
            raise ValidationError("FPR levels must lie in (0, 1), got {!r}.".format(level))
        ccr[level], resolved = ccr_at_fpr(id_scores, ood_scores, id_correct, level)
        if not resolved:
            unresolved.append(level)
    if unresolved:
        warn("CCR@FPR levels {} need more than {} OOD samples; reported as 0.".format(
            unresolved, len(ood_scores)))

    return ScoreReport(
        fpr_at_tpr95=fpr_at_tpr(id_scores, ood_scores, 0.95),
        auroc=auroc(id_scores, ood_scores),
        aupr_in=aupr(id_scores, ood_scores),
        aupr_out=aupr(-ood_scores, -id_scores),
        ccr_at_fpr=ccr,
        acc=float(np.mean(id_correct)),
        unresolved_levels=unresolved,
    )


def score_histograms(id_scores, ood_scores, bins: int = 50) -> pd.DataFrame:
    '''Counts per side over shared bin edges.'''
    id_scores = _as_scores(id_scores, "ID")
    ood_scores = _as_scores(ood_scores, "OOD")
    edges = np.histogram_bin_edges(np.concatenate((id_scores, ood_scores)), bins=bins)
    id_counts, _ = np.histogram(id_scores, bins=edges)
    ood_counts, _ = np.histogram(ood_scores, bins=edges)
    return pd.DataFrame({
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
        "id_count": id_counts,
        "ood_count": ood_counts,
    })
