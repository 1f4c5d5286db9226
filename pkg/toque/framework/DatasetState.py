from copy import copy
from typing import Tuple
import numpy as np
import pandas as pd

from ._supporting_fn import ValidationError

OOD_LABEL = -1
UNLABELED = -1
PROMOTION_COLUMNS = ["sample_id", "pseudo_label", "source_cluster"]


def _empty_promotions() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=int) for c in PROMOTION_COLUMNS})


def _as_2d(X, n: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        return X
    if X.size == 0:
        return X.reshape(n, 0)
    return X.reshape(n, -1)


class DatasetState:
    '''
    Labeled set, unlabeled set and the promotions of the current epoch.

    Samples are ordered labeled-first, then unlabeled; cluster index vectors,
    features and label vectors all follow that order. Hidden truth of unlabeled
    samples is ID class index or OOD_LABEL, and is read only by the auditor.
    '''

    def __init__(
        self,
        labeled_ids,
        labeled_X,
        labeled_y,
        unlabeled_ids,
        unlabeled_X,
        M: int,
        unlabeled_truth=None,
        epoch: int = 0,
        promotions: pd.DataFrame = None,
    ):
        self.labeled_ids = np.asarray(labeled_ids, dtype=int)
        self.labeled_y = np.asarray(labeled_y, dtype=int)
        self.unlabeled_ids = np.asarray(unlabeled_ids, dtype=int)
        self.labeled_X = _as_2d(labeled_X, len(self.labeled_ids))
        self.unlabeled_X = _as_2d(unlabeled_X, len(self.unlabeled_ids))
        if not len(self.labeled_ids):
            self.labeled_X = self.labeled_X.reshape(0, self.unlabeled_X.shape[1])
        if not len(self.unlabeled_ids):
            self.unlabeled_X = self.unlabeled_X.reshape(0, self.labeled_X.shape[1])
        self.M = int(M)
        self._hidden_truth = None if unlabeled_truth is None else np.asarray(unlabeled_truth, dtype=int)
        self.epoch = epoch
        self.epoch_promotions = _empty_promotions() if promotions is None else promotions.reset_index(drop=True)
        self._check_base()
        self.check_invariants()

    def _check_base(self):
        if self.M < 1:
            raise ValidationError("Number of ID classes M must be positive.")
        if len(self.labeled_y) != len(self.labeled_ids):
            raise ValidationError("Labeled ids and labels differ in length.")
        if len(self.labeled_y) and (self.labeled_y.min() < 0 or self.labeled_y.max() >= self.M):
            raise ValidationError("Labels must lie in [0, {}).".format(self.M))
        if self.labeled_X.shape[1] != self.unlabeled_X.shape[1] and len(self.labeled_ids) and len(self.unlabeled_ids):
            raise ValidationError("Labeled and unlabeled features differ in dimension.")
        all_ids = np.concatenate((self.labeled_ids, self.unlabeled_ids))
        if len(np.unique(all_ids)) != len(all_ids):
            raise ValidationError("Sample ids must be unique across labeled and unlabeled sets.")
        if self._hidden_truth is not None:
            if len(self._hidden_truth) != len(self.unlabeled_ids):
                raise ValidationError("Hidden truth must cover every unlabeled sample.")
            if np.any((self._hidden_truth < OOD_LABEL) | (self._hidden_truth >= self.M)):
                raise ValidationError("Hidden truth must be an ID class in [0, {}) or OOD.".format(self.M))

    def check_invariants(self):
        promoted = self.epoch_promotions.sample_id.to_numpy(dtype=int)
        if len(np.unique(promoted)) != len(promoted):
            raise ValidationError("A sample was promoted more than once in epoch {}.".format(self.epoch))
        if np.intersect1d(promoted, self.labeled_ids).size:
            raise ValidationError("Promotions must not overlap the base labeled set.")
        if not np.isin(promoted, self.unlabeled_ids).all():
            raise ValidationError("Only unlabeled samples can be promoted.")
        labels = self.epoch_promotions.pseudo_label.to_numpy(dtype=int)
        if len(labels) and (labels.min() < 0 or labels.max() >= self.M):
            raise ValidationError("Pseudo-labels must lie in [0, {}).".format(self.M))

    @property
    def n_labeled(self):
        return len(self.labeled_ids)

    @property
    def n_unlabeled(self):
        return len(self.unlabeled_ids)

    @property
    def N(self):
        return self.n_labeled + self.n_unlabeled

    @property
    def d(self):
        return self.labeled_X.shape[1] if self.n_labeled else self.unlabeled_X.shape[1]

    @property
    def sample_ids(self) -> np.ndarray:
        return np.concatenate((self.labeled_ids, self.unlabeled_ids))

    @property
    def features(self) -> np.ndarray:
        return np.vstack((self.labeled_X, self.unlabeled_X))

    @property
    def has_hidden_truth(self):
        return self._hidden_truth is not None

    def _promoted_mask(self) -> np.ndarray:
        return np.isin(self.unlabeled_ids, self.epoch_promotions.sample_id.to_numpy(dtype=int))

    def _pseudo_labels(self) -> np.ndarray:
        '''Pseudo-label per unlabeled sample, UNLABELED where not promoted.'''
        labels = np.full(self.n_unlabeled, UNLABELED, dtype=int)
        if len(self.epoch_promotions):
            pos = pd.Series(np.arange(self.n_unlabeled), index=self.unlabeled_ids)
            idx = pos.loc[self.epoch_promotions.sample_id.to_numpy(dtype=int)].to_numpy()
            labels[idx] = self.epoch_promotions.pseudo_label.to_numpy(dtype=int)
        return labels

    def label_vector(self) -> np.ndarray:
        '''Current labels in sample order: base labels, then pseudo-labels or UNLABELED.'''
        return np.concatenate((self.labeled_y, self._pseudo_labels()))

    def effective_labeled(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        '''Effective labeled set: base labels plus this epoch's promotions, as (ids, X, y).'''
        mask = self._promoted_mask()
        pseudo = self._pseudo_labels()
        return(
            np.concatenate((self.labeled_ids, self.unlabeled_ids[mask])),
            np.vstack((self.labeled_X, self.unlabeled_X[mask])),
            np.concatenate((self.labeled_y, pseudo[mask])),
        )

    def effective_unlabeled(self) -> Tuple[np.ndarray, np.ndarray]:
        '''Effective unlabeled set: samples that were not promoted, as (ids, X).'''
        mask = ~self._promoted_mask()
        return(self.unlabeled_ids[mask], self.unlabeled_X[mask])

    def hidden_truth(self) -> pd.Series:
        if self._hidden_truth is None:
            raise ValidationError("Hidden truth is not available for this dataset.")
        return pd.Series(self._hidden_truth, index=self.unlabeled_ids, name="truth")

    def _copy(self):
        new = copy(self)
        new.epoch_promotions = self.epoch_promotions.copy()
        return new

    def begin_epoch(self, epoch: int):
        '''Promotions are recomputed from the base labeled set every epoch.'''
        new = self._copy()
        new.epoch = epoch
        new.epoch_promotions = _empty_promotions()
        return new

    def with_promotions(self, promotions: pd.DataFrame):
        new = self._copy()
        new.epoch_promotions = promotions.loc[:, PROMOTION_COLUMNS].astype(int).reset_index(drop=True)
        new.check_invariants()
        return new

    def __repr__(self):
        return("DatasetState(epoch={}, labeled={}, unlabeled={}, promoted={}, M={})".format(
            self.epoch, self.n_labeled, self.n_unlabeled, len(self.epoch_promotions), self.M))


class ClusterReport:
    def __init__(self, cluster_id: int, members: np.ndarray, rates: np.ndarray, tau: float = None):
        self.cluster_id = int(cluster_id)
        self.members = np.asarray(members, dtype=int)
        self.rates = np.asarray(rates, dtype=float)
        self.dominant_class = int(np.argmax(self.rates))
        self.dominant_rate = float(self.rates[self.dominant_class])
        self.promoted = tau is not None and self.passes(tau)

    def passes(self, tau: float) -> bool:
        return self.dominant_rate > tau

    @property
    def size(self):
        return len(self.members)

    def to_dict(self):
        d = {
            "cluster": self.cluster_id,
            "size": self.size,
            "dominant_class": self.dominant_class,
            "dominant_rate": self.dominant_rate,
            "promoted": self.promoted,
        }
        d.update({"rate_{}".format(y): r for y, r in enumerate(self.rates)})
        return d

    def __repr__(self):
        return("ClusterReport(cluster={}, size={}, dominant={}@{:.3f}, promoted={})".format(
            self.cluster_id, self.size, self.dominant_class, self.dominant_rate, self.promoted))
