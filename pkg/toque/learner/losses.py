import numpy as np
from scipy.special import log_softmax, softmax, logsumexp

from .MemoryQueue import MemoryQueue, l2_normalize
from ..framework._supporting_fn import ValidationError
from ..framework.DatasetState import UNLABELED


class LossBreakdown:
    '''
    Terms of the overall objective. `total` is l_cls + gamma * l_unif + lam * l_rep;
    the OT-head self-labeling term trains a separate head and is kept apart.
    '''

    def __init__(self, l_cls: float, l_unif: float, l_rep: float, gamma: float, lam: float, l_ot: float = 0.0):
        self.l_cls = float(l_cls)
        self.l_unif = float(l_unif)
        self.l_rep = float(l_rep)
        self.gamma = gamma
        self.lam = lam
        self.l_ot = float(l_ot)
        self.total = self.l_cls + gamma * self.l_unif + lam * self.l_rep

    def is_finite(self) -> bool:
        return bool(np.isfinite([self.l_cls, self.l_unif, self.l_rep, self.l_ot, self.total]).all())

    def to_dict(self):
        return {"l_cls": self.l_cls, "l_unif": self.l_unif, "l_rep": self.l_rep,
                "l_ot": self.l_ot, "total": self.total}

    def __repr__(self):
        return("LossBreakdown(total={:.5f}, cls={:.5f}, unif={:.5f}, rep={:.5f}, ot={:.5f})".format(
            self.total, self.l_cls, self.l_unif, self.l_rep, self.l_ot))


def cls_unif_loss(logits_cls: np.ndarray, labels: np.ndarray, return_grad: bool = False):
    '''
    Cross-entropy of labeled rows against their one-hot label and of unlabeled
    rows (label UNLABELED) against the uniform distribution over M classes.
    Each term is a mean over its own rows; an empty side contributes 0.

    With return_grad, also returns (d l_cls / d logits, d l_unif / d logits).
    '''
    logits_cls = np.asarray(logits_cls, dtype=float)
    labels = np.asarray(labels, dtype=int)
    B, M = logits_cls.shape
    if len(labels) != B:
        raise ValidationError("Expected {} labels, got {}.".format(B, len(labels)))
    labeled = labels != UNLABELED
    if np.any(labels[labeled] >= M) or np.any(labels[labeled] < 0):
        raise ValidationError("Labels must lie in [0, {}).".format(M))
    n_l, n_u = int(labeled.sum()), int((~labeled).sum())

    logp = log_softmax(logits_cls, axis=1)
    l_cls = -logp[labeled, labels[labeled]].sum() / n_l if n_l else 0.0
    l_unif = -logp[~labeled].mean(axis=1).sum() / n_u if n_u else 0.0
    if not return_grad:
        return(l_cls, l_unif)

    prob = np.exp(logp)
    g_cls = np.zeros_like(logits_cls)
    g_unif = np.zeros_like(logits_cls)
    if n_l:
        onehot = np.zeros((n_l, M))
        onehot[np.arange(n_l), labels[labeled]] = 1.0
        g_cls[labeled] = (prob[labeled] - onehot) / n_l
    if n_u:
        g_unif[~labeled] = (prob[~labeled] - 1.0 / M) / n_u
    return(l_cls, l_unif, g_cls, g_unif)


def _normalize_backward(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    return (grad_unit - unit * (unit * grad_unit).sum(axis=1, keepdims=True)) / norms


def infonce_loss(proj0: np.ndarray, proj1: np.ndarray, queue: MemoryQueue,
                 temperature: float = 1.0, return_grad: bool = False):
    '''
    -(1/B) sum_i log [exp(cos(z0_i, z1_i)/t) / sum_j exp(cos(z0_i, q_j)/t)]
    over the queue entries q_j, which must already hold the current view-1 batch.
    Queue entries are constants; with return_grad, gradients w.r.t. proj0 and
    proj1 come back through the positive pairs and the anchors.
    '''
    proj0 = np.asarray(proj0, dtype=float)
    proj1 = np.asarray(proj1, dtype=float)
    if proj0.shape != proj1.shape:
        raise ValidationError("Views differ in shape: {} vs {}.".format(proj0.shape, proj1.shape))
    if len(queue) == 0:
        raise ValidationError("InfoNCE needs a non-empty memory queue.")
    if not temperature > 0:
        raise ValidationError("Contrastive temperature must be positive.")
    B = len(proj0)
    negatives = queue.entries()

    a, na = l2_normalize(proj0)
    b, nb = l2_normalize(proj1)
    positive = (a * b).sum(axis=1) / temperature
    sims = a @ negatives.T / temperature
    l_rep = float(np.mean(logsumexp(sims, axis=1) - positive))
    if not return_grad:
        return l_rep

    weights = softmax(sims, axis=1)
    grad_a = (weights @ negatives - b) / (temperature * B)
    grad_b = -a / (temperature * B)
    return(l_rep, _normalize_backward(grad_a, a, na), _normalize_backward(grad_b, b, nb))


def ot_self_label_loss(logits_ot: np.ndarray, targets: np.ndarray, return_grad: bool = False):
    '''Mean cross-entropy of OT-head logits against hardened cluster indices.'''
    logits_ot = np.asarray(logits_ot, dtype=float)
    targets = np.asarray(targets, dtype=int)
    B, K = logits_ot.shape
    if targets.shape != (B,):
        raise ValidationError("Expected {} cluster targets, got {}.".format(B, targets.shape))
    if B == 0:
        return (0.0, np.zeros_like(logits_ot)) if return_grad else 0.0
    if targets.min() < 0 or targets.max() >= K:
        raise ValidationError("Cluster targets must lie in [0, {}).".format(K))
    logp = log_softmax(logits_ot, axis=1)
    loss = float(-logp[np.arange(B), targets].mean())
    if not return_grad:
        return loss
    grad = np.exp(logp)
    grad[np.arange(B), targets] -= 1.0
    return(loss, grad / B)
