import json
from typing import Dict, List, Optional, Tuple
import numpy as np
import pandas as pd
from tqdm import tqdm

from .Learner import LearnerState, forward, backward, add_grads, predict
from .MemoryQueue import MemoryQueue
from .losses import LossBreakdown, cls_unif_loss, infonce_loss, ot_self_label_loss
from .optim import SGD, cosine_lr
from ..framework.DatasetState import DatasetState, UNLABELED
from ..framework.RunConfig import RunConfig
from ..framework.Transport import LogitMatrix, energy_transport
from ..framework.assign_labels import cluster_class_rates, promote, assignment_accuracy, kmeans_baseline
from ..framework._supporting_fn import TrainingDivergence, NumericalFailure, ValidationError, info, debug
from ..scoring.ood_score import ood_score
from ..scoring.metrics import detection_metrics


def augment(X: np.ndarray, sigma: float, feature_std: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    '''
    Gaussian jitter with per-feature std sigma * feature_std and a per-sample
    isotropic scale drawn from U[1 - 2 sigma, 1 + 2 sigma]. sigma = 0 is the identity.
    '''
    if sigma == 0 or len(X) == 0:
        return X.copy()
    noise = rng.normal(0.0, 1.0, size=X.shape) * (sigma * feature_std)
    scale = rng.uniform(1.0 - 2 * sigma, 1.0 + 2 * sigma, size=(len(X), 1))
    return scale * X + noise


def initialize_learner(config: RunConfig, data: DatasetState) -> LearnerState:
    X = data.features
    x_mean = X.mean(axis=0)
    x_std = X.std(axis=0)
    x_std[x_std == 0] = 1.0
    state = LearnerState.initialize(
        data.d, data.M, config.k, hidden=config.hidden, proj_dim=config.proj_dim,
        seed=config.seed, x_mean=x_mean, x_std=x_std,
    )
    state.optimizer = SGD(state.params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    state.queue = MemoryQueue(config.queue_batches * (config.batch_labeled + config.batch_unlabeled), config.proj_dim)
    return state


def _check_outputs(*arrays, what: str = "outputs"):
    for values in arrays:
        if not np.all(np.isfinite(values)):
            raise NumericalFailure("Non-finite {} from the current parameters.".format(what))


def _sinkhorn_summary(assignment) -> Dict:
    return {
        "converged": bool(assignment.converged),
        "iterations": int(assignment.iterations_used),
        "row_marginal_error": float(assignment.row_marginal_error),
        "col_marginal_error": float(assignment.col_marginal_error),
    }


def cluster_training_set(learner: LearnerState, data: DatasetState, config: RunConfig, epoch: int):
    '''
    Cluster index per training sample from the frozen model, by energy-weighted
    transport over OT-head logits or by k-means over encoder features.
    '''
    z, _, logits_ot = predict(learner, data.features)
    _check_outputs(z, logits_ot, what="encoder or OT-head outputs")
    if config.assigner == "kmeans":
        return(kmeans_baseline(z, config.k, iters=config.kmeans_iter, seed=config.seed + epoch), None)
    assignment, clusters, _ = energy_transport(
        LogitMatrix.from_batch(logits_ot),
        epsilon=config.epsilon,
        tol=config.sinkhorn_tol,
        max_iter=config.train_sinkhorn_iter,
        log_domain=config.log_domain,
        exponent=config.kernel_exponent,
        epsilon_scaling=config.epsilon_scaling,
    )
    return(clusters, _sinkhorn_summary(assignment))


def assignment_phase(learner: LearnerState, data: DatasetState, config: RunConfig, epoch: int):
    '''
    Label assignment with frozen parameters. Returns the next epoch's DatasetState
    (promotions rebuilt from the base labeled set), the cluster indices and the
    transport summary (None for k-means).
    '''
    clusters, sinkhorn = cluster_training_set(learner, data, config, epoch)
    next_state = data.begin_epoch(epoch + 1)
    reports = cluster_class_rates(clusters, next_state, config.k, tau=config.tau)
    next_state = promote(reports, config.tau, next_state)
    debug("Epoch {}: {} of {} clusters promoted.".format(epoch, sum(r.promoted for r in reports), len(reports)))
    return(next_state, clusters, sinkhorn)


def evaluate(learner: LearnerState, config: RunConfig, test_id: Tuple[np.ndarray, np.ndarray],
             test_ood: np.ndarray, method: str = None):
    '''ScoreReport of the classifier head on the ID / OOD test sets.'''
    X_id, y_id = test_id
    _, logits_id, _ = predict(learner, X_id)
    _, logits_ood, _ = predict(learner, test_ood)
    _check_outputs(logits_id, logits_ood, what="classifier logits")
    method = config.score_method if method is None else method
    id_scores = ood_score(LogitMatrix.from_batch(logits_id, "class"), method, config.temperature)
    ood_scores = ood_score(LogitMatrix.from_batch(logits_ood, "class"), method, config.temperature)
    return detection_metrics(id_scores, ood_scores, logits_id.argmax(axis=1), y_id)


class _EpochTotals:
    def __init__(self):
        self.sums = {"l_cls": 0.0, "l_unif": 0.0, "l_rep": 0.0, "l_ot": 0.0, "total": 0.0}
        self.steps = 0

    def add(self, losses: LossBreakdown):
        for key, value in losses.to_dict().items():
            self.sums[key] += value
        self.steps += 1

    def means(self) -> Dict:
        return {k: (v / self.steps if self.steps else 0.0) for k, v in self.sums.items()}


def _train_epoch(learner, data, config, epoch, lr, targets, rng, feature_std, positions) -> Dict:
    L_ids, L_X, L_y = data.effective_labeled()
    U_ids, U_X = data.effective_unlabeled()
    use_unlabeled = len(U_ids) > 0 and (config.gamma > 0 or config.lam > 0)
    n_L = len(L_ids)
    n_U = len(U_ids) if use_unlabeled else 0
    if n_L == 0 and n_U == 0:
        return _EpochTotals().means()

    perm_L = rng.permutation(n_L)
    perm_U = rng.permutation(n_U) if n_U else np.zeros(0, dtype=int)
    bl, bu = config.batch_labeled, config.batch_unlabeled
    steps = int(np.ceil(n_L / bl)) if n_L else int(np.ceil(n_U / bu))
    totals = _EpochTotals()

    for s in range(steps):
        Lb = perm_L[s * bl:(s + 1) * bl]
        Ub = perm_U[np.arange(s * bu, (s + 1) * bu) % n_U] if n_U else np.zeros(0, dtype=int)
        X = np.vstack((L_X[Lb], U_X[Ub]))
        labels = np.concatenate((L_y[Lb], np.full(len(Ub), UNLABELED, dtype=int)))
        ids = np.concatenate((L_ids[Lb], U_ids[Ub]))

        x0 = augment(X, config.aug_sigma, feature_std, rng)
        _, logits_cls, logits_ot, proj0, cache0 = forward(learner, x0, return_cache=True)
        l_cls, l_unif, g_cls, g_unif = cls_unif_loss(logits_cls, labels, return_grad=True)

        l_rep, g_proj0, cache1, g_proj1 = 0.0, None, None, None
        if config.lam > 0:
            x1 = augment(X, config.aug_sigma, feature_std, rng)
            _, _, _, proj1, cache1 = forward(learner, x1, return_cache=True)
            learner.queue.push(proj1)
            l_rep, g_proj0, g_proj1 = infonce_loss(proj0, proj1, learner.queue,
                                                   config.contrast_temperature, return_grad=True)

        l_ot, g_ot = 0.0, None
        if targets is not None and config.ot_weight > 0:
            l_ot, g_ot = ot_self_label_loss(logits_ot, targets[positions.get_indexer(ids)], return_grad=True)

        losses = LossBreakdown(l_cls, l_unif, l_rep, config.gamma, config.lam, l_ot=l_ot)
        if not losses.is_finite():
            raise TrainingDivergence("Non-finite loss at epoch {} step {}: {!r}".format(epoch, s, losses), epoch=epoch)
        totals.add(losses)

        grads = backward(
            learner, cache0,
            d_cls=g_cls + config.gamma * g_unif,
            d_ot=None if g_ot is None else config.ot_weight * g_ot,
            d_proj=None if g_proj0 is None else config.lam * g_proj0,
        )
        if cache1 is not None:
            grads = add_grads(grads, backward(learner, cache1, d_proj=config.lam * g_proj1))
        learner.optimizer.step(learner.params, grads, lr)
        try:
            learner.check_finite()
        except NumericalFailure as e:
            raise TrainingDivergence("{} (epoch {})".format(e, epoch), epoch=epoch)

    return totals.means()


def train_run(
    config: RunConfig,
    data: DatasetState,
    test_id: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    test_ood: Optional[np.ndarray] = None,
    progress: bool = True,
) -> Tuple[List[Dict], LearnerState]:
    '''
    Alternates representation learning and label assignment for config.epochs epochs.

    Each epoch trains on the effective labeled and unlabeled sets, then clusters the whole training set
    with frozen parameters and rebuilds the promotions used by the next epoch.
    Returns one record per epoch and the final LearnerState.
    '''
    config.validate(M=data.M)
    if data.N == 0:
        raise ValidationError("Cannot train on an empty dataset.")
    rng = np.random.default_rng(config.seed)
    learner = initialize_learner(config, data)
    feature_std = data.features.std(axis=0)
    positions = pd.Index(data.sample_ids)
    uses_assigner = config.assigner != "none"
    state = data.begin_epoch(0)
    targets = None
    records = []

    try:
        for epoch in tqdm(range(config.epochs), desc="Training", disable=not progress):
            if config.assigner == "et" and targets is None and epoch >= config.et_start_epoch:
                targets, _ = cluster_training_set(learner, state, config, epoch)
            lr = cosine_lr(config.lr, epoch, config.epochs)
            n_labeled = len(state.effective_labeled()[0])
            n_unlabeled = len(state.effective_unlabeled()[0])
            means = _train_epoch(learner, state, config, epoch, lr, targets, rng, feature_std, positions)

            record = {"epoch": epoch, "lr": lr, "n_labeled_effective": n_labeled,
                      "n_unlabeled_effective": n_unlabeled, "sinkhorn": None}
            record.update(means)

            if uses_assigner and epoch >= config.et_start_epoch:
                state, clusters, sinkhorn = assignment_phase(learner, state, config, epoch)
                if config.assigner == "et":
                    targets = clusters
                record["sinkhorn"] = sinkhorn
            else:
                state = state.begin_epoch(epoch + 1)
            record["n_promoted"] = int(len(state.epoch_promotions))
            if state.has_hidden_truth:
                correct, total, accuracy = assignment_accuracy(state)
                record["n_promoted_correct"] = correct
                record["assignment_accuracy"] = accuracy
            else:
                record["n_promoted_correct"] = None
                record["assignment_accuracy"] = None

            record["metrics"] = None
            if test_id is not None and test_ood is not None:
                record["metrics"] = evaluate(learner, config, test_id, test_ood).to_dict()
            records.append(record)
            info("Epoch {}: total={:.4f} promoted={} accuracy={}".format(
                epoch, record["total"], record["n_promoted"], record["assignment_accuracy"]))
    except NumericalFailure as e:
        diverged = e if isinstance(e, TrainingDivergence) else TrainingDivergence(
            "{} (epoch {})".format(e, epoch), epoch=epoch)
        diverged.records = records
        raise diverged

    return(records, learner)


BASELINE_ARMS = {
    "et": {},
    "kmeans": {"assigner": "kmeans"},
    "ce_only": {"assigner": "none", "gamma": 0.0, "lambda": 0.0},
}


def compare_assigners(config: RunConfig, make_split, seeds, arms: Dict[str, Dict] = None) -> pd.DataFrame:
    '''
    Final-epoch summary of each arm on each seed.

    make_split(seed) returns a ScoodSplit; every arm trains on it with config.seed = seed.
    '''
    arms = BASELINE_ARMS if arms is None else arms
    rows = []
    for seed in seeds:
        split = make_split(seed)
        for arm, overrides in arms.items():
            arm_config = RunConfig(**config.to_dict()).update(dict(overrides, seed=seed))
            records, _ = train_run(arm_config, split.data, split.test_id, split.test_ood, progress=False)
            last = records[-1]
            rows.append({
                "seed": seed,
                "arm": arm,
                "n_promoted": last["n_promoted"],
                "n_promoted_correct": last["n_promoted_correct"],
                "assignment_accuracy": last["assignment_accuracy"],
                "auroc": last["metrics"]["auroc"],
            })
            info("{} seed {}: promoted={} correct={} auroc={:.4f}".format(
                arm, seed, last["n_promoted"], last["n_promoted_correct"], last["metrics"]["auroc"]))
    return pd.DataFrame.from_records(rows)


def records_to_jsonl(records: List[Dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
