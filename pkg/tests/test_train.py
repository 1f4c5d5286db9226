import os
import json
import numpy as np
import pytest

from toque.framework.DatasetState import DatasetState
from toque.framework.RunConfig import RunConfig
from toque.framework._supporting_fn import TrainingDivergence
from toque.learner import train_run, assignment_phase, augment, compare_assigners
from toque.learner.train import initialize_learner, evaluate, records_to_jsonl
from toque.simulation.simulate import ToyScoodConfig, generate_scood_toy


@pytest.fixture(scope="module")
def small_split():
    return generate_scood_toy(ToyScoodConfig.from_preset("small", seed=3))


def _quick_config(**kwargs):
    values = dict(epochs=3, k=8, hidden=16, proj_dim=8, lr=0.05, seed=1)
    values.update(kwargs)
    return RunConfig(**values)


def test_training_is_deterministic(small_split):
    config = _quick_config()
    first, _ = train_run(config, small_split.data, small_split.test_id, small_split.test_ood, progress=False)
    second, _ = train_run(config, small_split.data, small_split.test_id, small_split.test_ood, progress=False)
    assert records_to_jsonl(first) == records_to_jsonl(second)


def test_records_have_one_entry_per_epoch(small_split):
    records, learner = train_run(_quick_config(), small_split.data, small_split.test_id, small_split.test_ood,
                                 progress=False)
    assert [r["epoch"] for r in records] == [0, 1, 2]
    for r in records:
        assert r["sinkhorn"] is not None
        assert r["n_promoted"] >= 0
        assert 0.0 <= r["assignment_accuracy"] <= 1.0
        assert 0.0 <= r["metrics"]["auroc"] <= 1.0
        assert r["n_labeled_effective"] + r["n_unlabeled_effective"] == small_split.data.N
    assert records[0]["n_labeled_effective"] == small_split.data.n_labeled
    assert records[0]["lr"] == 0.05
    json.loads(records_to_jsonl(records).splitlines()[-1])
    learner.check_finite()


def test_no_unlabeled_data_gives_zero_uniformity_loss():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 20)
    X = rng.normal(size=(40, 2)) + 4 * y[:, None]
    data = DatasetState(np.arange(40), X, y, [], np.zeros((0, 2)), M=2)
    records, _ = train_run(_quick_config(k=2, assigner="none"), data, progress=False)
    assert all(r["l_unif"] == 0.0 for r in records)
    assert all(r["assignment_accuracy"] is None for r in records)


def test_zero_weights_reduce_total_to_classification(small_split):
    config = _quick_config(gamma=0.0, assigner="none", **{"lambda": 0.0})
    records, _ = train_run(config, small_split.data, progress=False)
    for r in records:
        assert r["total"] == r["l_cls"]
        assert r["l_rep"] == 0.0
        assert r["n_promoted"] == 0


def test_assignment_phase_leaves_parameters_untouched(small_split):
    config = _quick_config()
    learner = initialize_learner(config, small_split.data)
    before = learner.snapshot()
    velocity = {k: v.copy() for k, v in learner.optimizer.velocity.items()}
    next_state, clusters, sinkhorn = assignment_phase(learner, small_split.data.begin_epoch(0), config, 0)
    for key, value in before.items():
        assert np.array_equal(learner.params[key], value)
        assert np.array_equal(learner.optimizer.velocity[key], velocity[key])
    assert len(learner.queue) == 0
    assert next_state.epoch == 1
    assert clusters.shape == (small_split.data.N,)
    assert set(sinkhorn) == {"converged", "iterations", "row_marginal_error", "col_marginal_error"}


def test_assignment_phase_does_not_accumulate_promotions(small_split):
    config = _quick_config(tau=0.5)
    learner = initialize_learner(config, small_split.data)
    state = small_split.data.begin_epoch(0)
    first, _, _ = assignment_phase(learner, state, config, 0)
    second, _, _ = assignment_phase(learner, first, config, 1)
    assert first.epoch_promotions.equals(second.epoch_promotions)


def test_kmeans_arm_runs(small_split):
    records, _ = train_run(_quick_config(assigner="kmeans", epochs=2), small_split.data, progress=False)
    assert len(records) == 2
    assert all(r["sinkhorn"] is None for r in records)


def test_divergence_reports_the_epoch(small_split):
    config = _quick_config(lr=1e12, weight_decay=0.1, epochs=30, assigner="none", **{"lambda": 0.0})
    with pytest.raises(TrainingDivergence) as excinfo:
        with np.errstate(all="ignore"):
            train_run(config, small_split.data, progress=False)
    assert excinfo.value.epoch is not None
    assert len(excinfo.value.records) == excinfo.value.epoch


def test_augment_identity_at_zero_strength():
    X = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(augment(X, 0.0, np.ones(2), np.random.default_rng(0)), X)


def test_evaluate_defaults_to_configured_score(small_split):
    config = _quick_config(score_method="energy")
    learner = initialize_learner(config, small_split.data)
    report = evaluate(learner, config, small_split.test_id, small_split.test_ood)
    assert report.acc == pytest.approx(
        evaluate(learner, config, small_split.test_id, small_split.test_ood, method="msp").acc)


def test_compare_assigners_has_one_row_per_seed_and_arm():
    table = compare_assigners(_quick_config(epochs=1),
                              lambda seed: generate_scood_toy(ToyScoodConfig.from_preset("small", seed=seed)),
                              seeds=[0, 1])
    assert len(table) == 6
    assert sorted(set(table.arm)) == ["ce_only", "et", "kmeans"]
    assert (table.loc[table.arm == "ce_only", "n_promoted"] == 0).all()
    assert ((table.n_promoted_correct >= 0) & (table.n_promoted_correct <= table.n_promoted)).all()


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("TOQUE_RUN_SLOW") != "1", reason="set TOQUE_RUN_SLOW=1 to run")
def test_energy_transport_beats_baselines_over_seeds():
    table = compare_assigners(RunConfig(),
                              lambda seed: generate_scood_toy(ToyScoodConfig.from_preset("toy", seed=seed)),
                              seeds=range(5))
    means = table.groupby("arm")[["n_promoted", "n_promoted_correct", "assignment_accuracy", "auroc"]].mean()
    et, kmeans, ce_only = means.loc["et"], means.loc["kmeans"], means.loc["ce_only"]
    # ET promotes on every seed
    assert (table.loc[table.arm == "et", "n_promoted_correct"] > 0).all()
    assert et.assignment_accuracy >= kmeans.assignment_accuracy
    assert et.n_promoted_correct >= 1.5 * kmeans.n_promoted_correct
    assert et.auroc >= ce_only.auroc + 0.03
