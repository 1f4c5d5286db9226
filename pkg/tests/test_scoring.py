import numpy as np
import pytest

from toque.framework.Transport import LogitMatrix
from toque.framework._supporting_fn import ValidationError
from toque.scoring import ood_score, detection_metrics, score_histograms
from toque.scoring.metrics import auroc, aupr, fpr_at_tpr


def test_t_energy_equals_energy_at_unit_temperature():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        logits = rng.normal(scale=5, size=(rng.integers(2, 12), 3))
        assert np.array_equal(ood_score(logits, "t_energy", 1.0), ood_score(logits, "energy"))


def test_t_energy_sandwich():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        M = rng.integers(2, 12)
        T = rng.uniform(0.5, 2000)
        logits = rng.normal(scale=5, size=(M, 1))
        score = ood_score(logits, "tenergy", T)[0]
        assert logits.max() - 1e-9 <= score <= logits.max() + T * np.log(M) + 1e-9


def test_t_energy_large_temperature_limit():
    rng = np.random.default_rng(6)
    for _ in range(200):
        M = rng.integers(2, 12)
        logits = rng.uniform(-10, 10, size=(M, 1))
        score = ood_score(logits, "tenergy", 1e6)[0]
        assert abs(score - 1e6 * np.log(M) - logits.mean()) <= 1e-3


def test_ranking_metrics_invariant_under_increasing_transforms():
    rng = np.random.default_rng(7)
    transforms = (lambda s: s ** 3 + s, lambda s: np.exp(s / 4), lambda s: 5 * s - 2)
    for _ in range(50):
        n_id, n_ood = rng.integers(20, 300), rng.integers(20, 300)
        id_scores = np.round(rng.normal(0.5, 1, n_id), 1)
        ood_scores = np.round(rng.normal(0, 1, n_ood), 1)
        for f in transforms:
            assert auroc(f(id_scores), f(ood_scores)) == auroc(id_scores, ood_scores)
            assert fpr_at_tpr(f(id_scores), f(ood_scores)) == fpr_at_tpr(id_scores, ood_scores)


def test_score_examples():
    assert ood_score(np.zeros((10, 1)), "t_energy", 1000.0)[0] == pytest.approx(1000 * np.log(10))
    assert ood_score(np.zeros((2, 1)), "msp")[0] == pytest.approx(0.5)


def test_score_rejects_bad_input():
    with pytest.raises(ValidationError):
        ood_score(np.array([[np.inf], [0.0]]), "energy")
    with pytest.raises(ValidationError):
        ood_score(np.zeros((2, 1)), "mahalanobis")
    with pytest.raises(ValidationError):
        ood_score(np.zeros((2, 1)), "tenergy", 0.0)
    with pytest.raises(ValidationError):
        ood_score(LogitMatrix(np.zeros((1, 3)), "class"), "msp")


def test_perfect_separation():
    report = detection_metrics([2.0, 3.0], [0.0, 1.0], [0, 1], [0, 1])
    assert report.auroc == 1.0
    assert report.fpr_at_tpr95 == 0.0
    assert report.acc == 1.0
    assert report.aupr_in == pytest.approx(1.0)
    assert report.aupr_out == pytest.approx(1.0)
    # two OOD samples cannot resolve FPR 0.1
    assert report.ccr_at_fpr == {1e-4: 0.0, 1e-3: 0.0, 1e-2: 0.0, 1e-1: 0.0}


def test_perfect_separation_with_enough_ood_samples():
    report = detection_metrics([12.0, 13.0], np.arange(10.0), [0, 1], [0, 1])
    assert report.ccr_at_fpr[0.1] == 1.0
    assert report.unresolved_levels == [1e-4, 1e-3, 1e-2]
    assert report.ccr_at_fpr[1e-2] == 0.0


def test_single_tie_is_half():
    assert detection_metrics([1.0], [1.0], [0], [0]).auroc == 0.5


def test_auroc_on_small_example():
    assert auroc(np.array([3.0, 2.0, 1.0]), np.array([2.5, 0.5])) == pytest.approx(4 / 6)


def _brute_force_auroc(id_scores, ood_scores):
    diff = id_scores[:, None] - ood_scores[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size


def test_auroc_matches_pairwise_count():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n_id, n_ood = rng.integers(1, 1001), rng.integers(1, 1001)
        # rounding creates ties
        id_scores = np.round(rng.normal(0.5, 1, size=n_id), 1)
        ood_scores = np.round(rng.normal(0, 1, size=n_ood), 1)
        assert abs(auroc(id_scores, ood_scores) - _brute_force_auroc(id_scores, ood_scores)) <= 1e-12


def test_aupr_swap_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(20):
        id_scores, ood_scores = rng.normal(1, 1, 50), rng.normal(0, 1, 70)
        forward = detection_metrics(id_scores, ood_scores, np.zeros(50), np.zeros(50))
        swapped = detection_metrics(-ood_scores, -id_scores, np.zeros(70), np.zeros(70))
        assert forward.aupr_in == swapped.aupr_out
        assert forward.aupr_out == swapped.aupr_in


def test_fpr_at_tpr95_uses_largest_threshold():
    id_scores = np.arange(1.0, 21.0)
    # 19 of 20 ID scores are >= 2, so theta = 2
    ood_scores = np.array([1.5, 2.0, 2.5, 30.0])
    assert fpr_at_tpr(id_scores, ood_scores, 0.95) == pytest.approx(0.75)


def test_ccr_is_nondecreasing_in_fpr():
    rng = np.random.default_rng(4)
    id_scores, ood_scores = rng.normal(1, 1, 300), rng.normal(0, 1, 20000)
    predictions = rng.integers(0, 3, 300)
    truth = np.where(rng.uniform(size=300) < 0.8, predictions, (predictions + 1) % 3)
    report = detection_metrics(id_scores, ood_scores, predictions, truth)
    levels = sorted(report.ccr_at_fpr)
    values = [report.ccr_at_fpr[n] for n in levels]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert report.unresolved_levels == []
    assert all(0 <= v <= report.acc for v in values)


def test_unreachable_fpr_levels_are_flagged():
    report = detection_metrics([2.0, 3.0], [0.0, 1.0], [0, 1], [0, 1])
    assert report.unresolved_levels == [1e-4, 1e-3, 1e-2, 1e-1]
    assert report.to_dict()["unresolved_fpr_levels"] == ["0.0001", "0.001", "0.01", "0.1"]
    assert set(report.to_dict()["ccr_at_fpr"].values()) == {0.0}


def test_metrics_reject_empty_sides():
    with pytest.raises(ValidationError):
        detection_metrics([], [1.0], [], [])
    with pytest.raises(ValidationError):
        detection_metrics([1.0], [0.0], [0, 1], [0])


def test_all_fields_in_unit_interval():
    rng = np.random.default_rng(5)
    report = detection_metrics(rng.normal(size=40), rng.normal(size=60), rng.integers(0, 2, 40), rng.integers(0, 2, 40))
    for key in ("fpr_at_tpr95", "auroc", "aupr_in", "aupr_out", "acc"):
        assert 0.0 <= getattr(report, key) <= 1.0


def test_aupr_of_perfect_ranking_is_one():
    assert aupr(np.array([5.0, 6.0]), np.array([1.0, 2.0, 3.0])) == pytest.approx(1.0)


def test_histograms_share_edges():
    hist = score_histograms(np.array([0.0, 1.0, 2.0]), np.array([-1.0, 0.5]), bins=4)
    assert len(hist) == 4
    assert hist.id_count.sum() == 3
    assert hist.ood_count.sum() == 2
    assert hist.bin_left.iloc[0] == -1.0
    assert hist.bin_right.iloc[-1] == 2.0
