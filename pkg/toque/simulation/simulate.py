from typing import Dict, Tuple
import numpy as np

from ..framework.DatasetState import DatasetState, OOD_LABEL
from ..framework._supporting_fn import ValidationError, InfeasibleGeometry, info

OOD_SHAPES = ("annulus", "box")
MAX_REJECTION_ROUNDS = 1000


class ToyScoodConfig:
    '''
    Gaussian ID classes at distinct means on a circle of radius `class_radius`
    (first two coordinates), unlabeled ID samples with covariate shift, and OOD
    samples outside every ID 3-sigma ball.

    Covariate shift moves each class mean by shift_offset * sigma along a fixed
    random direction and multiplies its variance by shift_variance.

    A cluster can only be promoted when its labeled share exceeds tau, so the
    defaults keep labeled samples well above unlabeled ID ones (400 vs 40 per class).
    '''

    def __init__(
        self,
        M: int = 4,
        d: int = 2,
        n_labeled_per_class: int = 400,
        n_unlabeled_id: int = 160,
        shift_offset: float = 0.5,
        shift_variance: float = 1.5,
        n_unlabeled_ood: int = 800,
        ood_shape: str = "annulus",
        ood_margin: float = 1.0,
        ood_width: float = 3.0,
        n_test_id: int = 400,
        n_test_ood: int = 400,
        class_radius: float = 6.0,
        sigma: float = 1.0,
        seed: int = 0,
    ):
        self.M = int(M)
        self.d = int(d)
        self.n_labeled_per_class = int(n_labeled_per_class)
        self.n_unlabeled_id = int(n_unlabeled_id)
        self.shift_offset = float(shift_offset)
        self.shift_variance = float(shift_variance)
        self.n_unlabeled_ood = int(n_unlabeled_ood)
        self.ood_shape = ood_shape
        self.ood_margin = float(ood_margin)
        self.ood_width = float(ood_width)
        self.n_test_id = int(n_test_id)
        self.n_test_ood = int(n_test_ood)
        self.class_radius = float(class_radius)
        self.sigma = float(sigma)
        self.seed = int(seed)
        self.validate()

    def validate(self):
        counts = [self.n_labeled_per_class, self.n_unlabeled_id, self.n_unlabeled_ood, self.n_test_id, self.n_test_ood]
        if min(counts) < 0:
            raise ValidationError("Sample counts must be nonnegative.")
        if self.d < 2:
            raise ValidationError("Feature dimension d must be at least 2.")
        if self.M < 1:
            raise ValidationError("At least one ID class is needed.")
        if not self.sigma > 0 or not self.class_radius >= 0:
            raise ValidationError("sigma must be positive and class_radius nonnegative.")
        if self.M > 1 and self.class_radius == 0:
            raise ValidationError("Class means must be distinct; class_radius must be positive.")
        if self.shift_offset < 0 or not self.shift_variance > 0:
            raise ValidationError("shift_offset must be nonnegative and shift_variance positive.")
        if self.ood_shape not in OOD_SHAPES:
            raise ValidationError("ood_shape must be one of {}.".format(OOD_SHAPES))
        if self.ood_margin < 0:
            raise InfeasibleGeometry("OOD margin {} lets the OOD region reach into the ID 3-sigma balls.".format(
                self.ood_margin))
        if not self.ood_width > 0:
            raise ValidationError("ood_width must be positive.")
        return self

    @property
    def id_ball_radius(self) -> float:
        '''3-sigma radius of the widest ID class, shifted ones included.'''
        return 3.0 * self.sigma * np.sqrt(max(1.0, self.shift_variance))

    @property
    def id_reach(self) -> float:
        return self.class_radius + self.shift_offset * self.sigma + self.id_ball_radius

    @property
    def ood_inner_radius(self) -> float:
        return self.id_reach + self.ood_margin

    def to_dict(self) -> Dict:
        return dict(vars(self))

    @classmethod
    def from_preset(cls, name: str, **overrides):
        try:
            values = dict(PRESETS[name])
        except KeyError:
            raise ValidationError("Unknown preset '{}'; choose from {}.".format(name, sorted(PRESETS)))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


PRESETS = {
    "toy": {},
    "noshift": {"shift_offset": 0.0, "shift_variance": 1.0},
    "box": {"ood_shape": "box"},
    "small": {"n_labeled_per_class": 50, "n_unlabeled_id": 20, "n_unlabeled_ood": 100,
              "n_test_id": 50, "n_test_ood": 50},
}


class ScoodSplit:
    '''Training DatasetState plus the ID test set (features, labels) and the OOD test features.'''

    def __init__(self, data: DatasetState, test_id: Tuple[np.ndarray, np.ndarray], test_ood: np.ndarray,
                 config: ToyScoodConfig):
        self.data = data
        self.test_id = test_id
        self.test_ood = test_ood
        self.config = config

    def counts(self) -> Dict:
        return {
            "n_labeled": self.data.n_labeled,
            "n_unlabeled": self.data.n_unlabeled,
            "n_unlabeled_id": int(np.sum(self.data.hidden_truth().to_numpy() != OOD_LABEL)),
            "n_unlabeled_ood": int(np.sum(self.data.hidden_truth().to_numpy() == OOD_LABEL)),
            "n_test_id": len(self.test_id[0]),
            "n_test_ood": len(self.test_ood),
        }


def class_means(config: ToyScoodConfig) -> np.ndarray:
    angles = 2 * np.pi * np.arange(config.M) / config.M
    means = np.zeros((config.M, config.d))
    means[:, 0] = config.class_radius * np.cos(angles)
    means[:, 1] = config.class_radius * np.sin(angles)
    return means


def _unit_vectors(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_classes(means, labels, scale, rng):
    return means[labels] + rng.normal(scale=scale, size=(len(labels), means.shape[1]))


def _sample_ood(n: int, config: ToyScoodConfig, rng: np.random.Generator, means: np.ndarray) -> np.ndarray:
    d = config.d
    inner = config.ood_inner_radius
    outer = inner + config.ood_width
    if n == 0:
        return np.zeros((0, d))
    if config.ood_shape == "annulus":
        # radius with density proportional to r^(d-1), uniform over the shell
        u = rng.uniform(size=n)
        radii = (u * (outer ** d - inner ** d) + inner ** d) ** (1.0 / d)
        return _unit_vectors(n, d, rng) * radii[:, None]

    clearance = config.id_ball_radius + config.shift_offset * config.sigma + config.ood_margin
    kept = []
    n_kept = 0
    for _ in range(MAX_REJECTION_ROUNDS):
        candidates = rng.uniform(-outer, outer, size=(2 * n, d))
        dist = np.linalg.norm(candidates[:, None, :] - means[None, :, :], axis=2)
        candidates = candidates[(dist >= clearance).all(axis=1)]
        kept.append(candidates)
        n_kept += len(candidates)
        if n_kept >= n:
            return np.vstack(kept)[:n]
    raise InfeasibleGeometry("Could not place {} OOD samples in the box outside the ID balls.".format(n))


def generate_scood_toy(config: ToyScoodConfig) -> ScoodSplit:
    '''
    Draws D_L, the unlabeled set D_U = D_U^I + D_U^O with hidden truth, and the
    test sets T^I (labels kept) and T^O. Deterministic under config.seed.
    '''
    config.validate()
    rng = np.random.default_rng(config.seed)
    means = class_means(config)
    shift_dirs = _unit_vectors(config.M, config.d, rng)
    shifted_means = means + config.shift_offset * config.sigma * shift_dirs

    labeled_y = np.repeat(np.arange(config.M), config.n_labeled_per_class)
    labeled_X = _sample_classes(means, labeled_y, config.sigma, rng)

    uid_y = rng.integers(0, config.M, size=config.n_unlabeled_id)
    uid_X = _sample_classes(shifted_means, uid_y, config.sigma * np.sqrt(config.shift_variance), rng)
    uood_X = _sample_ood(config.n_unlabeled_ood, config, rng, means)

    unlabeled_X = np.vstack((uid_X, uood_X))
    unlabeled_truth = np.concatenate((uid_y, np.full(len(uood_X), OOD_LABEL)))
    order = rng.permutation(len(unlabeled_X))
    unlabeled_X, unlabeled_truth = unlabeled_X[order], unlabeled_truth[order]

    n_labeled = len(labeled_y)
    data = DatasetState(
        labeled_ids=np.arange(n_labeled),
        labeled_X=labeled_X.reshape(n_labeled, config.d),
        labeled_y=labeled_y,
        unlabeled_ids=np.arange(n_labeled, n_labeled + len(unlabeled_X)),
        unlabeled_X=unlabeled_X.reshape(len(unlabeled_X), config.d),
        M=config.M,
        unlabeled_truth=unlabeled_truth,
    )

    test_y = rng.integers(0, config.M, size=config.n_test_id)
    test_X = _sample_classes(means, test_y, config.sigma, rng).reshape(config.n_test_id, config.d)
    test_ood = _sample_ood(config.n_test_ood, config, rng, means)
    info("Generated SCOOD toy set: {} labeled, {} unlabeled ({} OOD), {} + {} test.".format(
        n_labeled, len(unlabeled_X), len(uood_X), config.n_test_id, config.n_test_ood))
    return ScoodSplit(data, (test_X, test_y), test_ood, config)
