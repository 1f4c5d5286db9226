from typing import Dict
import numpy as np

from ._supporting_fn import ValidationError, InputFileError
from .Transport import KERNEL_EXPONENTS

ASSIGNERS = ("et", "kmeans", "none")
SCORE_METHODS = ("msp", "energy", "tenergy")

# key: (default, type, meaning)
FIELDS = {
    "epsilon": (0.05, float, "entropic weight epsilon of the transport Q"),
    "sinkhorn_tol": (1e-6, float, "L1 marginal tolerance"),
    "sinkhorn_max_iter": (1000, int, "standalone Sinkhorn iteration cap"),
    "train_sinkhorn_iter": (50, int, "Sinkhorn iteration budget per epoch"),
    "log_domain": (False, bool, "log-domain Sinkhorn updates"),
    "epsilon_scaling": (False, bool, "solve a halving ladder of epsilons before epsilon itself"),
    "kernel_exponent": ("inverse", str, "kernel cost^(1/epsilon) (inverse) or cost^epsilon (literal)"),
    "tau": (0.8, float, "class-rate threshold tau on rate_{k,c}"),
    "k": (16, int, "number of clusters K (rows of h_ot)"),
    "assigner": ("et", str, "label assignment: et, kmeans or none"),
    "kmeans_iter": (50, int, "Lloyd iterations of the k-means arm"),
    "et_start_epoch": (0, int, "first epoch running label assignment"),
    "temperature": (1000.0, float, "T-energy temperature T"),
    "score_method": ("tenergy", str, "OOD score: msp, energy or tenergy"),
    "gamma": (0.5, float, "weight gamma of the uniformity loss on D_U"),
    "lambda": (0.3, float, "weight lambda of the contrastive loss L_rep"),
    "contrast_temperature": (1.0, float, "InfoNCE temperature t_c"),
    "ot_weight": (1.0, float, "weight of the OT-head (h_ot) self-labeling loss"),
    "lr": (0.1, float, "base learning rate eta, cosine-annealed over the epochs"),
    "momentum": (0.9, float, "SGD momentum"),
    "weight_decay": (5e-4, float, "SGD weight decay"),
    "epochs": (60, int, "training epochs, t = 0 .. epochs - 1"),
    "batch_labeled": (32, int, "labeled batch size B_1"),
    "batch_unlabeled": (64, int, "unlabeled batch size B_2"),
    "hidden": (64, int, "width h of the encoder e_theta"),
    "proj_dim": (32, int, "output width p of the projection head h_m"),
    "queue_batches": (8, int, "memory queue length n, in batches of z^1"),
    "aug_sigma": (0.1, float, "strength sigma of the augmentations A^0 and A^1"),
    "seed": (0, int, "random seed"),
}


def _parse_bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError("Cannot read {!r} as a boolean.".format(value))


def _coerce(key, value):
    default, typ, _ = FIELDS[key]
    if typ is bool:
        return _parse_bool(value)
    try:
        if typ is int and isinstance(value, str):
            as_float = float(value)
            if as_float != int(as_float):
                raise ValueError
            return int(as_float)
        return typ(value)
    except (TypeError, ValueError):
        raise ValidationError("Config key '{}' expects {}, got {!r}.".format(key, typ.__name__, value))


class RunConfig:
    '''
    Every tunable of a run. Precedence: defaults < config file < explicit overrides.
    '''

    def __init__(self, **kwargs):
        for key, (default, _, _) in FIELDS.items():
            setattr(self, key, default)
        self.update(kwargs)

    def update(self, values: Dict):
        for key, value in values.items():
            if value is None:
                continue
            key = key.replace("-", "_")
            if key not in FIELDS:
                raise ValidationError("Unknown config key '{}'.".format(key))
            setattr(self, key, _coerce(key, value))
        return self

    @classmethod
    def from_file(cls, path: str, **overrides):
        config = cls()
        config.update(read_config_file(path))
        config.update(overrides)
        return config

    def to_dict(self) -> Dict:
        return {key: getattr(self, key) for key in FIELDS}

    def to_text(self) -> str:
        lines = []
        for key, (_, _, meaning) in FIELDS.items():
            value = getattr(self, key)
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append("# {}\n{} = {}".format(meaning, key, value))
        return "\n".join(lines) + "\n"

    def validate(self, M: int = None):
        checks = [
            (self.epsilon > 0, "epsilon must be positive"),
            (self.sinkhorn_tol > 0, "sinkhorn_tol must be positive"),
            (self.sinkhorn_max_iter >= 1, "sinkhorn_max_iter must be at least 1"),
            (self.train_sinkhorn_iter >= 1, "train_sinkhorn_iter must be at least 1"),
            (self.kernel_exponent in KERNEL_EXPONENTS, "kernel_exponent must be one of {}".format(KERNEL_EXPONENTS)),
            (0.5 <= self.tau < 1, "tau must lie in [0.5, 1)"),
            (self.k >= 1, "k must be at least 1"),
            (self.assigner in ASSIGNERS, "assigner must be one of {}".format(ASSIGNERS)),
            (self.kmeans_iter >= 1, "kmeans_iter must be at least 1"),
            (self.et_start_epoch >= 0, "et_start_epoch must be nonnegative"),
            (self.temperature > 0, "temperature must be positive"),
            (self.score_method in SCORE_METHODS, "score_method must be one of {}".format(SCORE_METHODS)),
            (self.gamma >= 0, "gamma must be nonnegative"),
            (self.__dict__["lambda"] >= 0, "lambda must be nonnegative"),
            (self.contrast_temperature > 0, "contrast_temperature must be positive"),
            (self.ot_weight >= 0, "ot_weight must be nonnegative"),
            (self.lr >= 0, "lr must be nonnegative"),
            (0 <= self.momentum < 1, "momentum must lie in [0, 1)"),
            (self.weight_decay >= 0, "weight_decay must be nonnegative"),
            (self.epochs >= 1, "epochs must be at least 1"),
            (self.batch_labeled >= 1, "batch_labeled must be at least 1"),
            (self.batch_unlabeled >= 1, "batch_unlabeled must be at least 1"),
            (self.hidden >= 1 and self.proj_dim >= 1, "hidden and proj_dim must be positive"),
            (self.queue_batches >= 1, "queue_batches must be at least 1"),
            (self.aug_sigma >= 0 and self.aug_sigma < 0.5, "aug_sigma must lie in [0, 0.5)"),
            (self.seed >= 0, "seed must be nonnegative"),
        ]
        if M is not None:
            checks.append((M >= 2, "at least two ID classes are needed"))
            checks.append((self.k >= M, "k must be at least the number of ID classes M"))
        for ok, message in checks:
            if not ok:
                raise ValidationError("Invalid config: {}.".format(message))
        if not np.isfinite([self.epsilon, self.tau, self.temperature, self.lr]).all():
            raise ValidationError("Invalid config: non-finite value.")
        return self

    @property
    def lam(self):
        return self.__dict__["lambda"]

    def __repr__(self):
        return("RunConfig({})".format(", ".join("{}={!r}".format(k, v) for k, v in self.to_dict().items())))


def read_config_file(path: str) -> Dict[str, str]:
    '''Flat `key = value` lines; `#` starts a comment.'''
    values = {}
    try:
        with open(path) as infile:
            lines = infile.readlines()
    except OSError as e:
        raise InputFileError("Cannot open config file {}: {}".format(path, e))
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError("{}:{}: expected 'key = value', got {!r}.".format(path, lineno, line))
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values
