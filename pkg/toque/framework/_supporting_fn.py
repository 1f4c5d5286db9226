import sys
import logging
import numpy as np

logging.basicConfig(
    level=logging.INFO,
    format="%(levelname)-5s @ %(asctime)s:\n\t %(message)s \n",
    datefmt="%a, %d %b %Y %H:%M:%S",
    stream=sys.stderr,
)
error = logging.critical
warn = logging.warning
debug = logging.debug
info = logging.info


class InputFileError(Exception):
    pass


class ValidationError(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    pass


class TrainingDivergence(NumericalFailure):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
        self.records = []


class InfeasibleGeometry(ValidationError):
    pass


def _check_finite_columns(values: np.ndarray, what: str = "logits"):
    '''
    Raise ValidationError naming the first sample (column) holding NaN/Inf.
    '''
    bad = ~np.isfinite(values)
    if bad.any():
        bad_cols = np.where(bad.any(axis=0))[0]
        raise ValidationError(
            "Non-finite {} for sample index {} ({} samples affected).".format(
                what, int(bad_cols[0]), len(bad_cols)
            )
        )


def _check_probability_vector(p: np.ndarray, name: str, strictly_positive=False, atol=1e-12):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise ValidationError("{} must be a nonempty vector.".format(name))
    if not np.all(np.isfinite(p)):
        raise ValidationError("{} has non-finite entries.".format(name))
    if strictly_positive and np.any(p <= 0):
        raise ValidationError("{} must be strictly positive.".format(name))
    if np.any(p < 0):
        raise ValidationError("{} has negative entries.".format(name))
    if abs(p.sum() - 1.0) > atol:
        raise ValidationError("{} sums to {!r}, not 1.".format(name, float(p.sum())))
    return p
