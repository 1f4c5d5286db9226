from typing import Union
import numpy as np
from scipy.special import logsumexp, softmax

from ..framework.Transport import LogitMatrix
from ..framework._supporting_fn import ValidationError

METHOD_ALIASES = {"msp": "msp", "energy": "energy", "tenergy": "t_energy", "t_energy": "t_energy"}


def ood_score(
    logits: Union[LogitMatrix, np.ndarray],
    method: str = "t_energy",
    temperature: float = 1000.0,
) -> np.ndarray:
    '''
    Per-sample OOD score from M x N classifier logits; higher means more ID.

    msp       max softmax probability
    energy    log sum_m exp(l_m)
    t_energy  T * log sum_m exp(l_m / T)
    '''
    if not isinstance(logits, LogitMatrix):
        logits = LogitMatrix(logits, row_kind="class")
    if logits.K < 2:
        raise ValidationError("OOD scores need at least two ID classes, got {}.".format(logits.K))
    try:
        method = METHOD_ALIASES[method]
    except KeyError:
        raise ValidationError("Unknown score method '{}'.".format(method))
    values = logits.values
    if method == "msp":
        return softmax(values, axis=0).max(axis=0)
    if method == "energy":
        return logsumexp(values, axis=0)
    if not temperature > 0:
        raise ValidationError("temperature must be positive, got {!r}.".format(temperature))
    return temperature * logsumexp(values / temperature, axis=0)
