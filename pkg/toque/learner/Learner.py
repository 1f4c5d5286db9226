from typing import Dict, Tuple
import numpy as np

from ..framework._supporting_fn import ValidationError, NumericalFailure

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wc", "bc", "Wo", "bo", "Wp1", "bp1", "Wp2", "bp2")


class ForwardCache:
    '''Intermediate activations of one forward pass, consumed by backward().'''

    def __init__(self, x, a1, h1, a2, z, ap, hp):
        self.x = x
        self.a1 = a1
        self.h1 = h1
        self.a2 = a2
        self.z = z
        self.ap = ap
        self.hp = hp


class LearnerState:
    '''
    Encoder d -> h -> h (ReLU), classifier head h -> M, OT head h -> K
    and projection head h -> h -> p. All heads read the same encoder output.
    Inputs are standardized with the stored training mean/std.
    '''

    def __init__(self, params: Dict[str, np.ndarray], x_mean: np.ndarray, x_std: np.ndarray, seed: int = 0):
        missing = [k for k in PARAM_NAMES if k not in params]
        if missing:
            raise ValidationError("Missing parameters: {}".format(missing))
        self.params = params
        self.x_mean = np.asarray(x_mean, dtype=float)
        self.x_std = np.asarray(x_std, dtype=float)
        self.seed = seed
        self.optimizer = None
        self.queue = None

    @classmethod
    def initialize(cls, d: int, M: int, K: int, hidden: int = 64, proj_dim: int = 32,
                   seed: int = 0, x_mean=None, x_std=None):
        rng = np.random.default_rng(seed)

        def he(fan_in, fan_out):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

        def glorot(fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out))

        params = {
            "W1": he(d, hidden), "b1": np.zeros(hidden),
            "W2": he(hidden, hidden), "b2": np.zeros(hidden),
            "Wc": glorot(hidden, M), "bc": np.zeros(M),
            "Wo": glorot(hidden, K), "bo": np.zeros(K),
            "Wp1": he(hidden, hidden), "bp1": np.zeros(hidden),
            "Wp2": glorot(hidden, proj_dim), "bp2": np.zeros(proj_dim),
        }
        x_mean = np.zeros(d) if x_mean is None else x_mean
        x_std = np.ones(d) if x_std is None else x_std
        return(cls(params, x_mean, x_std, seed=seed))

    @property
    def d(self):
        return self.params["W1"].shape[0]

    @property
    def hidden(self):
        return self.params["W1"].shape[1]

    @property
    def M(self):
        return self.params["Wc"].shape[1]

    @property
    def K(self):
        return self.params["Wo"].shape[1]

    @property
    def proj_dim(self):
        return self.params["Wp2"].shape[1]

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def check_finite(self):
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise NumericalFailure("Parameter {} became non-finite.".format(k))


def _relu(a):
    return np.maximum(a, 0.0)


def forward(state: LearnerState, batch: np.ndarray, return_cache: bool = False):
    '''
    Returns (z, logits_cls, logits_ot, proj) for a B x d batch, plus the cache
    for backward() when return_cache is set.
    '''
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != state.d:
        raise ValidationError("Expected a batch of shape (B, {}), got {}.".format(state.d, batch.shape))
    if not np.all(np.isfinite(batch)):
        raise ValidationError("Batch contains non-finite features.")
    p = state.params
    x = (batch - state.x_mean) / state.x_std
    a1 = x @ p["W1"] + p["b1"]
    h1 = _relu(a1)
    a2 = h1 @ p["W2"] + p["b2"]
    z = _relu(a2)
    logits_cls = z @ p["Wc"] + p["bc"]
    logits_ot = z @ p["Wo"] + p["bo"]
    ap = z @ p["Wp1"] + p["bp1"]
    hp = _relu(ap)
    proj = hp @ p["Wp2"] + p["bp2"]
    if return_cache:
        return(z, logits_cls, logits_ot, proj, ForwardCache(x, a1, h1, a2, z, ap, hp))
    return(z, logits_cls, logits_ot, proj)


def backward(state: LearnerState, cache: ForwardCache, d_cls=None, d_ot=None, d_proj=None,
             detach_ot: bool = True) -> Dict[str, np.ndarray]:
    '''
    Parameter gradients given upstream gradients on the three outputs.
    With detach_ot the OT head is trained on a stopped-gradient copy of z.
    '''
    p = state.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dz = np.zeros_like(cache.z)

    if d_cls is not None:
        grads["Wc"] = cache.z.T @ d_cls
        grads["bc"] = d_cls.sum(axis=0)
        dz += d_cls @ p["Wc"].T
    if d_ot is not None:
        grads["Wo"] = cache.z.T @ d_ot
        grads["bo"] = d_ot.sum(axis=0)
        if not detach_ot:
            dz += d_ot @ p["Wo"].T
    if d_proj is not None:
        grads["Wp2"] = cache.hp.T @ d_proj
        grads["bp2"] = d_proj.sum(axis=0)
        dap = (d_proj @ p["Wp2"].T) * (cache.ap > 0)
        grads["Wp1"] = cache.z.T @ dap
        grads["bp1"] = dap.sum(axis=0)
        dz += dap @ p["Wp1"].T

    da2 = dz * (cache.a2 > 0)
    grads["W2"] = cache.h1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ p["W2"].T) * (cache.a1 > 0)
    grads["W1"] = cache.x.T @ da1
    grads["b1"] = da1.sum(axis=0)
    return grads


def add_grads(*grad_dicts: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    total = {k: v.copy() for k, v in grad_dicts[0].items()}
    for g in grad_dicts[1:]:
        for k, v in g.items():
            total[k] += v
    return total


def predict(state: LearnerState, X: np.ndarray, batch_size: int = 1024) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    '''(z, logits_cls, logits_ot) for a whole matrix, evaluated in chunks.'''
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        return(np.zeros((0, state.hidden)), np.zeros((0, state.M)), np.zeros((0, state.K)))
    outs = [forward(state, X[i:i + batch_size])[:3] for i in range(0, len(X), batch_size)]
    return tuple(np.vstack(parts) for parts in zip(*outs))
