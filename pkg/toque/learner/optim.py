from typing import Dict
import math
import numpy as np

from ..framework._supporting_fn import ValidationError


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    '''Cosine annealing from base_lr at epoch 0 to 0 at epoch `epochs - 1`.'''
    if epochs < 1 or not 0 <= epoch < epochs:
        raise ValidationError("Epoch {} outside a schedule of {} epochs.".format(epoch, epochs))
    if epochs == 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / (epochs - 1)))


class SGD:
    '''Momentum SGD with L2 weight decay folded into the gradient.'''

    def __init__(self, params: Dict[str, np.ndarray], lr: float = 0.1, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float = None):
        lr = self.lr if lr is None else lr
        for name, p in params.items():
            g = grads[name] + self.weight_decay * p
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p -= lr * v
