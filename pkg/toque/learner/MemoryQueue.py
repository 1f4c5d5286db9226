from collections import deque
import numpy as np

from ..framework._supporting_fn import ValidationError


def l2_normalize(x: np.ndarray):
    '''Row-wise unit vectors and the norms they were divided by.'''
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    return(x / norms, norms)


class MemoryQueue:
    '''
    FIFO store of the latest projected view-1 batches, used as InfoNCE negatives.
    Entries are unit-normalized copies; eviction drops whole batches, oldest first.
    '''

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValidationError("Queue capacity must be positive.")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._batches = deque()
        self._size = 0

    def push(self, batch: np.ndarray):
        batch = np.asarray(batch, dtype=float)
        if batch.ndim != 2 or batch.shape[1] != self.dim:
            raise ValidationError("Queue expects batches of shape (B, {}), got {}.".format(self.dim, batch.shape))
        if len(batch) > self.capacity:
            raise ValidationError("Batch of {} exceeds queue capacity {}.".format(len(batch), self.capacity))
        normalized, _ = l2_normalize(batch)
        self._batches.append(normalized.copy())
        self._size += len(batch)
        while self._size > self.capacity:
            self._size -= len(self._batches.popleft())

    def entries(self) -> np.ndarray:
        if not self._batches:
            return np.zeros((0, self.dim))
        return np.vstack(self._batches)

    @property
    def n_batches(self):
        return len(self._batches)

    def clear(self):
        self._batches.clear()
        self._size = 0

    def __len__(self):
        return self._size

    def __repr__(self):
        return("MemoryQueue({}/{} entries, {} batches)".format(self._size, self.capacity, self.n_batches))
