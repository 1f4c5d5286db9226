from .Learner import LearnerState, forward, backward, predict
from .MemoryQueue import MemoryQueue
from .losses import LossBreakdown, cls_unif_loss, infonce_loss, ot_self_label_loss
from .optim import SGD, cosine_lr
from .train import train_run, assignment_phase, augment, compare_assigners
