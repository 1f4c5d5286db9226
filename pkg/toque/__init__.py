from .framework.Transport import (
    LogitMatrix,
    EnergyVector,
    TransportProblem,
    AssignmentMatrix,
    energy_transport,
    sinkhorn_solve,
    harden,
)
from .framework.DatasetState import DatasetState, ClusterReport
from .framework.assign_labels import cluster_class_rates, promote, assignment_accuracy, kmeans_baseline
from .framework.RunConfig import RunConfig
from .scoring import ood_score, detection_metrics, ScoreReport
from .learner import LearnerState, MemoryQueue, LossBreakdown, forward, train_run, compare_assigners
from .simulation.simulate import ToyScoodConfig, generate_scood_toy
from . import preprocessing as pp
