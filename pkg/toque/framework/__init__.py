from .Transport import LogitMatrix, EnergyVector, TransportProblem, AssignmentMatrix
from .DatasetState import DatasetState, ClusterReport
from .RunConfig import RunConfig
