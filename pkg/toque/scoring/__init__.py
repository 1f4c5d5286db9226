from .ood_score import ood_score
from .metrics import detection_metrics, score_histograms, ScoreReport, FPR_LEVELS
