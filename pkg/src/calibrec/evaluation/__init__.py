from calibrec.evaluation.diagnostics import (
    ErasureReports,
    erase_experiment,
    erase_keys,
    gradient_importance,
    kendall_tau,
    kendall_tau_analysis,
)
from calibrec.evaluation.metrics import MetricsReport, SliceMetrics, ndcg_at_k, recall_at_k
from calibrec.evaluation.ranking import evaluate, full_rank, target_ranks
from calibrec.evaluation.slicing import sliced_metrics

__all__ = [
    "ErasureReports",
    "MetricsReport",
    "SliceMetrics",
    "erase_experiment",
    "erase_keys",
    "evaluate",
    "full_rank",
    "gradient_importance",
    "kendall_tau",
    "kendall_tau_analysis",
    "ndcg_at_k",
    "recall_at_k",
    "sliced_metrics",
    "target_ranks",
]
