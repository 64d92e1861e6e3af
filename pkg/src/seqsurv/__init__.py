"""Design and analysis of time-sequential survival trials."""

from .survival_core import SubjectRecord, TrialData, TrialSnapshot, kaplan_meier, pooled_product_limit, snapshot
from .rank_stats import (LOGRANK, WeightFunction, cox_score_info, g_rho, rank_statistic, score_to_weight,
                         variance_estimate)
from .boundary_engine import (InfeasibleDesign, MonitoringGrid, SpendingFunction, crossing_probability,
                              haybittle_peto_thresholds, spend_and_solve)
from .trial_sim import Scenario, TestSpec, operating_characteristics, run_test, sample_size_search
from .resample import HybridConfig, hybrid_confidence_set, importance_bootstrap_tail, optimal_weights

__version__ = "0.1.0"
