"""CUSUM and CUSUM with observation-adjusted control limits (CUSUM-OAL)."""
from .detectors import (DetectorConfig, DetectorState, FullMean, GFunction, Sliding,
                        brute_force_stat, detector_step, g_eval, g_root, run_to_alarm,
                        sliding_len)
from .models import (MixturePost, ModelPair, NormalShiftModel, ParetoModel, classify_regime,
                     llr, mean_llr, mgf_llr, mgf_llr_tilted, mixture_llr, pareto_quantile,
                     sample_stream)
from .montecarlo import (ArlEstimate, CalibrationResult, SimPlan, calibrate_c, estimate_arl,
                         simulate_run_length, table_experiment)

__version__ = "0.1.0"
