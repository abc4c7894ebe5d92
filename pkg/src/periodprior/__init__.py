"""Informative period priors from Gaussian-process posteriors.

Stage 1 samples the hyperparameters of a periodic-kernel GP by adaptive
importance sampling and fits a density to the period marginal. Stage 2
uses that density as the period prior of a sinusoid or Keplerian model.
"""
from .timeseries import TimeSeries, load_timeseries, save_timeseries
from .pipeline import run_pipeline, run_stage1, run_stage2, run_baseline_uniform

__all__ = ["TimeSeries", "load_timeseries", "save_timeseries", "run_pipeline", "run_stage1",
           "run_stage2", "run_baseline_uniform"]
__version__ = "0.1.0"
