"""Regression calibration with a two-stage stacked sandwich variance."""

from .calibration import Dataset, TwoStageFit, calibrate, fit_stage1, fit_stage2, fit_two_stage
from .errors import (ConfigError, ConvergenceError, DataError, DesignError, DivergenceError,
                     DomainError, LonelyPSUError, NumericalError, RCSandwichError,
                     SingularSystemError)
from .models import (BINOMIAL, COXPH, GAUSSIAN, ModelFit, SurvivalOutcome, fit_coxph,
                     fit_glm_binomial, fit_glm_gaussian)
from .resampling import (bootstrap_intervals, combine_mi, jackknife_estimates, mi_variance,
                         stratified_bootstrap)
from .sandwich import (build_stacked_system, naive_variance, sandwich_variance,
                       two_stage_sandwich)
from .simulation import ScenarioConfig, StudyReport, generate, run_study
from .survey import SurveyDesign, augment_strata, make_srs_design, total_variance

__version__ = "0.1.0"
