"""Mixed-effects smoothing spline ANOVA for daily activity curves."""
from .core import (
    FactorDef, ModelPlan, ModelSpec, Observation, ObservationTable, TermSpec, ssanova_terms, validate_spec,
)
from .inference import (
    CurveEstimate, RegionSet, default_grid, difference_curve, eval_component, posterior_covariance,
    predict, predict_curve, significant_regions, summarize_fit,
)
from .solver import FittedModel, fit

__version__ = "0.1.0"
