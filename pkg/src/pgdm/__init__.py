"""
Pattern-guided diffusion forecasting.

Archetypal patterns are fit to training frames, a small network predicts the
horizon's pattern coefficients from the history, and a conditional DDPM is
steered toward that prediction with a guidance scale that shrinks as the
archetypal uncertainty (AAUQ) of the history grows.
"""

from . import archetypal, certify, data, diffusion, guidance, metrics, nn
from .archetypal import ArchetypeSet, aauq, fit_archetypes, hull_distance
from .diffusion import GuidanceConfig, dynamic_scale, make_schedule, sample_forecasts
from .errors import PGDMError
from .guidance import guide, make_predictor, train_pattern_predictor
from .metrics import ForecastEnsemble, crps_sum, mae
from .pipeline import RunConfig, run_experiment

__version__ = "0.1.0"
