"""Regime-aware forecasting with spline (Kolmogorov-Arnold style) layers."""

from .autodiff import NumericFault, Parameter, ShapeError, UnsupportedPrimitive, check_gradients, evaluate_with_gradients
from .checkpoint import PipelineState
from .checkpoint import load as load_checkpoint
from .checkpoint import save as save_checkpoint
from .data import FEATURE_NAMES, FeatureMatrix, MarketFrame, engineer_features, load_ohlcv, prepare
from .detector import RegimeDetector, balance_loss, contrastive_loss, orthogonality_loss
from .evaluation import (BacktestReport, WalkForwardConfig, evaluate_predictions, regression_metrics,
                         strategy_returns, trading_metrics, walk_forward)
from .explain import AttributionConfig, exact_shapley, extract_rules, mc_shapley, temporal_weight
from .forecaster import RegimeForecaster, soft_threshold
from .model import ModelConfig, RegimeKAN, composite_loss, huber
from .splines import BSplineBasis, SplineActivation, extend_grid, init_knots_from_quantiles
from .synth import MarkovSpec, TransitionSpec, gen_markov, gen_smooth_transition
from .training import TrainConfig, TrainReport, train

__version__ = "0.1.0"
