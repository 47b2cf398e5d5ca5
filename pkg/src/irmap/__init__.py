"""Interest-rate panels as spatial data in the (maturity, time) plane."""

from ._validation import FitError
from .analytics import (CurveFactors, Metrics, ResidualReport, correlation_matrix, curve_factors,
                        factor_series, metrics, residual_nugget_check, stylized_facts)
from .data import (DEFAULT_TENORS, Dataset, NsFactors, Observation, PanelError, ScalingSpec, Tenor,
                   dump_panel, embed, factor_paths, from_matrix, load_panel, moving_windows,
                   ns_rate, split_80_20, synthesize_panel, tenor_to_months)
from .forecast import (ForecastResult, ForecastSpec, SurfaceGrid, forecast_curve, map_surface,
                       reconstruct_curve, walk_forward)
from .geostat import (OrdinaryKriging, VariogramModel, empirical_variogram, fit_best_variogram,
                      fit_variogram, krige_fit, krige_predict)
from .idw import IDWRegressor, IdwConfig, idw_predict
from .mlp import MlpConfig, SigmoidMLPRegressor, mlp_forward, mlp_gradient, mlp_train
from .surface import PanelEmbedding, dump_model, fit_surface, load_model, make_surface_model
from .svr import GaussianSVR, SvrConfig, kkt_violations, svr_fit, svr_predict, tune_svr

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
