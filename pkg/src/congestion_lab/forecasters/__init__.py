"""Historical average, epsilon-SVR, graph-feature SVR and ARIMA forecasters."""

from .arima import ArimaModel, arima_fit, arima_forecast, arima_forecast_batch, arima_forecast_from
from .ha import HaModel, ha_fit, ha_predict, ha_predict_many
from .models import (
    MODEL_NAMES,
    Arima,
    Forecaster,
    GraphSupportVectorRegression,
    HistoricalAverage,
    Hyperparameters,
    SupportVectorRegression,
    TrainingData,
    load_model,
    make_forecaster,
    save_model,
)
from .svr import SvrModel, graph_features, svr_fit, svr_predict, svr_predict_many

__all__ = [
    "MODEL_NAMES", "Arima", "ArimaModel", "Forecaster", "GraphSupportVectorRegression", "HaModel",
    "HistoricalAverage", "Hyperparameters", "SupportVectorRegression", "SvrModel", "TrainingData",
    "arima_fit", "arima_forecast", "arima_forecast_batch", "arima_forecast_from", "graph_features",
    "ha_fit", "ha_predict", "ha_predict_many", "load_model", "make_forecaster", "save_model",
    "svr_fit", "svr_predict", "svr_predict_many",
]
