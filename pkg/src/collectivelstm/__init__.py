from collectivelstm.detector import (
    AnomalyRegion,
    AnomalyReport,
    Thresholds,
    build_report,
    calibrate_pet,
    choose_cr,
    extract_regions,
    relative_error,
)
from collectivelstm.lstm_core import LstmWeights, TrainConfig, train
from collectivelstm.predictor import ErrorSeries, point_errors, predict_series
from collectivelstm.synth import Burst, SynthConfig, generate
from collectivelstm.timeseries import RawSeries, Scaler, TimeSeries, apply_scaler, bin_events, fit_scaler, parse_pcap

__all__ = [
    "AnomalyRegion",
    "AnomalyReport",
    "Burst",
    "ErrorSeries",
    "LstmWeights",
    "RawSeries",
    "Scaler",
    "SynthConfig",
    "Thresholds",
    "TimeSeries",
    "TrainConfig",
    "apply_scaler",
    "bin_events",
    "build_report",
    "calibrate_pet",
    "choose_cr",
    "extract_regions",
    "fit_scaler",
    "generate",
    "parse_pcap",
    "point_errors",
    "predict_series",
    "relative_error",
    "train",
]
