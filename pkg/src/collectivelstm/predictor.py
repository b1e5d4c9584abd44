"""
Per-time-step prediction errors from a trained network.

A network with L outputs fed the value at step t predicts steps t+1 ... t+L.
Every step s therefore collects up to L predictions (made at s-1 ... s-L);
its error is the mean relative error |x_s - x_hat| over those predictions.
"""

import io
from dataclasses import dataclass

import numpy as np
import pandas as pd

from collectivelstm.lstm_core import LstmWeights, forward_step, zero_state
from collectivelstm.timeseries import TimeSeries

ERROR_COLUMNS = ["index", "error", "count"]


@dataclass(frozen=True)
class HorizonPredictions:
    """
    values[t, k-1] is the prediction made at step t for step t+k.

    Entries whose target lies past the end of the series are NaN (absent).
    """

    values: np.ndarray

    @property
    def horizons(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def truncate(self, horizons: int) -> "HorizonPredictions":
        """Keep only the first `horizons` outputs of each step."""
        if not 1 <= horizons <= self.horizons:
            raise ValueError(f"cannot truncate {self.horizons} horizons to {horizons}")
        return HorizonPredictions(values=self.values[:, :horizons].copy())


@dataclass(frozen=True)
class ErrorSeries:
    """Aggregated error per step and how many predictions contributed to it."""

    errors: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        errors = np.array(self.errors, dtype=float)
        counts = np.array(self.counts, dtype=int)
        if errors.shape != counts.shape or errors.ndim != 1:
            raise ValueError("errors and counts must be equal-length vectors")
        if not np.all(np.isfinite(errors)) or np.any(errors < 0):
            raise ValueError("errors must be finite and non-negative")
        if np.any(errors[counts == 0] != 0):
            raise ValueError("steps without contributing predictions must have zero error")
        errors.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "errors", errors)
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return len(self.errors)


def make_training_pairs(series: TimeSeries, horizons: int) -> list[tuple[float, np.ndarray]]:
    """
    (x_t, [x_{t+1}, ..., x_{t+L}]) for every t with a full target vector.

    Examples:
        [a, b, c, d], L=2 -> [(a, [b, c]), (b, [c, d])]
    """
    values = np.asarray(series.values, dtype=float)
    n = len(values)
    if n <= horizons:
        raise ValueError(f"series of length {n} is too short for {horizons}-step pairs")
    return [(float(values[t]), values[t + 1 : t + 1 + horizons].copy()) for t in range(n - horizons)]


def predict_series(weights: LstmWeights, series: TimeSeries, horizons: int | None = None) -> HorizonPredictions:
    """Stateful left-to-right pass from the zero state, recording all L outputs per step."""
    if horizons is not None and horizons != weights.horizons:
        raise ValueError(f"model has {weights.horizons} outputs, {horizons} requested")

    n = len(series.values)
    n_out = weights.horizons
    out = np.full((n, n_out), np.nan)
    state = zero_state(weights.hidden_size)
    try:
        for t, x in enumerate(series.values):
            state, y, _ = forward_step(weights, state, float(x))
            out[t] = y
    except FloatingPointError as e:
        raise FloatingPointError("inference overflow") from e

    # t + k >= n has no target
    for k in range(1, n_out + 1):
        out[max(n - k, 0) :, k - 1] = np.nan
    return HorizonPredictions(values=out)


def point_errors(preds: HorizonPredictions, series: TimeSeries) -> ErrorSeries:
    """
    Mean relative error per target step.

    Step 0 never has a contributor and gets error 0 with count 0; early steps
    with fewer than L contributors use the mean of those available.
    """
    # detector imports this module for ErrorSeries
    from collectivelstm.detector import relative_error

    values = np.asarray(series.values, dtype=float)
    n = len(values)
    if preds.length != n:
        raise ValueError(f"predictions cover {preds.length} steps, series has {n}")

    total = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    for k in range(1, preds.horizons + 1):
        if k >= n:
            break
        made = preds.values[: n - k, k - 1]
        total[k:] += relative_error(values[k:], made)
        counts[k:] += 1

    errors = np.divide(total, counts, out=np.zeros(n), where=counts > 0)
    return ErrorSeries(errors=errors, counts=counts)


def score_series(weights: LstmWeights, series: TimeSeries) -> ErrorSeries:
    """predict_series followed by point_errors."""
    return point_errors(predict_series(weights, series), series)


def write_error_csv(errors: ErrorSeries) -> str:
    df = pd.DataFrame(
        {
            "index": np.arange(len(errors)),
            "error": errors.errors,
            "count": errors.counts,
        }
    )
    return df.to_csv(index=False, float_format="%.12g", lineterminator="\n")


def load_error_csv(text: str) -> ErrorSeries:
    df = pd.read_csv(io.StringIO(text))
    if list(df.columns) != ERROR_COLUMNS:
        raise ValueError("bad header")
    if not np.array_equal(df["index"].to_numpy(), np.arange(len(df))):
        raise ValueError("non-contiguous series")
    return ErrorSeries(errors=df["error"].to_numpy(dtype=float), counts=df["count"].to_numpy(dtype=int))
