"""
Synthetic labelled traffic: a periodic baseline with noise plus sustained bursts.

Bursts multiply the baseline (a flood scales traffic volume) and are labelled
step by step, so detection can be scored without a real attack corpus.
"""

import io
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from collectivelstm.timeseries import DEFAULT_INTERVAL_SECONDS, RawSeries, slice_series

LABEL_COLUMNS = ["index", "label"]


@dataclass(frozen=True)
class Burst:
    start: int
    duration: int
    multiplier: float


@dataclass(frozen=True)
class SynthConfig:
    """Baseline shape, noise and injected bursts of a synthetic series."""

    length: int
    mean: float = 100.0
    amplitude: float = 0.0
    period: int = 144
    noise_sigma: float = 0.0
    bursts: tuple[Burst, ...] = field(default_factory=tuple)
    seed: int = 0
    interval_seconds: int = DEFAULT_INTERVAL_SECONDS
    start_time: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bursts", tuple(self.bursts))
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.interval_seconds <= 0:
            raise ValueError(f"interval_seconds must be positive, got {self.interval_seconds}")
        for burst in self.bursts:
            if burst.duration < 1:
                raise ValueError(f"burst at {burst.start} must last at least one step")
            if burst.start < 0 or burst.start + burst.duration > self.length:
                raise ValueError(f"burst {burst.start}+{burst.duration} falls outside [0, {self.length})")
            if burst.multiplier < 0:
                raise ValueError(f"burst multiplier must be non-negative, got {burst.multiplier}")


@dataclass(frozen=True)
class LabeledSeries:
    series: RawSeries
    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=bool)
        if len(labels) != len(self.series):
            raise ValueError(f"{len(labels)} labels for a {len(self.series)}-step series")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)


def generate(config: SynthConfig) -> LabeledSeries:
    """
    value_t = max(0, mean + amplitude * sin(2*pi*t/period) + N(0, sigma)),
    multiplied by the burst multiplier inside a burst.
    """
    rng = np.random.default_rng(config.seed)
    t = np.arange(config.length)
    # phase from t mod period keeps the noiseless baseline exactly periodic
    phase = 2 * np.pi * (t % config.period) / config.period
    noise = rng.normal(0.0, config.noise_sigma, size=config.length) if config.noise_sigma > 0 else 0.0
    values = np.maximum(0.0, config.mean + config.amplitude * np.sin(phase) + noise)

    labels = np.zeros(config.length, dtype=bool)
    for burst in config.bursts:
        window = slice(burst.start, burst.start + burst.duration)
        values[window] *= burst.multiplier
        labels[window] = True

    series = RawSeries(
        start_time=config.start_time,
        interval_seconds=config.interval_seconds,
        values=values,
    )
    return LabeledSeries(series=series, labels=labels)


def split_points(length: int, fractions) -> tuple[int, int]:
    """Indices where the valid and test splits begin."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    valid_start = int(round(length * fractions[0]))
    test_start = int(round(length * (fractions[0] + fractions[1])))
    if not 0 < valid_start < test_start < length:
        raise ValueError(f"fractions {fractions} leave an empty split of a {length}-step series")
    return valid_start, test_start


def split(labeled: LabeledSeries, fractions) -> tuple[LabeledSeries, LabeledSeries, LabeledSeries]:
    """
    Contiguous chronological (train, valid, test) splits.

    Raises:
        ValueError: a labelled step falls into the train or valid split
    """
    n = len(labeled.series)
    valid_start, test_start = split_points(n, fractions)
    if labeled.labels[:test_start].any():
        raise ValueError("attack leakage into normal split")

    bounds = [(0, valid_start), (valid_start, test_start), (test_start, n)]
    return tuple(
        LabeledSeries(series=slice_series(labeled.series, a, b), labels=labeled.labels[a:b]) for a, b in bounds
    )


def write_labels_csv(labels) -> str:
    labels = np.asarray(labels, dtype=bool)
    df = pd.DataFrame({"index": np.arange(len(labels)), "label": labels.astype(int)})
    return df.to_csv(index=False, lineterminator="\n")


def load_labels_csv(text: str) -> np.ndarray:
    df = pd.read_csv(io.StringIO(text))
    if list(df.columns) != LABEL_COLUMNS:
        raise ValueError("bad header")
    if not np.array_equal(df["index"].to_numpy(), np.arange(len(df))):
        raise ValueError("non-contiguous series")
    return df["label"].to_numpy().astype(bool)
