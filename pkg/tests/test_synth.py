import numpy as np
import pytest

from collectivelstm.synth import (
    Burst,
    LabeledSeries,
    SynthConfig,
    generate,
    load_labels_csv,
    split,
    split_points,
    write_labels_csv,
)


def test_flat_baseline_without_noise():
    labeled = generate(SynthConfig(length=50, mean=80.0))
    assert labeled.series.values.tolist() == [80.0] * 50
    assert not labeled.labels.any()


def test_burst_labels_exact_steps():
    labeled = generate(SynthConfig(length=200, mean=10.0, bursts=[Burst(100, 20, 3.0)]))
    assert np.flatnonzero(labeled.labels).tolist() == list(range(100, 120))
    assert labeled.series.values[100] == 30.0
    assert labeled.series.values[99] == 10.0


def test_generation_is_seeded():
    config = SynthConfig(length=300, amplitude=20, noise_sigma=2.0, bursts=[Burst(250, 10, 2.0)], seed=5)
    first, second = generate(config), generate(config)
    np.testing.assert_array_equal(first.series.values, second.series.values)
    np.testing.assert_array_equal(first.labels, second.labels)

    other = generate(SynthConfig(length=300, amplitude=20, noise_sigma=2.0, seed=6))
    assert not np.array_equal(first.series.values[:250], other.series.values[:250])


def test_label_mass_equals_burst_durations():
    bursts = [Burst(10, 5, 2.0), Burst(40, 12, 3.0), Burst(80, 1, 4.0)]
    labeled = generate(SynthConfig(length=100, noise_sigma=1.0, bursts=bursts, seed=1))
    assert labeled.labels.sum() == 18


def test_noiseless_baseline_is_periodic():
    labeled = generate(SynthConfig(length=144 * 4, mean=100, amplitude=30, period=144))
    values = labeled.series.values
    np.testing.assert_array_equal(values[144:], values[:-144])


def test_values_never_negative():
    labeled = generate(SynthConfig(length=500, mean=1.0, amplitude=5.0, noise_sigma=3.0, seed=2))
    assert labeled.series.values.min() >= 0.0


def test_interval_metadata():
    labeled = generate(SynthConfig(length=10, interval_seconds=60, start_time=1_000))
    assert labeled.series.interval_seconds == 60
    assert labeled.series.timestamps().tolist()[:2] == [1000, 1060]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"length": 0},
        {"length": 10, "noise_sigma": -1.0},
        {"length": 10, "bursts": [Burst(8, 5, 2.0)]},
        {"length": 10, "bursts": [Burst(2, 0, 2.0)]},
        {"length": 10, "period": 0},
    ],
)
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)


def test_labels_must_match_series_length():
    labeled = generate(SynthConfig(length=5))
    with pytest.raises(ValueError):
        LabeledSeries(series=labeled.series, labels=[False] * 4)


# --- split ---


def test_split_boundaries():
    labeled = generate(SynthConfig(length=1000, bursts=[Burst(900, 20, 3.0)]))
    train, valid, test = split(labeled, (0.5, 0.25, 0.25))
    assert (len(train.series), len(valid.series), len(test.series)) == (500, 250, 250)
    assert valid.series.start_time == 500 * 600
    assert test.series.start_time == 750 * 600
    assert np.flatnonzero(test.labels).tolist() == list(range(150, 170))


def test_split_detects_leakage():
    labeled = generate(SynthConfig(length=1000, bursts=[Burst(100, 20, 3.0)]))
    with pytest.raises(ValueError, match="attack leakage into normal split"):
        split(labeled, (0.5, 0.25, 0.25))


@pytest.mark.parametrize("fractions", [(0.5, 0.25, 0.25), (0.6, 0.2, 0.2), (0.1, 0.1, 0.8)])
def test_split_without_bursts(fractions):
    parts = split(generate(SynthConfig(length=100)), fractions)
    assert sum(len(p.series) for p in parts) == 100


def test_split_points_reject_bad_fractions():
    with pytest.raises(ValueError):
        split_points(100, (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        split_points(3, (0.1, 0.1, 0.8))


# --- labels CSV ---


def test_labels_csv():
    text = write_labels_csv([False, True, True])
    assert text == "index,label\n0,0\n1,1\n2,1\n"
    assert load_labels_csv(text).tolist() == [False, True, True]


def test_labels_csv_bad_header():
    with pytest.raises(ValueError, match="bad header"):
        load_labels_csv("i,l\n0,1\n")
