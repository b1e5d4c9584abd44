# pylint: disable=line-too-long
"""
Stage executor: ingest -> train -> calibrate -> detect, with plain files as artifacts.

Architecture:
    1. ingest     - capture or series CSV -> binned series -> train/valid/test splits, scaler fit on train
    2. train      - one model per horizon (1, 2, 3 outputs) on the train split
    3. calibrate  - CR from the shortest attack duration, PET by grid scan over valid-split errors
    4. detect     - per-step errors, anomaly regions and reports for every split

Every artifact is written atomically (temp file then rename) into the output directory,
and the next stage reads only what the previous stages wrote.
"""

import importlib.util
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from collectivelstm.detector import (
    AnomalyReport,
    Thresholds,
    build_report,
    calibrate_pet,
    choose_cr,
    default_grid,
    extract_regions,
    render_report_text,
    render_table,
    score_regions,
    sweep_pet,
)
from collectivelstm.lstm_core import TrainConfig, checkpoint_from_json, checkpoint_to_json, train
from collectivelstm.predictor import score_series, write_error_csv
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
from collectivelstm.timeseries import (
    DEFAULT_INTERVAL_SECONDS,
    METRICS,
    RawSeries,
    Scaler,
    apply_scaler,
    bin_events,
    capture_window,
    fit_scaler,
    is_series_csv,
    load_series_csv,
    read_capture,
    slice_series,
    write_series_csv,
)

console = Console()

STAGES = ("ingest", "train", "calibrate", "detect")
SPLITS = ("train", "valid", "test")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_MISSING_ARTIFACT = 2


class MissingArtifactError(FileNotFoundError):
    """An upstream stage's output is absent."""

    def __init__(self, name: str):
        super().__init__(f"missing artifact {name}")
        self.name = name


# --- configuration -------------------------------------------------------------


@dataclass
class RunConfig:
    """
    Everything a pipeline run needs.

    Example (flat key-value file):
        input = capture.pcap
        output_dir = out
        metric = tcp_syn
        horizons = 1, 2, 3
        min_attack_duration_seconds = 2400
    """

    input: Path | None = None
    output_dir: Path = Path("out")
    labels: Path | None = None
    metric: str = "packets"
    interval_seconds: int = DEFAULT_INTERVAL_SECONDS
    start_time: int | None = None
    end_time: int | None = None
    train_fraction: float = 0.5
    valid_fraction: float = 0.25
    horizons: tuple[int, ...] = (1, 2, 3)
    hidden_size: int = 10
    learning_rate: float = 1e-4
    epochs: int = 100
    momentum: float = 0.5
    batch_size: int = 1
    bptt_window: int = 16
    init_scale: float = 0.1
    clip_value: float = 5.0
    seed: int = 0
    grid_min: float = 0.05
    grid_max: float = 1.0
    grid_step: float = 0.05
    q: float = 1.0
    min_attack_duration_seconds: int = 2400
    jobs: int = 1

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)
        self.input = Path(self.input) if self.input is not None else None
        self.labels = Path(self.labels) if self.labels is not None else None
        self.horizons = tuple(sorted(set(int(h) for h in self.horizons)))

        if self.metric not in METRICS:
            raise ValueError(f"Unknown metric '{self.metric}'. Expected one of: {', '.join(METRICS)}")
        if self.interval_seconds <= 0:
            raise ValueError(f"interval_seconds must be positive, got {self.interval_seconds}")
        if not self.horizons or any(h not in (1, 2, 3) for h in self.horizons):
            raise ValueError(f"horizons must be drawn from 1, 2, 3, got {self.horizons}")
        if not 0 < self.train_fraction < 1 or not 0 < self.valid_fraction < 1:
            raise ValueError("train_fraction and valid_fraction must lie in (0, 1)")
        if self.train_fraction + self.valid_fraction >= 1:
            raise ValueError("train_fraction + valid_fraction must leave room for a test split")
        if self.min_attack_duration_seconds <= 0:
            raise ValueError("min_attack_duration_seconds must be positive")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        # Validates the remaining numeric fields
        self.grid()
        self.train_config(self.horizons[0])

    @property
    def fractions(self) -> tuple[float, float, float]:
        rest = 1.0 - self.train_fraction - self.valid_fraction
        return self.train_fraction, self.valid_fraction, rest

    def grid(self) -> tuple[float, ...]:
        grid = default_grid(self.grid_min, self.grid_max, self.grid_step)
        if not 0 < self.q <= 1:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        return grid

    def train_config(self, horizons: int) -> TrainConfig:
        return TrainConfig(
            hidden_size=self.hidden_size,
            horizons=horizons,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            momentum=self.momentum,
            batch_size=self.batch_size,
            bptt_window=self.bptt_window,
            seed=self.seed,
            init_scale=self.init_scale,
            clip_value=self.clip_value,
        )

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        return cls(**_coerce_fields(cls, values))


def _parse_int_list(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).replace(";", ",").split(",") if v.strip())


def _parse_bursts(value) -> tuple[Burst, ...]:
    """``start:duration:multiplier`` triplets separated by ``;``."""
    if isinstance(value, (list, tuple)):
        return tuple(b if isinstance(b, Burst) else Burst(int(b[0]), int(b[1]), float(b[2])) for b in value)
    bursts = []
    for item in str(value).split(";"):
        if not item.strip():
            continue
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise ValueError(f"burst '{item.strip()}' must be start:duration:multiplier")
        bursts.append(Burst(int(parts[0]), int(parts[1]), float(parts[2])))
    return tuple(bursts)


def _optional_int(value):
    return None if value in (None, "", "none", "None") else int(value)


def _optional_path(value):
    return None if value in (None, "", "none", "None") else Path(value)


CONVERTERS = {
    "input": _optional_path,
    "output_dir": Path,
    "labels": _optional_path,
    "metric": str,
    "start_time": _optional_int,
    "end_time": _optional_int,
    "horizons": _parse_int_list,
    "bursts": _parse_bursts,
}


def _coerce_fields(cls, values: dict) -> dict:
    """Convert raw config values (usually strings) to the dataclass field types."""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValueError(f"Unknown config key(s): {', '.join(unknown)}. Accepted keys: {', '.join(known)}")

    coerced = {}
    for name, value in values.items():
        # declared type, not the default: required fields have none
        kind = known[name].type
        try:
            if name in CONVERTERS:
                coerced[name] = CONVERTERS[name](value)
            elif kind is bool:
                coerced[name] = str(value).strip().lower() in ("1", "true", "yes")
            elif kind is int:
                coerced[name] = int(value)
            elif kind is float:
                coerced[name] = float(value)
            else:
                coerced[name] = value
        except (TypeError, ValueError) as e:
            raise ValueError(f"Invalid value for '{name}': {value!r} ({e})") from e
    return coerced


def load_config_file(config_path: Path) -> dict:
    """
    Load a config file into a flat dict of raw values.

    ``.py`` files must define a ``config`` dict; anything else is read as
    ``key = value`` lines with ``#`` comments.
    """
    config_path = Path(config_path)
    if config_path.suffix == ".py":
        spec = importlib.util.spec_from_file_location("_run_config", config_path)
        if spec is None or spec.loader is None:
            raise ValueError(f"Cannot load config file: {config_path}")
        module = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(module)
        if not hasattr(module, "config"):
            raise ValueError(f"{config_path} must define a 'config' dict.")
        return dict(module.config)

    values = {}
    for lineno, line in enumerate(config_path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{config_path}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def load_run_config(config_path: Path | None = None, overrides: dict | None = None) -> RunConfig:
    """File keys first, then non-None overrides (CLI flags) on top."""
    values = load_config_file(config_path) if config_path is not None else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_mapping(values)


def load_synth_config(config_path: Path, overrides: dict | None = None) -> SynthConfig:
    values = load_config_file(config_path)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return SynthConfig(**_coerce_fields(SynthConfig, values))


# --- artifacts -------------------------------------------------------------------


def write_atomic(path: Path, text: str) -> Path:
    """Write text to a temp file beside `path`, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def _loss_curve_csv(loss_curve: list[float], valid_curve: list[float]) -> str:
    data = {"epoch": np.arange(1, len(loss_curve) + 1), "train_loss": loss_curve}
    if valid_curve:
        data["valid_loss"] = valid_curve
    return pd.DataFrame(data).to_csv(index=False, float_format="%.12g", lineterminator="\n")


def _train_one(args: tuple[str, Scaler, TrainConfig, str | None]) -> tuple[int, str, str]:
    """Train a single horizon from CSV text; top-level so worker processes can run it."""
    train_text, scaler, train_config, valid_text = args
    series = load_series_csv(train_text, scaler=scaler)
    valid = load_series_csv(valid_text, scaler=scaler) if valid_text is not None else None
    result = train(series, train_config, valid_series=valid, quiet=True)
    return (
        train_config.horizons,
        checkpoint_to_json(result.weights, train_config),
        _loss_curve_csv(result.loss_curve, result.valid_loss_curve),
    )


# --- stages ----------------------------------------------------------------------


class PipelineRunner:
    """
    Run pipeline stages against one output directory.

    Example:
        config = load_run_config(Path("run.conf"), {"seed": 7})
        runner = PipelineRunner(config)
        runner.run(["ingest", "train", "calibrate", "detect"])
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.written: list[Path] = []

    # paths
    def series_path(self, split_name: str) -> Path:
        return self.out / f"series_{split_name}.csv"

    def labels_path(self, split_name: str) -> Path:
        return self.out / f"labels_{split_name}.csv"

    def model_path(self, h: int) -> Path:
        return self.out / f"model_h{h}.json"

    def thresholds_path(self, h: int) -> Path:
        return self.out / f"thresholds_h{h}.json"

    def report_path(self, label: str, h: int) -> Path:
        return self.out / f"report_{label}_h{h}.json"

    def _require(self, path: Path) -> Path:
        if not path.exists():
            raise MissingArtifactError(path.name)
        return path

    def _write(self, path: Path, text: str) -> None:
        self.written.append(write_atomic(path, text))

    def _load_scaler(self) -> Scaler:
        return Scaler.from_dict(json.loads(self._require(self.out / "scaler.json").read_text(encoding="utf-8")))

    def _load_scaled(self, path: Path, scaler: Scaler):
        return load_series_csv(self._require(path).read_text(encoding="utf-8"), scaler=scaler)

    def _load_model(self, h: int):
        weights, _ = checkpoint_from_json(self._require(self.model_path(h)).read_text(encoding="utf-8"))
        return weights

    def run(self, stages) -> list[Path]:
        """Run the requested stages in pipeline order; returns the artifacts written."""
        stages = set(stages)
        unknown = stages - set(STAGES)
        if unknown:
            raise ValueError(f"Unknown stage(s): {', '.join(sorted(unknown))}. Expected: {', '.join(STAGES)}")
        for stage in STAGES:
            if stage in stages:
                console.print(f"[cyan]Stage:[/cyan] {stage}")
                getattr(self, stage)()
        return self.written

    def ingest(self) -> dict[str, RawSeries]:
        """Bin the input, split chronologically, fit the scaler on train, scale all splits."""
        config = self.config
        if config.input is None:
            raise ValueError("no input configured (set 'input' or pass --input)")
        if not config.input.exists():
            raise ValueError(f"input not found: {config.input}")

        if is_series_csv(config.input):
            raw = load_series_csv(config.input.read_text(encoding="utf-8"), metric=config.metric)
            console.print(f"  Loaded series: {len(raw)} steps")
        else:
            records = read_capture(config.input)
            if not records:
                raise ValueError(f"{config.input} contains no packets")
            start, end = capture_window(records, config.interval_seconds)
            start = config.start_time if config.start_time is not None else start
            end = config.end_time if config.end_time is not None else end
            raw = bin_events(records, start, end, config.interval_seconds, config.metric)
            console.print(f"  Binned {len(records)} packets into {len(raw)} x {config.interval_seconds}s intervals")

        labels = None
        if config.labels is not None:
            labels = load_labels_csv(self._require(config.labels).read_text(encoding="utf-8"))
            parts = split(LabeledSeries(series=raw, labels=labels), config.fractions)
            splits = {name: part.series for name, part in zip(SPLITS, parts)}
            for name, part in zip(SPLITS, parts):
                self._write(self.labels_path(name), write_labels_csv(part.labels))
        else:
            valid_start, test_start = split_points(len(raw), config.fractions)
            bounds = {"train": (0, valid_start), "valid": (valid_start, test_start), "test": (test_start, len(raw))}
            splits = {name: slice_series(raw, a, b) for name, (a, b) in bounds.items()}

        scaler = fit_scaler(splits["train"])
        self._write(self.out / "raw.csv", write_series_csv(raw))
        self._write(self.out / "scaler.json", json.dumps(scaler.to_dict(), indent=2) + "\n")
        for name, part in splits.items():
            self._write(self.series_path(name), write_series_csv(apply_scaler(scaler, part)))
            console.print(f"  {name}: {len(part)} steps")
        return splits

    def train(self) -> None:
        config = self.config
        train_text = self._require(self.series_path("train")).read_text(encoding="utf-8")
        scaler = self._load_scaler()
        valid_path = self.series_path("valid")
        valid_text = valid_path.read_text(encoding="utf-8") if valid_path.exists() else None

        jobs = [(train_text, scaler, config.train_config(h), valid_text) for h in config.horizons]
        if config.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(config.jobs, len(jobs))) as pool:
                results = list(pool.map(_train_one, jobs))
        else:
            results = []
            for job in jobs:
                console.print(f"  Training {job[2].horizons}-step model ({config.epochs} epochs)")
                results.append(_train_one(job))

        for h, checkpoint, loss_csv in results:
            self._write(self.model_path(h), checkpoint)
            self._write(self.out / f"loss_h{h}.csv", loss_csv)
            final = pd.read_csv(StringIO(loss_csv))["train_loss"].iloc[-1]
            console.print(f"  {h}-step model: final training loss {final:.6f}")

    def calibrate(self) -> dict[int, Thresholds]:
        config = self.config
        scaler = self._load_scaler()
        valid = self._load_scaled(self.series_path("valid"), scaler)
        grid = config.grid()
        cr = choose_cr(config.interval_seconds, config.min_attack_duration_seconds)

        calibrated = {}
        for h in config.horizons:
            errors = score_series(self._load_model(h), valid)
            pet = calibrate_pet(errors, grid, config.q)
            thresholds = Thresholds(pet=pet, cr=cr, grid=grid, q=config.q)
            calibrated[h] = thresholds

            sweep = sweep_pet(errors, grid, cr)
            sweep_csv = pd.DataFrame([vars(row) for row in sweep]).to_csv(
                index=False, float_format="%.12g", lineterminator="\n"
            )
            self._write(self.out / f"errors_valid_h{h}.csv", write_error_csv(errors))
            self._write(self.out / f"sweep_h{h}.csv", sweep_csv)
            self._write(self.thresholds_path(h), json.dumps(thresholds.to_dict(), indent=2) + "\n")
            console.print(f"  {h}-step model: PET {pet:g}, CR {cr}")
        return calibrated

    def detect(self, extra_series: list[Path] | None = None) -> dict[tuple[str, int], AnomalyReport]:
        """Score valid, test and any extra series; write errors, reports and label scores."""
        scaler = self._load_scaler()
        datasets = {name: self._load_scaled(self.series_path(name), scaler) for name in ("valid", "test")}
        for path in extra_series or []:
            label = Path(path).stem
            # artifacts are named by label; a repeat would overwrite a split's files
            if label in datasets or label in SPLITS:
                raise ValueError(f"series label '{label}' is already taken; rename {Path(path).name}")
            raw = load_series_csv(self._require(Path(path)).read_text(encoding="utf-8"), metric=self.config.metric)
            datasets[label] = apply_scaler(scaler, raw)

        reports = {}
        for h in self.config.horizons:
            weights = self._load_model(h)
            thresholds = Thresholds.from_dict(
                json.loads(self._require(self.thresholds_path(h)).read_text(encoding="utf-8"))
            )
            for label, series in datasets.items():
                errors = score_series(weights, series)
                errors_name = f"errors_{label}_h{h}.csv"
                regions = extract_regions(errors, thresholds)
                report = build_report(regions, len(series), thresholds, label, per_step_errors_path=errors_name)

                self._write(self.out / errors_name, write_error_csv(errors))
                self._write(self.report_path(label, h), report.to_json())
                self._write(self.out / f"report_{label}_h{h}.txt", render_report_text(report))

                labels_path = self.labels_path(label)
                if labels_path.exists():
                    labels = load_labels_csv(labels_path.read_text(encoding="utf-8"))
                    score = score_regions(report.regions, labels)
                    self._write(self.out / f"score_{label}_h{h}.json", json.dumps(score.to_dict(), indent=2) + "\n")

                console.print(f"  {h}-step {label}: {len(report.regions)} region(s), {report.ratio_percent}")
                reports[(label, h)] = report
        return reports


def run_pipeline(config: RunConfig, stages, extra_series: list[Path] | None = None) -> int:
    """
    Run stages and map failures to exit statuses.

    Returns:
        0 on success, 2 for a missing upstream artifact, 1 for anything else
    """
    runner = PipelineRunner(config)
    try:
        stages = set(stages)
        runner.run(stages - {"detect"})
        if "detect" in stages:
            runner.detect(extra_series)
    except MissingArtifactError as e:
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_MISSING_ARTIFACT
    except Exception as e:  # pylint: disable=broad-exception-caught
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_INVALID
    return EXIT_OK


# --- reporting -------------------------------------------------------------------


def collect_reports(output_dir: Path) -> dict[str, dict[int, AnomalyReport]]:
    """Read every report_<label>_h<L>.json in the directory, grouped by label then horizon."""
    grouped: dict[str, dict[int, AnomalyReport]] = {}
    for path in sorted(Path(output_dir).glob("report_*_h*.json")):
        label, _, horizon = path.stem[len("report_") :].rpartition("_h")
        report = AnomalyReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
        grouped.setdefault(label, {})[int(horizon)] = report
    return grouped


def write_summary(output_dir: Path) -> tuple[Table, Path]:
    """Render all reports as one table and save its text as summary.txt."""
    reports = collect_reports(output_dir)
    if not reports:
        raise MissingArtifactError("report_*.json")
    table = render_table(reports)
    recorder = Console(file=StringIO(), record=True, width=120)
    recorder.print(table)
    path = write_atomic(Path(output_dir) / "summary.txt", recorder.export_text())
    return table, path


# --- synthetic experiment -----------------------------------------------------------


@dataclass
class ExperimentResult:
    """Per-horizon outcome of the synthetic protocol."""

    calibration_regions: dict[int, int] = field(default_factory=dict)
    test_reports: dict[int, AnomalyReport] = field(default_factory=dict)
    test_scores: dict[int, dict] = field(default_factory=dict)


def write_synth(synth_config: SynthConfig, output_dir: Path) -> tuple[Path, Path]:
    """Generate a labelled series and write series.csv + labels.csv."""
    labeled = generate(synth_config)
    output_dir = Path(output_dir)
    series_path = write_atomic(output_dir / "series.csv", write_series_csv(labeled.series))
    labels_path = write_atomic(output_dir / "labels.csv", write_labels_csv(labeled.labels))
    return series_path, labels_path


def run_experiment(synth_config: SynthConfig, config: RunConfig) -> ExperimentResult:
    """
    The train-on-normal protocol on synthetic data: generate, ingest, train,
    calibrate on the normal valid split, detect on the test split, score against labels.
    """
    series_path, labels_path = write_synth(synth_config, config.output_dir / "synth")
    config = replace(config, input=series_path, labels=labels_path)
    runner = PipelineRunner(config)
    runner.run(["ingest", "train", "calibrate"])
    reports = runner.detect()

    result = ExperimentResult()
    for (label, h), report in reports.items():
        if label == "valid":
            result.calibration_regions[h] = len(report.regions)
        elif label == "test":
            result.test_reports[h] = report
            result.test_scores[h] = json.loads((runner.out / f"score_test_h{h}.json").read_text(encoding="utf-8"))
    return result
