"""
CLI for collectivelstm.

Commands:
    ingest      - Bin a capture (pcap or CSV) into train/valid/test series
    synth       - Generate a labelled synthetic traffic series
    train       - Train one LSTM per prediction horizon on the train split
    calibrate   - Choose CR from attack duration and PET on the valid split
    detect      - Find collective anomalies in the valid/test splits
    report      - Print all reports as one table and save summary.txt
    run         - Run several stages in one go
    experiment  - Synthetic end-to-end protocol scored against labels
"""

from pathlib import Path

import typer
from rich.console import Console
from rich.table import Table

from collectivelstm.pipeline import (
    EXIT_OK,
    STAGES,
    load_run_config,
    load_synth_config,
    run_experiment,
    run_pipeline,
    write_summary,
    write_synth,
)

app = typer.Typer(
    name="collectivelstm",
    help="Detect collective anomalies in network traffic with an LSTM trained on normal data",
    no_args_is_help=True,
)

console = Console()

CONFIG_OPTION = typer.Option(
    None,
    "--config",
    "-c",
    help="Run config: 'key = value' text file, or a Python file defining a 'config' dict",
    exists=True,
    file_okay=True,
    dir_okay=False,
    readable=True,
)
OUTPUT_DIR_OPTION = typer.Option(None, "--output-dir", "-o", help="Artifact directory (default: out)")
SEED_OPTION = typer.Option(None, "--seed", "-s", help="Random seed for weight initialisation")
HORIZONS_OPTION = typer.Option(None, "--horizons", help="Comma-separated horizons to train, e.g. 1,2,3")
INTERVAL_OPTION = typer.Option(None, "--interval", help="Bin duration in seconds (default: 600)")
METRIC_OPTION = typer.Option(None, "--metric", help="packets, bytes or tcp_syn (default: packets)")
EPOCHS_OPTION = typer.Option(None, "--epochs", help="Training epochs (default: 100)")
GRID_MIN_OPTION = typer.Option(None, "--grid-min", help="Smallest PET candidate (default: 0.05)")
GRID_MAX_OPTION = typer.Option(None, "--grid-max", help="Largest PET candidate (default: 1.0)")
GRID_STEP_OPTION = typer.Option(None, "--grid-step", help="PET grid spacing (default: 0.05)")
Q_OPTION = typer.Option(None, "--q", help="Fraction of validation steps kept normal (default: 1.0)")
MIN_ATTACK_OPTION = typer.Option(
    None, "--min-attack-duration", help="Shortest attack to report, in seconds (default: 2400)"
)


def _overrides(**flags) -> dict:
    """Map CLI flag values onto RunConfig keys."""
    renamed = {
        "interval": "interval_seconds",
        "min_attack_duration": "min_attack_duration_seconds",
    }
    return {renamed.get(k, k): v for k, v in flags.items() if v is not None}


def _run_stages(stages, config: Path | None, overrides: dict, extra_series: list[Path] | None = None) -> None:
    try:
        run_config = load_run_config(config, overrides)
    except Exception as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(1)

    console.print(f"[cyan]Output:[/cyan] {run_config.output_dir}")
    status = run_pipeline(run_config, stages, extra_series=extra_series)
    if status != EXIT_OK:
        raise typer.Exit(status)
    console.print(f"\n[bold green]Done:[/bold green] {', '.join(s for s in STAGES if s in stages)}")


@app.command()
def ingest(
    input_file: Path = typer.Option(None, "--input", "-i", help="pcap capture, records CSV or series CSV"),
    labels: Path = typer.Option(None, "--labels", help="Per-step labels CSV aligned with the input series"),
    config: Path = CONFIG_OPTION,
    output_dir: Path = OUTPUT_DIR_OPTION,
    metric: str = METRIC_OPTION,
    interval: int = INTERVAL_OPTION,
):
    """
    Bin raw traffic and split it into scaled train/valid/test series.

    The scaler is fit on the train split only; other splits are clamped to [0, 1].
    """
    _run_stages(
        {"ingest"},
        config,
        _overrides(input=input_file, labels=labels, output_dir=output_dir, metric=metric, interval=interval),
    )


@app.command()
def synth(
    synth_config: Path = typer.Argument(
        ...,
        help="Synth config (length, mean, amplitude, period, noise_sigma, bursts, seed)",
        exists=True,
        file_okay=True,
        dir_okay=False,
        readable=True,
    ),
    output_dir: Path = typer.Option(Path("."), "--output-dir", "-o", help="Where series.csv and labels.csv go"),
    seed: int = SEED_OPTION,
):
    """
    Generate a labelled synthetic traffic series.

    Examples:
        collectivelstm synth tests/fixtures/synth_example.conf -o data
    """
    try:
        labeled_config = load_synth_config(synth_config, {"seed": seed})
        series_path, labels_path = write_synth(labeled_config, output_dir)
    except Exception as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(1)

    console.print(f"[green]Series:[/green] {series_path}")
    console.print(f"[green]Labels:[/green] {labels_path}")
    console.print(f"  Steps:  {labeled_config.length}")
    console.print(f"  Bursts: {len(labeled_config.bursts)}")


@app.command()
def train(
    config: Path = CONFIG_OPTION,
    output_dir: Path = OUTPUT_DIR_OPTION,
    seed: int = SEED_OPTION,
    horizons: str = HORIZONS_OPTION,
    epochs: int = EPOCHS_OPTION,
    jobs: int = typer.Option(None, "--jobs", "-j", help="Train horizons in parallel processes"),
):
    """Train one model per horizon on the ingested train split."""
    _run_stages(
        {"train"},
        config,
        _overrides(output_dir=output_dir, seed=seed, horizons=horizons, epochs=epochs, jobs=jobs),
    )


@app.command()
def calibrate(
    config: Path = CONFIG_OPTION,
    output_dir: Path = OUTPUT_DIR_OPTION,
    horizons: str = HORIZONS_OPTION,
    interval: int = INTERVAL_OPTION,
    grid_min: float = GRID_MIN_OPTION,
    grid_max: float = GRID_MAX_OPTION,
    grid_step: float = GRID_STEP_OPTION,
    q: float = Q_OPTION,
    min_attack_duration: int = MIN_ATTACK_OPTION,
):
    """
    Choose CR from the shortest attack duration, then the smallest grid PET
    that keeps a q-fraction of the valid split normal.
    """
    _run_stages(
        {"calibrate"},
        config,
        _overrides(
            output_dir=output_dir,
            horizons=horizons,
            interval=interval,
            grid_min=grid_min,
            grid_max=grid_max,
            grid_step=grid_step,
            q=q,
            min_attack_duration=min_attack_duration,
        ),
    )


@app.command()
def detect(
    config: Path = CONFIG_OPTION,
    output_dir: Path = OUTPUT_DIR_OPTION,
    horizons: str = HORIZONS_OPTION,
    series: list[Path] = typer.Option(None, "--series", help="Extra unscaled series CSV to score (repeatable)"),
):
    """Score the valid and test splits (and any --series files) and write reports."""
    _run_stages({"detect"}, config, _overrides(output_dir=output_dir, horizons=horizons), extra_series=series)


@app.command()
def report(
    config: Path = CONFIG_OPTION,
    output_dir: Path = OUTPUT_DIR_OPTION,
):
    """Print every report as one region/ratio table and save it to summary.txt."""
    try:
        run_config = load_run_config(config, _overrides(output_dir=output_dir))
        table, path = write_summary(run_config.output_dir)
    except FileNotFoundError as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(2)
    except Exception as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(1)

    console.print(table)
    console.print(f"[green]Summary saved to:[/green] {path}")


@app.command()
def run(
    stages: str = typer.Option(",".join(STAGES), "--stages", help="Comma-separated stages to run"),
    input_file: Path = typer.Option(None, "--input", "-i", help="pcap capture, records CSV or series CSV"),
    config: Path = CONFIG_OPTION,
    output_dir: Path = OUTPUT_DIR_OPTION,
    seed: int = SEED_OPTION,
    horizons: str = HORIZONS_OPTION,
    interval: int = INTERVAL_OPTION,
    metric: str = METRIC_OPTION,
    epochs: int = EPOCHS_OPTION,
    grid_min: float = GRID_MIN_OPTION,
    grid_max: float = GRID_MAX_OPTION,
    grid_step: float = GRID_STEP_OPTION,
    q: float = Q_OPTION,
    min_attack_duration: int = MIN_ATTACK_OPTION,
):
    """
    Run several pipeline stages in order.

    Examples:
        collectivelstm run --config run.conf
        collectivelstm run --config run.conf --stages calibrate,detect --q 0.97
    """
    requested = {s.strip() for s in stages.split(",") if s.strip()}
    _run_stages(
        requested,
        config,
        _overrides(
            input=input_file,
            output_dir=output_dir,
            seed=seed,
            horizons=horizons,
            interval=interval,
            metric=metric,
            epochs=epochs,
            grid_min=grid_min,
            grid_max=grid_max,
            grid_step=grid_step,
            q=q,
            min_attack_duration=min_attack_duration,
        ),
    )


@app.command()
def experiment(
    synth_config: Path = typer.Argument(
        ...,
        help="Synth config whose bursts fall only in the test split",
        exists=True,
        file_okay=True,
        dir_okay=False,
        readable=True,
    ),
    config: Path = CONFIG_OPTION,
    output_dir: Path = OUTPUT_DIR_OPTION,
    seed: int = SEED_OPTION,
    horizons: str = HORIZONS_OPTION,
    epochs: int = EPOCHS_OPTION,
    q: float = Q_OPTION,
    min_attack_duration: int = MIN_ATTACK_OPTION,
):
    """
    Train on normal synthetic traffic, calibrate on normal data, detect on the
    split holding the injected bursts and score the regions against the labels.
    """
    try:
        run_config = load_run_config(
            config,
            _overrides(
                output_dir=output_dir,
                seed=seed,
                horizons=horizons,
                epochs=epochs,
                q=q,
                min_attack_duration=min_attack_duration,
            ),
        )
        result = run_experiment(load_synth_config(synth_config), run_config)
    except Exception as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(1)

    table = Table(title="Synthetic experiment")
    table.add_column("Horizon", justify="right")
    table.add_column("Valid regions", justify="right")
    table.add_column("Test regions")
    table.add_column("Test ratio", justify="right")
    table.add_column("Burst coverage", justify="right")
    table.add_column("False positives", justify="right")
    for h, test_report in sorted(result.test_reports.items()):
        score = result.test_scores[h]
        coverage = ", ".join(f"{c:.0%}" for c in score["burst_coverage"]) or "-"
        table.add_row(
            str(h),
            str(result.calibration_regions.get(h, 0)),
            "; ".join(str(r) for r in test_report.regions) or "-",
            test_report.ratio_percent,
            coverage,
            f"{score['false_positive_fraction']:.2%}",
        )
    console.print(table)
