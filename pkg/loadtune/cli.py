import logging
import os.path
from typing import List, Optional

import click

from . import runner
from .benchmarks import BENCHMARKS
from .config import load_run_config
from .errors import EXIT_NUMERIC, EXIT_USAGE, LoadTuneError
from .forecaster import MODEL_PRESETS
from .metrics import evaluate, summarize
from .report import write_forecast
from .tuner import ALGORITHMS, report_render
from .types import MANUAL_HYPERPARAMS, Hyperparams

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVELS = [logging.WARNING, logging.INFO, logging.DEBUG]


@click.group()
@click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--verbose", "-v", count=True, help="-v for progress, -vv for debug output")
@click.pass_context
def cli(ctx, config_path: Optional[str], verbose: int):
    logging.basicConfig(level=LOG_LEVELS[min(verbose, 2)], format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj["config"] = load_run_config(config_path)


def split_options(f):
    f = click.option("--test-end", type=str, help="last test day, ISO date")(f)
    f = click.option("--train-end", type=str, help="last training day, ISO date")(f)
    return f


def data_option(f):
    return click.option("--data", "-d", type=click.Path(exists=True, dir_okay=False))(f)


@cli.command("gen-data")
@click.option("--hours", type=int)
@click.option("--seed", type=int)
@click.option("--noise", type=float)
@click.option("--out", "-o", required=True, type=str)
@click.pass_context
def gen_data(ctx, hours: Optional[int], seed: Optional[int], noise: Optional[float], out: str):
    cfg = ctx.obj["config"].with_overrides(
        data={"hours": hours, "noise": noise}, seeds={"data": seed}
    )
    count = runner.generate_data(cfg.data.hours, cfg.seeds.data, out, cfg.data.noise)
    click.echo(f"Wrote {count} hours to {out}")


@cli.command()
@data_option
@click.option("--out", "-o", required=True, type=str)
@click.pass_context
def preprocess(ctx, data: Optional[str], out: str):
    cfg = ctx.obj["config"].with_overrides(paths={"data": data})
    raw, cleaned = runner.preprocess(cfg.paths.data, out)
    click.echo(f"Cleaned {raw} rows into {cleaned} rows, written to {out}")


@cli.command()
@click.option("--algo", "algorithm", type=click.Choice(ALGORITHMS))
@data_option
@click.option("--budget", type=int, help="maximum number of fitness evaluations")
@click.option("--population", type=int)
@click.option("--seed", type=int, help="search seed")
@click.option("--model-seed", type=int)
@click.option("--epoch-cap", type=int, help="cap training epochs (desk-scale runs)")
@click.option("--workers", type=int, help="parallel candidate trainings")
@click.option("--preset", type=click.Choice(list(MODEL_PRESETS)))
@split_options
@click.option("--out", "-o", "report_dir", type=str, help="report directory")
@click.pass_context
def tune(
    ctx,
    algorithm: Optional[str],
    data: Optional[str],
    budget: Optional[int],
    population: Optional[int],
    seed: Optional[int],
    model_seed: Optional[int],
    epoch_cap: Optional[int],
    workers: Optional[int],
    preset: Optional[str],
    train_end: Optional[str],
    test_end: Optional[str],
    report_dir: Optional[str],
):
    cfg = ctx.obj["config"].with_overrides(
        paths={"data": data, "report_dir": report_dir},
        split={"train_end": train_end, "test_end": test_end},
        model={"preset": preset},
        tuning={
            "algorithm": algorithm,
            "budget": budget,
            "population": population,
            "epoch_cap": epoch_cap,
            "workers": workers,
        },
        seeds={"search": seed, "model": model_seed},
    )
    report, paths = runner.run_tune(cfg)
    click.echo(report_render([report]))
    for path in paths:
        click.echo(f"Wrote {path}")


@cli.command()
@data_option
@click.option("--from-report", type=click.Path(exists=True, dir_okay=False))
@click.option("--batch-size", type=int)
@click.option("--epochs", type=int)
@click.option("--lr", "learning_rate", type=float)
@click.option("--epoch-cap", type=int)
@click.option("--seed", type=int, help="model seed")
@click.option("--preset", type=click.Choice(list(MODEL_PRESETS)))
@split_options
@click.option("--out", "-o", "model_out", type=str, help="model bundle path")
@click.option("--report-out", type=str, help="train report JSON path")
@click.pass_context
def train(
    ctx,
    data: Optional[str],
    from_report: Optional[str],
    batch_size: Optional[int],
    epochs: Optional[int],
    learning_rate: Optional[float],
    epoch_cap: Optional[int],
    seed: Optional[int],
    preset: Optional[str],
    train_end: Optional[str],
    test_end: Optional[str],
    model_out: Optional[str],
    report_out: Optional[str],
):
    cfg = ctx.obj["config"].with_overrides(
        paths={"data": data, "model": model_out},
        split={"train_end": train_end, "test_end": test_end},
        model={"preset": preset},
        tuning={"epoch_cap": epoch_cap},
        seeds={"model": seed},
    )
    base = runner.hyperparams_from(from_report, MANUAL_HYPERPARAMS)
    hp = Hyperparams(
        batch_size=base.batch_size if batch_size is None else batch_size,
        epochs=base.epochs if epochs is None else epochs,
        learning_rate=base.learning_rate if learning_rate is None else learning_rate,
    )
    curve = runner.run_train(cfg, hp, cfg.paths.model, report_out)
    click.echo(
        f"Trained {curve.epochs} epochs: train loss {curve.train_loss[-1]:.6g}, "
        f"validation loss {curve.val_loss[-1]:.6g}"
    )
    click.echo(f"Wrote {cfg.paths.model}")


@cli.command()
@click.option("--model", "-m", "model_path", type=click.Path(exists=True, dir_okay=False))
@data_option
@click.option("--start", type=int, help="source row of the first forecast hour")
@click.option("--horizon", type=int)
@click.option("--out", "-o", required=True, type=str)
@click.pass_context
def forecast(
    ctx,
    model_path: Optional[str],
    data: Optional[str],
    start: Optional[int],
    horizon: Optional[int],
    out: str,
):
    cfg = ctx.obj["config"].with_overrides(paths={"data": data, "model": model_path})
    points = runner.run_forecast(cfg.paths.model, cfg.paths.data, start, horizon)
    write_forecast(points, out)
    summary = summarize(
        evaluate([p.actual_mw for p in points], [p.predicted_mw for p in points])
    )
    click.echo(
        f"Forecast {summary['count']} hours from hour {points[0].hour_index} to {out}, "
        f"MAPE {summary['mape']}%"
    )


@cli.command()
@click.option("--suite", required=True, type=click.Choice(list(BENCHMARKS)))
@click.option("--algo", "algorithm", default="de", type=click.Choice(["de", "ga", "pso", "random"]))
@click.option("--seed", default=0, type=int)
def bench(suite: str, algorithm: str, seed: int) -> int:
    outcome = runner.run_bench(suite, algorithm, seed)
    click.echo(outcome.summary())
    return 0 if outcome.passed else EXIT_NUMERIC


@cli.command("export-plots")
@click.option("--kind", required=True, type=click.Choice(runner.EXPORT_KINDS))
@click.option("--report", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "-m", "model_path", type=click.Path(exists=True, dir_okay=False))
@data_option
@click.option("--start", type=int, help="first forecast hour (nth_hour)")
@click.option("--out", "-o", type=str, help="output CSV, default <exports_dir>/<kind>.csv")
@click.pass_context
def export_plots(
    ctx,
    kind: str,
    report: Optional[str],
    model_path: Optional[str],
    data: Optional[str],
    start: Optional[int],
    out: Optional[str],
):
    cfg = ctx.obj["config"].with_overrides(paths={"data": data, "model": model_path})
    if out is None:
        out = os.path.join(cfg.paths.exports_dir, f"{kind}.csv")
    click.echo(runner.export_plots(kind, out, report, cfg.paths.model, cfg.paths.data, start))


@cli.command()
@click.argument("reports", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--dir", "report_dir", type=click.Path(file_okay=False))
@click.pass_context
def report(ctx, reports: List[str], report_dir: Optional[str]):
    paths = list(reports)
    if report_dir or not paths:
        paths += runner.report_paths(report_dir or ctx.obj["config"].paths.report_dir)
    click.echo(runner.render_reports(paths))


def main(argv: Optional[List[str]] = None) -> int:
    try:
        result = cli.main(args=argv, prog_name="loadtune", standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except LoadTuneError as exc:
        logger.debug("Command failed", exc_info=True)
        click.echo(f"Error: {exc}", err=True)
        return exc.exit_code
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    raise SystemExit(main())
