"""CLI commands for tracelearn."""

import logging
import sys

import click
import yaml
from pydantic import ValidationError

from . import __version__
from .config import DetectorConfig
from .errors import TraceLearnError
from .evaluation import cross_validate
from .graph import build_graph, export_dot
from .monitor import Decision, MonitorMode, run_monitor, write_verdicts
from .plan import derive_plan, load_plan, save_plan
from .reporter import Reporter
from .synth import ScenarioSpec, default_scenario, generate_dataset, load_dataset
from .traces import open_stream, parse_trace
from .training import ProcessClass, TrainingCorpus, load_model, save_model, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class ExitCodeGroup(click.Group):
    """Maps failures onto the exit-code contract: 1 for usage, 2 for data errors.

    An ANOMALOUS verdict is a result, so detection commands still exit 0.
    """

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(
                args=args,
                prog_name=prog_name,
                complete_var=complete_var,
                standalone_mode=False,
                **extra,
            )
        except click.UsageError as exc:
            exc.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as exc:
            exc.show()
            sys.exit(EXIT_DATA)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        except (TraceLearnError, ValidationError, yaml.YAMLError, OSError) as exc:
            click.echo(click.style(f"Error: {exc}", fg="red"), err=True)
            sys.exit(EXIT_DATA)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def threshold_options(f):
    """Training thresholds; each overrides the config file value."""
    f = click.option(
        "--absolute-slack", type=float, help="Slack added to every band [default: 0.5]"
    )(f)
    f = click.option(
        "--tolerance-factor", type=float, help="Multiplier of the max residual [default: 1.0]"
    )(f)
    f = click.option(
        "--r2-threshold", type=float, help="Minimum R² for a feature to be kept [default: 0.95]"
    )(f)
    return click.option(
        "-c",
        "--config",
        "config_file",
        type=click.Path(exists=True, dir_okay=False),
        help="Detector config YAML",
    )(f)


def monitor_options(f):
    """Monitor settings; each overrides the config file value."""
    f = click.option(
        "--flag-unknown/--no-flag-unknown",
        default=None,
        help="Treat executables unseen in training as anomalous [default: on]",
    )(f)
    f = click.option("--endpoint", help="Count only REQUEST events on this endpoint")(f)
    f = click.option(
        "--period", type=float, help="PERIODIC verdict interval, seconds [default: 60]"
    )(f)
    return click.option(
        "--mode",
        type=click.Choice([m.value for m in MonitorMode]),
        help="Verdict schedule [default: END_OF_RUN]",
    )(f)


@click.group(cls=ExitCodeGroup)
@click.version_option(version=__version__, prog_name="tracelearn")
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output")
def main(verbose: int):
    """tracelearn - learn normal process behaviour from traces and flag anomalous runs.

    Trace files are tab-separated, one event per line after a
    '#tracelearn-trace' metadata line. Exit codes: 0 success (ANOMALOUS
    included), 1 usage error, 2 data or validation error.
    """
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )


@main.command()
@click.option(
    "--spec",
    "spec_file",
    type=click.Path(exists=True, dir_okay=False),
    help="Scenario YAML [default: built-in two-host scenario]",
)
@click.option("--normal", "n_normal", type=int, default=60, show_default=True, help="Normal runs")
@click.option("--fault", "n_fault", type=int, default=120, show_default=True, help="Fault runs")
@click.option("--min-workload", type=int, default=1, show_default=True)
@click.option("--max-workload", type=int, default=5, show_default=True)
@click.option(
    "--seed", type=int, help="Dataset seed [default: the config seed, else the scenario seed]"
)
@click.option(
    "-c",
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False),
    help="Detector config YAML supplying the seed",
)
@click.argument("out_dir", type=click.Path(file_okay=False))
def generate(
    spec_file: str | None,
    n_normal: int,
    n_fault: int,
    min_workload: int,
    max_workload: int,
    seed: int | None,
    config_file: str | None,
    out_dir: str,
):
    """Generate a synthetic dataset of normal and fault-injected traces."""
    if seed is None and config_file:
        seed = DetectorConfig.from_file(config_file).seed
    spec = ScenarioSpec.from_file(spec_file) if spec_file else default_scenario()
    manifest = generate_dataset(
        spec, out_dir, n_normal, n_fault, (min_workload, max_workload), seed
    )
    click.echo(click.style(f"Wrote {len(manifest.runs)} runs to {out_dir}", fg="green"))


@main.command("train")
@click.argument("dataset", type=click.Path(exists=True, file_okay=False))
@click.option(
    "-o",
    "--output",
    "model_file",
    required=True,
    type=click.Path(dir_okay=False),
    help="Model file to write",
)
@threshold_options
def train_command(
    dataset: str,
    model_file: str,
    config_file: str | None,
    r2_threshold: float | None,
    tolerance_factor: float | None,
    absolute_slack: float | None,
):
    """Fit the normal-behaviour model on the NORMAL runs of a dataset."""
    config = DetectorConfig.resolve(
        config_file,
        r2_threshold=r2_threshold,
        tolerance_factor=tolerance_factor,
        absolute_slack=absolute_slack,
    )
    data = load_dataset(dataset)
    excluded = len(data.traces) - len(data.normal)
    if excluded:
        click.echo(f"Excluded {excluded} non-NORMAL run(s) from training")
    corpus = TrainingCorpus.from_traces(data.traces)
    model = train(
        corpus,
        r2_threshold=config.r2_threshold,
        tolerance_factor=config.tolerance_factor,
        absolute_slack=config.absolute_slack,
    )

    sections = {"config": config.model_dump(mode="json", exclude={"seed"})}
    if model.selected:
        sections["plan"] = derive_plan(model).to_dict()
    save_model(model, model_file, sections)

    click.echo(f"Selected {len(model.selected)} of {len(model.registry)} features:")
    for feature in model.selected:
        fit = model.fits[feature]
        r2 = fit.r2 if isinstance(fit.r2, str) else f"{fit.r2:.4f}"
        click.echo(
            f"  {str(feature):<28} slope={fit.slope:.4g} intercept={fit.intercept:.4g} r2={r2}"
        )
    roles = model.process_classes()
    click.echo("Process classes:")
    for role in ProcessClass:
        exes = [exe for exe, exe_role in roles.items() if exe_role is role]
        if exes:
            click.echo(f"  {role:<11} {', '.join(exes)}")
    if model.selected:
        click.echo(click.style(f"Model written to {model_file}", fg="green"))
    else:
        click.echo(click.style(f"No feature selected; {model_file} cannot be monitored", fg="red"))


@main.command("plan")
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", "plan_file", type=click.Path(dir_okay=False), help="Plan file")
def plan_command(model_file: str, plan_file: str | None):
    """Print (and optionally save) the event filters a model needs."""
    plan = derive_plan(load_model(model_file))
    for line in plan.describe():
        click.echo(line)
    if plan_file:
        save_plan(plan, plan_file)
        click.echo(click.style(f"Plan written to {plan_file}", fg="green"))


@main.command()
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("trace", type=click.File("r", encoding="utf-8", errors="surrogateescape"))
@click.option(
    "--plan",
    "plan_file",
    type=click.Path(exists=True, dir_okay=False),
    help="Plan file [default: the plan stored in the model]",
)
@click.option(
    "-c",
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False),
    help="Detector config YAML",
)
@monitor_options
@click.option("--strict", is_flag=True, help="Stop at the first malformed record")
@click.option(
    "-o",
    "--output",
    type=click.File("w", encoding="utf-8"),
    default="-",
    help="Verdict records (JSON lines) [default: stdout]",
)
def monitor(
    model_file: str,
    trace,
    plan_file: str | None,
    config_file: str | None,
    mode: str | None,
    period: float | None,
    endpoint: str | None,
    flag_unknown: bool | None,
    strict: bool,
    output,
):
    """Stream a trace (or '-' for stdin) through the monitor and emit verdicts."""
    config = DetectorConfig.resolve(
        config_file, mode=mode, period=period, endpoint=endpoint, flag_unknown=flag_unknown
    )
    model = load_model(model_file)
    plan = load_plan(plan_file or model_file)

    rejected: list[TraceLearnError] = []
    header, events = open_stream(trace, strict=strict, on_error=rejected.append)
    result = run_monitor(
        events,
        model,
        plan,
        mode=config.mode,
        period=config.period,
        endpoint=config.endpoint,
        flag_unknown=config.flag_unknown,
    )
    write_verdicts(result.verdicts, output, header["run_id"] if header else None)

    malformed = len(rejected) + result.malformed
    if malformed:
        click.echo(click.style(f"Skipped {malformed} malformed record(s)", fg="yellow"), err=True)
    if result.error is not None:
        click.echo(click.style(f"Error: {result.error}", fg="red"), err=True)
        sys.exit(EXIT_DATA)
    if result.anomalous:
        click.echo(click.style(Decision.ANOMALOUS, fg="red"), err=True)
    else:
        click.echo(click.style(Decision.NORMAL, fg="green"), err=True)


@main.command()
@click.argument("dataset", type=click.Path(exists=True, file_okay=False))
@threshold_options
@monitor_options
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False),
    help="Write report.json and folds.csv here",
)
def evaluate(
    dataset: str,
    config_file: str | None,
    r2_threshold: float | None,
    tolerance_factor: float | None,
    absolute_slack: float | None,
    mode: str | None,
    period: float | None,
    endpoint: str | None,
    flag_unknown: bool | None,
    out_dir: str | None,
):
    """10-fold cross-validation of train, plan and monitor on a dataset."""
    config = DetectorConfig.resolve(
        config_file,
        r2_threshold=r2_threshold,
        tolerance_factor=tolerance_factor,
        absolute_slack=absolute_slack,
        mode=mode,
        period=period,
        endpoint=endpoint,
        flag_unknown=flag_unknown,
    )
    report = cross_validate(dataset, config)
    reporter = Reporter(out_dir or ".")
    click.echo(reporter.render_table(report))
    if out_dir:
        for path in reporter.write_all(report):
            click.echo(f"Wrote {path}")

    recall, selectivity = report.mean_recall, report.mean_selectivity
    ok = recall is not None and selectivity is not None
    summary = (
        f"Recall {recall:.3f}, Selectivity {selectivity:.3f}"
        if ok
        else f"Recall {recall}, Selectivity {selectivity}"
    )
    click.echo(click.style(summary, fg="green" if ok else "yellow"))


@main.command("export-dot")
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="DOT file")
def export_dot_command(trace_file: str, output: str):
    """Render the system graph of a trace as Graphviz DOT."""
    graph = build_graph(parse_trace(trace_file))
    export_dot(graph, output)
    click.echo(
        click.style(
            f"Wrote {len(graph)} processes and {len(graph.edges)} interactions to {output}",
            fg="green",
        )
    )


if __name__ == "__main__":
    main()
