"""Command-line interface and its exit codes."""

import json
import logging
from contextlib import contextmanager

import pytest
from click.testing import CliRunner

from tracelearn import __version__
from tracelearn.cli import main
from tracelearn.training import save_model

from .conftest import REPO_ROOT


@contextmanager
def preserved_root_logger():
    """The CLI reconfigures the root logger onto the runner's stderr; undo that."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    try:
        yield
    finally:
        root.handlers[:] = handlers
        root.setLevel(level)


@pytest.fixture(autouse=True)
def restore_logging():
    with preserved_root_logger():
        yield


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A small generated dataset and the model trained on it."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    with preserved_root_logger():
        result = runner.invoke(
            main, ["generate", "--normal", "20", "--fault", "8", "--seed", "0", str(root / "data")]
        )
        assert result.exit_code == 0, result.output
        result = runner.invoke(main, ["train", str(root / "data"), "-o", str(root / "model.json")])
        assert result.exit_code == 0, result.output
    return root


def read_records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.mark.smoke
def test_version(runner):
    """--version prints the package version."""
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


@pytest.mark.smoke
def test_usage_errors_exit_1(runner, tmp_path):
    """A missing input file or an unknown option is a usage error."""
    result = runner.invoke(main, ["generate", "--spec", str(tmp_path / "nope.yml"), "out"])
    assert result.exit_code == 1
    result = runner.invoke(main, ["train", "--bogus"])
    assert result.exit_code == 1
    result = runner.invoke(main, ["evaluate", str(tmp_path), "--mode", "SOMETIMES"])
    assert result.exit_code == 1


@pytest.mark.smoke
def test_generate_reports_run_count(runner, tmp_path):
    """generate writes the requested runs and the manifest."""
    out = tmp_path / "data"
    result = runner.invoke(main, ["generate", "--normal", "10", "--fault", "2", str(out)])
    assert result.exit_code == 0, result.output
    assert "Wrote 12 runs" in result.output
    assert len(list(out.glob("*.trace"))) == 12
    assert (out / "manifest.yml").exists()


@pytest.mark.regression
def test_generate_same_seed_same_files(runner, tmp_path):
    """Two generations with one seed are identical on disk."""
    for name in ("a", "b"):
        args = ["generate", "--normal", "10", "--fault", "3", "--seed", "9", str(tmp_path / name)]
        assert runner.invoke(main, args).exit_code == 0
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes(), path.name


@pytest.mark.regression
def test_generate_takes_the_seed_from_the_config(runner, tmp_path):
    """Without --seed, the config file's seed drives generation."""
    config = tmp_path / "detector.yml"
    config.write_text("seed: 9\n")
    counts = ["--normal", "10", "--fault", "2"]
    for name, extra in (("a", ["-c", str(config)]), ("b", ["--seed", "9"])):
        result = runner.invoke(main, ["generate", *counts, *extra, str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes(), path.name
    assert "seed: 9" in (tmp_path / "a" / "manifest.yml").read_text()


@pytest.mark.smoke
def test_generate_from_demo_scenario(runner, tmp_path):
    """The shipped scenario file drives generation."""
    spec = REPO_ROOT / "demo" / "scenario.yml"
    args = ["generate", "--spec", str(spec), "--normal", "10", "--fault", "0", str(tmp_path)]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output


@pytest.mark.regression
def test_train_summary(runner, workdir, tmp_path):
    """train excludes fault runs, lists the selected features and embeds a plan."""
    model_file = tmp_path / "m.json"
    result = runner.invoke(main, ["train", str(workdir / "data"), "-o", str(model_file)])
    assert result.exit_code == 0, result.output
    assert "Excluded 8 non-NORMAL run(s) from training" in result.output
    assert "Selected" in result.output
    assert "qemu-kvm/COUNT" in result.output
    assert "Process classes:" in result.output
    assert "UNSTABLE    crond-job, logrotate, sshd-session" in result.output
    document = json.loads(model_file.read_text())
    assert document["plan"]["filters"]
    assert document["config"]["r2_threshold"] == 0.95
    assert "seed" not in document["config"]
    assert document["classes"]["qemu-kvm"] == "WORKLOAD"
    assert document["classes"]["nova-api"] == "BACKGROUND"


@pytest.mark.regression
def test_train_with_one_workload_is_a_data_error(runner, tmp_path):
    """A corpus with a single workload cannot be fitted."""
    data = tmp_path / "data"
    args = ["generate", "--normal", "10", "--fault", "0", "--min-workload", "3"]
    assert runner.invoke(main, [*args, "--max-workload", "3", str(data)]).exit_code == 0
    result = runner.invoke(main, ["train", str(data), "-o", str(tmp_path / "m.json")])
    assert result.exit_code == 2
    assert "Error:" in result.output


@pytest.mark.regression
def test_bad_config_is_a_data_error(runner, workdir, tmp_path):
    """Out-of-range or unknown config values are validation errors."""
    for text in ("r2_threshold: 2\n", "threshold: 0.9\n", "period: [1\n"):
        config = tmp_path / "bad.yml"
        config.write_text(text)
        result = runner.invoke(
            main, ["train", str(workdir / "data"), "-c", str(config), "-o", str(tmp_path / "m")]
        )
        assert result.exit_code == 2, text


@pytest.mark.smoke
def test_demo_config_is_valid(runner, workdir, tmp_path):
    """The shipped detector config is accepted."""
    config = REPO_ROOT / "demo" / "detector.yml"
    args = ["train", str(workdir / "data"), "-c", str(config), "-o", str(tmp_path / "m.json")]
    assert runner.invoke(main, args).exit_code == 0


@pytest.mark.regression
def test_plan_command(runner, workdir, tmp_path):
    """plan prints the filters and can save them."""
    plan_file = tmp_path / "plan.json"
    result = runner.invoke(main, ["plan", str(workdir / "model.json"), "-o", str(plan_file)])
    assert result.exit_code == 0, result.output
    assert "REQUEST" in result.output
    assert json.loads(plan_file.read_text())["format"] == "tracelearn-plan"


@pytest.mark.regression
def test_monitor_fault_run_is_anomalous_with_exit_0(runner, workdir, tmp_path):
    """An ANOMALOUS verdict is a result, not a failure."""
    out = tmp_path / "v.jsonl"
    trace = workdir / "data" / "fault-0000.trace"
    args = ["monitor", str(workdir / "model.json"), str(trace), "-o", str(out)]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    assert "ANOMALOUS" in result.output
    records = read_records(out)
    assert len(records) == 1
    assert records[0]["run_id"] == "fault-0000"
    assert records[0]["decision"] == "ANOMALOUS"
    assert records[0]["evidence"]


@pytest.mark.regression
def test_monitor_reads_stdin(runner, workdir, tmp_path):
    """'-' streams the trace from standard input."""
    out = tmp_path / "v.jsonl"
    text = (workdir / "data" / "normal-0001.trace").read_text()
    result = runner.invoke(
        main, ["monitor", str(workdir / "model.json"), "-", "-o", str(out)], input=text
    )
    assert result.exit_code == 0, result.output
    assert "NORMAL" in result.output
    assert read_records(out)[0]["decision"] == "NORMAL"


@pytest.mark.regression
def test_monitor_periodic_mode(runner, workdir, tmp_path):
    """PERIODIC mode writes one record per boundary plus the final one."""
    out = tmp_path / "v.jsonl"
    trace = workdir / "data" / "normal-0004.trace"
    args = ["monitor", str(workdir / "model.json"), str(trace), "--mode", "PERIODIC"]
    result = runner.invoke(main, [*args, "--period", "1", "-o", str(out)])
    assert result.exit_code == 0, result.output
    records = read_records(out)
    assert len(records) > 1
    assert records[-1]["decision"] == "NORMAL"


@pytest.mark.regression
def test_monitor_malformed_records(runner, workdir, tmp_path):
    """Tolerant mode skips bad records; --strict turns them into exit code 2."""
    lines = (workdir / "data" / "normal-0002.trace").read_text().splitlines(keepends=True)
    lines.insert(len(lines) // 2, "garbage\n")
    broken = tmp_path / "broken.trace"
    broken.write_text("".join(lines))
    model_file = str(workdir / "model.json")
    out = str(tmp_path / "v.jsonl")

    result = runner.invoke(main, ["monitor", model_file, str(broken), "-o", out])
    assert result.exit_code == 0, result.output
    assert "Skipped 1 malformed record(s)" in result.output

    result = runner.invoke(main, ["monitor", model_file, str(broken), "--strict", "-o", out])
    assert result.exit_code == 2
    assert "Error:" in result.output


@pytest.mark.regression
def test_monitor_undecodable_and_oversized_lines(runner, workdir, tmp_path):
    """Bad bytes and over-long fields still end in a verdict; --strict makes them exit 2."""
    lines = (workdir / "data" / "fault-0000.trace").read_bytes().splitlines(keepends=True)
    middle = len(lines) // 2
    lines[middle:middle] = [b"\xff\xfe garbage\n", b"x" * 200_000 + b"\n"]
    broken = tmp_path / "broken.trace"
    broken.write_bytes(b"".join(lines))
    model_file = str(workdir / "model.json")
    out = tmp_path / "v.jsonl"

    result = runner.invoke(main, ["monitor", model_file, str(broken), "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert "Skipped 2 malformed record(s)" in result.output
    assert [r["decision"] for r in read_records(out)] == ["ANOMALOUS"]

    args = ["monitor", model_file, str(broken), "--strict", "-o", str(out)]
    result = runner.invoke(main, args)
    assert result.exit_code == 2
    assert "Error:" in result.output
    assert len(read_records(out)) == 1


@pytest.mark.regression
def test_corrupt_dataset_file_is_a_data_error(runner, tmp_path):
    """A trace file with invalid UTF-8 makes train exit 2."""
    data = tmp_path / "data"
    result = runner.invoke(main, ["generate", "--normal", "10", "--fault", "0", str(data)])
    assert result.exit_code == 0, result.output
    path = data / "normal-0003.trace"
    path.write_bytes(path.read_bytes() + b"\xff\n")
    result = runner.invoke(main, ["train", str(data), "-o", str(tmp_path / "m.json")])
    assert result.exit_code == 2
    assert "normal-0003.trace" in result.output


@pytest.mark.regression
def test_monitor_needs_a_plan(runner, workdir, model, tmp_path):
    """A model file without a plan section needs --plan."""
    bare = tmp_path / "bare.json"
    save_model(model, bare)
    trace = workdir / "data" / "normal-0000.trace"
    result = runner.invoke(main, ["monitor", str(bare), str(trace)])
    assert result.exit_code == 2
    assert "no monitoring plan" in result.output


@pytest.mark.regression
def test_evaluate_writes_reproducible_reports(runner, workdir, tmp_path):
    """evaluate prints the fold table and writes the same files twice."""
    for name in ("a", "b"):
        args = ["evaluate", str(workdir / "data"), "--out", str(tmp_path / name)]
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.output
        assert "mean" in result.output
        assert "Recall" in result.output
    for name in ("report.json", "folds.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.smoke
def test_export_dot(runner, workdir, tmp_path):
    """export-dot writes a Graphviz digraph."""
    dot = tmp_path / "g.dot"
    trace = workdir / "data" / "normal-0000.trace"
    result = runner.invoke(main, ["export-dot", str(trace), "-o", str(dot)])
    assert result.exit_code == 0, result.output
    assert dot.read_text().startswith('digraph "normal-0000" {')
