import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from vqe_bayes import cli, harness
from vqe_bayes.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    check_budget,
    emit_csv,
    emit_plot,
    read_csv,
    run_experiment,
)
from vqe_bayes.pauli import build_matrix, ising_hamiltonian
from vqe_bayes.trace import OptimizationTrace, TraceRow

SVG = "{http://www.w3.org/2000/svg}"


def fake_trace(values, run_id=None):
    rows = [
        TraceRow(i + 1, 16 * (i + 1), v, 0.1, np.zeros(6), v - 0.01, v + 0.02, 0.5 + 0.01 * i)
        for i, v in enumerate(values)
    ]
    return OptimizationTrace(rows=rows, run_id=run_id)


def small_cfg(tmp_path=None, **kw):
    args = dict(optimizer="nft", measurements=10, shots=8, runs=2, seed=3, out_dir=tmp_path)
    args.update(kw)
    return ExperimentConfig(**args)


@pytest.fixture(autouse=True)
def serial(monkeypatch):
    monkeypatch.setenv("VQE_BAYES_THREADS", "1")


# -- configuration ----------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(optimizer="adam")
    with pytest.raises(ConfigError):
        ExperimentConfig(runs=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(shots=1)
    with pytest.raises(ConfigError):
        ExperimentConfig(optimizer="spsa", measurements=3)


def test_reference_setups_share_the_budget():
    cfgs = [ExperimentConfig(measurements=n, shots=s) for n, s in harness.REFERENCE_SETUPS]
    assert [c.total_shots for c in cfgs] == [1280] * 3
    assert check_budget(cfgs)
    with pytest.warns(UserWarning):
        assert not check_budget(cfgs + [ExperimentConfig(measurements=10, shots=16)])


def test_worker_count(monkeypatch):
    monkeypatch.setenv("VQE_BAYES_THREADS", "3")
    assert harness.worker_count() == 3
    monkeypatch.setenv("VQE_BAYES_THREADS", "0")
    assert harness.worker_count() >= 1


# -- aggregation ------------------------------------------------------------


def test_single_run_aggregate():
    result = ExperimentResult("x", [fake_trace([1.0, 0.5, 0.2])])
    agg = result.aggregate()
    assert not agg.se_defined
    np.testing.assert_array_equal(agg.stderr["fidelity"], 0.0)
    np.testing.assert_allclose(agg.mean["best_energy_model"], [0.99, 0.49, 0.19])


def test_aggregate_standard_error():
    result = ExperimentResult("x", [fake_trace([1.0, 0.0]), fake_trace([3.0, 0.0])])
    agg = result.aggregate()
    assert agg.se_defined
    np.testing.assert_allclose(agg.mean["true_energy"], [2.02, 0.02])
    # sd of (1, 3) with ddof 1 is sqrt2; divided by sqrt(R=2) gives 1
    np.testing.assert_allclose(agg.stderr["true_energy"], [1.0, 0.0], atol=1e-15)


def test_aggregate_truncates_to_common_length():
    agg = ExperimentResult("x", [fake_trace([1, 2, 3]), fake_trace([1, 2])]).aggregate()
    assert list(agg.iteration) == [1, 2]


# -- CSV --------------------------------------------------------------------


def test_empty_result_is_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    emit_csv(ExperimentResult("empty", []), path)
    assert path.read_bytes() == (",".join(CSV_HEADER) + "\n").encode()


def test_csv_rows_and_format(tmp_path):
    path = tmp_path / "r.csv"
    emit_csv(ExperimentResult("r", [fake_trace([1 / 3, 0.5, 0.25]), fake_trace([0.1, 0.2, 0.3])]), path)
    data = path.read_bytes()
    assert b"\r" not in data
    lines = data.decode().splitlines()
    assert lines[0] == "run_id,iteration,cumulative_shots,energy_estimate,energy_stderr," \
                       "best_energy_model,true_energy,fidelity"
    assert len(lines) == 7
    assert lines[1].split(",")[:4] == ["1", "1", "16", "0.333333333"]
    assert lines[4].startswith("2,1,16,")


def test_csv_roundtrip_reproduces_aggregates(tmp_path):
    rng = np.random.default_rng(0)
    traces = [fake_trace(rng.normal(size=5) / 7, run_id=i) for i in (1, 2, 3)]
    original = ExperimentResult("r", traces)
    path = tmp_path / "r.csv"
    emit_csv(original, path)
    restored = read_csv(path)
    assert restored.name == "r"
    a, b = original.aggregate(), restored.aggregate()
    for f in harness.AGGREGATED_FIELDS:
        np.testing.assert_allclose(a.mean[f], b.mean[f], atol=1e-8)
        np.testing.assert_allclose(a.stderr[f], b.stderr[f], atol=1e-8)


def test_read_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(path)


# -- experiments ------------------------------------------------------------


def test_experiment_is_deterministic(tmp_path):
    first = run_experiment(small_cfg(tmp_path / "a"))
    second = run_experiment(small_cfg(tmp_path / "b"))
    name = small_cfg().name
    assert (tmp_path / "a" / f"{name}.csv").read_bytes() == (tmp_path / "b" / f"{name}.csv").read_bytes()
    assert [t.run_id for t in first.traces] == [1, 2]
    assert len(second.traces) == 2


def test_parallel_matches_serial():
    serial_result = run_experiment(small_cfg(optimizer="spsa"), workers=1)
    parallel_result = run_experiment(small_cfg(optimizer="spsa"), workers=2)
    for a, b in zip(serial_result.traces, parallel_result.traces):
        assert [r.best_energy_model for r in a.rows] == [r.best_energy_model for r in b.rows]


def test_runs_use_distinct_seeds():
    result = run_experiment(small_cfg(optimizer="spsa"))
    a, b = result.traces
    assert a.rows[0].energy_estimate != b.rows[0].energy_estimate


def test_summary_contents(tmp_path):
    cfg = small_cfg(tmp_path)
    run_experiment(cfg)
    summary = json.loads((tmp_path / f"{cfg.name}_summary.json").read_text())
    assert summary["total_shots"] == 80
    assert summary["runs_completed"] == 2
    assert summary["exact_ground_energy"] == pytest.approx(-math.sqrt(5), abs=1e-10)
    assert 0 <= summary["final"]["fidelity"]["median"] <= 1


def test_diagnostics_are_exact():
    result = run_experiment(small_cfg(optimizer="nft", runs=1))
    trace = result.traces[0]
    assert all(np.isfinite(r.fidelity) and 0 <= r.fidelity <= 1 + 1e-12 for r in trace.rows)
    assert all(r.true_energy >= -math.sqrt(5) - 1e-10 for r in trace.rows)


def test_failed_runs_are_reported(monkeypatch):
    original = harness.run_single

    def flaky(cfg, run_id):
        if run_id == 2:
            raise RuntimeError("simulated crash")
        return original(cfg, run_id)

    monkeypatch.setattr(harness, "run_single", flaky)
    with pytest.warns(UserWarning):
        result = run_experiment(small_cfg(runs=3))
    assert [t.run_id for t in result.traces] == [1, 3]
    assert "simulated crash" in result.failures[2]


# -- plot -------------------------------------------------------------------


def test_single_result_plot(tmp_path):
    path = tmp_path / "fig.svg"
    emit_plot([ExperimentResult("only", [fake_trace([0.1, 0.2])])], path)
    root = ET.parse(path).getroot()
    panels = [g for g in root.iter(f"{SVG}g") if g.get("class") == "panel"]
    assert len(panels) == 2
    refs = [float(l.get("data-value")) for l in root.iter(f"{SVG}line") if l.get("class") == "reference"]
    exact = np.min(np.linalg.eigvalsh(build_matrix(ising_hamiltonian())))
    assert refs[0] == pytest.approx(exact, abs=1e-8)
    assert refs[0] == pytest.approx(-2.23606798, abs=1e-8)
    assert refs[1] == 1.0


def test_four_results_four_legend_entries(tmp_path):
    results = [ExperimentResult(f"opt{i}", [fake_trace([0.1 * i, 0.2])]) for i in range(4)]
    path = tmp_path / "fig.svg"
    emit_plot(results, path)
    root = ET.parse(path).getroot()
    entries = [g for g in root.iter(f"{SVG}g") if g.get("class") == "legend-entry"]
    assert len(entries) == 4
    assert [e.find(f"{SVG}text").text for e in entries] == ["opt0", "opt1", "opt2", "opt3"]


def test_plot_needs_a_result(tmp_path):
    with pytest.raises(ValueError):
        emit_plot([], tmp_path / "x.svg")


# -- command line -----------------------------------------------------------


def test_cli_run_and_plot(tmp_path, capsys):
    out = tmp_path / "res"
    code = cli.main(["run", "--optimizer", "spsa", "--measurements", "8", "--shots", "4",
                     "--runs", "2", "--seed", "1", "--out", str(out)])
    assert code == 0
    csv_path = out / "spsa_N8_S4.csv"
    assert csv_path.exists() and (out / "spsa_N8_S4_summary.json").exists()
    fig = tmp_path / "fig.svg"
    assert cli.main(["plot", "--inputs", str(csv_path), "--out", str(fig)]) == 0
    ET.parse(fig)


@pytest.mark.parametrize("argv", [
    ["run", "--optimizer", "adam"],
    ["run", "--optimizer", "nft", "--runs", "0"],
    ["run", "--noise", "loud"],
    ["run", "--measurements", "ten"],
    ["frobnicate"],
    [],
])
def test_cli_config_errors(argv, capsys):
    assert cli.main(argv) == 1
    assert "configuration error" in capsys.readouterr().err


def test_cli_runtime_error(tmp_path):
    missing = tmp_path / "nope.csv"
    assert cli.main(["plot", "--inputs", str(missing), "--out", str(tmp_path / "f.svg")]) == 2


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "exp.conf"
    out = tmp_path / "out"
    conf.write_text(f"# small run\noptimizer = nft\nmeasurements = 9\nshots = 4\nruns = 1\nout = {out}\n")
    assert cli.main(["run", "--config", str(conf), "--shots", "6"]) == 0
    assert (out / "nft_N9_S6.csv").exists()


def test_config_file_unknown_key(tmp_path):
    conf = tmp_path / "exp.conf"
    conf.write_text("learning_rate = 3\n")
    assert cli.main(["run", "--config", str(conf)]) == 1


def test_cli_hamiltonian_file(tmp_path):
    ham = tmp_path / "h.txt"
    ham.write_text("-1.0 ZZ\n0.5 XI\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--optimizer", "nft", "--measurements", "6", "--shots", "4",
                     "--runs", "1", "--hamiltonian", str(ham), "--out", str(out)]) == 0
    summary = json.loads((out / "nft_N6_S4_summary.json").read_text())
    assert summary["exact_ground_energy"] == pytest.approx(-math.sqrt(1.25), abs=1e-10)
    bad = tmp_path / "bad.txt"
    bad.write_text("-1.0 ZZZ\n")
    assert cli.main(["run", "--hamiltonian", str(bad)]) == 1
