"""End-to-end tests of the commands, the file formats and the CLI exit codes."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

import app
from gom_spectral.commands import (
    cmd_bench,
    cmd_eval,
    cmd_fit,
    cmd_gibbs,
    cmd_simulate,
    parse_column_range,
)
from gom_spectral.exceptions import EXIT_USAGE, EXIT_VALIDATION, UsageError, ValidationError
from gom_spectral.formats import (
    RunManifest,
    read_categories,
    read_json,
    read_matrix,
    read_suite,
    read_table,
    write_matrix,
)


def write_scenario(path, **document):
    path.write_text(json.dumps(document))
    return path


def metric_values(table):
    return dict(zip(table["metric"], table["value"]))


# =========================================================================
# Formats
# =========================================================================


class TestMatrixFiles:
    def test_header_and_comments_are_skipped(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("# produced by hand\na,b\n1,2.5\n3,4\n")
        assert_allclose(read_matrix(path), [[1.0, 2.5], [3.0, 4.0]])

    def test_bad_cell_names_file_and_line(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3,x\n")
        with pytest.raises(ValidationError) as error:
            read_matrix(path)
        assert error.value.location == f"{path}:2"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            read_matrix(tmp_path / "absent.csv")

    def test_written_doubles_survive(self, tmp_path):
        values = np.array([[1 / 3, np.pi], [1e-300, -2.5e17]])
        path = write_matrix(tmp_path / "m.csv", values, ["x", "y"], run_id="abc")
        assert path.read_text().startswith("# manifest: manifest.json run_id=abc\n")
        assert np.array_equal(read_matrix(path), values)

    def test_categories(self, tmp_path):
        path = tmp_path / "categories.txt"
        path.write_text("# counts\n3, 4\n2\n")
        assert read_categories(path) == (3, 4, 2)
        path.write_text("3\nthree\n")
        with pytest.raises(ValidationError) as error:
            read_categories(path)
        assert error.value.location == f"{path}:2"


class TestSuiteFiles:
    def test_duplicate_names(self, tmp_path):
        path = tmp_path / "suite.json"
        scenario = {"family": "poisson", "n": 20, "items": 5, "name": "a"}
        path.write_text(json.dumps({"scenarios": [scenario, scenario]}))
        with pytest.raises(ValidationError):
            read_suite(path)

    def test_unknown_field(self, tmp_path):
        path = tmp_path / "suite.json"
        path.write_text(json.dumps({"scenarios": [], "jobs": 4}))
        with pytest.raises(ValidationError):
            read_suite(path)

    def test_column_range(self):
        assert parse_column_range("2:5") == (2, 5)
        with pytest.raises(UsageError):
            parse_column_range("5:2")
        with pytest.raises(UsageError):
            parse_column_range("two:5")


# =========================================================================
# Commands
# =========================================================================


class TestNoiselessFixture:
    def test_fit_and_eval_recover_the_truth(self, noiseless_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        cmd_fit(
            noiseless_dir / "data.csv",
            fit_dir,
            2,
            family="bernoulli",
            categories_path=noiseless_dir / "blocks.txt",
        )
        table = cmd_eval(fit_dir, noiseless_dir)
        metrics = metric_values(table)
        assert metrics["l2inf_pi"] <= 1e-8
        assert metrics["maxabs_theta"] <= 1e-8
        assert (fit_dir / "eval" / "metrics.csv").exists()
        assert metric_values(read_table(fit_dir / "eval" / "metrics.csv")) == pytest.approx(
            metrics
        )

    def test_fit_outputs(self, noiseless_dir, tmp_path):
        manifest = cmd_fit(
            noiseless_dir / "data.csv",
            tmp_path,
            2,
            family="bernoulli",
            categories_path=noiseless_dir / "blocks.txt",
            prune="none",
        )
        for name in ("vertices.csv", "pi.csv", "theta.csv", "U.csv", "V.csv", "estimate.json"):
            assert name in manifest.outputs
        estimate = read_json(tmp_path / "estimate.json")
        assert sorted(estimate["vertices"]) == [0, 1]
        assert estimate["blocks"] == [2, 2]
        assert estimate["run_id"] == manifest.run_id
        assert RunManifest.read(tmp_path).run_id == manifest.run_id
        assert set(manifest.timings) == {"svd", "vertex_hunting", "estimation"}

    def test_relabelled_truth_scores_the_same(self, noiseless_dir, tmp_path):
        fit_dir = tmp_path / "fit"
        cmd_fit(
            noiseless_dir / "data.csv",
            fit_dir,
            2,
            family="bernoulli",
            categories_path=noiseless_dir / "blocks.txt",
            prune="none",
        )
        swapped = tmp_path / "truth"
        swapped.mkdir()
        for name in ("truth.json", "blocks.txt", "data.csv"):
            (swapped / name).write_bytes((noiseless_dir / name).read_bytes())
        for name in ("truth_pi.csv", "truth_theta.csv"):
            write_matrix(swapped / name, read_matrix(noiseless_dir / name)[:, ::-1])
        original = metric_values(cmd_eval(fit_dir, noiseless_dir, tmp_path / "a"))
        relabelled = metric_values(cmd_eval(fit_dir, swapped, tmp_path / "b"))
        assert relabelled == pytest.approx(original, abs=1e-12)


class TestSimulateCommand:
    def test_reruns_are_identical(self, tmp_path):
        scenario = write_scenario(
            tmp_path / "scenario.json", family="polytomous", n=50, items=6, k=2, seed=3
        )
        first = cmd_simulate(scenario, tmp_path / "one")
        second = cmd_simulate(scenario, tmp_path / "two")
        assert first.run_id == second.run_id
        assert first.outputs == second.outputs
        for name in ("data.csv", "truth_pi.csv", "truth_theta.csv", "categories.txt"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_replications_differ(self, tmp_path):
        scenario = write_scenario(tmp_path / "s.json", family="poisson", n=40, items=8, k=2)
        cmd_simulate(scenario, tmp_path / "r0", replication=0)
        cmd_simulate(scenario, tmp_path / "r1", replication=1)
        assert (tmp_path / "r0" / "data.csv").read_bytes() != (
            tmp_path / "r1" / "data.csv"
        ).read_bytes()

    def test_seed_from_environment_wins(self, tmp_path, monkeypatch):
        scenario = write_scenario(tmp_path / "s.json", family="poisson", n=40, items=8, k=2)
        monkeypatch.setenv("GGOM_SEED", "99")
        manifest = cmd_simulate(scenario, tmp_path / "out", seed=1)
        assert manifest.seed == 99

    def test_copula_truth_files(self, tmp_path):
        scenario = write_scenario(
            tmp_path / "s.json", family="bernoulli", n=40, items=8, k=2, block_size=4, rho=0.5
        )
        cmd_simulate(scenario, tmp_path / "out")
        info = read_json(tmp_path / "out" / "truth.json")
        assert info["block_file"] == "blocks.txt"
        assert read_categories(tmp_path / "out" / "blocks.txt") == (4, 4)
        assert info["rho"] == 0.5

    def test_contradictory_scenario(self, tmp_path):
        scenario = write_scenario(
            tmp_path / "s.json", family="polytomous", n=40, items=8, k=2, rho=0.5
        )
        with pytest.raises(ValidationError):
            cmd_simulate(scenario, tmp_path / "out")


class TestRoundTrip:
    def test_polytomous(self, tmp_path):
        scenario = write_scenario(
            tmp_path / "s.json", family="polytomous", n=600, items=40, k=3, seed=11
        )
        cmd_simulate(scenario, tmp_path / "truth")
        cmd_fit(
            tmp_path / "truth" / "data.csv",
            tmp_path / "fit",
            3,
            categories_path=tmp_path / "truth" / "categories.txt",
        )
        metrics = metric_values(cmd_eval(tmp_path / "fit", tmp_path / "truth"))
        assert metrics["mae_theta"] < 0.1
        assert metrics["mae_pi"] < 0.15

    def test_binomial_reports_expected_counts(self, tmp_path):
        scenario = write_scenario(tmp_path / "s.json", family="binomial", n=300, items=30, k=2)
        cmd_simulate(scenario, tmp_path / "truth")
        counts = read_matrix(tmp_path / "truth" / "data.csv")
        assert set(np.unique(counts)) <= {0.0, 1.0, 2.0}
        cmd_fit(tmp_path / "truth" / "data.csv", tmp_path / "fit", 2, family="binomial")
        theta = read_matrix(tmp_path / "fit" / "theta.csv")
        assert_allclose(read_matrix(tmp_path / "fit" / "theta_counts.csv"), 2 * theta)

    def test_covariance_and_bounds(self, tmp_path):
        scenario = write_scenario(
            tmp_path / "s.json", family="bernoulli", n=400, items=20, k=2, block_size=4, rho=0.5
        )
        cmd_simulate(scenario, tmp_path / "truth")
        cmd_fit(
            tmp_path / "truth" / "data.csv",
            tmp_path / "fit",
            2,
            family="bernoulli",
            categories_path=tmp_path / "truth" / "blocks.txt",
        )
        cmd_eval(
            tmp_path / "fit",
            tmp_path / "truth",
            tmp_path / "eval",
            covariance_columns="0:8",
            bounds=True,
        )
        true_cov = read_matrix(tmp_path / "eval" / "covariance_true.csv")
        assert true_cov.shape == (8, 8)
        assert read_matrix(tmp_path / "eval" / "covariance_estimated.csv").shape == (8, 8)
        assert_allclose(true_cov, true_cov.T)
        assert (np.diag(true_cov) >= 0).all()
        bounds = read_json(tmp_path / "eval" / "bounds.json")
        assert bounds["M"] == 4
        assert bounds["xi1"] > 0

    def test_covariance_range_past_the_data(self, noiseless_dir, tmp_path):
        cmd_fit(
            noiseless_dir / "data.csv",
            tmp_path / "fit",
            2,
            family="bernoulli",
            categories_path=noiseless_dir / "blocks.txt",
            prune="none",
        )
        with pytest.raises(UsageError):
            cmd_eval(tmp_path / "fit", noiseless_dir, tmp_path / "eval", covariance_columns="2:9")


class TestBenchAndGibbs:
    def test_bench_with_gibbs_comparison(self, tmp_path):
        suite = tmp_path / "suite.json"
        suite.write_text(
            json.dumps(
                {
                    "scenarios": [
                        {"name": "poly", "family": "polytomous", "n": 60, "items": 10, "k": 2,
                         "replications": 2},
                        {"name": "counts", "family": "poisson", "n": 60, "items": 12, "k": 2},
                    ],
                    "fit": {"prune": "none"},
                    "gibbs": {"burnin": 20, "samples": 20},
                }
            )
        )
        summary = cmd_bench(suite, tmp_path / "bench", jobs=2, cache=False)
        assert set(summary) == {"poly", "counts"}
        assert set(summary["poly"]) == {"spectral", "gibbs", "speedup"}
        assert summary["poly"]["spectral"]["replications"] == 2
        assert "gibbs" not in summary["counts"]
        table = read_table(tmp_path / "bench" / "bench.csv")
        assert list(table.columns[:2]) == ["scenario", "method"]
        assert set(table["method"]) == {"spectral", "gibbs"}
        assert read_json(tmp_path / "bench" / "summary.json")["scenarios"]["poly"]["speedup"] > 0

    def test_bench_rejects_unknown_fit_settings(self, tmp_path):
        suite = tmp_path / "suite.json"
        suite.write_text(
            json.dumps(
                {
                    "scenarios": [{"family": "poisson", "n": 30, "items": 5, "k": 2}],
                    "fit": {"tolerance": 1},
                }
            )
        )
        with pytest.raises(UsageError):
            cmd_bench(suite, tmp_path / "bench")

    def test_gibbs_command(self, tmp_path):
        scenario = write_scenario(tmp_path / "s.json", family="polytomous", n=40, items=6, k=2)
        cmd_simulate(scenario, tmp_path / "truth")
        manifest = cmd_gibbs(
            tmp_path / "truth" / "data.csv",
            tmp_path / "gibbs",
            2,
            tmp_path / "truth" / "categories.txt",
            burnin=10,
            samples=10,
        )
        assert read_matrix(tmp_path / "gibbs" / "pi.csv").shape == (40, 2)
        assert read_matrix(tmp_path / "gibbs" / "theta.csv").shape == (18, 2)
        assert read_matrix(tmp_path / "gibbs" / "loglik.csv").shape == (20, 1)
        assert read_json(tmp_path / "gibbs" / "estimate.json")["method"] == "gibbs"
        assert "gibbs" in manifest.timings
        metrics = metric_values(cmd_eval(tmp_path / "gibbs", tmp_path / "truth"))
        assert np.isfinite(list(metrics.values())).all()


# =========================================================================
# Command line
# =========================================================================


class TestMain:
    def test_fit_success(self, noiseless_dir, tmp_path):
        argv = [
            "fit",
            str(noiseless_dir / "data.csv"),
            str(noiseless_dir / "blocks.txt"),
            "--k", "2",
            "--family", "bernoulli",
            "--prune", "none",
            "--out", str(tmp_path),
        ]
        assert app.main(argv) == 0
        assert (tmp_path / "manifest.json").exists()

    def test_k_zero_is_a_usage_error(self, noiseless_dir, tmp_path):
        argv = [
            "fit",
            str(noiseless_dir / "data.csv"),
            "--k", "0",
            "--family", "bernoulli",
            "--out", str(tmp_path),
        ]
        assert app.main(argv) == EXIT_USAGE

    def test_argument_errors(self):
        assert app.main(["fit"]) == EXIT_USAGE
        assert app.main(["bogus"]) == EXIT_USAGE

    def test_malformed_json_names_the_location(self, tmp_path, caplog):
        scenario = tmp_path / "broken.json"
        scenario.write_text('{"family": "poisson",\n "n": }')
        assert app.main(["simulate", str(scenario), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
        assert f"{scenario}:2:" in caplog.text

    def test_contradictory_scenario(self, tmp_path):
        scenario = write_scenario(
            tmp_path / "s.json", family="polytomous", n=40, items=8, k=2, rho=0.5
        )
        assert app.main(["simulate", str(scenario), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION

    def test_invalid_data_is_a_validation_error(self, tmp_path):
        data = tmp_path / "data.csv"
        data.write_text("0.5,1.5\n0.2,0.3\n")
        argv = ["fit", str(data), "--k", "1", "--family", "bernoulli", "--out", str(tmp_path / "o")]
        assert app.main(argv) == EXIT_VALIDATION
