from __future__ import annotations

import itertools

import numpy as np
import pytest

from chainbench import cli
from chainbench.environments import EnvironmentSpec, EnvironmentTrace, generate_environment
from chainbench.experts import Exp3RTB
from chainbench.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    HarnessIOError,
    TooLarge,
    best_constant,
    comparator_value,
    emit_csv,
    format_csv,
    lipschitz_bruteforce,
    lipschitz_dp_1d,
    load_config,
    parse_config,
    run_experiment,
)


def _bump_trace(contexts: np.ndarray, centers: np.ndarray, radius: float = 0.5) -> EnvironmentTrace:
    """Rounds with loss ``1 - max(0, radius - |y - c_t|)``: minimised at ``c_t``."""
    T = len(contexts)
    spec = EnvironmentSpec("lipschitz-synthetic", contexts.shape[1], T, 0)
    return EnvironmentTrace(
        spec,
        contexts,
        level=np.ones(T),
        centers=centers.reshape(T, 1),
        radii=np.array([radius]),
        weights=np.ones((T, 1)),
    )


class TestComparators:
    def test_identical_losses(self):
        T = 20
        trace = _bump_trace(np.random.default_rng(0).random((T, 1)), np.full(T, 0.3))
        grid = np.linspace(0, 1, 4 * 8 + 1)
        expected = T * trace.loss_matrix(grid)[0].min()
        assert best_constant(trace, 8).total == pytest.approx(expected)
        assert lipschitz_dp_1d(trace, 8).total == pytest.approx(expected)

    def test_single_round(self):
        trace = _bump_trace(np.array([[0.4]]), np.array([0.62]))
        grid = np.linspace(0, 1, 4 * 4 + 1)
        assert lipschitz_dp_1d(trace, 4).total == pytest.approx(trace.loss_matrix(grid)[0].min())

    def test_dp_two_bins_matches_exhaustive(self):
        # bins at 0.25 and 0.75 want actions 0 and 1; the coupling allows a jump of 0.5
        contexts = np.array([[0.1], [0.2], [0.8], [0.9], [0.85]])
        centers = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
        trace = _bump_trace(contexts, centers)
        R = 2
        actions = np.linspace(0, 1, 4 * R + 1)
        losses = trace.loss_matrix(actions)
        bins = np.minimum((contexts[:, 0] * R).astype(int), R - 1)
        best = min(
            sum(losses[t, a if bins[t] == 0 else b] for t in range(5))
            for a, b in itertools.product(range(len(actions)), repeat=2)
            if abs(actions[a] - actions[b]) <= 0.5 + 1e-12
        )
        result = lipschitz_dp_1d(trace, R)
        assert result.total == pytest.approx(best)
        # the constraint binds: unconstrained optimum would be 5 * (1 - 0.5)
        assert result.total > 2.5 + 1e-9

    def test_lipschitz_not_worse_than_constant(self):
        for seed in range(4):
            trace = generate_environment(EnvironmentSpec("lipschitz-synthetic", 1, 300, seed))
            assert lipschitz_dp_1d(trace, 16).total <= best_constant(trace, 16).total + 1e-9

    def test_refinement_monotone_up_to_slack(self):
        trace = generate_environment(EnvironmentSpec("auction-iid", 1, 500, 3))
        for R in (4, 8, 16):
            coarse = lipschitz_dp_1d(trace, R).total
            fine = lipschitz_dp_1d(trace, 2 * R).total
            assert fine <= coarse + len(trace) / (4 * R) + 1e-9

    def test_auction_constant_is_exact_infimum(self):
        trace = generate_environment(EnvironmentSpec("auction-iid", 1, 200, 1))
        dense = trace.loss_matrix(np.linspace(0, 1, 20_001)).sum(axis=0).min()
        assert best_constant(trace, 8).total <= dense + 1e-9

    def test_bruteforce_two_dimensions(self):
        contexts = np.array([[0.1, 0.1], [0.9, 0.9], [0.12, 0.15]])
        trace = _bump_trace(contexts, np.array([0.0, 1.0, 0.0]))
        result = lipschitz_bruteforce(trace, 2)
        actions = np.linspace(0, 1, 3)
        losses = trace.loss_matrix(actions)
        best = min(
            losses[0, a] + losses[2, a] + losses[1, b]
            for a, b in itertools.product(range(3), repeat=2)
            if abs(actions[a] - actions[b]) <= 0.5 + 1e-12
        )
        assert result.total == pytest.approx(best)
        assert comparator_value(trace, "lipschitz", 2).total == pytest.approx(best)

    def test_bruteforce_budget(self):
        trace = generate_environment(EnvironmentSpec("auction-iid", 2, 200, 0))
        with pytest.raises(TooLarge):
            lipschitz_bruteforce(trace, 8)


class TestRuns:
    def test_regret_identity(self):
        res = run_experiment(ExperimentConfig("contextual-rtb", 100, replicates=2, seed=3))
        for tr in res.traces:
            np.testing.assert_allclose(tr.regret + tr.comparator_cum, tr.cum_loss, atol=1e-12)
            assert len(tr.loss) == 100
            assert tr.violations == 0

    def test_replicates_differ_but_reproduce(self):
        cfg = ExperimentConfig("exp3-rtb", 200, kind="auction-adversarial", replicates=2, seed=5)
        a, b = run_experiment(cfg), run_experiment(cfg)
        assert not np.array_equal(a.traces[0].loss, a.traces[1].loss)
        for x, y in zip(a.traces, b.traces):
            np.testing.assert_array_equal(x.loss, y.loss)

    def test_exp3rtb_constant_environment(self):
        params = {"bid_noise": 0.0, "bid_slope": 0.0, "bid_gap": 0.0}
        T, gamma = 1024, 1024**-0.5
        cfg = ExperimentConfig("exp3-rtb", T, kind="auction-iid", replicates=5, comparator="constant", env_params=params)
        res = run_experiment(cfg)
        regrets = [tr.final_expected_regret for tr in res.traces]
        assert min(regrets) >= 0
        assert np.mean(regrets) <= Exp3RTB.regret_bound(T, gamma)

    @pytest.mark.parametrize(
        "algo,kind,d",
        [
            ("contextual-exp3", "lipschitz-synthetic", 1),
            ("contextual-rtb", "auction-adversarial", 2),
            ("hier-exp4", "auction-iid", 1),
            ("hier-exp4-star", "lipschitz-synthetic", 2),
            ("hier-hedge", "lipschitz-synthetic", 1),
        ],
    )
    def test_every_algorithm_runs_cleanly(self, algo, kind, d):
        cfg = ExperimentConfig(algo, 64, kind=kind, dimension=d, comparator="constant", dictionary_bins=4, depth=3 if algo == "hier-exp4-star" else None)
        res = run_experiment(cfg)
        assert all(tr.violations == 0 for tr in res.traces)


class TestCsv:
    def test_line_count_and_header(self, tmp_path):
        res = run_experiment(ExperimentConfig("exp3-rtb", 2))
        path = emit_csv(res.traces, tmp_path / "out.csv")
        data = path.read_bytes()
        assert b"\r" not in data
        lines = data.decode().splitlines()
        assert lines[0] == CSV_HEADER == "t,replicate,loss,cum_loss,comparator_cum,regret"
        assert len(lines) == 3

    def test_last_row_arithmetic(self):
        res = run_experiment(ExperimentConfig("contextual-rtb", 50, replicates=2))
        last = format_csv(res.traces).splitlines()[-1].split(",")
        cum, comp, regret = map(float, last[3:6])
        assert regret == pytest.approx(cum - comp, abs=1e-9)

    def test_twelve_significant_digits(self):
        res = run_experiment(ExperimentConfig("contextual-rtb", 30))
        for line in format_csv(res.traces).splitlines()[1:]:
            for field in line.split(",")[2:]:
                digits = field.replace("-", "").replace(".", "").split("e")[0].lstrip("0")
                assert len(digits) <= 12

    def test_expected_column(self):
        res = run_experiment(ExperimentConfig("hier-exp4", 40, loss_column="expected", dictionary_bins=2))
        tr = res.traces[0]
        np.testing.assert_array_equal(tr.chosen, tr.expected_loss)

    def test_io_error(self, tmp_path):
        res = run_experiment(ExperimentConfig("exp3-rtb", 2))
        with pytest.raises(HarnessIOError):
            emit_csv(res.traces, tmp_path / "missing" / "out.csv")

    def test_empty_traces(self):
        with pytest.raises(ValueError):
            format_csv([])


class TestConfig:
    def test_parse(self):
        cfg = parse_config(
            "# comment\nalgorithm = hier-exp4\nhorizon = 128  # inline\nkind = lipschitz-synthetic\n"
            "gamma = 0.25\nbumps = 2\ndictionary_bins = 4\n"
        )
        assert cfg.algorithm == "hier-exp4" and cfg.horizon == 128
        assert cfg.gamma == 0.25 and cfg.env_params == {"bumps": 2.0}
        assert cfg.comparator == "lipschitz"

    def test_default_comparator_depends_on_dimension(self):
        assert ExperimentConfig("exp3-rtb", 10, dimension=2).comparator == "constant"

    @pytest.mark.parametrize(
        "text",
        [
            "algorithm = hier-exp4\n",
            "algorithm = nope\nhorizon = 10\n",
            "algorithm = exp3-rtb\nhorizon = ten\n",
            "algorithm = exp3-rtb\nhorizon = 10\ncolour = red\n",
            "algorithm = exp3-rtb\nhorizon 10\n",
            "algorithm = exp3-rtb\nhorizon = 10\ncomparator = best\n",
            "algorithm = exp3-rtb\nhorizon = 10\nhorizon = 20\n",
            "algorithm = exp3-rtb\nhorizon = 10\n[extra]\nseed = 3\n",
        ],
    )
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_inline_comments_and_env_params(self):
        cfg = parse_config("# header\nalgorithm = hier-exp4  # learner\nhorizon = 10\nbumps = 4\n")
        assert (cfg.algorithm, cfg.horizon, cfg.env_params) == ("hier-exp4", 10, {"bumps": 4.0})

    def test_missing_file(self, tmp_path):
        with pytest.raises(HarnessIOError):
            load_config(tmp_path / "nope.cfg")


class TestCli:
    def _config(self, tmp_path, text="algorithm = contextual-rtb\nhorizon = 64\nreplicates = 2\n"):
        path = tmp_path / "exp.cfg"
        path.write_text(text)
        return path

    def test_run_is_byte_identical(self, tmp_path, capsys):
        cfg = self._config(tmp_path)
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a.csv"), "--seed", "4"]) == 0
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b.csv"), "--seed", "4"]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_replicates_override(self, tmp_path, capsys):
        cfg = self._config(tmp_path)
        cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a.csv"), "--replicates", "3"])
        assert len((tmp_path / "a.csv").read_text().splitlines()) == 1 + 3 * 64

    def test_sweep_writes_one_file_per_horizon(self, tmp_path, capsys):
        cfg = self._config(tmp_path)
        assert cli.main(["sweep", "--config", str(cfg), "--horizons", "16,32", "--out", str(tmp_path / "sw")]) == 0
        assert sorted(p.name for p in (tmp_path / "sw").iterdir()) == ["regret_T16.csv", "regret_T32.csv"]

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = self._config(tmp_path, "algorithm = nope\nhorizon = 5\n")
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a.csv")]) == 1
        assert cli.main(["sweep", "--config", str(self._config(tmp_path)), "--horizons", "x", "--out", str(tmp_path)]) == 1

    def test_usage_error_is_config_error(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(self._config(tmp_path))]) == 1
        assert cli.main(["run", "--config", str(self._config(tmp_path)), "--out", "a.csv", "--seed", "x"]) == 1

    def test_oversized_comparator_is_config_error(self, tmp_path, capsys):
        text = "algorithm = exp3-rtb\nhorizon = 200\ndimension = 3\ncomparator = lipschitz\n"
        assert cli.main(["run", "--config", str(self._config(tmp_path, text)), "--out", str(tmp_path / "a.csv")]) == 1

    def test_io_error_exit_code(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "a.csv")]) == 3
        cfg = self._config(tmp_path)
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "no" / "a.csv")]) == 3

    def test_verify_property_failure_exit_code(self, monkeypatch, capsys):
        from chainbench import verify

        monkeypatch.setattr(verify, "run_checks", lambda seed=0: [("broken", False, "forced")])
        assert cli.main(["verify"]) == 2
        assert "FAIL broken" in capsys.readouterr().out

    def test_verify_passes(self, capsys):
        assert cli.main(["verify"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 8 and "FAIL" not in out
