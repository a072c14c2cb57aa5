import os

import pytest

from dpsr_replay.experiment_cli import (
    ConfigError,
    ExperimentSpec,
    compare_report,
    format_spec,
    main,
    metrics_summary,
    parse_spec,
    run_experiment,
    trailing_means,
)
from dpsr_replay.trainer import RunMetrics, TrainConfig

FAST = dict(
    total_steps=400,
    buffer_size=32,
    batch_size=8,
    learning_starts=16,
    common_candidates=8,
    recycle_candidates=4,
    recycle_every=100,
    target_sync_every=50,
)


def fast_spec_text(modes="dpsr", seeds="1", extra=""):
    lines = [
        "env=forked_corridor",
        f"modes={modes}",
        f"seeds={seeds}",
        "T=400",
        "N=32",
        "k=8",
        "learning_starts=16",
        "C_c=8",
        "C_r=4",
        "F_r=100",
        "F_t=50",
        "threshold=30",
    ]
    if extra:
        lines.append(extra)
    return "\n".join(lines) + "\n"


class TestParseSpec:
    def test_minimal_spec_gets_defaults(self):
        spec = parse_spec("env=cartpole\nmodes=dpsr\nseeds=1\n")
        assert spec.env == "cartpole"
        assert spec.modes == ["dpsr"]
        assert spec.seeds == [1]
        assert spec.base == TrainConfig()
        assert spec.threshold == 150.0

    def test_short_aliases(self):
        spec = parse_spec(
            "env=cartpole\nk=16\neta=0.001\nN=2000\nM=true\nC_c=64\nC_r=8\n"
            "F_t=250\nF_s=2\nF_r=500\nT=5000\ngamma=0.5\n"
        )
        b = spec.base
        assert b.batch_size == 16
        assert b.learning_rate == 0.001
        assert b.buffer_size == 2000
        assert b.recycle_max_priority is True
        assert b.common_candidates == 64
        assert b.recycle_candidates == 8
        assert b.target_sync_every == 250
        assert b.train_every == 2
        assert b.recycle_every == 500
        assert b.total_steps == 5000
        assert b.replace_gamma == 0.5

    def test_bad_value_names_key_and_line(self):
        with pytest.raises(ConfigError) as err:
            parse_spec("env=cartpole\nk=notanumber\n")
        assert "k" in str(err.value) or "batch_size" in str(err.value)
        assert "line 2" in str(err.value)

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ConfigError) as err:
            parse_spec("env=cartpole\nwibble=3\n")
        assert "wibble" in str(err.value)
        assert "line 2" in str(err.value)

    def test_missing_env_rejected(self):
        with pytest.raises(ConfigError):
            parse_spec("modes=dpsr\n")

    def test_unknown_env_rejected(self):
        with pytest.raises(ConfigError):
            parse_spec("env=pong\n")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            parse_spec("env=cartpole\nmodes=dpsr,bogus\n")

    def test_comments_and_blanks_ignored(self):
        spec = parse_spec("# experiment\n\nenv=chain\n  # indented comment\n")
        assert spec.env == "chain"

    def test_env_params(self):
        spec = parse_spec("env=forked_corridor\nenv.d_left=7\nenv.r_treasure=25.5\n")
        assert spec.env_params == {"d_left": 7, "r_treasure": 25.5}

    def test_round_trip(self):
        spec = parse_spec(fast_spec_text(modes="dpsr,uniform", seeds="1,2,3",
                                         extra="env.d_left=7"))
        again = parse_spec(format_spec(spec))
        assert again == spec

    def test_no_equals_rejected(self):
        with pytest.raises(ConfigError) as err:
            parse_spec("env=cartpole\njust a line\n")
        assert "line 2" in str(err.value)


class TestTrailingMeans:
    def test_matches_bruteforce(self):
        values = [float(v) for v in range(1, 250)]
        means = trailing_means(values, window=100)
        for i in range(len(values)):
            lo = max(0, i - 99)
            expected = sum(values[lo:i + 1]) / (i - lo + 1)
            assert means[i] == pytest.approx(expected)

    def test_metrics_summary_threshold(self):
        metrics = RunMetrics(episodes=[(10, 5.0, 10), (20, 15.0, 10), (30, 25.0, 10)])
        metrics.final_eval = 25.0
        final_eval, best, steps = metrics_summary(metrics, threshold=10.0)
        assert final_eval == 25.0
        assert best == pytest.approx(15.0)   # best trailing mean: (5+15+25)/3
        assert steps == 20                   # mean reaches 10 at episode 2

    def test_metrics_summary_never_reaches(self):
        metrics = RunMetrics(episodes=[(10, 5.0, 10)])
        _, _, steps = metrics_summary(metrics, threshold=100.0)
        assert steps is None


class TestRunExperiment:
    def test_file_layout(self, tmp_path):
        spec = parse_spec(fast_spec_text(modes="dpsr,uniform", seeds="1,2,3"))
        assert run_experiment(spec, out_dir=str(tmp_path)) == 0
        curves = sorted(p.name for p in tmp_path.glob("curve_*.csv"))
        assert len(curves) == 6
        assert (tmp_path / "summary.csv").exists()
        configs = sorted(p.name for p in tmp_path.glob("config_*.txt"))
        assert len(configs) == 6

    def test_curve_header_and_rows(self, tmp_path):
        spec = parse_spec(fast_spec_text())
        run_experiment(spec, out_dir=str(tmp_path))
        lines = (tmp_path / "curve_dpsr_1.csv").read_text().splitlines()
        assert lines[0] == "timestep,episode,return,mean100,epsilon"
        assert len(lines) > 1
        first = lines[1].split(",")
        assert int(first[1]) == 1
        assert float(first[2]) == float(first[3])  # first episode mean == return

    def test_summary_header(self, tmp_path):
        spec = parse_spec(fast_spec_text())
        run_experiment(spec, out_dir=str(tmp_path))
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0] == "mode,seed,final_eval,best_mean100,steps_to_threshold"
        assert len(lines) == 2

    def test_rerun_byte_identical(self, tmp_path):
        spec = parse_spec(fast_spec_text(modes="dpsr", seeds="1,2"))
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_experiment(spec, out_dir=str(out1))
        run_experiment(spec, out_dir=str(out2))
        for name in ("summary.csv", "curve_dpsr_1.csv", "curve_dpsr_2.csv",
                     "config_dpsr_1.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_config_echo_reparses(self, tmp_path):
        spec = parse_spec(fast_spec_text())
        run_experiment(spec, out_dir=str(tmp_path))
        echoed = parse_spec((tmp_path / "config_dpsr_1.txt").read_text())
        assert echoed.base.total_steps == 400
        assert echoed.modes == ["dpsr"]
        assert echoed.seeds == [1]

    def test_unwritable_out_dir(self, tmp_path):
        blocker = tmp_path / "blocked"
        blocker.write_text("a file, not a directory")
        spec = parse_spec(fast_spec_text())
        assert run_experiment(spec, out_dir=str(blocker)) == 2

    def test_parallel_jobs_match_serial(self, tmp_path):
        spec = parse_spec(fast_spec_text(modes="dpsr,per", seeds="1,2"))
        out1, out2 = tmp_path / "serial", tmp_path / "parallel"
        run_experiment(spec, out_dir=str(out1), jobs=1)
        run_experiment(spec, out_dir=str(out2), jobs=2)
        assert (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()


def write_summary(path, rows):
    with open(path, "w") as fh:
        fh.write("mode,seed,final_eval,best_mean100,steps_to_threshold\n")
        for mode, seed, fe in rows:
            fh.write(f"{mode},{seed},{fe},,\n")


class TestCompareReport:
    def test_doubling_is_plus_100(self, tmp_path):
        path = tmp_path / "summary.csv"
        write_summary(path, [("uniform", 1, 100.0), ("dpsr", 1, 200.0)])
        report = compare_report([path], "uniform", "dpsr")
        assert "+100.0%" in report

    def test_non_positive_baseline_excluded(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_summary(a, [("uniform", 1, -5.0), ("dpsr", 1, 50.0)])
        write_summary(b, [("uniform", 1, 100.0), ("dpsr", 1, 150.0)])
        report = compare_report([a, b], "uniform", "dpsr")
        assert "excluded" in report
        assert "mean improvement: +50.0%" in report
        assert "median improvement: +50.0%" in report

    def test_identical_modes_zero(self, tmp_path):
        path = tmp_path / "summary.csv"
        write_summary(path, [("dpsr", 1, 123.0)])
        report = compare_report([path], "dpsr", "dpsr")
        assert "+0.0%" in report

    def test_mean_over_seeds(self, tmp_path):
        path = tmp_path / "summary.csv"
        write_summary(path, [("uniform", 1, 50.0), ("uniform", 2, 150.0),
                             ("dpsr", 1, 150.0), ("dpsr", 2, 250.0)])
        report = compare_report([path], "uniform", "dpsr")
        assert "+100.0%" in report  # mean 100 -> mean 200

    def test_missing_mode_raises(self, tmp_path):
        path = tmp_path / "summary.csv"
        write_summary(path, [("uniform", 1, 10.0)])
        with pytest.raises(ConfigError):
            compare_report([path], "uniform", "dpsr")


class TestCli:
    def test_run_and_compare_end_to_end(self, tmp_path, capsys):
        specfile = tmp_path / "exp.spec"
        specfile.write_text(fast_spec_text(modes="dpsr,uniform", seeds="1"))
        out = tmp_path / "results"
        assert main(["run", str(specfile), "--out", str(out)]) == 0
        assert main(["compare", str(out / "summary.csv"),
                     "--baseline", "uniform", "--treatment", "dpsr"]) == 0
        assert "improvement" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path):
        specfile = tmp_path / "bad.spec"
        specfile.write_text("env=cartpole\nwibble=1\n")
        assert main(["run", str(specfile)]) == 1

    def test_missing_specfile_exit_code(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.spec")]) == 2

    def test_env_var_out_dir(self, tmp_path, monkeypatch):
        target = tmp_path / "from_env"
        monkeypatch.setenv("DPSR_REPLAY_OUT", str(target))
        specfile = tmp_path / "exp.spec"
        specfile.write_text(fast_spec_text())
        assert main(["run", str(specfile)]) == 0
        assert (target / "summary.csv").exists()

    def test_flag_beats_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DPSR_REPLAY_OUT", str(tmp_path / "ignored"))
        flagged = tmp_path / "flagged"
        specfile = tmp_path / "exp.spec"
        specfile.write_text(fast_spec_text())
        assert main(["run", str(specfile), "--out", str(flagged)]) == 0
        assert (flagged / "summary.csv").exists()
        assert not (tmp_path / "ignored").exists()

    def test_compare_missing_mode_exit_1(self, tmp_path):
        path = tmp_path / "summary.csv"
        write_summary(path, [("uniform", 1, 10.0)])
        assert main(["compare", str(path), "--baseline", "uniform",
                     "--treatment", "dpsr"]) == 1
