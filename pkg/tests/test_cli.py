import subprocess
import sys

import pytest

from distillchain import read_table
from distillchain.cli import build_config, main, parse_config_file, _defaults
from distillchain.experiment import DataFiles, SyntheticSpec


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "distillchain.cli", *args], capture_output=True, text=True
    )


FAST = [
    "--synthetic.classes", "3", "--synthetic.per_class", "40", "--synthetic.dim", "3",
    "--synthetic.spread", "0.4", "--fractions", "0.2", "--runs", "1",
    "--early_stop_fraction", "0.1", "--train.max_epochs", "2",
    "--chain.iterations", "1", "--chain.pretrain.max_epochs", "2",
    "--chain.finetune.max_epochs", "2", "--chain.per_class_cap", "none",
]


class TestConfigFile:
    def test_parse_comments_and_dotted_keys(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(
            """
# benchmark settings
seed = 9
chain.iterations = 4   # short chain
fractions = 0.01,0.05
arch.hidden = 8,4
""".lstrip()
        )
        values = parse_config_file(cfg)
        assert values["seed"] == "9"
        assert values["chain.iterations"] == "4"
        assert values["arch.hidden"] == "8,4"

    def test_unknown_key_names_line(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("seed = 1\nnot_a_key = 2\n")
        from distillchain.cli import ConfigError

        with pytest.raises(ConfigError, match="line 2"):
            parse_config_file(cfg)

    def test_build_config_round_trips_defaults(self):
        cfg = build_config(_defaults())
        assert isinstance(cfg.source, SyntheticSpec)
        assert cfg.fractions == (0.0025, 0.005, 0.01, 0.05, 0.20, 1.0)
        assert cfg.runs == 5
        assert cfg.chain.iterations == 5
        assert cfg.chain.distill.per_class_cap == 4000

    def test_files_source_requires_paths(self):
        flat = _defaults()
        flat["source"] = "files"
        from distillchain.cli import ConfigError

        with pytest.raises(ConfigError, match="data.train"):
            build_config(flat)
        flat.update({"data.train": "a.csv", "data.validation": "b.csv", "data.test": "c.csv"})
        cfg = build_config(flat)
        assert isinstance(cfg.source, DataFiles)


class TestCliCommands:
    def test_synth_writes_tables(self, tmp_path):
        out = tmp_path / "data"
        result = run_cli(
            "synth", "--synthetic.classes", "3", "--synthetic.per_class", "20",
            "--synthetic.dim", "2", "--out", str(out), "--seed", "5",
        )
        assert result.returncode == 0, result.stderr
        train = read_table(out / "train.csv")
        assert len(train) == 48
        assert (out / "validation.classes").exists()
        assert len(read_table(out / "test.csv")) == 6

    def test_synth_then_files_matches_synthetic_run(self, tmp_path):
        out = tmp_path / "data"
        assert run_cli(
            "synth", "--synthetic.classes", "3", "--synthetic.per_class", "40",
            "--synthetic.dim", "3", "--synthetic.spread", "0.4",
            "--out", str(out), "--seed", "5",
        ).returncode == 0
        a = run_cli(
            "baseline", *FAST, "--seed", "5", "--out", str(tmp_path / "inmem"),
        )
        b = run_cli(
            "baseline", *FAST, "--seed", "5", "--out", str(tmp_path / "fromfile"),
            "--source", "files",
            "--data.train", str(out / "train.csv"),
            "--data.validation", str(out / "validation.csv"),
            "--data.test", str(out / "test.csv"),
        )
        assert a.returncode == 0 and b.returncode == 0, a.stderr + b.stderr
        a_text = (tmp_path / "inmem" / "summary.csv").read_text()
        b_text = (tmp_path / "fromfile" / "summary.csv").read_text()
        assert a_text == b_text

    def test_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("synthetic.per_class = 20\nseed = 1\n")
        out = tmp_path / "data"
        result = run_cli("synth", "--config", str(cfg), "--synthetic.per_class", "30", "--out", str(out))
        assert result.returncode == 0
        assert len(read_table(out / "train.csv")) == 9 * 24

    def test_invalid_config_exits_one(self, tmp_path):
        assert run_cli("baseline", "--runs", "zero").returncode == 1
        assert run_cli("baseline", "--config", str(tmp_path / "missing.cfg")).returncode == 1
        assert run_cli("baseline", "--fractions", "0.5,0.2").returncode == 1
        assert run_cli("nonsense").returncode == 1

    def test_runtime_failure_exits_two(self, tmp_path):
        blocked = tmp_path / "blocked"
        blocked.write_text("not a directory")
        result = run_cli("baseline", *FAST, "--out", str(blocked), "--seed", "1")
        assert result.returncode == 2, result.stdout + result.stderr

    def test_report_rebuilds_summary(self, tmp_path):
        out = tmp_path / "out"
        first = run_cli("chain", *FAST, "--seed", "3", "--out", str(out))
        assert first.returncode == 0, first.stderr
        original = (out / "summary.csv").read_bytes()
        original_svg = (out / "chain_curves.svg").read_bytes()
        (out / "summary.csv").unlink()
        assert main(["report", "--out", str(out)]) == 0
        assert (out / "summary.csv").read_bytes() == original
        assert (out / "chain_curves.svg").read_bytes() == original_svg

    def test_report_without_runs_exits_one(self, tmp_path):
        assert main(["report", "--out", str(tmp_path / "nothing")]) == 1
