import json

import pandas as pd
import pytest

from wfmsim.cli import build_parser, main
from wfmsim.errors import EXIT_CONFIG, EXIT_OK


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(
        "seeds = 0,1\n"
        "trajectory.num_slots = 6\n"
        "scheduler.reference_seeds = 2\n"
        "channel.fixed_snr_db = 8\n"
        "protocol.strategy = feedback_part\n"
    )
    return path


class TestParser:
    def test_seed_flags_are_exclusive(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["simulate", "--seeds", "2", "--seed-list", "1,2"])

    def test_number_list(self):
        args = build_parser().parse_args(["sweep-snr", "--snr-list", "0,2.5,-3"])
        assert args.snr_list == [0.0, 2.5, -3.0]

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestCommands:
    """End-to-end runs through main()"""

    def test_simulate(self, small_config, tmp_path):
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(small_config), "--out", str(out), "--seed-list", "3"]) == EXIT_OK
        document = json.loads((out / "summary.json").read_text())
        assert [s["seed"] for s in document["sessions"]] == [3]
        assert len(pd.read_csv(out / "trace_seed3.csv")) == 7

    def test_sweep_snr(self, small_config, tmp_path):
        assert main(["sweep-snr", "--config", str(small_config), "--out", str(tmp_path), "--seeds", "1", "--snr-list", "0,10"]) == EXIT_OK
        table = pd.read_csv(tmp_path / "sweep_snr.csv")
        assert list(table.snr_db) == [0.0, 10.0]

    def test_plan(self, small_config, tmp_path):
        assert main(["plan", "--config", str(small_config), "--out", str(tmp_path), "--reference-seeds", "2"]) == EXIT_OK
        plan = json.loads((tmp_path / "plan.json").read_text())
        assert "entries" in plan
        reference = pd.read_csv(tmp_path / "reference.csv")
        assert list(reference.horizon) == list(range(7))

    def test_ber_check(self, tmp_path):
        assert main(["ber-check", "--snr-list", "6,10", "--bits", "100000", "--out", str(tmp_path)]) == EXIT_OK
        assert pd.read_csv(tmp_path / "ber_check.csv").within_tolerance.all()

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("protocol.sigma = 5\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_config_exit_code(self, tmp_path):
        assert main(["plan", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG

    def test_zero_seeds(self, small_config, tmp_path):
        assert main(["simulate", "--config", str(small_config), "--out", str(tmp_path), "--seeds", "0"]) == EXIT_CONFIG


class TestReproducibility:
    def test_identical_outputs(self, small_config, tmp_path):
        for name in ("a", "b"):
            assert main(["simulate", "--config", str(small_config), "--out", str(tmp_path / name)]) == EXIT_OK
        for name in ("summary.json", "trace_seed0.csv", "trace_seed1.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
