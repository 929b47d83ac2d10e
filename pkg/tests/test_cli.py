import json
import subprocess
import sys

import pytest

from overspread_otfs.channel import ChannelRealization
from overspread_otfs.cli import build_parser, main
from overspread_otfs.otfs_core import read_signal

SMALL = {"profile": "A", "M": 64, "N": 32, "l_max": 600, "trials": 2, "snr_p_db": [30, 40], "snr_d_db": [12], "max_frames": 1}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


class TestParser:
    def test_subcommands(self):
        p = build_parser()
        for cmd in ["nmse-sweep", "ber-sweep", "refine-census"]:
            assert p.parse_args([cmd, "--out", "x.csv"]).command == cmd
        assert p.parse_args(["estimate-file", "s.bin"]).signal == "s.bin"
        assert p.parse_args(["gen-channel", "--out", "c.json"]).trial == 0

    def test_requires_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestCommands:
    @pytest.mark.parametrize("cmd", ["nmse-sweep", "ber-sweep", "refine-census"])
    def test_sweeps_write_csv(self, cmd, cfg_path, tmp_path, capsys):
        out = tmp_path / "o.csv"
        assert main([cmd, "--config", str(cfg_path), "--out", str(out), "--svg", str(tmp_path / "o.svg")]) == 0
        assert out.read_text().splitlines()[0] == "sweep_db,metric,value,trials,errors,seed"
        assert (tmp_path / "o.svg").exists()
        assert "dB" in capsys.readouterr().out

    def test_overrides(self, cfg_path, tmp_path):
        out = tmp_path / "o.csv"
        main(["nmse-sweep", "--config", str(cfg_path), "--out", str(out), "--trials", "1", "--seed", "5"])
        rows = out.read_text().splitlines()[1:]
        for r in rows:
            trials, errors, seed = r.split(",")[3:]
            assert (trials, seed) == ("1", "5") and errors in ("0", "1")

    def test_trial_log(self, cfg_path, tmp_path):
        log = tmp_path / "t.jsonl"
        main(["nmse-sweep", "--config", str(cfg_path), "--out", str(tmp_path / "o.csv"), "--trial-log", str(log)])
        lines = [json.loads(l) for l in log.read_text().splitlines()]
        assert len(lines) == 4 and {"trial", "seed_key", "nmse"} <= set(lines[0])

    def test_gen_then_estimate(self, cfg_path, tmp_path, capsys):
        ch_path, sig = tmp_path / "ch.json", tmp_path / "r.bin"
        assert main(["gen-channel", "--config", str(cfg_path), "--out", str(ch_path), "--signal-out", str(sig), "--noiseless"]) == 0
        ch = ChannelRealization.load(ch_path)
        r, M, N = read_signal(sig)
        assert (M, N) == (64, 32) and len(ch) == 9
        capsys.readouterr()
        assert main(["estimate-file", str(sig), "--config", str(cfg_path), "--out", str(tmp_path / "e.json")]) == 0
        res = json.loads(capsys.readouterr().out)
        assert set(res) == {"paths", "diagnostics"}
        assert set(res["paths"][0]) == {"l", "k", "re", "im", "source"}
        assert res["diagnostics"]["mse"] >= 0
        assert json.loads((tmp_path / "e.json").read_text()) == res

    def test_geometry_mismatch(self, cfg_path, tmp_path, capsys):
        sig = tmp_path / "r.bin"
        main(["gen-channel", "--config", str(cfg_path), "--out", str(tmp_path / "c.json"), "--signal-out", str(sig)])
        assert main(["estimate-file", str(sig)]) == 2
        assert "does not match" in capsys.readouterr().err

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"profile": "Z"}))
        assert main(["nmse-sweep", "--config", str(p), "--out", str(tmp_path / "o.csv")]) == 2
        assert "error" in capsys.readouterr().err


def test_console_script_module():
    out = subprocess.run([sys.executable, "-m", "overspread_otfs.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "nmse-sweep" in out.stdout
