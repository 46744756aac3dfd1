import json
import subprocess
import sys
from importlib import resources

import pytest

DATA = resources.files("hvo.data")
COARSE_FLAGS = ["--soc-nodes", "41", "--alpha-nodes", "21", "--phi-nodes", "11",
                "--engine-speed-nodes", "7"]


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "hvo", *args],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="module")
def short_mission(tmp_path_factory):
    """A 60 s cut of the demo mission so CLI runs stay fast."""
    import hvo.mission as mi

    demo = mi.load_mission(DATA / "linea1_demo.csv")
    sl = slice(2380, 2440)
    cut = mi.MissionProfile(demo.t[sl] - demo.t[sl][0], demo.omega[sl], demo.torque[sl],
                            demo.segment[sl], 1.0, "short")
    path = tmp_path_factory.mktemp("mission") / "short.csv"
    mi.save_mission(cut, path)
    return path


class TestRun:
    def test_conventional_happy_path(self, tmp_path):
        out = tmp_path / "out"
        res = run_cli("run", "--config", str(DATA / "conventional.json"),
                      "--mission", str(DATA / "linea1_demo.csv"), "--out", str(out))
        assert res.returncode == 0, res.stderr
        for name in ("report.json", "report.csv", "trajectory.csv"):
            assert (out / name).exists()
        assert "conventional" in res.stdout

    def test_reproducible_artifacts(self, tmp_path, short_mission):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            res = run_cli("run", "--config", str(DATA / "parallel.json"),
                          "--mission", str(short_mission), "--out", str(out), *COARSE_FLAGS)
            assert res.returncode == 0, res.stderr
            outs.append(out)
        for name in ("report.json", "report.csv", "trajectory.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_missing_mission_exit_1(self, tmp_path):
        missing = tmp_path / "nope.csv"
        res = run_cli("run", "--config", str(DATA / "conventional.json"),
                      "--mission", str(missing), "--out", str(tmp_path / "out"))
        assert res.returncode == 1
        assert "nope.csv" in res.stderr

    def test_bad_config_exit_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        res = run_cli("run", "--config", str(bad),
                      "--mission", str(DATA / "linea1_demo.csv"), "--out", str(tmp_path / "out"))
        assert res.returncode == 1

    def test_infeasible_mission_exit_2(self, tmp_path):
        # torque far above the conventional envelope
        mpath = tmp_path / "impossible.csv"
        mpath.write_text("t,omega_prop,torque_prop\n" +
                         "\n".join(f"{k},50,9000" for k in range(10)) + "\n")
        res = run_cli("run", "--config", str(DATA / "conventional.json"),
                      "--mission", str(mpath), "--out", str(tmp_path / "out"))
        assert res.returncode == 2

    def test_coarse_soc_grid_warns_but_runs(self, tmp_path, short_mission):
        res = run_cli("run", "--config", str(DATA / "parallel.json"),
                      "--mission", str(short_mission), "--out", str(tmp_path / "out"),
                      "--soc-nodes", "5", "--alpha-nodes", "11", "--phi-nodes", "5",
                      "--engine-speed-nodes", "5")
        assert res.returncode == 0, res.stderr
        assert "warning" in res.stderr and "coarse" in res.stderr

    def test_verify_flag(self, tmp_path, short_mission):
        res = run_cli("run", "--config", str(DATA / "parallel.json"),
                      "--mission", str(short_mission), "--out", str(tmp_path / "out"),
                      "--verify", *COARSE_FLAGS)
        assert res.returncode == 0, res.stderr
        assert "verify" in res.stdout

    def test_grid_bounds_validated(self, tmp_path, short_mission):
        res = run_cli("run", "--config", str(DATA / "parallel.json"),
                      "--mission", str(short_mission), "--out", str(tmp_path / "out"),
                      "--soc-nodes", "1")
        assert res.returncode == 1


class TestSweep:
    def test_empty_mu_exit_1(self, tmp_path, short_mission):
        res = run_cli("sweep", "--config", str(DATA / "parallel.json"),
                      "--mission", str(short_mission), "--out", str(tmp_path / "out"),
                      "--mu", "")
        assert res.returncode == 1

    def test_mu_out_of_range_exit_1(self, tmp_path, short_mission):
        res = run_cli("sweep", "--config", str(DATA / "parallel.json"),
                      "--mission", str(short_mission), "--out", str(tmp_path / "out"),
                      "--mu", "0.5,1.5")
        assert res.returncode == 1

    def test_single_mu_matches_run(self, tmp_path, short_mission):
        out_sweep = tmp_path / "sweep"
        out_run = tmp_path / "run"
        res = run_cli("sweep", "--config", str(DATA / "parallel.json"),
                      "--mission", str(short_mission), "--out", str(out_sweep),
                      "--mu", "0.5", *COARSE_FLAGS)
        assert res.returncode == 0, res.stderr
        res = run_cli("run", "--config", str(DATA / "parallel.json"),
                      "--mission", str(short_mission), "--out", str(out_run),
                      "--mu", "0.5", *COARSE_FLAGS)
        assert res.returncode == 0
        sweep_rows = (out_sweep / "sweep.csv").read_text().splitlines()
        run_rows = (out_run / "report.csv").read_text().splitlines()
        assert sweep_rows[1].split(",")[:7] == run_rows[1].split(",")
        plot = (out_sweep / "sweep_plot.csv").read_text().splitlines()
        assert plot[0] == "mu,nox_gph,hc_gph"
        assert len(plot) == 2


class TestGenmaps:
    def test_table2_summary(self, tmp_path):
        out = tmp_path / "maps.json"
        res = run_cli("genmaps", "--kind", "engine",
                      "--spec", str(DATA / "engine_147kw.json"), "--out", str(out))
        assert res.returncode == 0, res.stderr
        rated = float([l for l in res.stdout.splitlines() if "rated power" in l][0].split(":")[1].split()[0])
        assert rated == pytest.approx(147.0, rel=0.01)
        assert out.exists()

    def test_regeneration_bit_identical(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        for out in (a, b):
            res = run_cli("genmaps", "--kind", "engine",
                          "--spec", str(DATA / "engine_147kw.json"), "--out", str(out))
            assert res.returncode == 0
        assert a.read_bytes() == b.read_bytes()

    def test_negative_displacement_exit_1(self, tmp_path):
        spec = tmp_path / "spec.json"
        cfg = json.loads((DATA / "engine_147kw.json").read_text())
        cfg["displacement_l"] = -1.0
        spec.write_text(json.dumps(cfg))
        res = run_cli("genmaps", "--kind", "engine", "--spec", str(spec),
                      "--out", str(tmp_path / "maps.json"))
        assert res.returncode == 1

    def test_em_kind(self, tmp_path):
        spec = tmp_path / "em.json"
        spec.write_text(json.dumps({"rated_power_kw": 147.0, "max_speed_rads": 320.0,
                                    "base_speed_rads": 157.0}))
        res = run_cli("genmaps", "--kind", "em", "--spec", str(spec),
                      "--out", str(tmp_path / "em_map.json"))
        assert res.returncode == 0, res.stderr


class TestOptratio:
    def test_demo_range_prints_unique_argmax(self):
        res = run_cli("optratio", "--mission", str(DATA / "linea1_demo.csv"))
        assert res.returncode == 0, res.stderr
        assert "best ratio:" in res.stdout

    def test_single_ratio(self):
        res = run_cli("optratio", "--mission", str(DATA / "linea1_demo.csv"),
                      "--ratio-min", "4.0", "--ratio-max", "4.0")
        assert res.returncode == 0
        assert "best ratio: 4.000" in res.stdout

    def test_infeasible_range_exit_2(self):
        res = run_cli("optratio", "--mission", str(DATA / "linea1_demo.csv"),
                      "--ratio-min", "20.0", "--ratio-max", "25.0", "--ratio-step", "1.0")
        assert res.returncode == 2


class TestSynthmission:
    def test_writes_bundled_equivalent(self, tmp_path):
        out = tmp_path / "m.csv"
        res = run_cli("synthmission", "--out", str(out), "--seed", "7")
        assert res.returncode == 0
        assert out.read_bytes() == (DATA / "linea1_demo.csv").read_bytes()

    def test_round_trips_through_loader(self, tmp_path):
        import hvo.mission as mi

        out = tmp_path / "m.csv"
        run_cli("synthmission", "--out", str(out), "--seed", "3")
        profile = mi.load_mission(out)
        assert len(profile) == 3600
