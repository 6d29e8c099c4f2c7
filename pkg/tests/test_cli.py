import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from scipy.linalg import expm

from nonmarkov import io
from nonmarkov.cli import estimate_threshold, main
from nonmarkov.generators import GkslSpec, gksl
from nonmarkov.operator_core import pauli
from nonmarkov.scenario import ScenarioError, bundled_scenarios, load_scenario, parse_scenario

I2, SX, SY, SZ = pauli()

UNITARY = """
name = "h_only"
dim = 2
[hamiltonian]
re = [[0.5, 0.0], [0.0, -0.5]]
[kernel]
type = "none"
[solver]
dt = 1e-3
t_max = 3.0
"""


def write(tmp_path, text, name="sc.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_bundled_scenarios_present():
    names = bundled_scenarios()
    for n in ("ls_gamma2", "ls_gamma_half", "ls_sweep", "unitary", "semigroup", "ls_master"):
        assert n in names
        load_scenario(n)


def test_run_gamma2_all_cp(tmp_path):
    assert main(["run", "--config", "ls_gamma2", "--out", str(tmp_path), "--require-cp"]) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["verdict"] == "CP" and cert["first_not_cp_time"] is None
    assert len(cert["samples"]) == 10001


def test_run_gamma_half_require_cp_exit_2(tmp_path):
    code = main(["run", "--config", "ls_gamma_half", "--out", str(tmp_path), "--require-cp"])
    assert code == 2
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["verdict"] == "NOT_CP"
    root = np.sqrt(0.75)
    zero = (np.pi - np.arctan(root / 0.5)) / root
    assert zero <= cert["first_not_cp_time"] <= zero + 2e-3
    # without the flag the same scenario succeeds
    assert main(["run", "--config", "ls_gamma_half", "--out", str(tmp_path / "b")]) == 0


def test_run_unitary_matches_closed_form(tmp_path):
    cfg = write(tmp_path, UNITARY)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    traj = io.read_trajectory_csv(tmp_path / "o" / "trajectory.csv")
    L = gksl(GkslSpec(SZ / 2))
    exact = np.stack([expm(t * L.matrix) for t in traj.times])
    assert np.max(np.abs(traj.samples - exact)) <= 1e-6


def test_trajectory_csv_round_trip_exact(tmp_path):
    cfg = write(tmp_path, UNITARY.replace("t_max = 3.0", "t_max = 0.5"))
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    from nonmarkov.scenario import solve_scenario

    direct = solve_scenario(load_scenario(cfg)).trajectory
    back = io.read_trajectory_csv(tmp_path / "o" / "trajectory.csv")
    assert np.array_equal(back.samples, direct.samples)
    assert np.array_equal(back.times, direct.times)
    assert back.label == direct.label == "A"


def test_dual_trajectory_round_trip(tmp_path):
    from nonmarkov.scenario import solve_scenario
    from nonmarkov.volterra import dual

    cfg = write(tmp_path, UNITARY.replace("t_max = 3.0", "t_max = 0.1"))
    traj = dual(solve_scenario(load_scenario(cfg)).trajectory)
    io.write_trajectory_csv(traj, tmp_path / "d.csv")
    back = io.read_trajectory_csv(tmp_path / "d.csv")
    assert back.label == "dual" and back.base_label == "A"
    assert np.array_equal(back.samples, traj.samples)


def test_outputs_deterministic(tmp_path):
    cfg = write(tmp_path, UNITARY.replace("t_max = 3.0", "t_max = 0.5"))
    for sub in ("a", "b"):
        main(["run", "--config", str(cfg), "--out", str(tmp_path / sub)])
    for name in ("trajectory.csv", "certificate.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_header_comment(tmp_path):
    cfg = write(tmp_path, UNITARY.replace("t_max = 3.0", "t_max = 0.01"))
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    lines = (tmp_path / "o" / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# nonmarkov trajectory d=2 label=A")
    assert lines[1].split(",")[:3] == ["t", "re_0_0", "im_0_0"]
    assert lines[1].split(",")[-1] == "unitality_residual"
    assert len(lines[1].split(",")) == 1 + 2 * 16 + 1


def test_resolvent_output(tmp_path):
    text = UNITARY.replace("t_max = 3.0", "t_max = 30.0").replace("dt = 1e-3", "dt = 2e-3")
    text += "[outputs]\nresolvent_check = {p_values = [2.0, 4.0]}\n"
    cfg = write(tmp_path, text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "resolvent.json").read_text())
    assert rep["passed"] and rep["p_values"] == [2.0, 4.0]
    assert main(["verify-resolvent", "--config", str(cfg), "--out", str(tmp_path / "v"),
                 "--p", "3", "5"]) == 0
    rep = json.loads((tmp_path / "v" / "resolvent.json").read_text())
    assert rep["p_values"] == [3.0, 5.0]


def test_verify_resolvent_semigroup_bundled(tmp_path):
    assert main(["verify-resolvent", "--config", "semigroup", "--out", str(tmp_path)]) == 0


def _read_sweep(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sweep_threshold_near_one(tmp_path):
    cfg = write(tmp_path, """
dim = 2
equation = "normalization"
[kernel]
type = "lidar_shabani"
kappa = 1.0
gamma = 1.0
[solver]
dt = 1e-2
t_max = 20.0
""")
    assert main(["sweep", "--config", str(cfg), "--gamma", "0.5", "1.5", "--steps", "11",
                 "--out", str(tmp_path / "s")]) == 0
    summary = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert abs(summary["threshold_estimate"] - 1.0) <= 0.1
    rows = _read_sweep(tmp_path / "s" / "sweep.csv")
    assert len(rows) == 11

    main(["sweep", "--config", str(cfg), "--gamma", "1.1", "2.0", "--steps", "4",
          "--out", str(tmp_path / "hi")])
    assert all(r["verdict"] == "CP" for r in _read_sweep(tmp_path / "hi" / "sweep.csv"))

    main(["sweep", "--config", str(cfg), "--gamma", "0.1", "0.9", "--steps", "5",
          "--out", str(tmp_path / "lo")])
    assert all(r["verdict"] == "NOT_CP" for r in _read_sweep(tmp_path / "lo" / "sweep.csv"))


def test_sweep_needs_three_steps(tmp_path):
    assert main(["sweep", "--config", "ls_sweep", "--gamma", "0.5", "1.5", "--steps", "2",
                 "--out", str(tmp_path)]) == 1


def test_estimate_threshold():
    rows = [(0.5, -1, "NOT_CP", 1), (1.0, 0, "CP", None), (0.75, -1, "NOT_CP", 2)]
    assert estimate_threshold(rows) == pytest.approx(0.875)
    assert estimate_threshold([(1.0, 0, "CP", None)]) is None


def test_analytic_table(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["analytic-table", "--kappa", "1", "--gamma", "1", "--t-max", "2",
                 "--n", "3", "--out", str(out)]) == 0
    rows = _read_sweep(out)
    assert [float(r["t"]) for r in rows] == [0.0, 1.0, 2.0]
    f = [float(r["f"]) for r in rows]
    assert f[0] == 1.0
    assert f[1] == pytest.approx(0.7357588823428879, abs=1e-12)
    assert f[2] == pytest.approx(0.40600584970983655, abs=1e-12)
    assert all(r["branch"] == "critical" for r in rows)

    main(["analytic-table", "--kappa", "1.5", "--gamma", "0", "--t-max", "10",
          "--n", "21", "--out", str(out)])
    rows = _read_sweep(out)
    t = np.array([float(r["t"]) for r in rows])
    np.testing.assert_allclose([float(r["f"]) for r in rows], np.cos(1.5 * t), atol=1e-14)
    assert main(["analytic-table", "--kappa", "1", "--gamma", "1", "--t-max", "2",
                 "--n", "1", "--out", str(out)]) == 1


def test_parse_error_has_line_info(tmp_path):
    cfg = write(tmp_path, "dim = 2\n[solver]\ndt = = 3\n")
    with pytest.raises(ScenarioError, match="line 3"):
        load_scenario(cfg)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


@pytest.mark.parametrize(
    "text, match",
    [
        ("dim = 2\n", "solver"),
        ("dim = 9\n[solver]\ndt=0.1\nt_max=1.0\n", "exceeds"),
        ("dim = 2\nequation='foo'\n[solver]\ndt=0.1\nt_max=1.0\n", "equation"),
        ("dim = 2\n[hamiltonian]\nre=[[1,0,0]]\n[solver]\ndt=0.1\nt_max=1.0\n", "hamiltonian"),
        ("dim = 2\n[kernel]\ntype='lidar_shabani'\nkappa=1.0\n[solver]\ndt=0.1\nt_max=1.0\n",
         "gamma"),
    ],
)
def test_scenario_validation_errors(tmp_path, text, match):
    with pytest.raises(ScenarioError, match=match):
        load_scenario(write(tmp_path, text))


def test_allow_large(tmp_path):
    text = "dim = 9\n[solver]\ndt=0.5\nt_max=1.0\n"
    cfg = write(tmp_path, text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert load_scenario(cfg, allow_large=True).dim == 9


def test_non_unital_channel_rejected(tmp_path):
    cfg = write(tmp_path, """
dim = 2
[kernel]
type = "lidar_shabani"
kappa = 1.0
gamma = 1.0
[[kernel.channel_kraus]]
re = [[1.0, 0.0], [0.0, 0.0]]
[solver]
dt = 0.1
t_max = 1.0
""")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_random_channel_seeded(tmp_path):
    text = """
dim = 2
equation = "master"
[kernel]
type = "lidar_shabani"
kappa = 1.0
gamma = 1.5
channel = "random_unital"
[solver]
dt = 0.05
t_max = 1.0
"""
    cfg = write(tmp_path, text)
    for sub, seed in (("a", "3"), ("b", "3"), ("c", "4")):
        main(["run", "--config", str(cfg), "--out", str(tmp_path / sub), "--seed", seed])
    a, b, c = (io.read_trajectory_csv(tmp_path / s / "trajectory.csv") for s in "abc")
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_table_kernel_and_modified(tmp_path):
    cfg = write(tmp_path, """
dim = 2
equation = "modified"
[modified]
p_kraus = [{re = [[0.3, 0.0], [0.0, 0.1]]}]
[kernel]
type = "table"
times = [0.0, 1.0, 2.0]
weights = [1.0, 0.5, 0.0]
[[kernel.channel_kraus]]
re = [[0.0, 1.0], [1.0, 0.0]]
[solver]
dt = 0.01
t_max = 2.0
""")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--require-cp",
                 "--stride", "10"]) == 0
    cert = json.loads((tmp_path / "o" / "certificate.json").read_text())
    assert cert["label"] == "V" and len(cert["samples"]) == 21


def test_module_entry_point(tmp_path):
    out = tmp_path / "t.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "nonmarkov.cli", "analytic-table", "--kappa", "1", "--gamma",
         "2", "--t-max", "1", "--n", "2", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
