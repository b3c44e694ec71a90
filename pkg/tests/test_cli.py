import filecmp
import json
import os

import numpy as np
import pytest

from sysid.cli import main
from sysid.trajectory_io import load_trajectory


def write(path, obj):
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


def test_simulate_and_infer(tmp_path, capsys):
    cfg = write(tmp_path / "sim.json", {"system": "bias", "noise": "bias", "horizon": 12,
                                        "trials": 2, "seed": 3})
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["traj_0000.csv", "traj_0001.csv"]
    tr = load_trajectory(str(out / "traj_0000.csv"))
    assert tr.length == 12 and tr.has_noise
    res_path = tmp_path / "res.json"
    assert main(["infer", "--traj", str(out / "traj_0000.csv"), "--out", str(res_path)]) == 0
    res = json.loads(res_path.read_text())
    assert res["p"] == 11 and set(res["results"]) == {"proposed", "naive", "raw_ols"}
    # full family on [1, 11] gives the same fit as the naive estimator
    assert np.allclose(res["results"]["proposed"]["A"], res["results"]["naive"]["A"])
    assert main(["infer", "--traj", str(out / "traj_0001.csv"), "--family", "chain",
                 "--p", "8", "--method", "proposed"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert list(printed["results"]) == ["proposed"]


def test_seed_flag_overrides_file(tmp_path):
    cfg = write(tmp_path / "sim.json", {"horizon": 5, "trials": 1, "seed": 1})
    for name, seed in (("a", 9), ("b", 9), ("c", 1)):
        assert main(["--seed", str(seed), "simulate", "--config", cfg,
                     "--out", str(tmp_path / name)]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert not same_tree(tmp_path / "a", tmp_path / "c")


def test_infer_with_family_file(tmp_path, capsys):
    cfg = write(tmp_path / "sim.json", {"horizon": 8, "trials": 1})
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")])
    fam = write(tmp_path / "fam.json", {"k": 1, "p": 6, "sets": {"1": [2, 4, 6], "2": [3, 5]}})
    assert main(["infer", "--traj", str(tmp_path / "s" / "traj_0000.csv"),
                 "--family-json", fam, "--method", "naive"]) == 0
    assert json.loads(capsys.readouterr().out)["p"] == 6


def test_bound(tmp_path):
    cfg = write(tmp_path / "b.json", {"n": 4, "k": 1, "p": 5, "family": "full",
                                      "noise": "bias", "system": "bias", "eps": 0.2})
    out = tmp_path / "bound.json"
    assert main(["bound", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["n_count"] > 0 and "lambda_min_gamma" in rep
    assert set(rep["conditions"]) == {"exact_concentration", "min_eigenvalue",
                                      "bound_concentration", "horizon_check"}


def test_bound_with_norm_only(tmp_path, capsys):
    cfg = write(tmp_path / "b.json", {"n": 4, "k": 1, "p": 5, "noise": "horizon",
                                      "sigma_max_A": 1.0})
    assert main(["bound", "--config", cfg]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["conditions"]["exact_concentration"] is None


def test_pac(tmp_path):
    req = write(tmp_path / "r.json", {"request": {"phi": 2.0, "delta": 0.2, "rho3": 0.5},
                                      "config": {"sigma_p2": 3000, "sigma_o2": 3000,
                                                 "sigma_i2": 3000},
                                      "system": {"A": (0.3 * np.array(
                                          [[1, 0, 0, 1], [0, 1, 0, 1], [1, 0, 1, 0],
                                           [1, 0, 1, 1]])).tolist()}})
    out = tmp_path / "o.json"
    assert main(["pac", "--request", req, "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["status"] == "certified" and res["trace"][-1]["action"] == "break"


@pytest.mark.parametrize("argv,content,code", [
    (["bound", "--config"], "{bad", 2),
    (["bound", "--config"], {"n": 2, "k": 3, "p": 2}, 2),
    (["pac", "--request"], {"config": {"n": 2}}, 2),
    (["pac", "--request"], {"request": {"phi": 1, "delta": 0.1}, "config": {"n": 2}}, 2),
    (["bound", "--config"], {"n": 2, "k": 1, "p": 3, "eps": 0.0, "sigma_max_A": 0.5,
                             "sigma_o2": 1.0}, 3),
])
def test_error_exit_codes(tmp_path, capsys, argv, content, code):
    path = write(tmp_path / "in.json", content)
    assert main(argv + [path]) == code
    assert capsys.readouterr().err


def test_missing_file_and_threads(tmp_path, capsys):
    assert main(["bound", "--config", str(tmp_path / "nope.json")]) == 2
    assert main(["--threads", "0", "bound", "--config", "x"]) == 2


def test_numeric_failure_exit_code(tmp_path):
    cfg = write(tmp_path / "sim.json", {"system": {"A": [[10.0]]}, "horizon": 400})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_experiment_deterministic_across_threads(tmp_path, capsys):
    spec = write(tmp_path / "s.json", {"preset": "bias", "trials": 150})
    for name, threads in (("a", 1), ("b", 1), ("c", 3)):
        assert main(["--threads", str(threads), "experiment", "--spec", spec,
                     "--out", str(tmp_path / name)]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert same_tree(tmp_path / "a", tmp_path / "c")
