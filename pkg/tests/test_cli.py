import csv
import json
from pathlib import Path

import numpy as np
import pytest

from adfield.cli import (ExperimentConfig, compare_command, error_grid, gradcheck_command,
                         load_config, main, run_experiment)
from adfield.errors import ConfigError, InvalidArgumentError

OUTPUTS = ("trace.csv", "field.csv", "observations.csv", "checkpoint.txt", "result.json")


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def small(**kw):
    base = dict(problem="linear_elasticity", mesh_n=3, optimizer={"max_iter": 15})
    base.update(kw)
    return ExperimentConfig(**base)


def test_load_config_with_sections(tmp_path):
    path = write(tmp_path, "c.toml", 'problem = "stokes"\nmesh_n = 4\nseed = 7\n'
                 '[optimizer]\nmax_iter = 12\nmemory = 5\n[model]\nboundary_velocity = "zero"\n')
    cfg = load_config(path)
    assert cfg.problem == "stokes" and cfg.mesh_n == 4 and cfg.seed == 7
    assert cfg.optim_options().max_iter == 12 and cfg.optim_options().memory == 5
    assert cfg.problem_options() == {"boundary_velocity": "zero"}


def test_defaults_are_valid():
    cfg = ExperimentConfig()
    assert cfg.problem == "linear_elasticity" and cfg.parameterization == "mlp"
    assert cfg.output_shift == 1.0 and cfg.transform == "abs"


@pytest.mark.parametrize("text", [
    'problem = "heat"',
    'parameterization = "spline"',
    'transform = "square"',
    "mesh_n = 1",
    'mesh_n = "ten"',
    "colour = 3",
    "[optimizer]\nmomentum = 0.9",
    '[model]\nboundary_velocity = "zero"',  # not a linear elasticity option
    'parameterization = "mlp"\nlower_bound = 0.0',
    'parameterization = "quad_points"\nlower_bound = 2.0\nupper_bound = 1.0',
    "init_near_truth = true",
    "output_shift = -1.0",
    "[optimizer]\nc1 = 0.95",
    "problem = ",
])
def test_bad_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "bad.toml", text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_error_grid():
    pts = error_grid()
    assert pts.shape == (2500, 2)
    assert np.isclose(pts.min(), 0.01) and np.isclose(pts.max(), 0.99)


def test_run_writes_outputs(tmp_path):
    res = run_experiment(small(), tmp_path / "out")
    for name in OUTPUTS:
        assert (tmp_path / "out" / name).exists()
    headers = {"trace.csv": "iter,loss,grad_inf,step,fevals", "field.csv": "x,y,nu_hat,nu_star",
               "observations.csv": "dof_index,value"}
    for name, header in headers.items():
        with open(tmp_path / "out" / name, newline="") as fh:
            rows = list(csv.reader(fh))
        assert ",".join(rows[0]) == header
        assert all(len(r) == len(rows[0]) for r in rows)
    assert res.iterations == 15 and res.reason == "max_iter"
    assert res.rel_l2_error >= 0 and res.max_abs_error >= res.rel_l2_error * 0
    meta = json.loads((tmp_path / "out" / "result.json").read_text())
    assert meta["result"]["iterations"] == 15
    assert meta["parameterization"]["output_shift"] == 1.0
    assert meta["problem"]["lame_mode"] == "poisson-scaled"
    assert meta["optimizer"]["max_iter"] == 15


def test_same_config_identical_files(tmp_path):
    cfg = small(parameterization="per_element", seed=4)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in OUTPUTS:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_metadata_reruns_bit_identically(tmp_path):
    cfg = small(problem="stokes", seed=3, model={"boundary_velocity": "quadratic"})
    run_experiment(cfg, tmp_path / "a")
    meta = json.loads((tmp_path / "a" / "result.json").read_text())
    again = ExperimentConfig.from_dict(meta["config"])
    assert again == cfg
    run_experiment(again, tmp_path / "b")
    for name in OUTPUTS:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_init_near_truth_exact(tmp_path):
    cfg = small(parameterization="quad_points", init_near_truth=True, init_noise=0.0,
                optimizer={"max_iter": 2})
    res = run_experiment(cfg, tmp_path)
    assert res.trace.records[0].loss <= 1e-20


def test_truth_scale_override(tmp_path):
    res = run_experiment(small(truth_scale=2.0, optimizer={"max_iter": 1}), tmp_path)
    with open(tmp_path / "field.csv") as fh:
        row = next(csv.DictReader(fh))
    x, y = float(row["x"]), float(row["y"])
    assert np.isclose(float(row["nu_star"]), 2 * (1 + np.exp(-5 * ((x - .5) ** 2 + (y - .5) ** 2))))
    assert res.iterations == 1


def test_solver_failure_is_recorded(tmp_path):
    # a near-zero modulus lets the body force invert elements at the start
    cfg = ExperimentConfig(problem="hyperelasticity", mesh_n=3, parameterization="quad_points",
                           transform="none", initial_value=1e-6)
    res = run_experiment(cfg, tmp_path)
    assert res.reason == "solver_failure" and res.iterations == 0
    meta = json.loads((tmp_path / "result.json").read_text())
    assert meta["result"]["reason"] == "solver_failure"
    assert "det F" in meta["result"]["message"]


def test_verbose_writes_newton_log(tmp_path):
    cfg = small(problem="hyperelasticity", optimizer={"max_iter": 1})
    run_experiment(cfg, tmp_path, verbose=True)
    lines = (tmp_path / "newton.csv").read_text().splitlines()
    assert lines[0] == "step,iter,residual_inf" and len(lines) > 2


@pytest.mark.parametrize("problem", ["linear_elasticity", "stokes", "hyperelasticity", "burgers"])
@pytest.mark.parametrize("param", ["mlp", "quad_points"])
def test_gradcheck_passes(problem, param):
    report = gradcheck_command(ExperimentConfig(problem=problem, mesh_n=3, parameterization=param))
    assert report["passed"], report


def test_gradcheck_minimal_mesh():
    assert gradcheck_command(ExperimentConfig(mesh_n=2))["passed"]


def test_gradcheck_detects_corruption():
    report = gradcheck_command(ExperimentConfig(mesh_n=3), corrupt=True)
    assert not report["passed"] and abs(report["max_rel_error"] - 0.5) < 1e-3


def test_compare_identical_rows(tmp_path):
    rows = compare_command(small(), small(), tmp_path)
    a, b = rows
    assert {k: v for k, v in a.items() if k != "label"} == {k: v for k, v in b.items() if k != "label"}
    lines = (tmp_path / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("label,parameterization,transform,final_loss")
    assert len(lines) == 3


def test_compare_rejects_mismatch(tmp_path):
    with pytest.raises(InvalidArgumentError):
        compare_command(small(), small(problem="stokes"), tmp_path)


def test_main_exit_codes(tmp_path, capsys):
    good = write(tmp_path, "g.toml", 'mesh_n = 3\n[optimizer]\nmax_iter = 3\n')
    assert main(["run", str(good), "--out-dir", str(tmp_path / "run")]) == 0
    assert json.loads(capsys.readouterr().out)["iterations"] == 3
    assert main(["run", str(good), "--out-dir", str(tmp_path / "r2"), "--max-iter", "2",
                 "--seed", "5"]) == 0
    meta = json.loads((tmp_path / "r2" / "result.json").read_text())
    assert meta["config"]["seed"] == 5 and meta["result"]["iterations"] == 2
    assert main(["gradcheck", str(good)]) == 0
    assert main(["gradcheck", str(good), "--corrupt-gradient"]) == 3
    bad = write(tmp_path, "b.toml", 'problem = "heat"\n')
    assert main(["run", str(bad)]) == 1
    assert main(["frobnicate"]) == 1
    fail = write(tmp_path, "f.toml", 'problem = "hyperelasticity"\nmesh_n = 3\nparameterization = '
                 '"quad_points"\ntransform = "none"\ninitial_value = 1e-6\n')
    assert main(["run", str(fail), "--out-dir", str(tmp_path / "f")]) == 2
    assert (tmp_path / "f" / "result.json").exists()
    # a Newton cap too small for the ground-truth solve
    truth_fail = write(tmp_path, "t.toml", 'problem = "burgers"\nmesh_n = 3\n[model]\n'
                       'newton_max_iter = 1\n')
    assert main(["run", str(truth_fail), "--out-dir", str(tmp_path / "t")]) == 2
    other = write(tmp_path, "s.toml", 'problem = "stokes"\nmesh_n = 3\n')
    assert main(["compare", str(good), str(other), "--out-dir", str(tmp_path / "c")]) == 1
    assert main(["compare", str(good), str(good), "--out-dir", str(tmp_path / "c")]) == 0


@pytest.mark.parametrize("path", sorted((Path(__file__).resolve().parent.parent / "configs")
                                        .glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.mesh_n == 10 and cfg.optim_options().max_iter >= 300
