"""Experiment runner: config parsing, inverse runs, gradient checks and comparisons.

Usage::

    python -m adfield run experiment.toml [--seed S] [--out-dir DIR] [--max-iter N] [-v]
    python -m adfield gradcheck experiment.toml [--corrupt-gradient]
    python -m adfield compare a.toml b.toml

Exit codes: 0 success, 1 usage or config error, 2 solver failure,
3 gradient check failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, InvalidArgumentError, SolverFailure
from .nn import DiscretizedField, MlpField, init_mlp, sample_field
from .optim import OptimOptions, OptimTrace, fd_gradient_check, lbfgs_minimize
from .pcl import NewtonLog
from .problems import PROBLEMS, InverseProblem, make_problem

log = logging.getLogger("adfield")

PARAMETERIZATIONS = ("mlp", "quad_points", "per_element")
TRANSFORMS = ("abs", "none")
GRID_SIZE = 50
GRADCHECK_TOL = 1e-4
CONVERGED_REASONS = ("grad_tol", "f_tol")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GRADCHECK = 0, 1, 2, 3

# problem-specific keys accepted in the [model] section, mapped to constructor arguments
MODEL_KEYS = {
    "linear_elasticity": {"poisson": "poisson", "lame_mode": "mode", "traction": "traction"},
    "stokes": {"force": "force", "boundary_velocity": "boundary_velocity"},
    "hyperelasticity": {"poisson": "poisson", "stretch": "stretch", "body_force": "body_force",
                        "newton_tol": "tol", "newton_max_iter": "max_iter"},
    "burgers": {"steps": "steps", "dt": "dt", "newton_tol": "tol",
                "newton_max_iter": "max_iter"},
}

OPTIMIZER_KEYS = ("max_iter", "memory", "grad_tol", "f_tol", "c1", "c2", "max_line_search",
                  "initial_step")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    Top-level keys are the fields below; ``[optimizer]`` takes any
    :class:`~adfield.optim.OptimOptions` field except the bounds and
    ``[model]`` takes the problem-specific options listed in ``MODEL_KEYS``.
    """
    problem: str = "linear_elasticity"
    mesh_n: int = 10
    parameterization: str = "mlp"
    transform: str = "abs"
    seed: int = 1
    output_dir: str = "results"
    output_shift: float = 1.0  # added to the MLP output
    initial_value: float = 1.0  # cold-start constant for discretized fields
    init_near_truth: bool = False
    init_noise: float = 0.1  # relative amplitude of the near-truth perturbation
    lower_bound: float | None = None
    upper_bound: float | None = None
    truth_scale: float | None = None  # overrides the problem's ground-truth scale
    optimizer: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {sorted(PROBLEMS)}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigError(f"unknown parameterization {self.parameterization!r}; "
                              f"expected one of {PARAMETERIZATIONS}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}; expected one of {TRANSFORMS}")
        if isinstance(self.mesh_n, bool) or not isinstance(self.mesh_n, int) or self.mesh_n < 2:
            raise ConfigError(f"mesh_n must be an integer >= 2, got {self.mesh_n!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not self.output_shift > 0:
            raise ConfigError("output_shift must be positive")
        if not self.init_noise >= 0:
            raise ConfigError("init_noise must be nonnegative")
        if self.truth_scale is not None and not self.truth_scale > 0:
            raise ConfigError("truth_scale must be positive")
        bounded = self.lower_bound is not None or self.upper_bound is not None
        if bounded and self.parameterization == "mlp":
            raise ConfigError("bounds apply to discretized parameterizations only")
        if (self.lower_bound is not None and self.upper_bound is not None
                and self.lower_bound > self.upper_bound):
            raise ConfigError("lower_bound exceeds upper_bound")
        if self.init_near_truth and self.parameterization == "mlp":
            raise ConfigError("init_near_truth applies to discretized parameterizations only")
        unknown = set(self.optimizer) - set(OPTIMIZER_KEYS)
        if unknown:
            raise ConfigError(f"unknown optimizer keys {sorted(unknown)}")
        unknown = set(self.model) - set(MODEL_KEYS[self.problem])
        if unknown:
            raise ConfigError(f"unknown model keys for {self.problem}: {sorted(unknown)}")
        try:
            self.optim_options()
        except (InvalidArgumentError, TypeError) as exc:
            raise ConfigError(f"bad optimizer options: {exc}") from None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def optim_options(self) -> OptimOptions:
        opts = OptimOptions(**self.optimizer)
        opts.lower = self.lower_bound
        opts.upper = self.upper_bound
        return opts

    def problem_options(self) -> dict:
        mapping = MODEL_KEYS[self.problem]
        out = {}
        for key, value in self.model.items():
            out[mapping[key]] = tuple(value) if isinstance(value, list) else value
        return out


def load_config(path) -> ExperimentConfig:
    """Read a TOML config; unknown keys and malformed files raise :class:`ConfigError`."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


@dataclass
class ExperimentResult:
    final_loss: float
    rel_l2_error: float
    max_abs_error: float
    iterations: int
    reason: str
    message: str
    wall_time: float
    trace: OptimTrace
    out_dir: Path | None = None

    @property
    def converged(self) -> bool:
        return self.reason in CONVERGED_REASONS

    def summary(self) -> dict:
        return {"final_loss": self.final_loss, "rel_l2_error": self.rel_l2_error,
                "max_abs_error": self.max_abs_error, "iterations": self.iterations,
                "reason": self.reason, "converged": self.converged, "message": self.message}


def error_grid(size: int = GRID_SIZE) -> np.ndarray:
    """Cell-centred ``size x size`` sample points, x varying fastest."""
    g = (np.arange(size) + 0.5) / size
    X, Y = np.meshgrid(g, g)
    return np.column_stack([X.ravel(), Y.ravel()])


def build_problem(config: ExperimentConfig) -> InverseProblem:
    try:
        problem = make_problem(config.problem, config.mesh_n, **config.problem_options())
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"bad model options for {config.problem}: {exc}") from None
    if config.truth_scale is not None:
        problem.truth_scale = float(config.truth_scale)
    return problem


def build_parameterization(config: ExperimentConfig, problem: InverseProblem):
    """Initial field parameterization for a config (deterministic given the seed)."""
    if config.parameterization == "mlp":
        return init_mlp(config.seed, config.output_shift)
    nq = problem.quad_per_element
    if config.parameterization == "per_element":
        truth = problem.truth_at_quad().reshape(-1, nq).mean(axis=1)
    else:
        truth = problem.truth_at_quad()
    if config.init_near_truth:
        rng = np.random.default_rng(config.seed)
        theta = truth * (1.0 + config.init_noise * rng.uniform(-1.0, 1.0, size=truth.shape))
    else:
        theta = np.full(truth.shape, float(config.initial_value))
    if config.lower_bound is not None or config.upper_bound is not None:
        theta = np.clip(theta, config.lower_bound, config.upper_bound)
    return DiscretizedField(theta, nq, config.parameterization, config.transform)


def field_errors(problem: InverseProblem, param, size: int = GRID_SIZE):
    """Recovered and true fields on the error grid, plus relative L2 and max errors."""
    pts = error_grid(size)
    est = sample_field(param, pts, problem.mesh, problem.quad_points)
    truth = problem.truth(pts)
    rel = float(np.linalg.norm(est - truth) / np.linalg.norm(truth))
    return pts, est, truth, rel, float(np.max(np.abs(est - truth)))


def _write_field_csv(path, pts, est, truth) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "nu_hat", "nu_star"])
        w.writerows((repr(float(x)), repr(float(y)), repr(float(a)), repr(float(b)))
                    for (x, y), a, b in zip(pts, est, truth))


def _write_checkpoint(path, param) -> None:
    if isinstance(param, MlpField):
        param.write(path)
        return
    with open(path, "w") as fh:
        fh.write(f"{param.granularity} {len(param.theta)} transform={param.transform}\n")
        fh.writelines(f"{v!r}\n" for v in map(float, param.theta))


def run_experiment(config: ExperimentConfig, out_dir=None, verbose: bool = False) -> ExperimentResult:
    """Synthesize observations, fit the field and write the result files.

    Files written to ``out_dir`` (default ``config.output_dir``): ``trace.csv``,
    ``field.csv``, ``observations.csv``, ``checkpoint.txt``, ``result.json``
    and, when ``verbose``, ``newton.csv``.  A solver breakdown during the
    optimization ends the run with reason ``solver_failure``; it is not raised.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    problem = build_problem(config)
    param = build_parameterization(config, problem)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()

    obs = problem.synthesize_observations()
    obs.write_csv(out / "observations.csv")
    newton_log = None
    if verbose and hasattr(problem, "newton_log"):
        newton_log = problem.newton_log = NewtonLog()

    def objective(theta):
        return problem.loss_and_grad(param, obs, theta)

    def progress(it, x, f):
        if it % 50 == 0:
            log.info("iter %d loss %.6e", it, f)

    opts = config.optim_options()
    try:
        theta, trace = lbfgs_minimize(objective, param.theta, opts, progress)
    except SolverFailure as exc:
        log.warning("objective failed at the initial point: %s", exc)
        theta, trace = np.array(param.theta), OptimTrace(reason="solver_failure", message=str(exc))
    param = param.with_theta(theta)
    wall = time.perf_counter() - start

    pts, est, truth, rel, max_err = field_errors(problem, param)
    final_loss = float(trace.records[-1].loss) if trace.records else float("nan")
    result = ExperimentResult(final_loss, rel, max_err, trace.iterations, trace.reason,
                              trace.message, wall, trace, out)

    trace.write_csv(out / "trace.csv")
    _write_field_csv(out / "field.csv", pts, est, truth)
    _write_checkpoint(out / "checkpoint.txt", param)
    if newton_log is not None:
        newton_log.write(out / "newton.csv")
    opt_meta = dataclasses.asdict(opts)
    meta = {
        "config": config.to_dict(),
        "problem": problem.metadata(),
        "parameterization": _param_metadata(param),
        "optimizer": opt_meta,
        "error_grid": f"{GRID_SIZE}x{GRID_SIZE} cell-centred",
        "result": result.summary(),
    }
    with open(out / "result.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return result


def _param_metadata(param) -> dict:
    if isinstance(param, MlpField):
        return {"kind": "mlp", "sizes": list(param.sizes), "output_shift": param.output_shift,
                "seed": param.seed, "activation": "tanh", "init": "glorot-uniform, zero biases"}
    return {"kind": param.granularity, "transform": param.transform,
            "num_values": int(len(param.theta))}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def gradcheck_command(config: ExperimentConfig, corrupt: bool = False, directions: int = 10,
                      step: float = 1e-5) -> dict:
    """Finite-difference check of the configured problem's gradient at the initial parameters.

    ``corrupt`` doubles the analytic gradient, which the check must flag.
    """
    problem = build_problem(config)
    param = build_parameterization(config, problem)
    obs = problem.synthesize_observations()
    factor = 2.0 if corrupt else 1.0

    def objective(theta):
        f, g = problem.loss_and_grad(param, obs, theta)
        return f, factor * g

    err = fd_gradient_check(objective, param.theta, step=step, directions=directions,
                            seed=config.seed)
    return {"problem": config.problem, "parameterization": config.parameterization,
            "mesh_n": config.mesh_n, "max_rel_error": err, "tolerance": GRADCHECK_TOL,
            "passed": bool(err <= GRADCHECK_TOL)}


COMPARE_FIELDS = ("label", "parameterization", "transform", "final_loss", "rel_l2_error",
                  "max_abs_error", "iterations", "reason", "converged")


def compare_command(config_a: ExperimentConfig, config_b: ExperimentConfig, out_dir) -> list:
    """Run two configs that differ only in how the field is parameterized.

    Writes ``compare.csv`` with one row per run; each run's own files go to
    ``out_dir/a`` and ``out_dir/b``.
    """
    shared = ("problem", "mesh_n", "model", "truth_scale")
    for key in shared:
        if getattr(config_a, key) != getattr(config_b, key):
            raise InvalidArgumentError(f"configs differ in {key!r}: {getattr(config_a, key)!r} "
                                       f"vs {getattr(config_b, key)!r}")
    out = Path(out_dir)
    rows = []
    for label, cfg in (("a", config_a), ("b", config_b)):
        res = run_experiment(cfg, out / label)
        rows.append({"label": label, "parameterization": cfg.parameterization,
                     "transform": cfg.transform if cfg.parameterization != "mlp" else "",
                     "final_loss": repr(res.final_loss), "rel_l2_error": repr(res.rel_l2_error),
                     "max_abs_error": repr(res.max_abs_error), "iterations": res.iterations,
                     "reason": res.reason, "converged": res.converged})
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_FIELDS)
        w.writeheader()
        w.writerows(rows)
    return rows


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", help="override the output directory")
    common.add_argument("--max-iter", type=int, help="override optimizer.max_iter")
    common.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging and Newton residual logs")
    p = argparse.ArgumentParser(prog="adfield", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run one inverse experiment")
    run.add_argument("config")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gc.add_argument("config")
    gc.add_argument("--corrupt-gradient", action="store_true",
                    help="double the analytic gradient (checks the detector)")
    cmp_ = sub.add_parser("compare", parents=[common], help="run and tabulate two configs")
    cmp_.add_argument("config_a")
    cmp_.add_argument("config_b")
    return p


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out_dir is not None:
        changes["output_dir"] = args.out_dir
    if args.max_iter is not None:
        changes["optimizer"] = {**config.optimizer, "max_iter": args.max_iter}
    return config.replace(**changes) if changes else config


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            config = _apply_overrides(load_config(args.config), args)
            res = run_experiment(config, verbose=args.verbose)
            print(json.dumps({**res.summary(), "wall_time": round(res.wall_time, 3),
                              "out_dir": str(res.out_dir)}))
            return EXIT_SOLVER if res.reason == "solver_failure" else EXIT_OK
        if args.command == "gradcheck":
            config = _apply_overrides(load_config(args.config), args)
            report = gradcheck_command(config, corrupt=args.corrupt_gradient)
            print(json.dumps(report))
            return EXIT_OK if report["passed"] else EXIT_GRADCHECK
        config_a = _apply_overrides(load_config(args.config_a), args)
        config_b = _apply_overrides(load_config(args.config_b), args)
        rows = compare_command(config_a, config_b, args.out_dir or config_a.output_dir)
        for row in rows:
            print(",".join(str(row[k]) for k in COMPARE_FIELDS))
        return EXIT_OK
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
