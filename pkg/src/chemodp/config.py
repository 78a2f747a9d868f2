"""Run configuration: one JSON tree drives the whole pipeline.

An empty config file (or ``{}``) reproduces the default study setup at full
scale: a 7^4 x 4 grid, 10^4 parameter samples compressed to 20 clusters with
relative dispersion 0.4, sampling period 0.25 days, and the three-controller
comparison (nominal/dirac, expectation-only, variance-penalized) evaluated
over 100 x 200 seeded closed loops of 50 steps.

The master seed derives the per-stage seeds by fixed offsets so stages can
be rerun independently with identical results: sampling = seed,
clustering = seed + 1, evaluation initial states = seed + 2, evaluation
parameters = seed + 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .model import CostParams, DoseSet, ModelParams
from .solver import SolverConfig
from .uncertainty import UncertaintyModel


@dataclass(frozen=True)
class ControllerSpec:
    id: str
    alpha: float = 0.0
    dirac: bool = False


@dataclass(frozen=True)
class EvaluationConfig:
    n_x0: int = 100
    n_p: int = 200
    n_sim: int = 50

    def __post_init__(self):
        if self.n_x0 < 1 or self.n_p < 1:
            raise ValueError("n_x0 and n_p must be >= 1")
        if self.n_sim < 0:
            raise ValueError("n_sim must be >= 0")


def default_controllers() -> list[ControllerSpec]:
    return [
        ControllerSpec(id="nominal", alpha=0.0, dirac=True),
        ControllerSpec(id="expectation", alpha=0.0, dirac=False),
        ControllerSpec(id="variance", alpha=0.1, dirac=False),
    ]


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams.nominal)
    cost: CostParams = field(default_factory=CostParams)
    doses: DoseSet = field(default_factory=DoseSet)
    uncertainty: UncertaintyModel = field(default_factory=UncertaintyModel)
    solver: SolverConfig = field(default_factory=SolverConfig)
    controllers: tuple[ControllerSpec, ...] = field(
        default_factory=lambda: tuple(default_controllers()))
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if not self.controllers:
            raise ValueError("controller list must be nonempty")
        if not self.controllers[0].dirac:
            raise ValueError("first controller must be the nominal (dirac) baseline")
        ids = [c.id for c in self.controllers]
        if len(set(ids)) != len(ids):
            raise ValueError("controller ids must be unique")

    # stage seeds, fixed offsets from the master seed
    @property
    def seed_sampling(self) -> int:
        return self.seed

    @property
    def seed_clustering(self) -> int:
        return self.seed + 1

    @property
    def seed_eval_x0(self) -> int:
        return self.seed + 2

    @property
    def seed_eval_p(self) -> int:
        return self.seed + 3

    def stage_seeds(self) -> dict:
        return {"sampling": self.seed_sampling, "clustering": self.seed_clustering,
                "eval_x0": self.seed_eval_x0, "eval_p": self.seed_eval_p}

    def uncertainty_model(self, dirac: bool | None = None) -> UncertaintyModel:
        """The dispersion model wired to this run's nominal params and seed."""
        model = replace(self.uncertainty, nominal=self.params, seed=self.seed_sampling)
        if dirac is not None:
            model = replace(model, dirac=dirac)
        return model

    def solver_config(self, alpha: float) -> SolverConfig:
        return replace(self.solver, alpha=alpha, seed=self.seed)

    def controller(self, cid: str) -> ControllerSpec:
        for spec in self.controllers:
            if spec.id == cid:
                return spec
        raise ConfigError(f"unknown controller id {cid!r}; "
                          f"known: {[c.id for c in self.controllers]}")


def _check_keys(section: dict, allowed: set[str], path: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _build(cls, section: dict, path: str, **extra):
    try:
        return cls(**section, **extra)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err


def from_dict(data: dict) -> RunConfig:
    """Parse and validate a config tree; raises ConfigError with field paths."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    _check_keys(data, {"params", "cost", "doses", "uncertainty", "solver",
                       "controllers", "evaluation", "seed", "out_dir"}, "config")
    params_sec = dict(data.get("params", {}))
    _check_keys(params_sec, {f for f in ModelParams.__dataclass_fields__}, "params")
    params = _build(ModelParams, params_sec, "params")

    cost_sec = dict(data.get("cost", {}))
    _check_keys(cost_sec, {"rho_c", "rho_1", "rho_2", "x2_min"}, "cost")
    cost = _build(CostParams, cost_sec, "cost")

    dose_sec = dict(data.get("doses", {}))
    _check_keys(dose_sec, {"u1_max", "u2_max"}, "doses")
    doses = _build(DoseSet, dose_sec, "doses")

    unc_sec = dict(data.get("uncertainty", {}))
    _check_keys(unc_sec, {"relative_std", "dirac", "sample_count",
                          "cluster_count", "truncation"}, "uncertainty")
    uncertainty = _build(UncertaintyModel, unc_sec, "uncertainty", nominal=params)

    solver_sec = dict(data.get("solver", {}))
    _check_keys(solver_sec, {"grid_resolution", "gamma", "tau", "tol_inf",
                             "max_iter", "bandwidth", "ridge"}, "solver")
    solver = _build(SolverConfig, solver_sec, "solver")

    ctrl_list = data.get("controllers", None)
    if ctrl_list is None:
        controllers = tuple(default_controllers())
    else:
        specs = []
        for i, item in enumerate(ctrl_list):
            path = f"controllers[{i}]"
            if not isinstance(item, dict):
                raise ConfigError(f"{path}: must be an object")
            _check_keys(item, {"id", "alpha", "dirac"}, path)
            if "id" not in item:
                raise ConfigError(f"{path}: missing 'id'")
            specs.append(_build(ControllerSpec, item, path))
        controllers = tuple(specs)

    eval_sec = dict(data.get("evaluation", {}))
    _check_keys(eval_sec, {"n_x0", "n_p", "n_sim"}, "evaluation")
    evaluation = _build(EvaluationConfig, eval_sec, "evaluation")

    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: must be an integer")
    out_dir = data.get("out_dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("out_dir: must be a string")
    return _build(RunConfig, {}, "config", params=params, cost=cost, doses=doses,
                  uncertainty=uncertainty, solver=solver, controllers=controllers,
                  evaluation=evaluation, seed=seed, out_dir=out_dir)


def to_dict(cfg: RunConfig) -> dict:
    """Full echo of the effective configuration; reparses to an equal RunConfig."""
    return {
        "params": {f: getattr(cfg.params, f) for f in ModelParams.__dataclass_fields__},
        "cost": {"rho_c": cfg.cost.rho_c, "rho_1": cfg.cost.rho_1,
                 "rho_2": cfg.cost.rho_2, "x2_min": cfg.cost.x2_min},
        "doses": {"u1_max": cfg.doses.u1_max, "u2_max": cfg.doses.u2_max},
        "uncertainty": {"relative_std": cfg.uncertainty.relative_std,
                        "dirac": cfg.uncertainty.dirac,
                        "sample_count": cfg.uncertainty.sample_count,
                        "cluster_count": cfg.uncertainty.cluster_count,
                        "truncation": cfg.uncertainty.truncation},
        "solver": {"grid_resolution": cfg.solver.grid_resolution,
                   "gamma": cfg.solver.gamma, "tau": cfg.solver.tau,
                   "tol_inf": cfg.solver.tol_inf, "max_iter": cfg.solver.max_iter,
                   "bandwidth": cfg.solver.bandwidth, "ridge": cfg.solver.ridge},
        "controllers": [{"id": c.id, "alpha": c.alpha, "dirac": c.dirac}
                        for c in cfg.controllers],
        "evaluation": {"n_x0": cfg.evaluation.n_x0, "n_p": cfg.evaluation.n_p,
                       "n_sim": cfg.evaluation.n_sim},
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
    }
