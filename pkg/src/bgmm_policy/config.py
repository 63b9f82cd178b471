"""Run configuration: a YAML (or JSON) document validated before any computation."""

from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .bgmm import DIRICHLET_DISTRIBUTION, DIRICHLET_PROCESS, FitConfig, WeightPrior, default_prior
from .simlab.experiments import RecipeParams, ShiftSettings, parse_recipe
from .simlab.scenarios import SCENARIOS


class ConfigError(ValueError):
    """Schema violation; ``str()`` lists every problem with its line number."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PriorConfig(_Strict):
    kappa: float = Field(1.0, gt=0)
    nu: Optional[float] = None
    T_scale: float = Field(1.0, gt=0)
    mu0_mode: Literal["data_mean", "zero"] = "data_mean"

    def build(self, Z):
        Z = np.asarray(Z, dtype=float)
        mu0 = None if self.mu0_mode == "data_mean" else np.zeros(Z.shape[1])
        return default_prior(Z, T_scale=self.T_scale, kappa=self.kappa, nu=self.nu, mu0=mu0)


class WeightPriorConfig(_Strict):
    kind: Literal["dirichlet_distribution", "dirichlet_process"] = DIRICHLET_PROCESS
    alpha: float = Field(1.0, gt=0)
    n_components: int = Field(20, ge=1)

    def build(self):
        if self.kind == DIRICHLET_DISTRIBUTION:
            return WeightPrior.dirichlet(self.alpha, self.n_components)
        return WeightPrior.dirichlet_process(self.alpha, self.n_components)


class FitSettings(_Strict):
    max_iter: int = Field(300, ge=1)
    elbo_tol: float = Field(1e-6, gt=0)
    n_init: int = Field(2, ge=1)
    weight_floor: float = Field(1e-3, ge=0, lt=1)

    def build(self, seed):
        return FitConfig(self.max_iter, self.elbo_tol, self.n_init, seed, self.weight_floor)


class SystemConfig(_Strict):
    dt: float = Field(0.05, gt=0)
    state_dim: int = Field(2, ge=1)
    control_dim: int = Field(2, ge=1)


class PolicyConfig(_Strict):
    recipe: str = "imitation"
    imitation_form: Literal["global", "per_component"] = "per_component"
    control_weight: float = Field(0.1, gt=0)
    conservative_horizon: int = Field(50, ge=1)
    endpoint_std: float = Field(0.03, gt=0)
    heuristic_c: float = Field(10.0, gt=0)

    @field_validator("recipe")
    @classmethod
    def _recipe_known(cls, v):
        parse_recipe(v)
        return v

    def params(self, steps):
        return RecipeParams(self.imitation_form, self.control_weight, self.conservative_horizon,
                            self.endpoint_std, steps, self.heuristic_c)


class ExperimentConfig(_Strict):
    scenario: Literal[SCENARIOS] = "obstacle_bimodal"
    n_demos: int = Field(16, ge=1)
    noise_std: float = Field(0.05, ge=0)
    n_trials: int = Field(100, ge=1)
    perturbation_scale: float = Field(0.1, ge=0)
    steps: int = Field(100, ge=1)
    action_mode: Literal["mean", "sample"] = "sample"
    r_goal: float = Field(0.1, gt=0)
    touch_margin: float = Field(0.05, ge=0)

    def shift_settings(self):
        return ShiftSettings(self.n_trials, self.perturbation_scale, self.steps, self.action_mode,
                             self.r_goal, self.touch_margin)


class RunConfig(_Strict):
    seed: int = 0
    prior: PriorConfig = PriorConfig()
    weight_prior: WeightPriorConfig = WeightPriorConfig()
    fit: FitSettings = FitSettings()
    system: SystemConfig = SystemConfig()
    policy: PolicyConfig = PolicyConfig()
    experiment: ExperimentConfig = ExperimentConfig()


def _node_line(root, loc):
    """1-based line of the YAML node at ``loc``, or of its deepest existing parent."""
    node = root
    line = node.start_mark.line + 1 if node is not None else 1
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = [(k, v) for k, v in node.value if isinstance(k, yaml.ScalarNode) and k.value == key]
            if not match:
                break
            k, node = match[0]
            line = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def loads_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ConfigError(f"{source}: {where}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: line 1: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = err["loc"]
            path = ".".join(str(p) for p in loc) or "<root>"
            lines.append(f"{source}: line {_node_line(root, loc)}: {path}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read(), str(path))


def check_scenario(name: str) -> str:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; expected one of {list(SCENARIOS)}")
    return name
