# src/utils/config.py

import logging
from collections.abc import MutableMapping
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Literal, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .state_space import ModelParams

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "config" / "config.yaml"

Pipeline = Literal["solve", "verify", "simulate", "sweep"]

# Private, module-level variable to cache the default configuration in memory.
_config: Dict[str, Any] | None = None


def load_config(path: Path | str | None = None) -> Dict[str, Any]:
    """
    Loads an experiment configuration from a YAML file.

    The default file ('config/config.yaml') is read only on the first call and
    cached in memory; an explicit path is always read from disk.

    Raises:
        FileNotFoundError: If the file cannot be found.
        TypeError: If the loaded YAML content is not a dictionary.
        YAMLError: If the file is not valid YAML.

    Returns:
        A dictionary containing the raw configuration.
    """
    global _config

    use_default = path is None
    if use_default and _config is not None:
        return _config

    config_path = DEFAULT_CONFIG_PATH if use_default else Path(path)
    logger.info(f"Loading configuration from: {config_path}")

    try:
        with open(config_path, 'r') as f:
            loaded_config = yaml.safe_load(f)
            if not isinstance(loaded_config, dict):
                raise TypeError(f"{config_path} did not load as a valid dictionary.")
    except FileNotFoundError:
        logger.error(f"Configuration file not found at '{config_path}'.")
        raise
    except (yaml.YAMLError, TypeError) as e:
        logger.error(f"Error parsing configuration file: {e}")
        raise

    if use_default:
        _config = loaded_config
    return loaded_config


def deep_merge(d: dict, u: dict) -> dict:
    """
    Performs a deep merge of dictionary 'u' into dictionary 'd'.
    Modifies 'd' in place.
    """
    for k, v in u.items():
        if isinstance(v, MutableMapping):
            d[k] = deep_merge(d.get(k, {}), v)
        else:
            d[k] = v
    return d


class ExperimentSettings(BaseModel):
    pipelines: List[Pipeline] = ["solve"]
    output_dir: str = "results"
    workers: int = Field(default=1, ge=1)


class GridSettings(BaseModel):
    p: List[float] = [0.3]
    gamma: List[float] = [0.3]
    gamma_max: List[float] = [0.3]


class ModelSettings(BaseModel):
    delta_max: int = Field(default=1000, ge=1)
    l_max: int = Field(default=10, ge=1)


class SolverSettings(BaseModel):
    span_tol: float = Field(default=1e-6, gt=0.0)
    max_iters: int = Field(default=100_000, ge=1)
    ref_state: Tuple[int, int, int] = (1, 1, 0)
    aperiodicity: float = Field(default=0.9, gt=0.0, le=1.0)
    tie_tol: float = Field(default=1e-9, ge=0.0)
    epsilon_lambda: float = Field(default=0.01, gt=0.0)
    max_doublings: int = Field(default=60, ge=1)

    def rvi_kwargs(self) -> Dict[str, Any]:
        return self.model_dump(exclude={"epsilon_lambda", "max_doublings"})


class EvaluationSettings(BaseModel):
    tol: float = Field(default=1e-9, gt=0.0)
    max_iters: int = Field(default=1_000_000, ge=1)


class SimulationSettings(BaseModel):
    horizon: int = Field(default=10_000, ge=1)
    trials: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    trace: bool = False
    chunk_size: int = Field(default=250, ge=1)


class CacheSettings(BaseModel):
    enabled: bool = True
    directory: str = "data/cache"


class ExperimentSpec(BaseModel):
    """Validated experiment specification; every grid point must form valid ModelParams."""

    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentSettings = ExperimentSettings()
    grid: GridSettings = GridSettings()
    model: ModelSettings = ModelSettings()
    solver: SolverSettings = SolverSettings()
    evaluation: EvaluationSettings = EvaluationSettings()
    simulation: SimulationSettings = SimulationSettings()
    cache: CacheSettings = CacheSettings()

    @model_validator(mode="after")
    def _check_grid(self) -> "ExperimentSpec":
        self.grid_points()
        return self

    def grid_points(self) -> List[ModelParams]:
        """Cartesian product of the grid in (p, gamma, gamma_max) order."""
        return [
            ModelParams(p=p, gamma=gamma, gamma_max=gamma_max,
                        delta_max=self.model.delta_max, l_max=self.model.l_max)
            for p, gamma, gamma_max in product(self.grid.p, self.grid.gamma, self.grid.gamma_max)
        ]
