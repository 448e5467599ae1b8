"""
Run configuration for the command-line pipeline.
Merged from an optional key = value file and command-line flags (flags win).
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.constants import DEFAULT_ALPHA, DEFAULT_ETA_FLOOR, DEFAULT_N_BOOT, DEFAULT_N_MC, MIN_N_MC
from core.exceptions import ConfigError
from utils.rng import new_seed
from .base import CccMethod, CccNormalization, DrawMode, Family, ModelSpec, RatingDataset
from .results import IntervalMethod

METHOD_ALIASES = {
    "fiducial": IntervalMethod.FIDUCIAL_HDR,
    "fiducial_hdr": IntervalMethod.FIDUCIAL_HDR,
    "fisher_z": IntervalMethod.FISHER_Z,
    "fisherz": IntervalMethod.FISHER_Z,
    "bootstrap": IntervalMethod.BOOTSTRAP_BC,
    "bootstrap_bc": IntervalMethod.BOOTSTRAP_BC,
}


class Command(str, Enum):
    FIT = "fit"
    INTERVAL = "interval"
    BOUNDS = "bounds"
    SIMULATE = "simulate"


def parse_methods(value: Any) -> List[IntervalMethod]:
    """Accept a comma-separated string or a list of method names and aliases."""
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    methods = []
    for item in value:
        if isinstance(item, IntervalMethod):
            methods.append(item)
            continue
        key = str(item).strip().lower()
        if key not in METHOD_ALIASES:
            raise ValueError(f"unknown interval method '{item}'; choose from {sorted(METHOD_ALIASES)}")
        methods.append(METHOD_ALIASES[key])
    return list(dict.fromkeys(methods))


class RunConfig(BaseModel):
    """Everything one CLI command needs."""
    model_config = ConfigDict(extra="forbid")

    command: Command
    dataset: Optional[Path] = None
    scenario: Optional[str] = None
    family: Family = Family.GAUSSIAN
    spline_order: int = Field(default=1, ge=0)
    fixed_order: int = Field(default=1, ge=0)
    time_origin: int = Field(default=1, ge=0, le=1)
    time_scale: float = Field(default=1.0, gt=0)
    interaction: Optional[bool] = None
    eta_floor: float = Field(default=DEFAULT_ETA_FLOOR, ge=0)
    alpha: float = Field(default=DEFAULT_ALPHA, gt=0, lt=1)
    n_draws: Optional[int] = Field(default=None, ge=1, description="Fiducial draws; defaults per command")
    n_boot: int = Field(default=DEFAULT_N_BOOT, ge=1)
    n_mc: int = Field(default=DEFAULT_N_MC, ge=MIN_N_MC)
    seed: Optional[int] = Field(default=None, ge=0)
    mode: DrawMode = DrawMode.JOINT
    normalization: CccNormalization = CccNormalization.TIME_SUM
    ccc_method: CccMethod = CccMethod.AUTO
    methods: List[IntervalMethod] = Field(default_factory=lambda: [IntervalMethod.FIDUCIAL_HDR])
    n_subjects: List[int] = Field(default_factory=list)
    n_replications: Optional[int] = Field(default=None, ge=1)
    allow_few_replications: Optional[bool] = None
    n_workers: int = Field(default=1, ge=1)
    output: Optional[Path] = None
    table: Optional[Path] = None

    @field_validator("methods", mode="before")
    @classmethod
    def _methods(cls, v: Any) -> List[IntervalMethod]:
        return parse_methods(v)

    @field_validator("n_subjects", mode="before")
    @classmethod
    def _sizes(cls, v: Any) -> List[int]:
        if isinstance(v, str):
            v = [int(x) for x in v.split(",") if x.strip()]
        elif isinstance(v, int):
            v = [v]
        if any(int(n) < 2 for n in v):
            raise ValueError(f"every study size needs at least 2 subjects, got {v}")
        return v

    @model_validator(mode="after")
    def _inputs(self) -> "RunConfig":
        if self.command == Command.SIMULATE:
            if not self.scenario:
                raise ValueError("simulate needs a scenario name or file")
        elif self.dataset is None:
            raise ValueError(f"{self.command.value} needs a dataset")
        if not self.methods:
            raise ValueError("at least one interval method is required")
        return self

    def with_seed(self) -> "RunConfig":
        """Copy with a concrete seed; a generated seed is echoed in every output."""
        if self.seed is not None:
            return self
        return self.model_copy(update={"seed": new_seed()})

    def model_spec(self, data: RatingDataset) -> ModelSpec:
        try:
            return ModelSpec.for_dataset(
                data,
                family=self.family,
                spline_order=self.spline_order,
                fixed_order=self.fixed_order,
                time_origin=self.time_origin,
                time_scale=self.time_scale,
                interaction=self.interaction,
                alpha_level=self.alpha,
                normalization=self.normalization,
                eta_floor=self.eta_floor,
            )
        except ValidationError as e:
            raise ConfigError(f"model does not fit the dataset: {e.errors()[0]['msg']}") from e

    def echo(self) -> Dict[str, Any]:
        """Settings written next to results."""
        return self.model_dump(mode="json", exclude={"output", "table"})
