"""
Run Configuration
Validated sections of a run configuration file.
"""

from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from fmselect.ecm import EcmConfig
from fmselect.simulation import ScenarioSpec
from fmselect.ssgl_prior import SsglConfig
from fmselect.tuning import TuningGrid

BasisDims = Union[int, List[int]]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSection(_Section):
    path: Optional[str] = None
    standardize: List[str] = Field(default_factory=list)


class BasisSection(_Section):
    """Basis dimensions: one value for every covariate or one per covariate."""
    fixed_dims: BasisDims = 5
    random_dims: BasisDims = 5

    @field_validator("fixed_dims", "random_dims")
    @classmethod
    def _cubic(cls, value):
        dims = [value] if isinstance(value, int) else value
        if not dims or any(d < 4 for d in dims):
            raise ValueError("cubic bases need at least 4 functions")
        return value


class BenchmarkSection(_Section):
    replications: int = Field(20, ge=1)
    sample_sizes: List[int] = Field(default_factory=list)
    quadrature_points: int = Field(201, ge=2)

    @field_validator("sample_sizes")
    @classmethod
    def _at_least_two(cls, values):
        if any(n < 2 for n in values):
            raise ValueError("sample sizes must be at least 2")
        return values


class OutputSection(_Section):
    directory: str = "results"
    curve_points: int = Field(101, ge=2)


class RuntimeSection(_Section):
    workers: Optional[int] = Field(None, ge=0)
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_to_file: bool = True


class RunConfig(_Section):
    """Complete configuration of a command."""
    data: DataSection = Field(default_factory=DataSection)
    basis: BasisSection = Field(default_factory=BasisSection)
    prior: SsglConfig = Field(default_factory=SsglConfig)
    ecm: EcmConfig = Field(default_factory=EcmConfig)
    tuning: TuningGrid = Field(default_factory=TuningGrid)
    scenario: ScenarioSpec = Field(default_factory=ScenarioSpec)
    benchmark: BenchmarkSection = Field(default_factory=BenchmarkSection)
    output: OutputSection = Field(default_factory=OutputSection)
    runtime: RuntimeSection = Field(default_factory=RuntimeSection)

    @model_validator(mode="before")
    @classmethod
    def _prior_lives_in_its_own_section(cls, values):
        if isinstance(values, dict) and isinstance(values.get("ecm"), dict) and "prior" in values["ecm"]:
            raise ValueError("prior settings belong in the 'prior' section, not under 'ecm'")
        return values

    def ecm_config(self) -> EcmConfig:
        """ECM settings carrying the configured prior."""
        return self.ecm.model_copy(update={"prior": self.prior})
