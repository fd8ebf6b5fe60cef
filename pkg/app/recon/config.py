"""Reconstruction configuration."""

from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_SIRT_ITERATIONS = 200
DEFAULT_CGLS_ITERATIONS = 30


class Algorithm(str, Enum):
    FBP = "fbp"
    SIRT = "sirt"
    CGLS = "cgls"


class RampFilter(str, Enum):
    RAM_LAK = "ram-lak"
    HANN = "hann"


_DEFAULT_ITERATIONS = {
    Algorithm.FBP: 0,
    Algorithm.SIRT: DEFAULT_SIRT_ITERATIONS,
    Algorithm.CGLS: DEFAULT_CGLS_ITERATIONS,
}


class ReconConfig(BaseModel):
    """
    Algorithm choice and its knobs.

    iterations and nonneg_clamp default per algorithm when left unset:
    200 SIRT / 30 CGLS iterations, clamp on for iterative methods and off
    for FBP.
    """
    model_config = ConfigDict(frozen=True)

    algorithm: Algorithm = Algorithm.FBP
    iterations: int = Field(default=0, ge=0)
    relaxation: float = Field(default=1.0, gt=0.0, le=2.0)
    filter: RampFilter = RampFilter.RAM_LAK
    nonneg_clamp: bool = False

    @model_validator(mode="before")
    @classmethod
    def fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        algorithm = Algorithm(data.get("algorithm") or Algorithm.FBP)
        if data.get("iterations") is None:
            data["iterations"] = _DEFAULT_ITERATIONS[algorithm]
        if data.get("nonneg_clamp") is None:
            data["nonneg_clamp"] = algorithm != Algorithm.FBP
        return data
