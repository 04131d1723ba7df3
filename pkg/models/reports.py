"""Rate, security and table reports."""

import math
from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

FRACTION = dict(ge=0.0, le=1.0)


class RateReport(BaseModel):
    """Raw rate, QBER budget, efficiency factors and net rate of one run or prediction."""

    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={
            "example": {
                "p_det": 0.0039736,
                "r_raw_hz": 2876.0,
                "qber_opt": 0.0015,
                "qber_dark": 0.0025,
                "qber_after": 0.015,
                "qber_stray": 0.0,
                "qber_total": 0.019,
                "eta_tau": 0.926,
                "eta_duty": 0.3125,
                "eta_dist": 0.73,
                "visibility": 0.997,
                "r_net_hz": 2100.0,
            }
        }
    )

    p_det: float = Field(ge=0.0, le=1.0, description="Per-gate detection probability")
    r_raw_hz: float = Field(ge=0.0, description="Raw (sifted) key rate")
    prefactor_hz: Optional[float] = Field(default=None, ge=0.0, description="q * nu * t_B * eta_B")
    qber_opt: Optional[float] = Field(default=None, **FRACTION)
    qber_dark: Optional[float] = Field(default=None, **FRACTION)
    qber_after: Optional[float] = Field(default=None, **FRACTION)
    qber_stray: Optional[float] = Field(default=None, **FRACTION)
    qber_total: Optional[float] = Field(default=None, **FRACTION)
    qber_clamped: bool = Field(default=False, description="qber_total hit the 0.5 ceiling")
    eta_tau: Optional[float] = Field(default=None, **FRACTION)
    eta_duty: Optional[float] = Field(default=None, **FRACTION)
    eta_dist: Optional[float] = Field(default=None, **FRACTION)
    i_ab: Optional[float] = Field(default=None, **FRACTION)
    i_ab_corrected: Optional[float] = Field(default=None, le=1.0)
    i_ae: Optional[float] = Field(default=None, **FRACTION)
    visibility: Optional[float] = Field(default=None, **FRACTION)
    r_net_hz: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _check_budget(self):
        parts = (self.qber_opt, self.qber_dark, self.qber_after, self.qber_stray)
        if self.qber_total is not None and None not in parts:
            expected = min(sum(parts), 0.5)
            if not math.isclose(self.qber_total, expected, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError(
                    f"qber_total {self.qber_total} does not match its components ({expected})"
                )
        if self.r_net_hz is not None and self.r_net_hz > self.r_raw_hz * (1 + 1e-12):
            raise ValueError("r_net_hz cannot exceed r_raw_hz")
        return self

    @property
    def complete(self) -> bool:
        """Every field populated."""
        return all(value is not None for value in self.model_dump().values())


class Verdict(str, Enum):
    OK = "OK"
    ALERT = "ALERT"


class SecurityReport(BaseModel):
    """Coincidence and incoming-power monitors of one run."""

    model_config = ConfigDict(frozen=True)

    coincidence_count: int = Field(ge=0)
    coincidence_expected: float = Field(ge=0.0)
    coincidence_sigma: float = Field(ge=0.0)
    mean_incoming_power: Optional[float] = Field(default=None)
    power_bounds: Tuple[float, float]
    power_violations: int = Field(default=0, ge=0)
    verdict: Verdict
    reasons: Tuple[str, ...] = Field(default=())

    @property
    def alert(self) -> bool:
        return self.verdict is Verdict.ALERT


class RowSource(str, Enum):
    MEASURED = "measured"
    PREDICTED = "predicted"
    PAPER = "paper"


class ReportRow(BaseModel):
    """One line of the key-rate comparison."""

    model_config = ConfigDict(frozen=True)

    scenario: str = Field(min_length=1)
    length_km: float = Field(ge=0.0)
    loss_db: float = Field(ge=0.0)
    r_raw_khz: float = Field(ge=0.0)
    qber_pct: float = Field(ge=0.0, le=100.0)
    qber_2sigma: float = Field(ge=0.0)
    r_net_khz: float = Field(ge=0.0)
    source: RowSource
