"""Data models for the link simulator."""

from models.params import AfterpulseProfile, DetectorSpec, EveModel, FiberSpec, SystemParams
from models.reports import RateReport, ReportRow, SecurityReport
from models.scenario import RunConfig, RunMode, ScenarioConfig, load_scenario

__all__ = [
    "AfterpulseProfile",
    "DetectorSpec",
    "EveModel",
    "FiberSpec",
    "SystemParams",
    "RateReport",
    "ReportRow",
    "SecurityReport",
    "RunConfig",
    "RunMode",
    "ScenarioConfig",
    "load_scenario",
]
