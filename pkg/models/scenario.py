"""Run configuration and the flat key=value scenario files."""

import logging
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

import config
from errors import ConfigError
from models.params import DetectorSpec, EveModel, FiberSpec, SystemParams

logger = logging.getLogger("qkdsim.scenario")


class RunMode(str, Enum):
    SINGLE_PROCESS = "single-process"
    NETWORKED = "networked"


class RunConfig(BaseModel):
    """Everything one key exchange needs."""

    model_config = ConfigDict(frozen=True)

    params: SystemParams
    detector: DetectorSpec = Field(default_factory=DetectorSpec)
    eve: EveModel = Field(default_factory=EveModel)
    n_pulses_total: int = Field(ge=1, description="Pulses sent over the whole run")
    seed: int = Field(default=config.DEFAULT_SEED, ge=0)
    sample_fraction: float = Field(default=config.DEFAULT_SAMPLE_FRACTION, gt=0.0, le=1.0)
    mode: RunMode = RunMode.SINGLE_PROCESS
    paper_compat: bool = Field(default=False, description="Force 480-pulse trains")
    calibration_guess_km: Optional[float] = Field(
        default=None,
        ge=0.0,
        description="Operator's estimate of the link length; defaults to the configured length"
    )
    trojan_power: float = Field(default=0.0, ge=0.0, description="Extra light injected at Alice")
    qber_abort_threshold: float = Field(default=config.QBER_ABORT_THRESHOLD, gt=0.0, le=0.5)
    abort_on_inconsistency: bool = False
    unscheduled_qber_stray: float = Field(
        default=0.0,
        ge=0.0,
        le=0.5,
        description="Backscatter QBER applied if trains cross returning pulses"
    )

    @model_validator(mode="after")
    def _warn_small_runs(self):
        if self.n_pulses_total < config.MIN_STATISTICAL_PULSES:
            logger.warning(
                f"{self.n_pulses_total} pulses is below {config.MIN_STATISTICAL_PULSES}; "
                f"statistical comparisons are not meaningful"
            )
        return self

    @property
    def statistical(self) -> bool:
        return self.n_pulses_total >= config.MIN_STATISTICAL_PULSES

    def with_changes(self, **changes) -> "RunConfig":
        return RunConfig(**{**dict(self), **changes})


class PaperReference(BaseModel):
    """Published figures a scenario is compared against."""

    model_config = ConfigDict(frozen=True)

    loss_db: Optional[float] = None
    visibility_pct: Optional[float] = None
    visibility_err_pct: Optional[float] = None
    key_kbit: Optional[float] = None
    r_raw_khz: Optional[float] = None
    qber_pct: Optional[float] = None
    qber_err_pct: Optional[float] = None
    r_net_khz: Optional[float] = None


class ScenarioConfig(BaseModel):
    """A named, validated scenario."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    run: RunConfig
    paper: PaperReference = Field(default_factory=PaperReference)


def _parse_anchors(value: str) -> Tuple[Tuple[float, float], ...]:
    pairs = []
    for item in value.split(","):
        loss, sep, info = item.strip().partition(":")
        if not sep:
            raise ValueError(f"anchor '{item}' is not loss_db:info")
        pairs.append((float(loss), float(info)))
    return tuple(pairs)


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"'{value}' is not a boolean")


# key -> (section, field, parser)
KEYS: Dict[str, Tuple[str, str, Callable[[str], object]]] = {
    "name": ("scenario", "name", str),
    "link.length_km": ("fiber", "length_km", float),
    "link.loss_db_per_km": ("fiber", "loss_coeff_db_per_km", float),
    "link.extra_loss_db": ("fiber", "extra_loss_db", float),
    "link.visibility": ("params", "visibility", float),
    "link.group_velocity": ("fiber", "group_velocity_m_per_s", float),
    "source.mu": ("params", "mu", float),
    "clock.nu_hz": ("params", "nu_hz", float),
    "bob.transmission": ("params", "t_bob", float),
    "bob.efficiency": ("params", "eta_bob", float),
    "detector.p_dark": ("detector", "p_dark", float),
    "detector.dead_time_us": ("params", "dead_time_us", float),
    "storage.length_km": ("params", "storage_len_km", float),
    "eve.base_info": ("eve", "base_info", float),
    "eve.anchors": ("eve", "i2nu_anchors", _parse_anchors),
    "eve.anchor_mu": ("eve", "anchor_mu", float),
    "run.pulses": ("run", "n_pulses_total", lambda v: int(float(v))),
    "run.seed": ("run", "seed", int),
    "run.mode": ("run", "mode", RunMode),
    "run.sample_fraction": ("run", "sample_fraction", float),
    "run.paper_compat": ("run", "paper_compat", _parse_bool),
    "run.calibration_guess_km": ("run", "calibration_guess_km", float),
    "run.trojan_power": ("run", "trojan_power", float),
    "paper.loss_db": ("paper", "loss_db", float),
    "paper.visibility_pct": ("paper", "visibility_pct", float),
    "paper.visibility_err_pct": ("paper", "visibility_err_pct", float),
    "paper.key_kbit": ("paper", "key_kbit", float),
    "paper.r_raw_khz": ("paper", "r_raw_khz", float),
    "paper.qber_pct": ("paper", "qber_pct", float),
    "paper.qber_err_pct": ("paper", "qber_err_pct", float),
    "paper.r_net_khz": ("paper", "r_net_khz", float),
}


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    """
    Parse and validate a scenario document.

    One ``key = value`` per line; ``#`` starts a comment. Unknown or repeated
    keys and invalid values raise ConfigError before anything runs.
    """
    sections: Dict[str, dict] = {s: {} for s in ("scenario", "fiber", "params", "detector", "eve", "run", "paper")}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        where = f"{source}:{lineno}"
        if not sep or not key:
            raise ConfigError(f"{where}: expected key = value")
        if key not in KEYS:
            raise ConfigError(f"{where}: unknown key '{key}'")
        if key in seen:
            raise ConfigError(f"{where}: duplicate key '{key}'")
        seen.add(key)
        section, field, parser = KEYS[key]
        try:
            sections[section][field] = parser(value)
        except ValueError as e:
            raise ConfigError(f"{where}: invalid value for {key}: {e}") from e

    if "name" not in sections["scenario"]:
        raise ConfigError(f"{source}: missing 'name'")
    if "length_km" not in sections["fiber"]:
        raise ConfigError(f"{source}: missing 'link.length_km'")

    params = dict(sections["params"])
    if "visibility" in params:
        params["qber_opt"] = (1.0 - params.pop("visibility")) / 2.0
    if "dead_time_us" in params:
        params["dead_time_s"] = params.pop("dead_time_us") * 1e-6
    run = dict(sections["run"])
    run.setdefault("n_pulses_total", 10_000_000)

    try:
        return ScenarioConfig(
            name=sections["scenario"]["name"],
            run=RunConfig(
                params=SystemParams(fiber=FiberSpec(**sections["fiber"]), **params),
                detector=DetectorSpec(**sections["detector"]),
                eve=EveModel(**sections["eve"]),
                **run,
            ),
            paper=PaperReference(**sections["paper"]),
        )
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e


def bundled_scenarios() -> Dict[str, Path]:
    """Bundled scenario files by stem, in file-name order."""
    return {path.stem: path for path in sorted(config.SCENARIO_DIR.glob("*.conf"))}


def load_scenario(name_or_path: Union[str, Path]) -> ScenarioConfig:
    """Load a bundled scenario by name or any scenario file by path."""
    path = Path(name_or_path)
    if not path.exists():
        bundled = bundled_scenarios()
        if str(name_or_path) not in bundled:
            raise ConfigError(
                f"No scenario '{name_or_path}'; bundled: {', '.join(bundled) or 'none'}"
            )
        path = bundled[str(name_or_path)]
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}") from e
    return parse_scenario(text, source=str(path))
