"""Physical and protocol parameters of the plug&play link."""

from typing import Optional, Tuple

import numpy as np

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import config


class FiberSpec(BaseModel):
    """Installed fibre between Bob and Alice."""

    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={
            "example": {
                "length_km": 22.0,
                "loss_coeff_db_per_km": 0.0,
                "extra_loss_db": 4.8,
                "thermal_expansion_alpha": 1e-5,
                "group_velocity_m_per_s": 2.0e8,
            }
        }
    )

    length_km: float = Field(
        ge=0.0,
        description="One-way link length l_AB in km"
    )
    loss_coeff_db_per_km: float = Field(
        default=config.DEFAULT_LOSS_DB_PER_KM,
        ge=0.0,
        description="Attenuation coefficient in dB/km"
    )
    extra_loss_db: float = Field(
        default=0.0,
        ge=0.0,
        description="Connectors, splices and other lumped losses in dB"
    )
    thermal_expansion_alpha: float = Field(
        default=config.DEFAULT_ALPHA_PER_K,
        ge=0.0,
        description="Relative length change per kelvin"
    )
    group_velocity_m_per_s: float = Field(
        default=config.DEFAULT_GROUP_VELOCITY,
        gt=1e8,
        lt=3e8,
        description="Group velocity of light in the fibre"
    )

    @property
    def loss_db(self) -> float:
        """Total one-way loss of the link."""
        return self.length_km * self.loss_coeff_db_per_km + self.extra_loss_db


class AfterpulseProfile(BaseModel):
    """p_after(t) = amplitude * exp(-t / time_const_s)."""

    model_config = ConfigDict(frozen=True)

    amplitude: float = Field(
        default=config.DEFAULT_AFTERPULSE_AMPLITUDE,
        ge=0.0,
        lt=1.0,
        description="Afterpulse probability at zero delay"
    )
    time_const_s: float = Field(
        default=config.DEFAULT_AFTERPULSE_TIME_CONST_S,
        gt=0.0,
        description="Decay constant of the trapped-charge release"
    )

    def probability(self, delay_s):
        """Afterpulse probability per gate at the given delay(s) after an avalanche."""
        return self.amplitude * np.exp(-np.asarray(delay_s) / self.time_const_s)


class DetectorSpec(BaseModel):
    """Configuration shared by Bob's two gated InGaAs/InP detectors."""

    model_config = ConfigDict(frozen=True)

    p_dark: float = Field(
        default=config.DEFAULT_P_DARK,
        ge=0.0,
        lt=1.0,
        description="Dark count probability per gate, per detector"
    )
    gate_width_s: float = Field(
        default=config.DEFAULT_GATE_WIDTH_S,
        gt=0.0,
        description="Detection gate width"
    )
    afterpulse: AfterpulseProfile = Field(
        default_factory=AfterpulseProfile,
        description="Afterpulse decay profile"
    )


class SystemParams(BaseModel):
    """All constants entering the raw-rate and QBER budget."""

    model_config = ConfigDict(frozen=True)

    q: float = Field(default=config.DEFAULT_Q, gt=0.0, le=1.0, description="Sifting factor")
    nu_hz: float = Field(default=config.DEFAULT_NU_HZ, gt=0.0, description="Pulse repetition frequency")
    mu: float = Field(default=config.DEFAULT_MU, gt=0.0, description="Mean photons per pulse leaving Alice")
    t_bob: float = Field(default=config.DEFAULT_T_BOB, gt=0.0, le=1.0, description="Bob's internal transmission")
    eta_bob: float = Field(default=config.DEFAULT_ETA_BOB, gt=0.0, le=1.0, description="Detector quantum efficiency")
    storage_len_km: float = Field(default=config.DEFAULT_STORAGE_KM, gt=0.0, description="Alice's storage line l_D")
    dead_time_s: float = Field(
        default=config.DEFAULT_DEAD_TIME_S,
        ge=0.0,
        le=config.MAX_DEAD_TIME_S,
        description="Dead time tau applied after each click"
    )
    qber_opt: float = Field(default=0.0, ge=0.0, lt=0.5, description="Optical error probability")
    qber_stray: float = Field(
        default=0.0,
        ge=0.0,
        le=0.5,
        description="Stray-light contribution when pulses are not sent in trains"
    )
    fiber: FiberSpec = Field(description="The link")

    @property
    def visibility(self) -> float:
        """Fringe visibility implied by qber_opt."""
        return 1.0 - 2.0 * self.qber_opt

    def with_changes(self, **changes) -> "SystemParams":
        """Validated copy with some fields replaced."""
        data = self.model_dump()
        fiber_changes = changes.pop("fiber", None)
        if fiber_changes is not None:
            data["fiber"] = (
                fiber_changes.model_dump() if isinstance(fiber_changes, FiberSpec)
                else {**data["fiber"], **fiber_changes}
            )
        data.update(changes)
        return SystemParams(**data)


class EveModel(BaseModel):
    """Eavesdropper information: a fixed floor plus the multi-photon term."""

    model_config = ConfigDict(frozen=True)

    base_info: float = Field(
        default=config.DEFAULT_EVE_BASE_INFO,
        ge=0.0,
        le=1.0,
        description="Information attributed to the tolerated QBER (bits)"
    )
    i2nu_anchors: Tuple[Tuple[float, float], ...] = Field(
        default=config.DEFAULT_EVE_ANCHORS,
        description="(loss_dB, info_bits) anchor points of I_2nu"
    )
    anchor_mu: Optional[float] = Field(
        default=config.DEFAULT_EVE_ANCHOR_MU,
        description="Mean photon number the anchors were computed for; None accepts any mu"
    )

    @field_validator("i2nu_anchors")
    @classmethod
    def _check_anchors(cls, anchors):
        if len(anchors) < 2:
            raise ValueError("At least two I_2nu anchors are required")
        losses = [loss for loss, _ in anchors]
        if any(b <= a for a, b in zip(losses, losses[1:])):
            raise ValueError("Anchors must be strictly increasing in loss")
        if any(not 0.0 <= info <= 1.0 for _, info in anchors):
            raise ValueError("Anchor information values must lie in [0, 1]")
        return tuple((float(loss), float(info)) for loss, info in anchors)

    @model_validator(mode="after")
    def _check_mu(self):
        if self.anchor_mu is not None and self.anchor_mu <= 0:
            raise ValueError("anchor_mu must be positive")
        return self
