"""Run configuration shared by the command-line pipelines."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import cusum
from .detector import config_hash
from .errors import ValidationError
from .pca import DEFAULT_VARIANCE_THRESHOLD
from .simulator.anomalies import DEFAULT_LEAD_DURATION_S, LEAD_NOISE_FRACTION
from .simulator.generate import NoiseConfig


@dataclass(frozen=True)
class RunConfig:
    """Tunable constants; every artifact records the effective values and their hash.

    Attributes:
        sample_interval: Seconds between samples.
        cutoff_pca_hz: Low-pass cutoff applied to the PCA-method RMSE.
        cutoff_direct_hz: Low-pass cutoff applied to direct-method residuals.
        variance_threshold: Cumulative variance the principal subspace must reach.
        k_multiplier: CUSUM slack in units of sigma_c.
        h_multiplier: CUSUM control limit in units of sigma_c.
        voltage_noise_std: Simulated voltage sensor noise [V].
        temperature_noise_std: Simulated temperature sensor noise [degC].
        lead_duration_s: Default loose-lead fault duration.
        lead_noise_fraction: Loose-lead noise std as a fraction of the bias.
        seed: Master seed for simulation and sweeps.
    """

    sample_interval: float = 1.0
    cutoff_pca_hz: float = cusum.CUTOFF_PCA_HZ
    cutoff_direct_hz: float = cusum.CUTOFF_DIRECT_HZ
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD
    k_multiplier: float = cusum.K_MULTIPLIER
    h_multiplier: float = cusum.H_MULTIPLIER
    voltage_noise_std: float = NoiseConfig.voltage_std
    temperature_noise_std: float = NoiseConfig.temperature_std
    lead_duration_s: float = DEFAULT_LEAD_DURATION_S
    lead_noise_fraction: float = LEAD_NOISE_FRACTION
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.variance_threshold <= 1.0:
            raise ValidationError(f"variance_threshold must be in (0, 1], got {self.variance_threshold}")
        if not self.h_multiplier > self.k_multiplier > 0:
            raise ValidationError("need h_multiplier > k_multiplier > 0")
        for name in ("sample_interval", "cutoff_pca_hz", "cutoff_direct_hz"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.voltage_noise_std < 0 or self.temperature_noise_std < 0 or self.lead_noise_fraction < 0:
            raise ValidationError("noise levels must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> RunConfig:
        """Read a JSON config (optional) and apply non-``None`` overrides."""
        d: dict = {}
        if path is not None:
            try:
                d = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
            if not isinstance(d, dict):
                raise ValidationError(f"config {path} must hold a JSON object")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def provenance(self, **extra) -> dict:
        return {"config": self.to_dict(), "config_hash": self.hash, "seed": self.seed, **extra}
