"""Synthetic cell-group plant, anomaly injection and parameter identification."""

from .anomalies import AnomalySpec, AnomalyType, GroundTruth, inject, short_resistance
from .cell import CellParams, CellState
from .fit import FitResult, fit_params
from .generate import CellSpread, DriveCycle, NoiseConfig, SimulatedGroup, generate_group, generate_nominal

__all__ = [
    "AnomalySpec",
    "AnomalyType",
    "CellParams",
    "CellSpread",
    "CellState",
    "DriveCycle",
    "FitResult",
    "GroundTruth",
    "NoiseConfig",
    "SimulatedGroup",
    "fit_params",
    "generate_group",
    "generate_nominal",
    "inject",
    "short_resistance",
]
