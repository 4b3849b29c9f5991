"""Batch least-squares identification of per-cell model parameters.

The terminal voltage only constrains ``OCV(z0)`` and the ratio of OCV slope
to capacity, so the OCV line is treated as known chemistry and the initial
SoC is estimated alongside ``r0, r1, c1, q``. The thermal coefficients are
then fitted against temperature with the electrical model held fixed.

Both stages minimise the sum-squared output error of the simulated signal.
Each stage starts from a linear equation-error estimate, which is already
exact on noise-free data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..data import Dataset
from ..errors import IdentifiabilityError, UsageError, ValidationError
from .cell import CellParams, CellState
from .generate import run_plant

_ELECTRICAL = ("r0", "r1", "c1", "q")
_RANK_TOL = 1e-9


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters, the matching initial state and RMS output errors."""

    params: CellParams
    initial: CellState
    rms_voltage: float
    rms_temperature: float


def _check_rank(jac: np.ndarray, names: tuple[str, ...]) -> None:
    scale = np.linalg.norm(jac, axis=0)
    if not (scale > 0).all():
        dead = [n for n, s in zip(names, scale) if not s > 0]
        raise IdentifiabilityError(f"output is insensitive to {', '.join(dead)}")
    sv = np.linalg.svd(jac / scale, compute_uv=False)
    if sv[-1] < _RANK_TOL * sv[0]:
        raise IdentifiabilityError(f"{', '.join(names)} are not separately identifiable from this window")


def _electrical_guess(v, current, dt, prior: CellParams) -> np.ndarray | None:
    """Equation-error estimate of ``(r0, r1, c1, q)`` from an ARX regression.

    With ``beta = 1 - dt/(r1 c1)``, ``gamma = dt/c1`` and
    ``kappa = slope dt/(36 q)``, differencing the output equation gives

        dV[k+1] = beta dV[k] - r0 I[k+2] + (r0 (1 + beta) - kappa - gamma) I[k+1]
                  + (gamma + beta (kappa - r0)) I[k]
    """
    dv = np.diff(v)
    x = np.column_stack([dv[:-1], current[2:], current[1:-1], current[:-2]])
    coef, *_ = np.linalg.lstsq(x, dv[1:], rcond=None)
    beta, r0 = float(coef[0]), -float(coef[1])
    if not (0.0 < beta < 1.0 and r0 > 0):
        return None
    kappa = (r0 - coef[2] - coef[3]) / (1.0 - beta)
    gamma = coef[3] + beta * (r0 - kappa)
    if not (kappa > 0 and gamma > 0):
        return None
    c1 = dt / gamma
    r1 = dt / ((1.0 - beta) * c1)
    q = prior.ocv_slope * dt / (36.0 * kappa)
    return np.array([r0, r1, c1, q])


def _simulate_voltage(theta, prior, current, ambient, fan, dt):
    r0, r1, c1, q = np.exp(theta[:4])
    p = prior.with_(r0=r0, r1=r1, c1=c1, q=q)
    z0 = float(np.clip(theta[4], 0.0, 100.0))
    v, _, _, _, _ = run_plant([p], [CellState(z0, float(theta[5]), 25.0)], current, ambient, fan, dt, check_soc=False)
    return v[:, 0]


def fit_params(
    nominal: Dataset,
    cell: int,
    *,
    prior: CellParams | None = None,
    max_nfev: int = 200,
) -> FitResult:
    """Fit one cell's electrical and thermal parameters to nominal telemetry.

    Args:
        nominal: Nominal telemetry with no shorts or balancing in the window.
        cell: Cell index.
        prior: Starting point; its OCV coefficients are held fixed.
        max_nfev: Function-evaluation budget per least-squares stage.

    Raises:
        IdentifiabilityError: The current (or the fan, for cooling) does not
            excite the dynamics enough to separate the parameters.
    """
    if not 0 <= cell < nominal.n_cells:
        raise UsageError(f"cell {cell} outside [0, {nominal.n_cells})")
    if len(nominal) < 10:
        raise ValidationError("need at least 10 samples to fit a cell")
    prior = prior or CellParams()
    dt = nominal.sample_interval
    current = np.asarray(nominal.current, dtype=float)
    ambient = np.asarray(nominal.ambient, dtype=float)
    fan = np.asarray(nominal.fan)
    v = np.asarray(nominal.voltages[:, cell], dtype=float)
    temp = np.asarray(nominal.temperatures[:, cell], dtype=float)
    if np.ptp(current) == 0.0:
        raise IdentifiabilityError("constant current cannot separate r1 from c1")

    guess = _electrical_guess(v, current, dt, prior)
    if guess is None:
        guess = np.array([getattr(prior, n) for n in _ELECTRICAL])
    z0 = (v[0] + current[0] * guess[0] - prior.ocv_intercept) / prior.ocv_slope
    theta0 = np.concatenate([np.log(guess), [z0, 0.0]])

    def v_res(theta):
        return _simulate_voltage(theta, prior, current, ambient, fan, dt) - v

    sol = least_squares(v_res, theta0, x_scale="jac", max_nfev=max_nfev, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    _check_rank(sol.jac, ("r0", "r1", "c1", "q", "z0", "v_c0"))
    r0, r1, c1, q = (float(x) for x in np.exp(sol.x[:4]))
    z0, vc0 = float(np.clip(sol.x[4], 0.0, 100.0)), float(sol.x[5])
    elec = prior.with_(r0=r0, r1=r1, c1=c1, q=q)
    rms_v = float(np.sqrt(np.mean(sol.fun ** 2)))

    a, b = _thermal_guess(elec, z0, vc0, temp, current, ambient, fan, dt, prior)

    def t_res(phi):
        p = elec.with_(a=float(phi[0]), b=-math.exp(phi[1]))
        _, t_sim, _, _, _ = run_plant([p], [CellState(z0, vc0, float(phi[2]))], current, ambient, fan, dt, check_soc=False)
        return t_sim[:, 0] - temp

    if not (fan > 0).any():
        raise IdentifiabilityError("fan never runs, so the cooling coefficient b is unobservable")
    phi0 = np.array([a, math.log(-b), temp[0]])
    tsol = least_squares(t_res, phi0, x_scale="jac", max_nfev=max_nfev, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    _check_rank(tsol.jac, ("a", "b", "T0"))
    params = elec.with_(a=float(tsol.x[0]), b=-math.exp(float(tsol.x[1])))
    rms_t = float(np.sqrt(np.mean(tsol.fun ** 2)))
    return FitResult(params, CellState(z0, vc0, float(tsol.x[2])), rms_v, rms_t)


def _thermal_guess(elec, z0, vc0, temp, current, ambient, fan, dt, prior):
    """Regress the Euler temperature increments on heat and fan-gated rise."""
    _, _, _, vc, _ = run_plant([elec], [CellState(z0, vc0, float(temp[0]))], current, ambient, fan, dt, check_soc=False)
    heat = current ** 2 * elec.r0 + vc[:, 0] ** 2 / elec.r1
    sink = (temp - ambient) * fan
    x = np.column_stack([heat[:-1], sink[:-1]]) * dt
    coef, *_ = np.linalg.lstsq(x, np.diff(temp), rcond=None)
    a, b = float(coef[0]), float(coef[1])
    if not (a > 0 and b < 0):
        return prior.a, prior.b
    return a, b
