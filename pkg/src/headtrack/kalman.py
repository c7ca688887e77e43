"""Constant-velocity Kalman filtering with standard and iterated updates.

The state is the 8-vector [u, v, a, h, du, dv, da, dh]: box center, aspect
ratio (w/h), height, and their per-frame velocities. dt is fixed at one
frame. Noise magnitudes scale with target height, the SORT-family
convention, so small and large targets get comparable relative uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

STATE_DIM = 8
MEAS_DIM = 4


class FilterDivergence(RuntimeError):
    """State or covariance went non-finite; the track is beyond recovery."""


class IllConditionedUpdate(RuntimeError):
    """Innovation covariance is singular; retry with jittered R."""


@dataclass(frozen=True)
class KalmanConfig:
    """Noise scaling and clamping knobs.

    Standard deviations are fractions of the current target height:
    position-like terms use ``pos_std_weight * h``, velocity terms
    ``vel_std_weight * h``, measurements ``meas_std_weight * h``.
    """

    pos_std_weight: float = 1.0 / 20
    vel_std_weight: float = 1.0 / 160
    meas_std_weight: float = 1.0 / 20
    h_min: float = 1.0


@dataclass(frozen=True)
class IteratedUpdateConfig:
    epsilon_conv: float = 0.01
    max_iters: int = 10

    def __post_init__(self):
        if not 0.0 < self.epsilon_conv < 1.0:
            raise ValueError(f"epsilon_conv must lie in (0, 1), got {self.epsilon_conv}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class KalmanModel:
    """System matrices: transition F, measurement H, noises Q and R."""

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray  # (8,)
    P: np.ndarray  # (8, 8)


class IteratedResult(NamedTuple):
    state: KalmanState
    iterations: int
    converged: bool


def _transition_matrix() -> np.ndarray:
    F = np.eye(STATE_DIM)
    for i in range(MEAS_DIM):
        F[i, i + MEAS_DIM] = 1.0
    return F


def _measurement_matrix() -> np.ndarray:
    H = np.zeros((MEAS_DIM, STATE_DIM))
    H[:, :MEAS_DIM] = np.eye(MEAS_DIM)
    return H


def constant_velocity_model(h: float, cfg: KalmanConfig = KalmanConfig()) -> KalmanModel:
    """Build F, H, Q, R for a target of height ``h``."""
    h = max(float(h), cfg.h_min)
    pos = cfg.pos_std_weight * h
    vel = cfg.vel_std_weight * h
    meas = cfg.meas_std_weight * h
    Q = np.diag([pos**2] * MEAS_DIM + [vel**2] * MEAS_DIM)
    R = np.diag([meas**2] * MEAS_DIM)
    return KalmanModel(F=_transition_matrix(), H=_measurement_matrix(), Q=Q, R=R)


def initiate(z: np.ndarray, cfg: KalmanConfig = KalmanConfig()) -> KalmanState:
    """Start a filter from a first measurement (u, v, a, h).

    Velocities are unobserved at birth, so their variance is inflated:
    2x the measurement std on position terms, 10x on velocity terms.
    """
    z = np.asarray(z, dtype=float)
    h = max(float(z[3]), cfg.h_min)
    x = np.zeros(STATE_DIM)
    x[:MEAS_DIM] = z
    x[3] = h
    pos = 2.0 * cfg.meas_std_weight * h
    vel = 10.0 * cfg.vel_std_weight * h
    P = np.diag([pos**2] * MEAS_DIM + [vel**2] * MEAS_DIM)
    return KalmanState(x=x, P=P)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _clamp_height(x: np.ndarray, h_min: float) -> np.ndarray:
    if x[3] < h_min:
        x = x.copy()
        x[3] = h_min
    return x


def _check_finite(x: np.ndarray, P: np.ndarray) -> None:
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
        raise FilterDivergence("non-finite state or covariance")


def predict(state: KalmanState, model: KalmanModel, h_min: float = 1.0) -> KalmanState:
    """Propagate one frame: x' = F x, P' = F P F^T + Q."""
    with np.errstate(invalid="ignore", over="ignore"):
        x = model.F @ state.x
        P = _symmetrize(model.F @ state.P @ model.F.T + model.Q)
    _check_finite(x, P)
    return KalmanState(x=_clamp_height(x, h_min), P=P)


def _gain(P: np.ndarray, model: KalmanModel) -> np.ndarray:
    """K = P H^T (H P H^T + R)^-1 via a Cholesky solve on the innovation covariance."""
    S = model.H @ P @ model.H.T + model.R
    try:
        chol = scipy.linalg.cho_factor(_symmetrize(S), lower=True)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        raise IllConditionedUpdate(f"singular innovation covariance: {exc}") from exc
    return scipy.linalg.cho_solve(chol, model.H @ P.T).T


def update(state: KalmanState, z: np.ndarray, model: KalmanModel, h_min: float = 1.0) -> KalmanState:
    """Standard measurement update with (u, v, a, h) observation ``z``."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"measurement must be finite, got {z}")
    K = _gain(state.P, model)
    x = state.x + K @ (z - model.H @ state.x)
    P = _symmetrize((np.eye(STATE_DIM) - K @ model.H) @ state.P)
    _check_finite(x, P)
    return KalmanState(x=_clamp_height(x, h_min), P=P)


def iterated_update(
    state: KalmanState,
    z: np.ndarray,
    model: KalmanModel,
    h_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    cfg: IteratedUpdateConfig = IteratedUpdateConfig(),
    h_min: float = 1.0,
) -> IteratedResult:
    """Measurement update that re-evaluates the residual around the corrected state.

    Each pass recomputes the correction

        delta <- K (z - h(x + delta) + H delta)

    and stops once a further refinement would move it by less than
    ``epsilon_conv`` times the initial residual norm (or at ``max_iters``,
    in which case the best iterate is returned with ``converged=False``).
    With a linear ``h_fn`` the first pass already reproduces the standard
    update, so the iteration terminates immediately. The covariance is then
    updated with the usual (I - K H) P form.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"measurement must be finite, got {z}")
    if h_fn is None:
        def h_fn(s):
            return model.H @ s

    x, P = state.x, state.P
    K = _gain(P, model)
    r = z - h_fn(x)
    r0_norm = float(np.linalg.norm(r))

    delta = np.zeros(STATE_DIM)
    converged = False
    iterations = 0
    while iterations < cfg.max_iters:
        iterations += 1
        step = K @ r
        r = z - h_fn(x + step) + model.H @ step
        refined = K @ r
        delta = refined
        if np.linalg.norm(refined - step) <= cfg.epsilon_conv * r0_norm:
            converged = True
            break

    x_post = x + delta
    P_post = _symmetrize((np.eye(STATE_DIM) - K @ model.H) @ P)
    _check_finite(x_post, P_post)
    new_state = KalmanState(x=_clamp_height(x_post, h_min), P=P_post)
    return IteratedResult(state=new_state, iterations=iterations, converged=converged)
