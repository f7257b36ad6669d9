"""Multi-target tracker with bistatic (linear KF) and Cartesian (EKF) state models.

Each slot: predict every track, gate and cost all observation/track pairs,
assign observations to confirmed tracks first and the rest to tentative
tracks, confirm or delete tracks from their association history, start
tentative tracks from leftover observations, then correct associated tracks
and let the others coast on their prediction.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import TrackerConfig
from .geometry import (
    CartesianState,
    Geometry,
    GeometryError,
    Observation,
    bisector,
    invert,
    invert_position,
    jacobian,
    measure,
    position_jacobian,
    wrap_angle,
)

log = logging.getLogger(__name__)

# Measurement matrix of the bistatic state [R, Rdot, Rddot, theta, thetadot].
H_BISTATIC = np.array(
    [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
    ]
)


class TrackingError(ValueError):
    pass


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


# -- initialisation ---------------------------------------------------------------


def cartesian_init_covariance(z: Observation, cfg: TrackerConfig, geometry: Geometry) -> np.ndarray:
    J = position_jacobian(z.bistatic_range, z.aoa, geometry)
    pos_cov = J @ np.diag([cfg.sigma_range**2, cfg.sigma_aoa**2]) @ J.T
    pos = invert_position(z.bistatic_range, z.aoa, geometry)
    u = bisector(pos, geometry)
    nu2 = float(u @ u)
    var_v = cfg.sigma_range_rate**2 / nu2 + cfg.v_max**2 / 3.0
    P = np.zeros((4, 4))
    P[0, 0] = pos_cov[0, 0]
    P[2, 2] = pos_cov[1, 1]
    P[0, 2] = P[2, 0] = pos_cov[0, 1]
    P[1, 1] = P[3, 3] = var_v
    return P


def init_track(z: Observation, cfg: TrackerConfig, geometry: Geometry):
    """Initial ``(state, covariance)`` of a track started from one observation."""
    if cfg.mode == "bistatic":
        s = H_BISTATIC.T @ z.as_vector()
        P = np.diag([
            cfg.sigma_range**2,
            cfg.sigma_range_rate**2,
            cfg.sigma0_range_acc**2,
            cfg.sigma_aoa**2,
            cfg.sigma0_aoa_rate**2,
        ])
        return s, P
    state = invert(z, geometry, cfg.velocity_inversion)
    return state.as_vector(), cartesian_init_covariance(z, cfg, geometry)


# -- prediction -------------------------------------------------------------------


def transition(cfg: TrackerConfig):
    """State transition matrix F and process noise Q for the configured mode."""
    T = cfg.slot_duration
    q2 = np.array([[T**4 / 4, T**3 / 2], [T**3 / 2, T**2]])
    if cfg.mode == "bistatic":
        F = np.array(
            [
                [1.0, T, T**2 / 2, 0.0, 0.0],
                [0.0, 1.0, T, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0, T],
                [0.0, 0.0, 0.0, 0.0, 1.0],
            ]
        )
        q3 = np.array(
            [
                [T**4 / 4, T**3 / 2, T**2 / 2],
                [T**3 / 2, T**2, T],
                [T**2 / 2, T, 1.0],
            ]
        )
        Q = np.zeros((5, 5))
        Q[:3, :3] = cfg.sigma_range_acc**2 * q3
        Q[3:, 3:] = cfg.sigma_aoa_acc**2 * q2
        return F, Q
    F = np.array(
        [
            [1.0, T, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, T],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    Q = np.zeros((4, 4))
    Q[:2, :2] = cfg.sigma_x_acc**2 * q2
    Q[2:, 2:] = cfg.sigma_y_acc**2 * q2
    return F, Q


def predict(state, cov, cfg: TrackerConfig):
    F, Q = transition(cfg)
    return F @ state, _symmetrize(F @ cov @ F.T + Q)


# -- measurement model ------------------------------------------------------------


def measurement_model(state: np.ndarray, cfg: TrackerConfig, geometry: Geometry):
    """Predicted measurement ``h(s)`` and its Jacobian at ``s``."""
    if cfg.mode == "bistatic":
        return H_BISTATIC @ state, H_BISTATIC
    s = CartesianState.from_vector(state)
    return measure(s, geometry).as_vector(), jacobian(s, geometry)


def innovation(z: Observation, predicted: np.ndarray) -> np.ndarray:
    dz = z.as_vector() - predicted
    dz[2] = wrap_angle(dz[2])
    return dz


@dataclass(frozen=True)
class GateResult:
    inside: bool
    cost: float
    distance2: float


def gate_and_cost(z: Observation, state, cov, cfg: TrackerConfig, geometry: Geometry) -> GateResult:
    """Squared Mahalanobis distance against the gate and the association cost.

    The cost adds ``ln|W|`` so that tracks with a loose prediction pay for it.
    """
    hs, H = measurement_model(state, cfg, geometry)
    W = cfg.meas_noise + H @ cov @ H.T
    sign, logdet = np.linalg.slogdet(W)
    if sign <= 0:
        raise TrackingError("residual covariance is singular")
    dz = innovation(z, hs)
    d2 = float(dz @ np.linalg.solve(W, dz))
    return GateResult(d2 <= cfg.gate, d2 + float(logdet), d2)


# -- association ------------------------------------------------------------------


def assign(costs) -> list:
    """Optimal one-to-one partial assignment over the finite entries of ``costs``.

    Infeasible pairs are ``inf`` (or NaN). Among assignments that pair as many
    rows as possible with feasible columns, the one of least total cost is
    returned as a list of ``(row, col)``.
    """
    C = np.asarray(costs, dtype=float)
    if C.ndim != 2 or C.size == 0:
        return []
    feasible = np.isfinite(C)
    if not feasible.any():
        return []
    finite = C[feasible]
    k = min(C.shape)
    # one extra infeasible pair must cost more than any spread of feasible costs
    big = (np.max(np.abs(finite)) + 1.0) * (2 * k + 1)
    work = np.where(feasible, C, big)
    rows, cols = linear_sum_assignment(work)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if feasible[r, c]]


# -- correction -------------------------------------------------------------------


def correct(state, cov, z: Observation, cfg: TrackerConfig, geometry: Geometry):
    """Kalman (bistatic) or extended Kalman (Cartesian) update, Joseph form."""
    hs, H = measurement_model(state, cfg, geometry)
    R = cfg.meas_noise
    W = R + H @ cov @ H.T
    K = np.linalg.solve(W.T, (cov @ H.T).T).T
    s_new = state + K @ innovation(z, hs)
    A = np.eye(state.shape[0]) - K @ H
    P_new = A @ cov @ A.T + K @ R @ K.T
    return s_new, _symmetrize(P_new)


# -- tracks -----------------------------------------------------------------------


@dataclass
class TrackRecord:
    slot: int
    state: np.ndarray
    cov: np.ndarray
    status: str
    associated: bool


@dataclass
class Track:
    id: int
    state: np.ndarray
    cov: np.ndarray
    born: int
    status: str = "tentative"
    hits: deque = field(default_factory=deque)
    history: list = field(default_factory=list)

    def record(self, slot: int, associated: bool) -> None:
        self.history.append(TrackRecord(slot, self.state.copy(), self.cov.copy(), self.status, associated))


@dataclass
class StepResult:
    slot: int
    confirmed: list
    tentative: list
    associations: dict  # track id -> observation index (input order)
    deleted: list


class Tracker:
    """Sequential multi-target tracker; call ``step`` once per slot in order."""

    def __init__(self, cfg: TrackerConfig, geometry: Geometry):
        cfg.validate()
        self.cfg = cfg
        self.geometry = geometry
        self.tracks: list = []
        self.deleted: list = []
        self._ids = itertools.count(1)
        self._last_slot: Optional[int] = None

    @property
    def confirmed(self) -> list:
        return [t for t in self.tracks if t.status == "confirmed"]

    @property
    def tentative(self) -> list:
        return [t for t in self.tracks if t.status == "tentative"]

    def _new_track(self, z: Observation, slot: int) -> Optional[Track]:
        try:
            s, P = init_track(z, self.cfg, self.geometry)
        except GeometryError as exc:
            log.debug("slot %d: cannot start a track from %s (%s)", slot, z, exc)
            return None
        t = Track(next(self._ids), s, P, slot, hits=deque(maxlen=self.cfg.delete_slots))
        t.hits.append(True)
        return t

    def _cost_matrix(self, obs, predictions, tracks):
        C = np.full((len(obs), len(tracks)), np.inf)
        for j, t in enumerate(tracks):
            s, P = predictions[t.id]
            for i, z in enumerate(obs):
                try:
                    g = gate_and_cost(z, s, P, self.cfg, self.geometry)
                except (GeometryError, TrackingError):
                    continue
                if g.inside:
                    C[i, j] = g.cost
        return C

    def step(self, observations, slot: Optional[int] = None) -> StepResult:
        if slot is None:
            slot = 0 if self._last_slot is None else self._last_slot + 1
        if self._last_slot is not None and slot <= self._last_slot:
            raise TrackingError("slots must be processed in increasing order")
        gap = 1 if self._last_slot is None else slot - self._last_slot
        self._last_slot = slot

        obs = list(observations)
        # canonical order makes the outcome independent of the input order
        order = sorted(range(len(obs)), key=lambda i: tuple(obs[i].as_vector()))
        sorted_obs = [obs[i] for i in order]

        # Step 1: prediction (one prediction per elapsed slot)
        predictions = {}
        for t in self.tracks:
            s, P = t.state, t.cov
            for _ in range(gap):
                s, P = predict(s, P, self.cfg)
            predictions[t.id] = (s, P)

        # Step 2: two-stage association
        confirmed = sorted(self.confirmed, key=lambda t: t.id)
        tentative = sorted(self.tentative, key=lambda t: t.id)
        assoc = {}
        remaining = list(range(len(sorted_obs)))
        for group in (confirmed, tentative):
            if not group or not remaining:
                continue
            sub = [sorted_obs[i] for i in remaining]
            C = self._cost_matrix(sub, predictions, group)
            for r, c in assign(C):
                assoc[group[c].id] = remaining[r]
            used = set(assoc.values())
            remaining = [i for i in remaining if i not in used]

        # Step 3: maintenance
        deleted = []
        survivors = []
        for t in self.tracks:
            t.hits.append(t.id in assoc)
            n_cnf, n_del = self.cfg.confirm_slots, self.cfg.delete_slots
            if t.status == "tentative" and len(t.hits) >= n_cnf and all(list(t.hits)[-n_cnf:]):
                t.status = "confirmed"
            if len(t.hits) >= n_del and not any(list(t.hits)[-n_del:]):
                deleted.append(t)
            else:
                survivors.append(t)
        new_tracks = [t for t in (self._new_track(sorted_obs[i], slot) for i in remaining) if t]

        # Step 4: update
        for t in survivors:
            s, P = predictions[t.id]
            if t.id in assoc:
                s, P = correct(s, P, sorted_obs[assoc[t.id]], self.cfg, self.geometry)
            t.state, t.cov = s, P
            t.record(slot, t.id in assoc)
        for t in new_tracks:
            t.record(slot, True)
        self.deleted.extend(deleted)
        self.tracks = survivors + new_tracks

        return StepResult(
            slot=slot,
            confirmed=self.confirmed,
            tentative=self.tentative,
            associations={tid: order[i] for tid, i in assoc.items()},
            deleted=deleted,
        )

    def all_tracks(self) -> list:
        return sorted(self.tracks + self.deleted, key=lambda t: t.id)


# -- conversions ------------------------------------------------------------------


def bistatic_to_cartesian(state: np.ndarray, geometry: Geometry) -> CartesianState:
    """Position from (R, theta) and velocity by the chain rule through the same map."""
    R, Rdot, _, theta, thetadot = state
    pos = invert_position(R, theta, geometry)
    J = position_jacobian(R, theta, geometry)
    vel = J @ np.array([Rdot, thetadot])
    return CartesianState(tuple(pos), tuple(vel))


def state_to_cartesian(state: np.ndarray, mode: str, geometry: Geometry) -> CartesianState:
    if mode == "bistatic":
        return bistatic_to_cartesian(np.asarray(state), geometry)
    return CartesianState.from_vector(state)


def track_to_position(track, geometry: Geometry, mode: Optional[str] = None) -> np.ndarray:
    """(x, y) of a track (or a bare state vector, with ``mode`` given)."""
    state = track.state if isinstance(track, Track) else np.asarray(track, dtype=float)
    if mode is None:
        mode = "bistatic" if state.shape[0] == 5 else "cartesian"
    if mode == "bistatic":
        return invert_position(state[0], state[3], geometry)
    return np.array([state[0], state[2]])


def state_to_observation(state: np.ndarray, mode: str, geometry: Geometry) -> Observation:
    if mode == "bistatic":
        return Observation.from_vector(H_BISTATIC @ state)
    return measure(CartesianState.from_vector(state), geometry)
