"""Scene geometry and the maps between Cartesian target states and bistatic observables.

Everything lives in the x-y plane. Angles are measured counterclockwise from
the +x axis unless a function says it works in array-relative angles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Denominators closer to zero than this are treated as a degenerate geometry.
_DEGENERATE_TOL = 1e-12


class GeometryError(ValueError):
    """A target position or observation has no well-defined image."""


def wrap_angle(angle):
    """Wrap an angle (or array of angles) into (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Geometry:
    """Transmitter/receiver layout and array orientations.

    Parameters
    ----------
    tx_pos, rx_pos : 2-vectors in meters (illuminator and receiver).
    sur_broadside : surveillance-array broadside angle versus the x-axis.
    ref_broadside : reference-array broadside angle versus the x-axis.
    ref_aoa : absolute direction of the reference LoS path; defaults to the
        baseline direction (the eNB as seen from the receiver).
    """

    tx_pos: tuple = (255.0, 0.0)
    rx_pos: tuple = (0.0, 0.0)
    sur_broadside: float = 0.0
    ref_broadside: float = 0.0
    ref_aoa: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "tx_pos", tuple(float(v) for v in self.tx_pos))
        object.__setattr__(self, "rx_pos", tuple(float(v) for v in self.rx_pos))
        if len(self.tx_pos) != 2 or len(self.rx_pos) != 2:
            raise ValueError("tx_pos and rx_pos must be 2-vectors")
        if not np.all(np.isfinite(self.tx_pos + self.rx_pos)):
            raise ValueError("station positions must be finite")
        if self.baseline_len <= 0.0:
            raise ValueError("transmitter and receiver must not coincide")
        if self.ref_aoa is None:
            object.__setattr__(self, "ref_aoa", self.baseline_angle)

    @property
    def tx(self) -> np.ndarray:
        return np.asarray(self.tx_pos)

    @property
    def rx(self) -> np.ndarray:
        return np.asarray(self.rx_pos)

    @property
    def baseline_len(self) -> float:
        return float(np.hypot(self.tx_pos[0] - self.rx_pos[0], self.tx_pos[1] - self.rx_pos[1]))

    @property
    def baseline_angle(self) -> float:
        """Direction of the transmitter as seen from the receiver."""
        return float(np.arctan2(self.tx_pos[1] - self.rx_pos[1], self.tx_pos[0] - self.rx_pos[0]))

    def swapped(self) -> "Geometry":
        return Geometry(self.rx_pos, self.tx_pos, self.sur_broadside, self.ref_broadside)


@dataclass(frozen=True)
class CartesianState:
    pos: tuple
    vel: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "pos", tuple(float(v) for v in self.pos))
        object.__setattr__(self, "vel", tuple(float(v) for v in self.vel))
        if not np.all(np.isfinite(self.pos + self.vel)):
            raise ValueError("state components must be finite")

    def as_vector(self) -> np.ndarray:
        """State in tracker order ``[x, vx, y, vy]``."""
        return np.array([self.pos[0], self.vel[0], self.pos[1], self.vel[1]])

    @classmethod
    def from_vector(cls, s) -> "CartesianState":
        s = np.asarray(s, dtype=float)
        return cls((s[0], s[2]), (s[1], s[3]))


@dataclass(frozen=True)
class Observation:
    bistatic_range: float
    range_rate: float
    aoa: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.bistatic_range, self.range_rate, self.aoa])

    @classmethod
    def from_vector(cls, z) -> "Observation":
        return cls(float(z[0]), float(z[1]), float(z[2]))


def _station_vectors(pos: np.ndarray, g: Geometry):
    dr = pos - g.rx
    dt = pos - g.tx
    nr = float(np.hypot(*dr))
    nt = float(np.hypot(*dt))
    if nr == 0.0 or nt == 0.0:
        raise GeometryError("target coincides with a station")
    return dr, dt, nr, nt


def measure(s: CartesianState, g: Geometry) -> Observation:
    """Bistatic range, range rate and receiver-side AoA of a target state."""
    pos = np.asarray(s.pos)
    vel = np.asarray(s.vel)
    dr, dt, nr, nt = _station_vectors(pos, g)
    u = dr / nr + dt / nt
    return Observation(
        bistatic_range=nr + nt,
        range_rate=float(u @ vel),
        aoa=float(np.arctan2(dr[1], dr[0])),
    )


def bisector(pos, g: Geometry) -> np.ndarray:
    """Sum of the unit vectors pointing from each station to ``pos``."""
    dr, dt, nr, nt = _station_vectors(np.asarray(pos, dtype=float), g)
    return dr / nr + dt / nt


def receiver_distance(bistatic_range: float, aoa: float, g: Geometry) -> float:
    """Distance from the receiver along ``aoa`` to the point on the range ellipse."""
    L = g.baseline_len
    if not bistatic_range > L:
        raise GeometryError(f"bistatic range {bistatic_range!r} does not exceed baseline {L!r}")
    denom = 2.0 * (bistatic_range - L * np.cos(aoa - g.baseline_angle))
    if abs(denom) < _DEGENERATE_TOL:
        raise GeometryError("range ellipse and AoA ray do not intersect")
    return (bistatic_range**2 - L**2) / denom


def invert_position(bistatic_range: float, aoa: float, g: Geometry) -> np.ndarray:
    r = receiver_distance(bistatic_range, aoa, g)
    return g.rx + r * np.array([np.cos(aoa), np.sin(aoa)])


def invert(z: Observation, g: Geometry, velocity_inversion: str = "exact") -> CartesianState:
    """Cartesian state consistent with an observation.

    The position is the intersection of the range ellipse with the AoA ray.
    Only the velocity component along the bistatic bisector is observable; it
    is placed along the bisector with magnitude ``Rdot/|u|`` (``"exact"``, so
    that ``measure(invert(z))`` reproduces ``z``) or ``Rdot`` (``"paper"``).
    """
    pos = invert_position(z.bistatic_range, z.aoa, g)
    u = bisector(pos, g)
    nu = float(np.hypot(*u))
    if nu < _DEGENERATE_TOL:
        raise GeometryError("target lies on the baseline between the stations")
    if velocity_inversion == "exact":
        vel = z.range_rate * u / nu**2
    elif velocity_inversion == "paper":
        vel = z.range_rate * u / nu
    else:
        raise ValueError(f"unknown velocity_inversion {velocity_inversion!r}")
    return CartesianState(tuple(pos), tuple(vel))


def position_jacobian(bistatic_range: float, aoa: float, g: Geometry) -> np.ndarray:
    """d(x, y)/d(R, theta) of the ellipse/ray intersection.

    Uses the closed-form H1..H5 terms, written in a frame whose x-axis points
    from the transmitter to the receiver, then rotated into the world frame.
    """
    R = bistatic_range
    L = g.baseline_len
    frame = g.baseline_angle + np.pi
    th = aoa - frame
    c, s = np.cos(th), np.sin(th)
    h1 = 2.0 * R * L * c**2 + (R**2 + L**2) * c
    h2 = (L**2 - R**2) * R * s
    h3 = np.sqrt(2.0) * (L * c + R)
    h4 = R * L * np.sin(2.0 * th) + (R**2 + L**2) * s
    h5 = (R**2 - L**2) * (R * c + L)
    h3sq = h3**2
    if abs(h3sq) < _DEGENERATE_TOL:
        raise GeometryError("range ellipse and AoA ray do not intersect")
    local = np.array([[h1, h2], [h4, h5]]) / h3sq
    cf, sf = np.cos(frame), np.sin(frame)
    rot = np.array([[cf, -sf], [sf, cf]])
    return rot @ local


def jacobian(s: CartesianState, g: Geometry) -> np.ndarray:
    """3x4 Jacobian of ``measure`` with columns ordered ``[x, vx, y, vy]``."""
    pos = np.asarray(s.pos)
    vel = np.asarray(s.vel)
    dr, dt, nr, nt = _station_vectors(pos, g)
    proj_r = dr @ vel
    proj_t = dt @ vel

    dR_dx = dr[0] / nr + dt[0] / nt
    dR_dy = dr[1] / nr + dt[1] / nt
    dRd_dx = vel[0] / nr - dr[0] * proj_r / nr**3 + vel[0] / nt - dt[0] * proj_t / nt**3
    dRd_dy = vel[1] / nr - dr[1] * proj_r / nr**3 + vel[1] / nt - dt[1] * proj_t / nt**3
    dth_dx = -dr[1] / nr**2
    dth_dy = dr[0] / nr**2

    return np.array(
        [
            [dR_dx, 0.0, dR_dy, 0.0],
            [dRd_dx, dR_dx, dRd_dy, dR_dy],
            [dth_dx, 0.0, dth_dy, 0.0],
        ]
    )


def bistatic_angle(pos, g: Geometry) -> float:
    """Angle subtended at the target by the transmitter and receiver."""
    dr, dt, nr, nt = _station_vectors(np.asarray(pos, dtype=float), g)
    cosb = np.clip((dr @ dt) / (nr * nt), -1.0, 1.0)
    return float(np.arccos(cosb))


@dataclass(frozen=True)
class Resolutions:
    range_res: float
    doppler_res: float
    velocity_res: float
    angular_res: float


def resolutions(cfg, bistatic_angle: float = 0.0, aoa: float = 0.0) -> Resolutions:
    """Range, Doppler, velocity and angular resolution cells.

    ``cfg`` needs ``bandwidth``, ``cit``, ``wavelength`` and ``sur_array_size``;
    ``aoa`` is measured from the surveillance-array broadside.
    """
    if cfg.bandwidth <= 0 or cfg.cit <= 0:
        raise ValueError("bandwidth and CIT must be positive")
    if cfg.sur_array_size < 2:
        raise ValueError("angular resolution needs at least two elements")
    half = np.cos(bistatic_angle / 2.0)
    cos_aoa = abs(np.cos(aoa))
    if abs(half) < _DEGENERATE_TOL:
        raise ZeroDivisionError("bistatic angle of pi has no resolution cell")
    if cos_aoa < _DEGENERATE_TOL:
        raise ZeroDivisionError("angular resolution is undefined at endfire")
    return Resolutions(
        range_res=SPEED_OF_LIGHT / (2.0 * cfg.bandwidth * half),
        doppler_res=1.0 / cfg.cit,
        velocity_res=cfg.wavelength / (2.0 * cfg.cit * half),
        angular_res=2.0 / (cfg.sur_array_size * cos_aoa),
    )
