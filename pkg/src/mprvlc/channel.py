"""
Line-of-sight optical channel between device LEDs and the coordinator's PDs.

All quantities are SI: metres, square metres, watts, hertz, amperes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ELECTRON_CHARGE = 1.602e-19  # C
BOLTZMANN = 1.380649e-23  # J/K

Vec3 = tuple[float, float, float]


class ChannelDomainError(ValueError):
    """Raised for geometrically or physically invalid channel inputs."""


@dataclass(frozen=True)
class OpticsConfig:
    semi_angle_half_power: float = 70.0  # deg
    fov_width: float = 70.0  # deg
    detector_area: float = 1.0e-4  # m^2
    optical_filter_gain: float = 0.53
    refractive_index: float = 1.5
    responsivity: float = 0.97  # A/W
    tx_power: float = 0.1  # W
    bandwidth: float = 20.0e6  # Hz

    def __post_init__(self):
        if not 0.0 < self.semi_angle_half_power < 90.0:
            raise ChannelDomainError(
                f"semi_angle_half_power must lie in (0, 90) deg, got {self.semi_angle_half_power}")
        if not 0.0 < self.fov_width <= 90.0:
            raise ChannelDomainError(f"fov_width must lie in (0, 90] deg, got {self.fov_width}")
        for name in ("detector_area", "optical_filter_gain", "refractive_index",
                     "responsivity", "tx_power", "bandwidth"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ChannelDomainError(f"{name} must be finite and > 0, got {value}")


@dataclass(frozen=True)
class NoiseConfig:
    background_current: float = 5.1e-3  # A
    personick_i2: float = 0.562
    personick_i3: float = 0.0868
    temperature: float = 295.0  # K
    open_loop_gain: float = 10.0
    fet_transconductance: float = 30e-3  # S
    fet_noise_factor: float = 1.5
    capacitance_per_area: float = 112e-12 / 1e-4  # F/m^2 (112 pF/cm^2)

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not (math.isfinite(value) and value > 0.0):
                raise ChannelDomainError(f"{name} must be finite and > 0, got {value}")


@dataclass(frozen=True)
class Geometry:
    """Room box, PD positions (M) and device LED positions (N)."""

    room: Vec3
    pd_positions: tuple[Vec3, ...]
    device_positions: tuple[Vec3, ...]
    pd_orientation: Vec3 = (0.0, 0.0, -1.0)
    device_orientation: Vec3 = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if any(not (math.isfinite(s) and s > 0) for s in self.room):
            raise ChannelDomainError(f"room dimensions must be positive, got {self.room}")
        if len(self.pd_positions) < 1:
            raise ChannelDomainError("at least one PD (M >= 1) is required")
        if len(self.device_positions) < 1:
            raise ChannelDomainError("at least one device (N >= 1) is required")
        for label, points in (("pd", self.pd_positions), ("device", self.device_positions)):
            for k, pt in enumerate(points):
                if len(pt) != 3:
                    raise ChannelDomainError(f"{label} {k}: expected a 3-D point, got {pt}")
                if any(not (0.0 <= c <= s) for c, s in zip(pt, self.room)):
                    raise ChannelDomainError(f"{label} {k} at {pt} lies outside the room {self.room}")
        for label, normal in (("pd_orientation", self.pd_orientation),
                              ("device_orientation", self.device_orientation)):
            if not math.isclose(math.hypot(*normal), 1.0, rel_tol=1e-9):
                raise ChannelDomainError(f"{label} must be a unit vector, got {normal}")

    @property
    def num_pds(self) -> int:
        return len(self.pd_positions)

    @property
    def num_devices(self) -> int:
        return len(self.device_positions)


def pd_array_layout(num_pds: int, center: Sequence[float], height: float,
                    spacing: float = 0.15) -> tuple[Vec3, ...]:
    """Default receiver layout: a row of 2 PDs, or a square grid for 4, 9, ...

    Other counts are placed on a row with the same spacing.
    """
    cx, cy = float(center[0]), float(center[1])
    side = math.isqrt(num_pds)
    if num_pds > 2 and side * side == num_pds:
        offsets = [(i - (side - 1) / 2) * spacing for i in range(side)]
        return tuple((cx + ox, cy + oy, float(height)) for oy in offsets for ox in offsets)
    return tuple((cx + (i - (num_pds - 1) / 2) * spacing, cy, float(height))
                 for i in range(num_pds))


def lambertian_order(semi_angle_half_power: float) -> float:
    """Order of Lambertian emission for a half-power semi-angle in degrees.

    Returns ``-ln 2 / ln cos(phi)``, which is +1 at 60 degrees.
    """
    if not 0.0 < semi_angle_half_power < 90.0:
        raise ChannelDomainError(
            f"semi-angle must lie in (0, 90) deg, got {semi_angle_half_power}")
    return -math.log(2.0) / math.log(math.cos(math.radians(semi_angle_half_power)))


def concentrator_gain(incidence: float, fov: float, n0: float) -> float:
    if incidence <= fov:
        return n0 ** 2 / math.sin(math.radians(fov)) ** 2
    return 0.0


def los_gain(device_pos, pd_pos, optics: OpticsConfig,
             device_normal=(0.0, 0.0, 1.0), pd_normal=(0.0, 0.0, -1.0)) -> float:
    """DC gain of the direct path from one device LED to one PD.

    Irradiance and incidence angles are measured against the LED and PD
    normals. Zero when the PD lies outside its field of view or behind
    the emitter.
    """
    v = np.asarray(pd_pos, dtype=float) - np.asarray(device_pos, dtype=float)
    d = float(np.linalg.norm(v))
    if d == 0.0:
        raise ChannelDomainError(f"device and PD coincide at {tuple(device_pos)}")
    cos_ir = float(np.dot(v, device_normal)) / d
    cos_in = -float(np.dot(v, pd_normal)) / d
    if cos_ir <= 0.0 or cos_in <= 0.0:
        return 0.0
    incidence = math.degrees(math.acos(min(cos_in, 1.0)))
    if incidence > optics.fov_width:
        return 0.0
    rho = lambertian_order(optics.semi_angle_half_power)
    conc = concentrator_gain(incidence, optics.fov_width, optics.refractive_index)
    return ((rho + 1.0) * optics.detector_area * optics.optical_filter_gain
            / (2.0 * math.pi * d * d) * conc * cos_ir ** rho * cos_in)


def channel_matrix(geometry: Geometry, optics: OpticsConfig) -> np.ndarray:
    """M x N matrix with entry (i, j) the gain from device j to PD i."""
    H = np.empty((geometry.num_pds, geometry.num_devices))
    for i, pd in enumerate(geometry.pd_positions):
        for j, dev in enumerate(geometry.device_positions):
            H[i, j] = los_gain(dev, pd, optics, geometry.device_orientation, geometry.pd_orientation)
    return H


def received_optical_power(H: np.ndarray, active, tx_power: float) -> float:
    """Optical power reaching the coordinator, averaged over its PDs.

    ``active`` is a boolean (or 0/1) vector over devices.
    """
    active = np.asarray(active, dtype=bool)
    if active.shape != (H.shape[1],):
        raise ValueError(f"state has {active.shape} entries, channel has {H.shape[1]} devices")
    if not active.any():
        return 0.0
    return tx_power * float(H[:, active].sum()) / H.shape[0]


def shot_noise_variance(p_received: float, optics: OpticsConfig, noise: NoiseConfig) -> float:
    q, B = ELECTRON_CHARGE, optics.bandwidth
    return (2.0 * q * optics.responsivity * p_received * B
            + 2.0 * q * noise.background_current * noise.personick_i2 * B)


def thermal_noise_variance(optics: OpticsConfig, noise: NoiseConfig) -> float:
    kT = BOLTZMANN * noise.temperature
    B, A0, cap = optics.bandwidth, optics.detector_area, noise.capacitance_per_area
    feedback = 8.0 * math.pi * kT / noise.open_loop_gain * cap * A0 * noise.personick_i2 * B ** 2
    fet = (16.0 * math.pi ** 2 * kT * noise.fet_noise_factor / noise.fet_transconductance
           * cap ** 2 * A0 ** 2 * noise.personick_i3 * B ** 3)
    return feedback + fet


def noise_variance(p_received: float, optics: OpticsConfig, noise: NoiseConfig) -> float:
    """Total receiver noise variance (shot + thermal), in A^2."""
    if p_received < 0:
        raise ValueError(f"received power must be >= 0, got {p_received}")
    return shot_noise_variance(p_received, optics, noise) + thermal_noise_variance(optics, noise)
