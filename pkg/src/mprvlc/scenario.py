"""
Scenario files: YAML with one section per component.

Every field is optional; omitted values fall back to the reference
parameter set (10 devices, 2 PDs, 10 x 20 x 5 m room). Quantities may be
given in the customary units (``detector_area_cm2``, ``tx_power_mw``,
``bandwidth_mhz`` ...) or in SI (``detector_area_m2``, ``tx_power_w``,
``bandwidth_hz`` ...); :func:`dump_scenario` always writes SI so that a
dump/parse round trip is exact.
"""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .channel import (ChannelDomainError, Geometry, NoiseConfig, OpticsConfig, channel_matrix,
                      los_gain, pd_array_layout)
from .sic import FilterKind, NoiseNorm
from .states import FeasibleStateTable, TrafficSpec, build_rate_table

SCENARIO_DIR_ENV = "MPRVLC_SCENARIO_DIR"
PLACEMENT_ATTEMPTS = 10_000


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    geometry: Geometry
    optics: OpticsConfig
    noise: NoiseConfig
    traffic: TrafficSpec
    slot_duration: float = 0.5e-3
    filter_kind: FilterKind = FilterKind.MMSE
    noise_norm: NoiseNorm = NoiseNorm.EUCLIDEAN
    noise_power_mode: str = "per_state"

    def __post_init__(self):
        if self.traffic.num_devices != self.geometry.num_devices:
            raise ScenarioError(f"traffic describes {self.traffic.num_devices} devices but the "
                                f"geometry places {self.geometry.num_devices}")
        if not (self.slot_duration > 0 and math.isfinite(self.slot_duration)):
            raise ScenarioError(f"slot_duration must be > 0, got {self.slot_duration}")
        if self.noise_power_mode not in ("per_state", "all_devices_worst_case"):
            raise ScenarioError(f"noise.power_mode must be per_state or all_devices_worst_case, "
                                f"got {self.noise_power_mode!r}")

    @property
    def num_devices(self) -> int:
        return self.geometry.num_devices

    @property
    def num_pds(self) -> int:
        return self.geometry.num_pds

    def channel(self) -> np.ndarray:
        return channel_matrix(self.geometry, self.optics)

    def rate_table(self, workers: int = 1) -> FeasibleStateTable:
        return build_rate_table(self.channel(), self.optics, self.noise, self.filter_kind,
                                self.noise_norm, self.noise_power_mode, workers=workers)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_traffic(self, **fields) -> "Scenario":
        """Copy with traffic fields replaced; scalars are broadcast to all devices."""
        n = self.num_devices
        updates = {k: _per_device(v, n, f"traffic.{k}") for k, v in fields.items()}
        return self.replace(traffic=dataclasses.replace(self.traffic, **updates))


# (section key, dataclass field, {alias: scale to SI})
_OPTICS = [
    ("semi_angle_deg", "semi_angle_half_power", None),
    ("fov_deg", "fov_width", None),
    ("detector_area", "detector_area", {"detector_area_m2": 1.0, "detector_area_cm2": 1e-4}),
    ("filter_gain", "optical_filter_gain", None),
    ("refractive_index", "refractive_index", None),
    ("responsivity", "responsivity", None),
    ("tx_power", "tx_power", {"tx_power_w": 1.0, "tx_power_mw": 1e-3}),
    ("bandwidth", "bandwidth", {"bandwidth_hz": 1.0, "bandwidth_mhz": 1e6}),
]
_NOISE = [
    ("background_current", "background_current", {"background_current_a": 1.0}),
    ("personick_i2", "personick_i2", None),
    ("personick_i3", "personick_i3", None),
    ("temperature", "temperature", {"temperature_k": 1.0}),
    ("open_loop_gain", "open_loop_gain", None),
    ("fet_transconductance", "fet_transconductance",
     {"fet_transconductance_s": 1.0, "fet_transconductance_ms": 1e-3}),
    ("fet_noise_factor", "fet_noise_factor", None),
    ("capacitance", "capacitance_per_area",
     {"capacitance_f_per_m2": 1.0, "capacitance_pf_per_cm2": 1e-12 / 1e-4}),
]
_SI_KEY = {"detector_area": "detector_area_m2", "tx_power": "tx_power_w",
           "bandwidth": "bandwidth_hz", "background_current": "background_current_a",
           "temperature": "temperature_k", "fet_transconductance": "fet_transconductance_s",
           "capacitance": "capacitance_f_per_m2"}

DEFAULT_TRAFFIC = {"unblocked_probability": 0.9, "arrival_rate": 0.01,
                   "packet_length": 1000.0, "qos_exponent": 1e-8}


def _number(value, where: str) -> float:
    # PyYAML reads "1e-8" (no dot) as a string
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected a number, got {value!r}") from None
    if isinstance(value, bool):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    return out


def _point(value, where: str, dims: int = 3) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != dims:
        raise ScenarioError(f"{where}: expected a list of {dims} numbers, got {value!r}")
    return tuple(_number(v, where) for v in value)


def _per_device(value, n: int, where: str) -> tuple[float, ...]:
    if isinstance(value, (list, tuple, np.ndarray)):
        if len(value) != n:
            raise ScenarioError(f"{where}: expected {n} values (one per device), got {len(value)}")
        return tuple(_number(v, where) for v in value)
    return (_number(value, where),) * n


def _section(data: dict, name: str) -> dict:
    sec = data.get(name) or {}
    if not isinstance(sec, dict):
        raise ScenarioError(f"section {name!r} must be a mapping")
    return sec


def _check_keys(sec: dict, allowed, name: str) -> None:
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise ScenarioError(f"section {name!r}: unknown field(s) {', '.join(unknown)}")


def _unit_fields(sec: dict, spec, name: str) -> dict:
    allowed = set()
    for key, _, aliases in spec:
        allowed.add(key)
        allowed.update(aliases or ())
    _check_keys(sec, allowed | {"power_mode"}, name)
    out = {}
    for key, field_name, aliases in spec:
        given = [k for k in [key, *(aliases or ())] if k in sec]
        if len(given) > 1:
            raise ScenarioError(f"section {name!r}: give only one of {', '.join(given)}")
        if not given:
            continue
        k = given[0]
        scale = 1.0 if k == key else aliases[k]  # a bare key is SI
        out[field_name] = _number(sec[k], f"{name}.{k}") * scale
    return out


def random_device_positions(count: int, room, height: float, pd_positions, optics: OpticsConfig,
                            seed: int, pd_normal=(0.0, 0.0, -1.0),
                            device_normal=(0.0, 0.0, 1.0)) -> tuple:
    """Uniform placement over the room footprint at ``height``.

    Draws that no PD can see (zero channel column) are redrawn.
    """
    rng = np.random.default_rng(seed)
    points = []
    attempts = 0
    while len(points) < count:
        attempts += 1
        if attempts > PLACEMENT_ATTEMPTS * count:
            raise ScenarioError("could not place devices inside any PD field of view")
        x, y = rng.random(2) * np.asarray(room[:2])
        pt = (float(x), float(y), float(height))
        if any(los_gain(pt, pd, optics, device_normal, pd_normal) > 0 for pd in pd_positions):
            points.append(pt)
    return tuple(points)


def scenario_from_dict(data: dict[str, Any] | None) -> Scenario:
    data = data or {}
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping of sections")
    _check_keys(data, {"room", "receiver", "devices", "optics", "noise", "traffic", "detector"},
                "top level")

    room_sec = _section(data, "room")
    _check_keys(room_sec, {"length", "width", "height"}, "room")
    room = (_number(room_sec.get("length", 10.0), "room.length"),
            _number(room_sec.get("width", 20.0), "room.width"),
            _number(room_sec.get("height", 5.0), "room.height"))

    try:
        optics = OpticsConfig(**_unit_fields(_section(data, "optics"), _OPTICS, "optics"))
        noise_sec = _section(data, "noise")
        noise = NoiseConfig(**_unit_fields(noise_sec, _NOISE, "noise"))
    except ChannelDomainError as exc:
        raise ScenarioError(str(exc)) from None
    power_mode = noise_sec.get("power_mode", "per_state")

    rx = _section(data, "receiver")
    _check_keys(rx, {"count", "height", "spacing_m", "spacing_cm", "center", "positions",
                     "orientation"}, "receiver")
    pd_normal = _point(rx.get("orientation", (0.0, 0.0, -1.0)), "receiver.orientation")
    if "positions" in rx:
        pds = tuple(_point(pt, f"receiver.positions[{k}]") for k, pt in enumerate(rx["positions"]))
        if "count" in rx and int(rx["count"]) != len(pds):
            raise ScenarioError(f"receiver.count={rx['count']} disagrees with {len(pds)} positions")
    else:
        count = int(_number(rx.get("count", 2), "receiver.count"))
        if count < 1:
            raise ScenarioError(f"receiver.count must be >= 1, got {count}")
        if "spacing_m" in rx and "spacing_cm" in rx:
            raise ScenarioError("receiver: give only one of spacing_m, spacing_cm")
        spacing = (_number(rx["spacing_m"], "receiver.spacing_m") if "spacing_m" in rx
                   else _number(rx.get("spacing_cm", 15.0), "receiver.spacing_cm") * 1e-2)
        center = _point(rx.get("center", (room[0] / 2, room[1] / 2)), "receiver.center", dims=2)
        pds = pd_array_layout(count, center, _number(rx.get("height", 4.85), "receiver.height"),
                              spacing)

    dev = _section(data, "devices")
    _check_keys(dev, {"count", "height", "seed", "positions", "orientation"}, "devices")
    dev_normal = _point(dev.get("orientation", (0.0, 0.0, 1.0)), "devices.orientation")
    if "positions" in dev:
        devices = tuple(_point(pt, f"devices.positions[{k}]") for k, pt in enumerate(dev["positions"]))
        if "count" in dev and int(dev["count"]) != len(devices):
            raise ScenarioError(f"devices.count={dev['count']} disagrees with {len(devices)} positions")
    else:
        count = int(_number(dev.get("count", 10), "devices.count"))
        if count < 1:
            raise ScenarioError(f"devices.count must be >= 1, got {count}")
        devices = random_device_positions(
            count, room, _number(dev.get("height", 0.85), "devices.height"), pds, optics,
            int(_number(dev.get("seed", 0), "devices.seed")), pd_normal, dev_normal)
    try:
        geometry = Geometry(room, pds, devices, pd_normal, dev_normal)
    except ChannelDomainError as exc:
        raise ScenarioError(str(exc)) from None

    tr = _section(data, "traffic")
    _check_keys(tr, {*DEFAULT_TRAFFIC, "slot_duration_ms", "slot_duration_s"}, "traffic")
    n = len(devices)
    try:
        traffic = TrafficSpec(**{k: _per_device(tr.get(k, v), n, f"traffic.{k}")
                                 for k, v in DEFAULT_TRAFFIC.items()})
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"traffic: {exc}") from None
    if "slot_duration_ms" in tr and "slot_duration_s" in tr:
        raise ScenarioError("traffic: give only one of slot_duration_ms, slot_duration_s")
    slot = (_number(tr["slot_duration_s"], "traffic.slot_duration_s") if "slot_duration_s" in tr
            else _number(tr.get("slot_duration_ms", 0.5), "traffic.slot_duration_ms") * 1e-3)

    det = _section(data, "detector")
    _check_keys(det, {"filter", "noise_norm"}, "detector")
    try:
        filter_kind = FilterKind(str(det.get("filter", "mmse")).lower())
        noise_norm = NoiseNorm(str(det.get("noise_norm", "euclidean")).lower())
    except ValueError as exc:
        raise ScenarioError(f"detector: {exc}") from None

    return Scenario(geometry, optics, noise, traffic, slot, filter_kind, noise_norm, power_mode)


def resolve_path(path: str | os.PathLike) -> Path:
    """Scenario path, falling back to ``$MPRVLC_SCENARIO_DIR`` for relative names."""
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(SCENARIO_DIR_ENV):
        alt = Path(os.environ[SCENARIO_DIR_ENV]) / p
        if alt.exists():
            return alt
    return p


def parse_scenario(path: str | os.PathLike) -> Scenario:
    p = resolve_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{p}: invalid YAML: {exc}") from None
    return scenario_from_dict(data)


def scenario_to_dict(sc: Scenario) -> dict:
    g = sc.geometry

    def unit_section(obj, spec):
        out = {}
        for key, field_name, _ in spec:
            out[_SI_KEY.get(key, key)] = float(getattr(obj, field_name))
        return out

    noise = unit_section(sc.noise, _NOISE)
    noise["power_mode"] = sc.noise_power_mode
    t = sc.traffic
    return {
        "room": {"length": g.room[0], "width": g.room[1], "height": g.room[2]},
        "receiver": {"positions": [list(pt) for pt in g.pd_positions],
                     "orientation": list(g.pd_orientation)},
        "devices": {"positions": [list(pt) for pt in g.device_positions],
                    "orientation": list(g.device_orientation)},
        "optics": unit_section(sc.optics, _OPTICS),
        "noise": noise,
        "traffic": {"unblocked_probability": list(t.unblocked_probability),
                    "arrival_rate": list(t.arrival_rate),
                    "packet_length": list(t.packet_length),
                    "qos_exponent": list(t.qos_exponent),
                    "slot_duration_s": sc.slot_duration},
        "detector": {"filter": sc.filter_kind.value, "noise_norm": sc.noise_norm.value},
    }


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)


def apply_split_qos(sc: Scenario, spec: str) -> Scenario:
    """Assign QoS exponents to consecutive device groups.

    ``spec`` is a comma-separated list of ``count:theta`` where count is an
    integer, ``M/2`` (half the PD count) or ``rest``; e.g.
    ``"M/2:1e-7,rest:1e-10"``.
    """
    n, m = sc.num_devices, sc.num_pds
    theta = list(sc.traffic.qos_exponent)
    start = 0
    for part in spec.split(","):
        try:
            count_s, theta_s = part.split(":")
        except ValueError:
            raise ScenarioError(f"--split-qos: bad group {part!r}, expected count:theta") from None
        count_s = count_s.strip()
        if count_s == "rest":
            count = n - start
        elif count_s == "M/2":
            count = m // 2
        else:
            try:
                count = int(count_s)
            except ValueError:
                raise ScenarioError(f"--split-qos: bad count {count_s!r}") from None
        value = _number(theta_s, "--split-qos theta")
        if count < 0 or start + count > n:
            raise ScenarioError(f"--split-qos: groups cover more than {n} devices")
        theta[start:start + count] = [value] * count
        start += count
    try:
        return sc.with_traffic(qos_exponent=theta)
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
