"""
Access states of the conflict graph and the per-state rate table.

A state is a length-N 0/1 vector; bit ``j`` of its integer encoding is
device ``j`` (transmitting and unblocked). States with at most M active
devices are feasible. The rate table holds the SIC rate of every active
device in every feasible state and is reused by all analytics, the
optimizer and the simulator.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import NoiseConfig, OpticsConfig, noise_variance, received_optical_power
from .sic import FilterKind, NoiseNorm, SingularChannelError, layer_rates, layer_sinrs

MAX_DEVICES = 30


class CapacityError(ValueError):
    pass


class StateSingularError(SingularChannelError):
    """SIC failure annotated with the access state that triggered it."""

    def __init__(self, mask: int, cause: SingularChannelError):
        super().__init__(cause.layer, cause.devices, cause.rcond)
        self.mask = mask
        self.args = (f"state {mask:#b}: {cause}",)


def mask_to_bits(mask: int, num_devices: int) -> np.ndarray:
    return np.array([(mask >> j) & 1 for j in range(num_devices)], dtype=np.int8)


def bits_to_mask(bits) -> int:
    return sum(1 << j for j, b in enumerate(bits) if b)


def state_label(mask: int, num_devices: int) -> str:
    """Bit string in device order, device 0 first."""
    return "".join(str((mask >> j) & 1) for j in range(num_devices))


def enumerate_feasible(num_devices: int, mpr: int, max_devices: int = MAX_DEVICES) -> list[int]:
    """Integer masks of all states with at most ``mpr`` active devices, ascending."""
    if num_devices < 1 or mpr < 1:
        raise ValueError(f"need N >= 1 and M >= 1, got N={num_devices}, M={mpr}")
    if num_devices > max_devices:
        raise CapacityError(f"N={num_devices} exceeds the state-table cap of {max_devices} devices")
    masks = [0]
    for k in range(1, min(mpr, num_devices) + 1):
        for combo in itertools.combinations(range(num_devices), k):
            masks.append(sum(1 << j for j in combo))
    masks.sort()
    return masks


def state_probability(bits, p, beta) -> float:
    """Probability of one state when device j is active w.p. ``p_j * beta_j``."""
    bits = np.asarray(bits, dtype=bool)
    q = np.asarray(p, dtype=float) * np.asarray(beta, dtype=float)
    return float(np.prod(np.where(bits, q, 1.0 - q)))


@dataclass(frozen=True)
class FeasibleStateTable:
    masks: np.ndarray  # (S,) int64, ascending
    active: np.ndarray  # (S, N) bool
    rates: np.ndarray  # (S, N) bits/s, zero where inactive
    sinr: np.ndarray  # (S, N), zero where inactive
    noise_var: np.ndarray  # (S,) A^2
    mpr: int
    filter_kind: FilterKind
    fingerprint: str
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "counts", self.active.sum(axis=1))
        for arr in (self.masks, self.active, self.rates, self.sinr, self.noise_var, self.counts):
            arr.setflags(write=False)

    @property
    def num_states(self) -> int:
        return len(self.masks)

    @property
    def num_devices(self) -> int:
        return self.active.shape[1]

    def index_of(self, masks) -> np.ndarray:
        """Row index for each mask, -1 for infeasible states."""
        masks = np.asarray(masks, dtype=np.int64)
        pos = np.searchsorted(self.masks, masks)
        pos = np.minimum(pos, self.num_states - 1)
        return np.where(self.masks[pos] == masks, pos, -1)

    def probabilities(self, p, beta) -> np.ndarray:
        """State probabilities for one access vector (S,) or a batch (K, S).

        The product form is evaluated as a polynomial in ``p``, so values
        outside [0, 1] are accepted (used by derivative checks).
        """
        q = np.asarray(p, dtype=float) * np.asarray(beta, dtype=float)
        factors = np.where(self.active, q[..., None, :], 1.0 - q[..., None, :])
        return factors.prod(axis=-1)


@dataclass(frozen=True)
class TrafficSpec:
    """Per-device blocking, Poisson arrivals and delay-QoS exponents."""

    unblocked_probability: tuple[float, ...]
    arrival_rate: tuple[float, ...]  # packets/slot
    packet_length: tuple[float, ...]  # bits
    qos_exponent: tuple[float, ...]  # 1/bit

    def __post_init__(self):
        n = len(self.unblocked_probability)
        for name in ("arrival_rate", "packet_length", "qos_exponent"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"traffic.{name} has {len(getattr(self, name))} entries, expected {n}")
        for j in range(n):
            if not 0.0 <= self.unblocked_probability[j] <= 1.0:
                raise ValueError(f"device {j}: unblocked probability must be in [0, 1], "
                                 f"got {self.unblocked_probability[j]}")
            if not (self.arrival_rate[j] >= 0.0 and math.isfinite(self.arrival_rate[j])):
                raise ValueError(f"device {j}: arrival rate must be >= 0, got {self.arrival_rate[j]}")
            if not (self.packet_length[j] > 0.0 and math.isfinite(self.packet_length[j])):
                raise ValueError(f"device {j}: packet length must be > 0, got {self.packet_length[j]}")
            if not 1e-10 <= self.qos_exponent[j] <= 1.0:
                raise ValueError(f"device {j}: QoS exponent must be in [1e-10, 1], "
                                 f"got {self.qos_exponent[j]}")

    @property
    def num_devices(self) -> int:
        return len(self.unblocked_probability)

    @property
    def beta(self) -> np.ndarray:
        return np.array(self.unblocked_probability)

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.qos_exponent)


def channel_fingerprint(H: np.ndarray, optics: OpticsConfig, noise: NoiseConfig, mpr: int,
                        filter_kind: FilterKind, noise_norm: NoiseNorm, power_mode: str) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(H, dtype=np.float64).tobytes())
    h.update(repr((optics, noise, mpr, FilterKind(filter_kind).value,
                   NoiseNorm(noise_norm).value, power_mode)).encode())
    return h.hexdigest()[:16]


def build_rate_table(H: np.ndarray, optics: OpticsConfig, noise: NoiseConfig,
                     filter_kind: FilterKind = FilterKind.MMSE,
                     noise_norm: NoiseNorm = NoiseNorm.EUCLIDEAN,
                     power_mode: str = "per_state", mpr: int | None = None,
                     workers: int = 1) -> FeasibleStateTable:
    """Precompute SINR and rate of every active device in every feasible state.

    Parameters
    ----------
    H : ndarray, shape (M, N)
        LOS channel matrix.
    power_mode : {"per_state", "all_devices_worst_case"}
        Received optical power used in the shot-noise term: that of the
        state's active devices, or of all devices at once.
    mpr : int, optional
        MPR capability; defaults to the number of PDs ``M``.
    workers : int
        Thread count for per-state evaluation. Results do not depend on it.
    """
    M, N = H.shape
    mpr = M if mpr is None else mpr
    if not 1 <= mpr <= M:
        raise ValueError(f"MPR capability must be in [1, M={M}], got {mpr}")
    filter_kind, noise_norm = FilterKind(filter_kind), NoiseNorm(noise_norm)
    if power_mode not in ("per_state", "all_devices_worst_case"):
        raise ValueError(f"unknown noise power mode {power_mode!r}")
    masks = enumerate_feasible(N, mpr)
    active = np.array([mask_to_bits(m, N) for m in masks], dtype=bool)
    worst = noise_variance(received_optical_power(H, np.ones(N, bool), optics.tx_power), optics, noise)

    def one(row: int):
        bits = active[row]
        if power_mode == "per_state":
            var = noise_variance(received_optical_power(H, bits, optics.tx_power), optics, noise)
        else:
            var = worst
        if not bits.any():
            return var, np.zeros(N)
        try:
            res = layer_sinrs(H, bits, var, optics.responsivity, optics.tx_power,
                              filter_kind, noise_norm)
        except SingularChannelError as exc:
            raise StateSingularError(masks[row], exc) from exc
        return var, res.by_device(N)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(masks))))
    else:
        results = [one(r) for r in range(len(masks))]
    noise_var = np.array([r[0] for r in results])
    sinr = np.array([r[1] for r in results]).reshape(len(masks), N)
    rates = np.where(active, layer_rates(sinr, optics.bandwidth), 0.0)
    return FeasibleStateTable(
        masks=np.array(masks, dtype=np.int64), active=active, rates=rates, sinr=sinr,
        noise_var=noise_var, mpr=mpr, filter_kind=filter_kind,
        fingerprint=channel_fingerprint(H, optics, noise, mpr, filter_kind, noise_norm, power_mode))


def rate_distribution(j: int, table: FeasibleStateTable, p, beta) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of device ``j``'s per-slot rate.

    Returns ``(values, masses)``: the rate in each feasible state where
    ``j`` is active, followed by 0 carrying all remaining mass.
    """
    pi = table.probabilities(p, beta)
    sel = table.active[:, j]
    values = np.append(table.rates[sel, j], 0.0)
    served = pi[sel]
    masses = np.append(served, 1.0 - math.fsum(served))
    return values, masses
