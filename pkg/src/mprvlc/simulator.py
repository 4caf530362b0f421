"""
Slot-level Monte Carlo of the ALOHA-like uplink.

Every slot each device transmits with probability ``p_j`` and is
independently unblocked with probability ``beta_j``; the resulting state's
rates come from the precomputed table (zero when the state is
infeasible). Slots are processed in fixed-size chunks, each with its own
RNG stream spawned from the run seed, so results do not depend on how
chunks are distributed over workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .qos import THETA_LIMIT
from .states import FeasibleStateTable

DEFAULT_SLOTS = 500_000
CHUNK_SLOTS = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    n_slots: int = DEFAULT_SLOTS
    rng_seed: int = 0
    slot_duration: float = 0.5e-3
    retain_samples: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_slots < 1:
            raise ValueError(f"n_slots must be >= 1, got {self.n_slots}")
        if self.slot_duration <= 0:
            raise ValueError(f"slot_duration must be > 0, got {self.slot_duration}")


@dataclass(frozen=True)
class SimResult:
    empirical_ec: np.ndarray  # bits/s
    mean_rate: np.ndarray  # bits/s
    served_fraction: np.ndarray  # fraction of slots with nonzero service
    state_counts: np.ndarray  # [infeasible, row 0, row 1, ...] of the rate table
    n_slots: int
    samples: np.ndarray | None = None  # (n_slots, N) service in bits/slot
    masks: np.ndarray | None = None  # (n_slots,) state masks

    @property
    def throughput(self) -> float:
        return float(self.mean_rate.sum())


@dataclass
class _Chunk:
    service_sum: np.ndarray
    served: np.ndarray
    s_min: np.ndarray  # smallest per-slot service
    shifted_mgf: np.ndarray  # sum_t expm1(-theta (s_t - s_min)), in (-n, 0]
    counts: np.ndarray
    samples: np.ndarray | None
    masks: np.ndarray | None


def _run_chunk(table: FeasibleStateTable, p, beta, theta, cfg: SimConfig, n: int,
               seed: np.random.SeedSequence) -> _Chunk:
    rng = np.random.default_rng(seed)
    N = table.num_devices
    transmit = rng.random((n, N)) < p
    unblocked = rng.random((n, N)) < beta
    active = transmit & unblocked
    masks = active.astype(np.int64) @ (np.int64(1) << np.arange(N, dtype=np.int64))
    rows = table.index_of(masks)
    service = np.where((rows >= 0)[:, None], table.rates[np.maximum(rows, 0)], 0.0) * cfg.slot_duration
    s_min = service.min(axis=0)
    return _Chunk(
        service_sum=service.sum(axis=0),
        served=(service > 0).sum(axis=0),
        s_min=s_min,
        shifted_mgf=np.expm1(-theta[None, :] * (service - s_min)).sum(axis=0),
        counts=np.bincount(rows + 1, minlength=table.num_states + 1),
        samples=service if cfg.retain_samples else None,
        masks=masks if cfg.retain_samples else None,
    )


def run_slots(table: FeasibleStateTable, p, beta, theta, cfg: SimConfig) -> SimResult:
    """Simulate ``cfg.n_slots`` slots and estimate per-device EC and mean rate."""
    N = table.num_devices
    p = np.broadcast_to(np.asarray(p, dtype=float), (N,))
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (N,))
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (N,))
    sizes = [CHUNK_SLOTS] * (cfg.n_slots // CHUNK_SLOTS)
    if cfg.n_slots % CHUNK_SLOTS:
        sizes.append(cfg.n_slots % CHUNK_SLOTS)
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(len(sizes))
    jobs = list(zip(sizes, seeds))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(lambda job: _run_chunk(table, p, beta, theta, cfg, *job), jobs))
    else:
        chunks = [_run_chunk(table, p, beta, theta, cfg, *job) for job in jobs]

    n = cfg.n_slots
    T = cfg.slot_duration
    service_sum = np.sum([c.service_sum for c in chunks], axis=0)
    mean_rate = service_sum / n / T
    # rebase each chunk onto the global minimum: with r = e^{-theta d},
    # e^{-theta(s - m)} - 1 = r (e^{-theta(s - m_c)} - 1) + (r - 1); all terms <= 0
    s_min = np.min([c.s_min for c in chunks], axis=0)
    total = np.zeros(N)
    for c, size in zip(chunks, sizes):
        shift = -theta * (c.s_min - s_min)
        total += c.shifted_mgf * np.exp(shift) + size * np.expm1(shift)
    with np.errstate(divide="ignore", invalid="ignore"):
        ec = np.where(theta < THETA_LIMIT, mean_rate,
                      s_min / T - np.log1p(total / n) / (theta * T))
    return SimResult(
        empirical_ec=ec,
        mean_rate=mean_rate,
        served_fraction=np.sum([c.served for c in chunks], axis=0) / n,
        state_counts=np.sum([c.counts for c in chunks], axis=0),
        n_slots=n,
        samples=np.concatenate([c.samples for c in chunks]) if cfg.retain_samples else None,
        masks=np.concatenate([c.masks for c in chunks]) if cfg.retain_samples else None,
    )


def empirical_ec(samples, theta: float, slot_duration: float) -> float:
    """Plug-in effective capacity of per-slot service samples (bits), in bits/s."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("need at least one sample")
    if theta < THETA_LIMIT:
        return float(s.mean() / slot_duration)
    # shifting by the minimum keeps the log1p argument in (-1, 0] and makes a
    # degenerate sample return s/T exactly
    m = s.min()
    log_mean = np.log1p(np.expm1(-theta * (s - m)).mean())
    return float(m / slot_duration - log_mean / (theta * slot_duration))
