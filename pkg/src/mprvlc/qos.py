"""
Effective capacity, effective bandwidth, saturation throughput and the
constraint-violation measure of the QoS-constrained throughput problem.

Service is counted in bits per slot (``rate * slot_duration``) inside every
exponent; capacities and bandwidths are reported in bits/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .states import FeasibleStateTable

THETA_LIMIT = 1e-12  # below this the theta -> 0 limit is used
EB_OVERFLOW = 700.0  # theta * L above this gives EB = +inf
VIOLATION_PENALTY = 1e12  # stands in for EB/EC when EC = 0 < EB


def _as_batch(p) -> tuple[np.ndarray, bool]:
    p = np.asarray(p, dtype=float)
    return np.atleast_2d(p), p.ndim == 1


def _device_ec(pi: np.ndarray, table: FeasibleStateTable, j: int, theta_j: float,
               slot_duration: float) -> np.ndarray:
    sel = table.active[:, j]
    pij = pi[:, sel]  # (K, S_j)
    s = table.rates[sel, j] * slot_duration  # bits/slot
    if theta_j < THETA_LIMIT:
        return pij @ s / slot_duration
    # x = 1 - E[e^{-theta s}], accurate while the served mass is not close to 1
    x = pij @ (-np.expm1(-theta_j * s))
    with np.errstate(divide="ignore", invalid="ignore"):
        small = -np.log1p(-x)
        # otherwise log-sum-exp with the unserved mass as a zero-service atom
        unserved = np.clip(1.0 - pij.sum(axis=1), 0.0, None)
        exps = np.concatenate([np.broadcast_to(-theta_j * s, pij.shape),
                               np.zeros((len(x), 1))], axis=1)
        weights = np.concatenate([pij, unserved[:, None]], axis=1)
        large = -logsumexp(exps, axis=1, b=weights)
    return np.where(x <= 0.5, small, large) / (theta_j * slot_duration)


def effective_capacities(table: FeasibleStateTable, p, beta, theta, slot_duration: float,
                         pi: np.ndarray | None = None) -> np.ndarray:
    """Effective capacity of every device, bits/s.

    ``p`` may be a single access vector (N,) or a batch (K, N); the result
    has the matching shape. ``pi`` lets callers pass precomputed state
    probabilities for the same ``p``.
    """
    P, single = _as_batch(p)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (table.num_devices,))
    pi = np.atleast_2d(table.probabilities(P, beta) if pi is None else pi)
    out = np.column_stack([_device_ec(pi, table, j, theta[j], slot_duration)
                           for j in range(table.num_devices)])
    return out[0] if single else out


def effective_capacity(j: int, table: FeasibleStateTable, p, beta, theta_j: float,
                       slot_duration: float) -> float:
    pi = np.atleast_2d(table.probabilities(p, beta))
    return float(_device_ec(pi, table, j, theta_j, slot_duration)[0])


def mean_service_rates(table: FeasibleStateTable, p, beta) -> np.ndarray:
    """Expected rate of each device, bits/s (the theta -> 0 capacity)."""
    return table.probabilities(p, beta) @ table.rates


def effective_bandwidth_poisson(arrival_rate, packet_length, theta, slot_duration: float):
    """Effective bandwidth of Poisson packet arrivals, bits/s.

    Per slot the arrivals are compound Poisson with log-MGF
    ``lambda * (e^{theta L} - 1)``. Returns +inf when ``theta L`` exceeds
    the overflow guard, making the QoS constraint unsatisfiable.
    """
    lam, L, th = np.broadcast_arrays(np.asarray(arrival_rate, dtype=float),
                                     np.asarray(packet_length, dtype=float),
                                     np.asarray(theta, dtype=float))
    out = np.empty(lam.shape)
    tiny = th < THETA_LIMIT
    silent = lam == 0
    over = (th * L > EB_OVERFLOW) & ~silent
    regular = ~tiny & ~over & ~silent
    out[tiny] = lam[tiny] * L[tiny] / slot_duration
    out[over] = np.inf
    out[regular] = lam[regular] * (np.expm1(th[regular] * L[regular]) / (th[regular] * slot_duration))
    out[silent] = 0.0
    return out if out.ndim else float(out)


def saturation_throughput(table: FeasibleStateTable, p, beta):
    """Expected aggregate decoded rate, bits/s; scalar for one ``p``, (K,) for a batch."""
    return table.probabilities(p, beta) @ table.rates.sum(axis=1)


def throughput_gradient(table: FeasibleStateTable, p, beta) -> np.ndarray:
    """Exact gradient of the saturation throughput with respect to ``p``.

    Uses leave-one-out products of the per-device state factors, built from
    prefix and suffix cumulative products so that zero factors are safe.
    """
    p = np.asarray(p, dtype=float)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), p.shape)
    q = p * beta
    factors = np.where(table.active, q, 1.0 - q)  # (S, N)
    ones = np.ones((table.num_states, 1))
    prefix = np.cumprod(np.hstack([ones, factors[:, :-1]]), axis=1)
    suffix = np.cumprod(np.hstack([ones, factors[:, :0:-1]]), axis=1)[:, ::-1]
    leave_one_out = prefix * suffix
    sum_rate = table.rates.sum(axis=1)
    sign = 2.0 * table.active - 1.0
    return beta * ((sign * leave_one_out).T @ sum_rate)


@dataclass(frozen=True)
class QosEvaluation:
    effective_capacity: np.ndarray
    effective_bandwidth: np.ndarray

    @property
    def slack(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = self.effective_bandwidth / self.effective_capacity
        return np.where(self.effective_bandwidth == 0, 0.0, ratio)

    @property
    def feasible(self) -> np.ndarray:
        return self.slack <= 1.0


@dataclass(frozen=True)
class ViolationBreakdown:
    qos: np.ndarray
    below_zero: np.ndarray
    above_one: np.ndarray

    @property
    def per_device(self) -> np.ndarray:
        return self.qos + self.below_zero + self.above_one

    @property
    def total(self) -> float:
        return math.fsum(self.per_device)


def evaluate_qos(table: FeasibleStateTable, p, beta, theta, arrival_rate, packet_length,
                 slot_duration: float) -> QosEvaluation:
    ec = effective_capacities(table, p, beta, theta, slot_duration)
    eb = effective_bandwidth_poisson(arrival_rate, packet_length, theta, slot_duration)
    return QosEvaluation(ec, np.broadcast_to(eb, ec.shape).copy())


def qos_violation(ec, eb) -> np.ndarray:
    """``max(0, EB/EC - 1)`` with the finite penalty for EC = 0 or EB = inf."""
    ec, eb = np.broadcast_arrays(np.asarray(ec, dtype=float), np.asarray(eb, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        excess = np.maximum(0.0, eb / ec - 1.0)
    excess = np.where(eb == 0, 0.0, excess)
    return np.where(np.isfinite(excess), np.minimum(excess, VIOLATION_PENALTY), VIOLATION_PENALTY)


def constraint_violation(p, qos: QosEvaluation) -> ViolationBreakdown:
    p = np.asarray(p, dtype=float)
    return ViolationBreakdown(
        qos=qos_violation(qos.effective_capacity, qos.effective_bandwidth),
        below_zero=np.maximum(0.0, -p),
        above_one=np.maximum(0.0, p - 1.0),
    )


def delay_violation_estimate(theta: float, rate: float, delay_bound: float) -> float:
    """Approximate probability that the steady-state delay exceeds ``delay_bound``."""
    return min(1.0, max(0.0, math.exp(-theta * rate * delay_bound)))
