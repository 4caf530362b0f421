"""
Ordered successive interference cancellation with ZF or MMSE nulling.

Each function works on the full M x N channel matrix plus the indices of
the devices that are active (transmitting and unblocked) in one access
state. SIC is ideal: a decoded layer is removed exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

RCOND_LIMIT = 1e-12


class FilterKind(str, Enum):
    ZF = "zf"
    MMSE = "mmse"


class NoiseNorm(str, Enum):
    """How the ZF post-filter noise power is formed.

    ``EUCLIDEAN`` uses sigma^2 * ||w||^2 (white noise). ``ONES`` uses
    sigma^2 * (w . 1)^2 and is kept for comparison against the printed
    closed form.
    """

    EUCLIDEAN = "euclidean"
    ONES = "ones"


class SingularChannelError(np.linalg.LinAlgError):
    def __init__(self, layer: int, devices, rcond: float):
        self.layer = layer
        self.devices = tuple(int(d) for d in devices)
        self.rcond = rcond
        super().__init__(
            f"residual channel at layer {layer} (devices {self.devices}) is rank deficient "
            f"(reciprocal condition {rcond:.3e} < {RCOND_LIMIT:g})")


@dataclass(frozen=True)
class LayerSinrs:
    order: tuple[int, ...]  # device indices, decoded first to last
    sinr: np.ndarray  # aligned with ``order``
    filter_kind: FilterKind

    def by_device(self, num_devices: int) -> np.ndarray:
        out = np.zeros(num_devices)
        out[list(self.order)] = self.sinr
        return out


def decode_order(H: np.ndarray, active) -> tuple[int, ...]:
    """Decoding order: descending channel-column norm, ties by device index.

    ``active`` is a 0/1 vector over all devices.
    """
    idx = np.flatnonzero(np.asarray(active, dtype=bool))
    if idx.size > H.shape[0]:
        raise ValueError(
            f"infeasible state: {idx.size} active devices exceed MPR capability {H.shape[0]}")
    norms = np.linalg.norm(H[:, idx], axis=0)
    # lexsort: last key is primary
    return tuple(int(i) for i in idx[np.lexsort((idx, -norms))])


def _check_rank(G: np.ndarray, layer: int, devices) -> None:
    if G.shape[0] == 1:
        rcond = 1.0 if G[0, 0] > 0 else 0.0
    else:
        with np.errstate(divide="ignore"):
            rcond = 1.0 / np.linalg.cond(G, 1)
    if not rcond >= RCOND_LIMIT:
        raise SingularChannelError(layer, devices, float(rcond))


def zf_sinr(H: np.ndarray, order, noise_var: float, responsivity: float, tx_power: float,
            noise_norm: NoiseNorm = NoiseNorm.EUCLIDEAN) -> LayerSinrs:
    """Per-layer SINR with zero-forcing nulling.

    At layer ``l`` the filter is the pseudo-inverse of the residual matrix
    ``[h_l, ..., h_last]``; its first row detects the current device and
    satisfies ``w h = 1``.
    """
    order = tuple(order)
    gain = (responsivity * tx_power) ** 2
    sinr = np.empty(len(order))
    for layer, dev in enumerate(order):
        Hr = H[:, list(order[layer:])]
        G = Hr.T @ Hr
        _check_rank(G, layer, order[layer:])
        W = np.linalg.solve(G, Hr.T)  # (H^T H)^-1 H^T
        w = W[0]
        if noise_norm is NoiseNorm.ONES:
            filt_noise = float(w.sum()) ** 2
        else:
            filt_noise = float(w @ w)
        signal = float(w @ H[:, dev]) ** 2
        sinr[layer] = gain * signal / (noise_var * filt_noise)
    return LayerSinrs(order, sinr, FilterKind.ZF)


def mmse_sinr(H: np.ndarray, order, noise_var: float, responsivity: float,
              tx_power: float) -> LayerSinrs:
    """Per-layer SINR with MMSE nulling against the not-yet-decoded devices."""
    if noise_var <= 0:
        raise ValueError(f"noise variance must be > 0, got {noise_var}")
    order = tuple(order)
    gain = (responsivity * tx_power) ** 2
    M = H.shape[0]
    sinr = np.empty(len(order))
    for layer, dev in enumerate(order):
        Hi = H[:, list(order[layer + 1:])]
        cov = gain * (Hi @ Hi.T) + noise_var * np.eye(M)
        h = H[:, dev]
        sinr[layer] = gain * float(h @ np.linalg.solve(cov, h))
    return LayerSinrs(order, sinr, FilterKind.MMSE)


def layer_sinrs(H: np.ndarray, active, noise_var: float, responsivity: float, tx_power: float,
                filter_kind: FilterKind = FilterKind.MMSE,
                noise_norm: NoiseNorm = NoiseNorm.EUCLIDEAN) -> LayerSinrs:
    order = decode_order(H, active)
    if FilterKind(filter_kind) is FilterKind.ZF:
        return zf_sinr(H, order, noise_var, responsivity, tx_power, NoiseNorm(noise_norm))
    return mmse_sinr(H, order, noise_var, responsivity, tx_power)


def layer_rates(sinr, bandwidth: float) -> np.ndarray:
    """Shannon rate in bits/s for each SINR value."""
    return bandwidth * np.log2(1.0 + np.asarray(sinr, dtype=float))
