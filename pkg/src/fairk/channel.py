"""Analog multiple-access uplink: fading, superposition, noise, reconstruction."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AggregationError

RAYLEIGH_VAR_FACTOR = 4.0 / math.pi - 1.0  # var / mean^2 of a Rayleigh amplitude


class ChannelMode(str, enum.Enum):
    ANALOG = "analog"
    ONE_BIT_MV = "one_bit_mv"
    NOISELESS = "noiseless"


class FadingKind(str, enum.Enum):
    RAYLEIGH = "rayleigh"
    UNIT = "unit"


@dataclass(frozen=True)
class ChannelParams:
    """Uplink parameters.

    ``sigma_c2`` is implied by the fading law: zero for unit gain and
    ``mu_c**2 * (4/pi - 1)`` for a Rayleigh envelope with mean ``mu_c``.
    """

    mu_c: float = 1.0
    sigma_z2: float = 1.0
    mode: ChannelMode = ChannelMode.ANALOG
    fading: FadingKind = FadingKind.RAYLEIGH
    p_flip: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", ChannelMode(self.mode))
        object.__setattr__(self, "fading", FadingKind(self.fading))
        if not self.mu_c > 0:
            raise ValueError(f"mu_c must be positive, got {self.mu_c}")
        if not (self.sigma_z2 >= 0 and math.isfinite(self.sigma_z2)):
            raise ValueError(f"sigma_z2 must be finite and nonnegative, got {self.sigma_z2}")
        if not 0.0 <= self.p_flip <= 0.5:
            raise ValueError(f"p_flip must lie in [0, 0.5], got {self.p_flip}")

    @property
    def sigma_c2(self) -> float:
        if self.fading is FadingKind.UNIT:
            return 0.0
        return self.mu_c ** 2 * RAYLEIGH_VAR_FACTOR

    @property
    def second_moment(self) -> float:
        """E[h^2] = mu_c^2 + sigma_c^2."""
        return self.mu_c ** 2 + self.sigma_c2


def sample_fading(params: ChannelParams, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one client")
    if params.fading is FadingKind.UNIT:
        return np.full(n, params.mu_c)
    return rng.rayleigh(scale=params.mu_c / math.sqrt(math.pi / 2.0), size=n)


def _stack(payloads: Sequence) -> np.ndarray:
    try:
        arr = np.asarray([np.asarray(p, dtype=float) for p in payloads])
    except ValueError as exc:  # ragged
        raise AggregationError(f"payload lengths differ: {exc}") from None
    if arr.ndim != 2:
        raise AggregationError("payloads must be a non-empty list of equal-length vectors")
    return arr


def oac_aggregate(payloads, h, params: ChannelParams, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Fading-weighted superposition plus receiver noise, divided by ``N``.

    Client contributions are accumulated in ascending client order so the
    floating-point result does not depend on how clients were scheduled.
    """
    arr = _stack(payloads)
    h = np.asarray(h, dtype=float)
    n_clients, k = arr.shape
    if h.shape != (n_clients,):
        raise AggregationError(f"got {h.size} gains for {n_clients} payloads")
    acc = np.zeros(k)
    for n in range(n_clients):
        acc += h[n] * arr[n]
    if params.mode is ChannelMode.ANALOG and params.sigma_z2 > 0:
        if rng is None:
            raise ValueError("noisy aggregation needs a random generator")
        acc += rng.normal(0.0, math.sqrt(params.sigma_z2), size=k)
    return acc / n_clients


def one_bit_mv_aggregate(payloads, params: ChannelParams, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Per-entry majority vote over client signs; ties and zeros count as +1."""
    arr = _stack(payloads)
    votes = np.where(arr >= 0, 1, -1).sum(axis=0)
    out = np.where(votes >= 0, 1.0, -1.0)
    if params.p_flip > 0:
        if rng is None:
            raise ValueError("sign flips need a random generator")
        out[rng.random(out.size) < params.p_flip] *= -1.0
    return out


def aggregate(payloads, params: ChannelParams, rng: np.random.Generator) -> np.ndarray:
    """Run one uplink slot: draw fading for every client and combine payloads."""
    arr = _stack(payloads)
    if params.mode is ChannelMode.ONE_BIT_MV:
        return one_bit_mv_aggregate(arr, params, rng)
    h = sample_fading(params, arr.shape[0], rng)
    return oac_aggregate(arr, h, params, rng)


def reconstruct(prev_g, mask, agg) -> np.ndarray:
    """Splice the aggregated entries into the previous global gradient."""
    prev_g = np.asarray(prev_g, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    agg = np.asarray(agg, dtype=float)
    idx = np.flatnonzero(mask)
    if idx.size != agg.size:
        raise AggregationError(f"mask selects {idx.size} entries but {agg.size} values were received")
    out = prev_g.copy()
    out[idx] = agg
    return out
