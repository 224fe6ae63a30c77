"""Gradient-entry selection policies and Age-of-Update bookkeeping.

All masks are dense boolean vectors of length ``d``. Ties, whether in
magnitude or in age, always go to the lowest index so that every policy
except TopRand is a deterministic function of its inputs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidBudgetError


class PolicyKind(str, enum.Enum):
    FAIR_K = "fair_k"
    TOP_K = "top_k"
    ROUND_ROBIN = "round_robin"
    TOP_RAND = "top_rand"


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind
    k: int
    k_m: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.k < 1:
            raise InvalidBudgetError(f"k must be positive, got {self.k}")
        if not 0 <= self.k_m <= self.k:
            raise InvalidBudgetError(f"k_m must lie in [0, k={self.k}], got {self.k_m}")

    @property
    def k_a(self) -> int:
        return self.k - self.k_m

    def validate_dim(self, d: int) -> None:
        if self.k > d:
            raise InvalidBudgetError(f"budget k={self.k} exceeds model dimension d={d}")


def _top_indices(score: np.ndarray, k: int, exclude: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices of the ``k`` largest ``score`` values, lowest index first on ties."""
    if exclude is None:
        candidates = np.arange(score.size)
    else:
        candidates = np.flatnonzero(~exclude)
    if k > candidates.size:
        raise InvalidBudgetError(f"cannot pick {k} entries from {candidates.size} candidates")
    if k == 0:
        return candidates[:0]
    order = np.argsort(-score[candidates], kind="stable")
    return candidates[order[:k]]


def top_mask(x, k: int) -> np.ndarray:
    """Mask of the ``k`` entries of largest magnitude in ``x``.

    >>> top_mask([5, -7, 1, 2, -1, 3], 2).astype(int).tolist()
    [1, 1, 0, 0, 0, 0]
    """
    x = np.asarray(x, dtype=float)
    if not 0 <= k <= x.size:
        raise InvalidBudgetError(f"budget k={k} outside [0, {x.size}]")
    mask = np.zeros(x.size, dtype=bool)
    mask[_top_indices(np.abs(x), k)] = True
    return mask


def _age_fill(mask: np.ndarray, ages: np.ndarray, k_a: int) -> np.ndarray:
    # A ∘ (1 - v) would zero the excluded ages and let them compete on ties,
    # so excluded entries are removed from the candidate set instead.
    out = mask.copy()
    out[_top_indices(ages.astype(float), k_a, exclude=mask)] = True
    return out


def fair_k(g, ages, cfg: PolicyConfig) -> np.ndarray:
    """Two-stage selection: ``k_m`` entries by magnitude, then ``k_a`` by age.

    Parameters
    ----------
    g : array_like
        Current global gradient estimate, length ``d``.
    ages : array_like
        Age-of-Update vector, length ``d``.
    cfg : PolicyConfig
        Budget ``k`` and magnitude share ``k_m``.

    Returns
    -------
    numpy.ndarray of bool
        Mask with exactly ``cfg.k`` set entries.
    """
    g = np.asarray(g, dtype=float)
    ages = np.asarray(ages)
    if g.shape != ages.shape:
        raise ValueError(f"gradient and AoU lengths differ: {g.shape} vs {ages.shape}")
    cfg.validate_dim(g.size)
    return _age_fill(top_mask(g, cfg.k_m), ages, cfg.k_a)


def round_robin(ages, k: int) -> np.ndarray:
    ages = np.asarray(ages)
    if not 0 <= k <= ages.size:
        raise InvalidBudgetError(f"budget k={k} outside [0, {ages.size}]")
    return _age_fill(np.zeros(ages.size, dtype=bool), ages, k)


def top_rand(g, cfg: PolicyConfig, rng: np.random.Generator) -> np.ndarray:
    """Top-``k_m`` by magnitude plus ``k_a`` entries drawn uniformly from the rest."""
    g = np.asarray(g, dtype=float)
    cfg.validate_dim(g.size)
    mask = top_mask(g, cfg.k_m)
    if cfg.k_a:
        rest = np.flatnonzero(~mask)
        mask[rng.choice(rest, size=cfg.k_a, replace=False)] = True
    return mask


def select(cfg: PolicyConfig, g, ages, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Dispatch to the policy named by ``cfg.kind``."""
    if cfg.kind is PolicyKind.FAIR_K:
        return fair_k(g, ages, cfg)
    if cfg.kind is PolicyKind.TOP_K:
        cfg.validate_dim(np.size(g))
        return top_mask(g, cfg.k)
    if cfg.kind is PolicyKind.ROUND_ROBIN:
        cfg.validate_dim(np.size(ages))
        return round_robin(ages, cfg.k)
    if cfg.kind is PolicyKind.TOP_RAND:
        if rng is None:
            raise ValueError("top_rand needs a caller-supplied random generator")
        return top_rand(g, cfg, rng)
    raise ValueError(f"unknown policy {cfg.kind!r}")


def aou_update(ages, mask) -> np.ndarray:
    """Advance the age vector by one round: refreshed entries reset to 0."""
    ages = np.asarray(ages)
    mask = np.asarray(mask, dtype=bool)
    if ages.shape != mask.shape:
        raise ValueError(f"AoU and mask lengths differ: {ages.shape} vs {mask.shape}")
    return np.where(mask, 0, ages + 1).astype(np.int64)


def staleness_cap(d: int, k_m: int, k_a: int) -> int:
    """Largest age FAIR-k can produce once warmed up, ceil((d - k_m) / k_a)."""
    if k_a < 1:
        raise InvalidBudgetError("staleness is unbounded when k_a = 0")
    return math.ceil((d - k_m) / k_a)
