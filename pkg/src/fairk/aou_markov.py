"""Markov-chain model of AoU-ranked entry positions under FAIR-k.

States are 1-based positions in the ascending-age ordering of the ``d``
gradient entries (stored 0-based). Position 1 stands for the whole
age-selected set, position ``k_a + 1`` for the whole magnitude-selected set
and positions ``k + 1 .. d`` for the unselected entries. Every round the
magnitude set swaps ``k_0`` uniformly chosen members with its complement,
which gives the per-entry probabilities ``p1 = k_0 / k_m`` (leave) and
``p2 = k_0 / (d - k_m)`` (enter).

The staleness law is the first-passage distribution into {1, k_a + 1}
started from the stationary distribution, evaluated with censored
vector-matrix products so that ``P`` is never densified.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import binom

from .errors import ModelConstructionError, SolverError, UnboundedStalenessError
from .selection import _age_fill


@dataclass(frozen=True)
class ExchangeModel:
    d: int
    k: int
    k_m: int
    k_0: int

    def __post_init__(self):
        problems = []
        if not 0 < self.k_m <= self.k <= self.d:
            problems.append(f"need 0 < k_m <= k <= d, got k_m={self.k_m}, k={self.k}, d={self.d}")
        if not 0 < self.k_0 < self.k_m:
            problems.append(f"need 0 < k_0 < k_m, got k_0={self.k_0}, k_m={self.k_m}")
        if self.k_0 >= self.d - self.k_m:
            problems.append(f"need k_0 < d - k_m so that p2 < 1, got k_0={self.k_0}")
        if problems:
            raise ModelConstructionError("; ".join(problems))

    @property
    def k_a(self) -> int:
        return self.k - self.k_m

    @property
    def p1(self) -> float:
        return self.k_0 / self.k_m

    @property
    def p2(self) -> float:
        return self.k_0 / (self.d - self.k_m)

    @property
    def max_staleness(self) -> int:
        if self.k_a < 1:
            raise UnboundedStalenessError("k_a = 0: ages of unselected entries grow without bound")
        return math.ceil((self.d - self.k_m) / self.k_a)

    def persistence_holds(self) -> bool:
        """True when a magnitude-selected entry is likelier to stay than an outsider to enter."""
        return 1.0 - self.p1 > self.p2

    def check_analytic(self) -> None:
        problems = []
        if 2 * self.k > self.d:
            problems.append(f"analytic model needs k <= d/2, got k={self.k}, d={self.d}")
        if self.k_a < 1:
            problems.append("analytic model needs k_a >= 1")
        if problems:
            raise ModelConstructionError("; ".join(problems))

    @classmethod
    def from_ratios(cls, d, rho, km_ratio, k0_ratio):
        k = int(round(rho * d))
        k_m = int(round(km_ratio * k))
        return cls(d=d, k=k, k_m=k_m, k_0=max(1, int(round(k0_ratio * k_m))))


@dataclass
class StalenessDistribution:
    q: np.ndarray
    tail_mass: float = 0.0
    samples: int = field(default=0)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)

    @property
    def support_max(self) -> int:
        return self.q.size - 1

    @property
    def mean(self) -> float:
        return expected_staleness(self)

    def padded(self, n: int) -> np.ndarray:
        out = np.zeros(max(n, self.q.size))
        out[: self.q.size] = self.q
        return out

    def total_variation(self, other: "StalenessDistribution") -> float:
        n = max(self.q.size, other.q.size)
        return 0.5 * float(np.abs(self.padded(n) - other.padded(n)).sum())


def expected_staleness(q) -> float:
    q = q.q if isinstance(q, StalenessDistribution) else np.asarray(q, dtype=float)
    return float(np.dot(np.arange(q.size), q))


def build_transition_matrix(m: ExchangeModel) -> sp.csr_matrix:
    """Row-stochastic sparse transition matrix over AoU-rank positions.

    For unselected positions the probability of being pushed back by
    ``k_a + l`` ranks follows a Binomial(d - i, p2) law on ``l``, truncated
    to moves that stay inside the chain and to ``l <= k_0``; the branch into
    the age-selected set collects the upper tail. The two branches are
    rescaled together to carry total mass ``1 - p2``.
    """
    m.check_analytic()
    d, k, k_a, k_0 = m.d, m.k, m.k_a, m.k_0
    p1, p2 = m.p1, m.p2
    A, M, U = 0, k_a, k  # 0-based indices of positions 1, k_a + 1, k + 1

    rows, cols, vals = [], [], []

    head = np.arange(k)
    age_rows = head[:k_a]
    mag_rows = head[k_a:]
    for r, c, v in (
        (age_rows, M, p2), (age_rows, U, 1.0 - p2),
        (mag_rows, M, 1.0 - p1), (mag_rows, U, p1),
    ):
        rows.append(r)
        cols.append(np.full(r.size, c))
        vals.append(np.full(r.size, v))

    tail = np.arange(k, d)            # 0-based rows for positions k+1..d
    n = d - (tail + 1)                # older entries behind position i
    rows.append(tail)
    cols.append(np.full(tail.size, M))
    vals.append(np.full(tail.size, p2))

    # shift branch: l in [0, min(k_0, n - k_a)], target i + k_a + l
    hi = np.minimum(k_0, n - k_a)
    ell = np.arange(k_0 + 1)
    feasible = ell[None, :] <= hi[:, None]
    r_idx, l_idx = np.nonzero(feasible)
    shift_p = binom.pmf(l_idx, n[r_idx], p2)
    shift_sum = np.bincount(r_idx, weights=shift_p, minlength=tail.size)
    # absorb branch: P(l >= n - k_a) for Binomial(n, p2)
    absorb = binom.sf(n - k_a - 1, n, p2)
    norm = shift_sum + absorb

    rows.append(tail[r_idx])
    cols.append(tail[r_idx] + k_a + l_idx)
    vals.append((1.0 - p2) * shift_p / norm[r_idx])
    rows.append(tail)
    cols.append(np.full(tail.size, A))
    vals.append((1.0 - p2) * absorb / norm)

    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(d, d)
    )
    P.sum_duplicates()
    return P


def steady_state(P, tol: float = 1e-12, max_iter: int = 1_000_000, method: str = "power") -> np.ndarray:
    """Stationary distribution ``pi = pi P`` of a row-stochastic matrix.

    ``method="power"`` iterates the lazy chain (P + I) / 2, which has the
    same fixed point but is aperiodic. ``method="direct"`` solves the
    linear system with one balance equation replaced by normalisation.
    """
    P = sp.csr_matrix(P)
    n = P.shape[0]
    PT = P.T.tocsr()
    if method == "direct":
        Aeq = (PT - sp.identity(n, format="csr")).tolil()
        Aeq[0, :] = 1.0
        b = np.zeros(n)
        b[0] = 1.0
        pi = spla.spsolve(Aeq.tocsc(), b)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        res = float(np.abs(PT @ pi - pi).sum())
        if res > max(tol, 1e-10):
            raise SolverError(f"direct solve residual {res:.3e} above tolerance", residual=res)
        return pi
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    pi = np.full(n, 1.0 / n)
    res = math.inf
    for it in range(1, max_iter + 1):
        nxt = PT @ pi
        res = float(np.abs(nxt - pi).sum())
        pi = 0.5 * (pi + nxt)
        if res <= tol:
            pi /= pi.sum()
            return pi
    raise SolverError(
        f"power iteration did not converge in {max_iter} iterations (residual {res:.3e})",
        residual=res, iterations=max_iter,
    )


def aou_distribution(P, pi, m: ExchangeModel) -> StalenessDistribution:
    """First-passage staleness law from the stationary distribution.

    ``q_l = sum_i pi_i [(Pc^l P)_{i,1} + (Pc^l P)_{i,k_a+1}]`` where ``Pc``
    is ``P`` with columns 1 and ``k_a + 1`` zeroed; ``Pc^0`` is the identity.
    """
    if m.k_a < 1:
        raise UnboundedStalenessError("k_a = 0: ages of unselected entries grow without bound")
    horizon = m.max_staleness
    P = sp.csr_matrix(P)
    PT = P.T.tocsr()
    keep = np.ones(P.shape[0])
    keep[[0, m.k_a]] = 0.0
    PcT = (P @ sp.diags(keep)).T.tocsr()

    v = np.asarray(pi, dtype=float).copy()
    q = np.empty(horizon + 1)
    for l in range(horizon + 1):
        hit = PT @ v
        q[l] = hit[0] + hit[m.k_a]
        v = PcT @ v
    return StalenessDistribution(q=q, tail_mass=float(v.sum()))


def analytic_staleness(m: ExchangeModel, tol: float = 1e-12, method: str = "power") -> StalenessDistribution:
    P = build_transition_matrix(m)
    return aou_distribution(P, steady_state(P, tol=tol, method=method), m)


def simulate_exchange_process(
    m: ExchangeModel, rounds: int, seed=None, burn_in: int | None = None
) -> StalenessDistribution:
    """Monte-Carlo histogram of entry ages under the random-exchange model.

    Tracks ``d`` labelled entries. Each round ``k_0`` uniformly chosen
    members of the magnitude set trade places with ``k_0`` uniformly chosen
    outsiders, then the ``k_a`` oldest outsiders are age-selected. After a
    burn-in of ``3 * T`` rounds (``T`` the maximum staleness, or 10 rounds
    if ``k_a = 0``) the age of every entry is recorded each round, so the
    histogram holds ``d * (rounds - burn_in)`` entry-round observations.
    """
    horizon = m.max_staleness
    if rounds < 10 * horizon:
        raise ValueError(f"rounds={rounds} below the required 10 * T = {10 * horizon}")
    if burn_in is None:
        burn_in = 3 * horizon
    rng = np.random.default_rng(seed)
    d = m.d
    in_mag = np.zeros(d, dtype=bool)
    in_mag[rng.choice(d, size=m.k_m, replace=False)] = True
    ages = np.zeros(d, dtype=np.int64)
    counts = np.zeros(d + 1, dtype=np.int64)
    for t in range(rounds):
        leave = rng.choice(np.flatnonzero(in_mag), size=m.k_0, replace=False)
        enter = rng.choice(np.flatnonzero(~in_mag), size=m.k_0, replace=False)
        in_mag[leave] = False
        in_mag[enter] = True
        sel = _age_fill(in_mag, ages, m.k_a)
        if t >= burn_in:
            counts += np.bincount(ages, minlength=d + 1)[: d + 1]
        ages = np.where(sel, 0, ages + 1)
    last = int(np.flatnonzero(counts).max()) if counts.any() else 0
    total = counts.sum()
    q = counts[: last + 1] / total
    return StalenessDistribution(q=q, samples=int(total))
