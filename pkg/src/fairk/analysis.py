"""Empirical smoothness / heterogeneity constants and convergence-bound evaluation.

The Lipschitz-type estimators are sampled maxima of difference quotients,
so they are lower estimates of the true constants. Pairs are drawn in
short chains: a chain starts at a random point with a random unit
direction, and each subsequent direction is the normalised gradient
difference of the previous pair. For a quadratic this is power iteration
on the Hessian through finite-difference Hessian-vector products, which
lets the sampled maximum approach the top eigenvalue with a modest budget.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import AdmissibilityError
from .aou_markov import StalenessDistribution

GradFn = Callable[[np.ndarray], np.ndarray]


class FederatedObjective:
    """Global objective ``f = (1/N) sum_n f_n`` given per-client gradient oracles.

    ``client_stoch_grads`` (optional) return a mini-batch gradient given
    ``(w, rng)``; they are needed only for the noise and gradient-norm
    constants.
    """

    def __init__(self, client_grads: Sequence[GradFn], dim: int,
                 client_losses: Optional[Sequence[Callable]] = None,
                 client_stoch_grads: Optional[Sequence[Callable]] = None):
        self.client_grads = list(client_grads)
        self.dim = dim
        self.client_losses = client_losses
        self.client_stoch_grads = client_stoch_grads

    @property
    def num_clients(self) -> int:
        return len(self.client_grads)

    def grad(self, w) -> np.ndarray:
        acc = np.zeros(self.dim)
        for g in self.client_grads:
            acc += g(w)
        return acc / self.num_clients

    def loss(self, w) -> float:
        return float(np.mean([f(w) for f in self.client_losses]))

    @classmethod
    def from_task(cls, task, clients) -> "FederatedObjective":
        """Build from a :class:`~fairk.tasks.Task` and a list of ``ClientDataset``."""

        def full(c):
            return lambda w: task.grad(w, c.features, c.labels)

        def loss(c):
            return lambda w: task.loss(w, c.features, c.labels)

        def stoch(c):
            def g(w, rng):
                idx = rng.choice(len(c), size=c.batch_size, replace=False)
                return task.grad(w, c.features[idx], c.labels[idx])
            return g

        return cls([full(c) for c in clients], task.dim,
                   [loss(c) for c in clients], [stoch(c) for c in clients])


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def _start_points(rng, dim, n, center, scale):
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    return center + scale * rng.standard_normal((n, dim)) / math.sqrt(dim)


def _chain_ratios(grads: List[GradFn], num_pairs, radius, rng, center, scale, chain_length, steer=0):
    """Difference quotients along direction chains.

    Every pair is evaluated on every function in ``grads``; the chain is
    steered by the gradient difference of ``grads[steer]``. Returns an
    array of shape (num_pairs, len(grads)).
    """
    out = []
    n_chains = max(1, math.ceil(num_pairs / chain_length))
    for _ in range(n_chains):
        w = _start_points(rng, center.size, 1, center, scale)[0]
        u = _unit(rng.standard_normal(w.size))
        base = [g(w) for g in grads]
        for _ in range(chain_length):
            if len(out) == num_pairs:
                break
            v = w + radius * u
            diffs = [g(v) - b for g, b in zip(grads, base)]
            out.append([np.linalg.norm(dv) / radius for dv in diffs])
            nxt = _unit(diffs[steer])
            if not np.any(nxt):
                nxt = _unit(rng.standard_normal(w.size))
            u = nxt
    return np.asarray(out)


def estimate_Lg(obj: FederatedObjective, num_pairs: int = 1000, radius: float = 1e-3, seed=None,
                center=None, scale: float = 1.0, chain_length: int = 50) -> float:
    """Sampled lower estimate of the global gradient Lipschitz constant."""
    if num_pairs < 100:
        raise ValueError(f"need at least 100 pairs, got {num_pairs}")
    rng = np.random.default_rng(seed)
    center = np.zeros(obj.dim) if center is None else np.asarray(center, dtype=float)
    r = _chain_ratios([obj.grad], num_pairs, radius, rng, center, scale, chain_length)
    return float(r.max())


def estimate_Ltilde(obj: FederatedObjective, num_pairs: int = 1000, radius: float = 1e-3, seed=None,
                    center=None, scale: float = 1.0, chain_length: int = 50) -> float:
    """Sampled lower estimate of the common per-client Lipschitz constant.

    The pairs drawn by :func:`estimate_Lg` with the same arguments are
    re-evaluated on every client (so the result is never below that
    estimate), then each client gets its own chains of ``num_pairs`` pairs.
    """
    if num_pairs < 100:
        raise ValueError(f"need at least 100 pairs, got {num_pairs}")
    rng = np.random.default_rng(seed)
    center = np.zeros(obj.dim) if center is None else np.asarray(center, dtype=float)
    shared = _chain_ratios([obj.grad] + obj.client_grads, num_pairs, radius, rng, center, scale, chain_length)
    best = float(shared[:, 1:].max())
    for g in obj.client_grads:
        r = _chain_ratios([g], num_pairs, radius, rng, center, scale, chain_length)
        best = max(best, float(r.max()))
    return best


def _lh_ratio(obj, W):
    """Squared pseudo-Lipschitz quotient for the tuple of points ``W`` (N x d)."""
    wbar = W.mean(axis=0)
    avg = np.zeros(obj.dim)
    for g, w in zip(obj.client_grads, W):
        avg += g(w)
    avg /= obj.num_clients
    mismatch = avg - obj.grad(wbar)
    den = float(np.mean(np.sum((W - wbar) ** 2, axis=1)))
    return float(mismatch @ mismatch), den, mismatch


def estimate_Lh(obj: FederatedObjective, num_samples: int = 200, spread: float = 1e-2, seed=None,
                center=None, scale: float = 1.0, chain_length: int = 20, fd_radius: float = 1e-3) -> float:
    """Sampled lower estimate of the heterogeneity-driven pseudo-Lipschitz constant.

    Each tuple places client points ``w_n = c + spread * delta_n`` around a
    centre ``c``. After a random start, the deviation tuple is steered by a
    finite-difference step of power iteration on the operator mapping
    zero-mean deviations to the gradient mismatch; the square root of the
    largest sampled quotient is returned.
    """
    if obj.num_clients < 2:
        raise ValueError("the pseudo-Lipschitz constant needs at least two clients")
    rng = np.random.default_rng(seed)
    center = np.zeros(obj.dim) if center is None else np.asarray(center, dtype=float)
    N, dim = obj.num_clients, obj.dim
    best = 0.0
    done = 0
    while done < num_samples:
        c = _start_points(rng, dim, 1, center, scale)[0]
        delta = rng.standard_normal((N, dim))
        for _ in range(chain_length):
            if done == num_samples:
                break
            delta -= delta.mean(axis=0)
            norm = math.sqrt(float(np.mean(np.sum(delta ** 2, axis=1))))
            if norm == 0.0:
                break  # degenerate tuple: every w_n equal
            delta /= norm
            num, den, mismatch = _lh_ratio(obj, c + spread * delta)
            done += 1
            if den > 0:
                best = max(best, num / den)
            r = _unit(mismatch)
            if not np.any(r):
                break
            # adjoint direction: (H_n - H_bar) r for every client, by finite differences
            gbar0, gbar1 = obj.grad(c), obj.grad(c + fd_radius * r)
            step = np.array([(g(c + fd_radius * r) - g(c)) - (gbar1 - gbar0)
                             for g in obj.client_grads]) / fd_radius
            if not np.any(step):
                break
            delta = step
    return math.sqrt(best)


def _noise_stats(obj, rng, centers, samples):
    """Mini-batch variance, squared norm and divergence maxima over ``centers``."""
    s2 = g2 = div2 = 0.0
    for w in centers:
        full = [g(w) for g in obj.client_grads]
        gbar = np.mean(full, axis=0)
        for n, sg in enumerate(obj.client_stoch_grads):
            draws = np.array([sg(w, rng) for _ in range(samples)])
            s2 = max(s2, float(np.mean(np.sum((draws - full[n]) ** 2, axis=1))))
            g2 = max(g2, float(np.mean(np.sum(draws ** 2, axis=1))))
            div2 = max(div2, float(np.sum((full[n] - gbar) ** 2)))
    return s2, g2, div2


def estimate_noise_constants(obj: FederatedObjective, num_points: int = 5, samples: int = 20,
                             seed=None, center=None, scale: float = 1.0) -> Dict[str, float]:
    """Sampled SGD variance, stochastic-gradient second moment and gradient divergence.

    Each is the maximum over ``num_points`` perturbed models and all
    clients; expectations over mini-batches use ``samples`` draws.
    """
    rng = np.random.default_rng(seed)
    centers = _start_points(rng, obj.dim, num_points, center, scale)
    s2, g2, div2 = _noise_stats(obj, rng, centers, samples)
    return {"sigma_s2": s2, "G2": g2, "sigma_g2": div2}


# --- bounds ----------------------------------------------------------------

@dataclass
class ConvergenceConstants:
    L_g: float
    L_h: float
    sigma_s2: float
    sigma_g2: float
    G2: float
    mu_c: float
    sigma_c2: float
    sigma_z2: float
    d: int
    N: int
    H: int
    eta: float
    eta_l: float
    E_tau: float
    f_gap: float
    T_rounds: float = math.inf
    L_tilde: float = math.nan

    def __post_init__(self):
        bad = [k for k, v in asdict(self).items()
               if isinstance(v, (int, float)) and not math.isnan(v) and v < 0]
        if bad:
            raise ValueError(f"constants must be nonnegative: {', '.join(bad)}")

    def admissibility_violations(self) -> List[str]:
        out = []
        m2 = self.mu_c ** 2 + self.sigma_c2
        eta_max = self.mu_c / (2 * self.H * self.L_g * m2) if self.L_g > 0 else math.inf
        if self.eta > eta_max:
            out.append(f"eta={self.eta:g} exceeds mu_c/(2 H L_g (mu_c^2+sigma_c^2))={eta_max:g}")
        cap1 = 1.0 / (2 * math.sqrt(30) * self.H * self.L_g) if self.L_g > 0 else math.inf
        lsum = self.L_g ** 2 + self.L_h ** 2
        cap2 = 1.0 / math.sqrt(6 * self.H * lsum) if lsum > 0 else math.inf
        if self.eta_l > cap1:
            out.append(f"eta_l={self.eta_l:g} exceeds 1/(2 sqrt(30) H L_g)={cap1:g}")
        if self.eta_l > cap2:
            out.append(f"eta_l={self.eta_l:g} exceeds 1/sqrt(6 H (L_g^2+L_h^2))={cap2:g}")
        return out


@dataclass
class BoundResult:
    value: float
    terms: Dict[str, float]
    asymptotic: float
    asymptotic_terms: Dict[str, float]


def _optimisation_term(c, const):
    if math.isinf(c.T_rounds):
        return 0.0
    return const * c.f_gap / (c.eta * c.mu_c * c.H * c.T_rounds)


def theorem1_bound(c: ConvergenceConstants, exact_constants: bool = False, strict: bool = False) -> BoundResult:
    """Evaluate the stationarity bound for FAIR-k over-the-air training.

    With ``exact_constants=False`` each of the six terms carries a unit
    constant; otherwise the constants from the telescoped inequality
    (before the O-notation) are used. ``strict`` checks the step-size
    conditions first and raises :class:`AdmissibilityError` on violation.
    The large-``N`` form is returned alongside.
    """
    if strict:
        bad = c.admissibility_violations()
        if bad:
            raise AdmissibilityError(bad)
    m2 = c.mu_c ** 2 + c.sigma_c2
    Hm1 = c.H - 1
    noise = c.d * c.sigma_z2 / c.N ** 2
    if exact_constants:
        terms = {
            "optimization": _optimisation_term(c, 4.0),
            "channel_noise": 2.0 * c.eta * c.L_g * noise / (c.mu_c * c.H),
            "sgd_noise": 4.0 * c.eta * c.L_g * c.sigma_s2 * m2 / (c.mu_c * c.N),
            "local_drift_heterogeneity": 72.0 * Hm1 ** 2 * c.eta_l ** 2 * c.L_h ** 2 * c.sigma_g2,
            "local_drift_sgd": Hm1 * c.eta_l ** 2 * c.sigma_s2 * (24.0 * c.L_h ** 2 + 20.0 * c.L_g ** 2 / c.N),
            "staleness": 4.0 * c.eta * c.L_g * c.E_tau / c.H
                         * (0.5 * noise + c.G2 * c.H ** 2 * (0.5 + m2)),
        }
    else:
        terms = {
            "optimization": _optimisation_term(c, 1.0),
            "channel_noise": c.eta * c.L_g * noise / (c.mu_c * c.H),
            "sgd_noise": c.eta * c.L_g * c.sigma_s2 * m2 / (c.mu_c * c.N),
            "local_drift_heterogeneity": Hm1 ** 2 * c.eta_l ** 2 * c.L_h ** 2 * c.sigma_g2,
            "local_drift_sgd": Hm1 * c.eta_l ** 2 * c.sigma_s2 * (c.L_h ** 2 + c.L_g ** 2 / c.N),
            "staleness": c.eta * c.L_g * c.E_tau / c.H * (noise + c.G2 * c.H ** 2 * (1.0 + m2)),
        }
    asym = {
        "optimization": _optimisation_term(c, 1.0),
        "local_drift": c.eta_l ** 2 * Hm1 ** 2 * c.L_h ** 2 * (c.sigma_g2 + c.sigma_s2),
        "staleness": c.eta * c.H * c.L_g * c.E_tau * c.G2 * (1.0 + m2),
    }
    return BoundResult(value=math.fsum(terms.values()), terms=terms,
                       asymptotic=math.fsum(asym.values()), asymptotic_terms=asym)


def lemma2_bound(c: ConvergenceConstants, norm_estimates, q) -> float:
    """Upper bound on E||g_t||^2 of the reconstructed gradient.

    ``norm_estimates[l]`` estimates the squared norm of the client-averaged
    accumulated full gradient computed ``l`` rounds ago; a scalar is
    broadcast to every lag.
    """
    q = q.q if isinstance(q, StalenessDistribution) else np.asarray(q, dtype=float)
    est = np.broadcast_to(np.asarray(norm_estimates, dtype=float), q.shape) \
        if np.ndim(norm_estimates) == 0 else np.asarray(norm_estimates, dtype=float)[: q.size]
    if est.size < q.size:
        raise ValueError(f"need {q.size} lagged norm estimates, got {est.size}")
    m2 = c.mu_c ** 2 + c.sigma_c2
    return float(2 * m2 * np.dot(q, est) + 2 * c.H * c.sigma_s2 * m2 / c.N + c.d * c.sigma_z2 / c.N ** 2)


def min_loss(obj: FederatedObjective, w0, max_iter: int = 500) -> float:
    """Numerical minimum of the global loss, used for the optimality gap."""
    from scipy.optimize import minimize

    res = minimize(lambda w: (obj.loss(w), obj.grad(w)), np.asarray(w0, dtype=float),
                   jac=True, method="L-BFGS-B", options={"maxiter": max_iter})
    return float(min(res.fun, obj.loss(w0)))
