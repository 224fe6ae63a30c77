"""Federated training loop over the simulated over-the-air uplink.

One round, in order: broadcast ``(w_t, S_t)``; every client runs ``H``
local SGD steps and returns its accumulated gradient; the entries picked
by ``S_t`` are superposed over the channel; the server splices them into
the previous global gradient, takes a global step, advances the AoU and
chooses ``S_{t+1}``.

Randomness comes from one master seed split with
:class:`numpy.random.SeedSequence` into fixed streams (data, partition,
initialisation, channel, policy, one per client), so results do not
depend on how client updates are scheduled across worker threads.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np

from . import channel as ch
from .config import ExperimentConfig
from .data import (ClientDataset, Dataset, MiniBatchSampler, dirichlet_partition, load_csv,
                   load_digits_split, load_idx_pair, make_synthetic_classification,
                   make_synthetic_regression, train_test_split)
from .errors import DivergenceError
from .selection import PolicyKind, aou_update, select, top_mask
from .tasks import Task, make_task

# master-seed stream layout; append only, never reorder
_STREAMS = ("data", "partition", "init", "channel", "policy", "clients")


def seed_streams(seed: int, num_clients: int):
    """Named generators derived from the master seed, plus one per client."""
    root = np.random.SeedSequence(seed)
    children = dict(zip(_STREAMS, root.spawn(len(_STREAMS))))
    client_seqs = children.pop("clients").spawn(num_clients)
    gens = {name: np.random.default_rng(s) for name, s in children.items()}
    return gens, [np.random.default_rng(s) for s in client_seqs]


def local_update(task: Task, w0, data: ClientDataset, H: int, eta_l: float,
                 sampler: MiniBatchSampler, return_path: bool = False):
    """Run ``H`` local SGD steps from ``w0`` and return the summed gradients.

    With ``return_path`` the iterates ``w^(0) .. w^(H)`` are returned too.
    """
    if H < 1:
        raise ValueError(f"need at least one local step, got H={H}")
    if not eta_l > 0:
        raise ValueError(f"local learning rate must be positive, got {eta_l}")
    w = np.array(w0, dtype=float)
    acc = np.zeros_like(w)
    path = [w.copy()] if return_path else None
    for s in range(H):
        idx = sampler.next()
        loss, g = task.loss_grad(w, data.features[idx], data.labels[idx])
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            raise DivergenceError(f"non-finite loss or gradient at local step {s}")
        acc += g
        w = w - eta_l * g
        if return_path:
            path.append(w.copy())
    return (acc, path) if return_path else acc


def global_step(w, g, eta: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    g = np.asarray(g, dtype=float)
    if w.shape != g.shape:
        raise ValueError(f"model and gradient shapes differ: {w.shape} vs {g.shape}")
    if not eta > 0:
        raise ValueError(f"global learning rate must be positive, got {eta}")
    return w - eta * g


def evaluate(task: Task, w, test: Dataset):
    return task.evaluate(w, test.X, test.y)


@dataclass
class RoundMetrics:
    round: int
    policy: str
    train_loss: float
    test_loss: float
    test_accuracy: float
    avg_aou: float
    max_aou: int
    grad_sq_norm: float
    participation: List[int] = field(default_factory=list)
    wall_time: float = 0.0

    def record(self) -> dict:
        """JSON-ready dict. Wall time is left out so metric files are reproducible."""
        out = {}
        for key in ("round", "policy", "train_loss", "test_loss", "test_accuracy",
                    "avg_aou", "max_aou", "grad_sq_norm", "participation"):
            v = getattr(self, key)
            out[key] = None if isinstance(v, float) and not math.isfinite(v) else v
        return out

    @classmethod
    def from_record(cls, rec: dict) -> "RoundMetrics":
        rec = dict(rec)
        for key in ("train_loss", "test_loss", "test_accuracy"):
            if rec.get(key) is None:
                rec[key] = math.nan
        return cls(**rec)


def load_data(cfg: ExperimentConfig, rng: np.random.Generator):
    seed = int(rng.integers(2 ** 32))
    if cfg.dataset == "digits":
        return load_digits_split(cfg.test_fraction, seed)
    if cfg.dataset == "synthetic":
        if cfg.task == "quadratic":
            full = make_synthetic_regression(cfg.n_samples, cfg.num_features, cfg.num_classes, seed=seed)
        else:
            full = make_synthetic_classification(cfg.n_samples, cfg.num_features, cfg.num_classes, seed=seed)
        return train_test_split(full, cfg.test_fraction, seed)
    if cfg.dataset == "idx":
        return (load_idx_pair(cfg.train_images, cfg.train_labels),
                load_idx_pair(cfg.test_images, cfg.test_labels))
    train = load_csv(cfg.train_csv, classification=cfg.task != "quadratic")
    if cfg.test_csv:
        return train, load_csv(cfg.test_csv, classification=cfg.task != "quadratic")
    return train_test_split(train, cfg.test_fraction, seed)


class Trainer:
    """Server state plus clients for one run; :meth:`step` executes one round."""

    def __init__(self, cfg: ExperimentConfig, train: Optional[Dataset] = None,
                 test: Optional[Dataset] = None, trace_paths: bool = False):
        cfg.validate()
        self.cfg = cfg
        gens, client_rngs = seed_streams(cfg.seed, cfg.num_clients)
        if train is None:
            train, test = load_data(cfg, gens["data"])
        self.train, self.test = train, test
        num_classes = int(train.y.max()) + 1 if cfg.task != "quadratic" else cfg.num_classes
        self.task = make_task(cfg.task, train.X.shape[1], num_classes, cfg.hidden)
        self.d = self.task.dim

        parts = dirichlet_partition(train.groups, cfg.num_clients, cfg.dir_alpha, gens["partition"])
        self.clients = [ClientDataset(train.X[p], train.y[p], cfg.batch_size) for p in parts]
        self.samplers = [MiniBatchSampler(len(c), c.batch_size, r)
                         for c, r in zip(self.clients, client_rngs)]

        self.policy = cfg.policy_config(self.d)
        self.policy.validate_dim(self.d)
        self.channel = cfg.channel.params()
        self.channel_rng = gens["channel"]
        self.policy_rng = gens["policy"]
        self.trace_paths = trace_paths

        self.w = self.task.init_params(gens["init"])
        self.g = np.zeros(self.d)
        self.ages = np.zeros(self.d, dtype=np.int64)
        if cfg.round0 == "bootstrap" or self.policy.k == self.d:
            self.mask = np.ones(self.d, dtype=bool)
        else:
            self.mask = top_mask(gens["init"].standard_normal(self.d), self.policy.k)
        self.participation = np.zeros(self.d, dtype=np.int64)
        self.t = 0
        self.last_client_grads: Optional[np.ndarray] = None
        self.last_paths = None
        self._pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def global_loss(self, w=None) -> float:
        """f(w) = (1/N) sum_n f_n(w)."""
        w = self.w if w is None else w
        return float(np.mean([self.task.loss(w, c.features, c.labels) for c in self.clients]))

    def _client_updates(self):
        cfg = self.cfg

        def run(n):
            try:
                return local_update(self.task, self.w, self.clients[n], cfg.local_steps, cfg.eta_l,
                                    self.samplers[n], return_path=self.trace_paths)
            except DivergenceError as err:
                raise DivergenceError(f"round {self.t}, client {n}: {err}",
                                      round_index=self.t, client=n) from None

        ids = range(len(self.clients))
        results = list(self._pool.map(run, ids)) if self._pool else [run(n) for n in ids]
        if self.trace_paths:
            self.last_paths = [r[1] for r in results]
            results = [r[0] for r in results]
        return np.asarray(results)

    def _uplink(self, grads: np.ndarray) -> np.ndarray:
        idx = np.flatnonzero(self.mask)
        k = self.policy.k
        # A mask wider than the budget (the all-ones bootstrap) is sent over ceil(|S| / k) slots.
        chunks = [idx[i:i + k] for i in range(0, idx.size, k)]
        agg = np.concatenate([ch.aggregate(grads[:, c], self.channel, self.channel_rng) for c in chunks])
        if self.cfg.debias_by_mu_c and self.channel.mode is not ch.ChannelMode.ONE_BIT_MV:
            agg = agg / self.channel.mu_c
        return agg

    def step(self) -> RoundMetrics:
        start = time.perf_counter()
        mask = self.mask
        grads = self._client_updates()
        self.last_client_grads = grads
        agg = self._uplink(grads)
        self.g = ch.reconstruct(self.g, mask, agg)
        self.w = global_step(self.w, self.g, self.cfg.eta)
        ages_before = self.ages
        self.ages = aou_update(self.ages, mask)
        if mask.sum() == self.policy.k:
            self.participation += mask
        ages_for_selection = ages_before if self.cfg.selection_ages == "pre_update" else self.ages
        self.mask = select(self.policy, self.g, ages_for_selection, self.policy_rng)

        train_loss = self.global_loss()
        if not math.isfinite(train_loss):
            raise DivergenceError(f"round {self.t}: training loss is not finite", round_index=self.t)
        test_loss, test_acc = evaluate(self.task, self.w, self.test) if self.test is not None else (math.nan, math.nan)
        metrics = RoundMetrics(
            round=self.t, policy=self.policy.kind.value, train_loss=train_loss,
            test_loss=test_loss, test_accuracy=test_acc,
            avg_aou=float(self.ages.mean()), max_aou=int(self.ages.max()),
            grad_sq_norm=float(self.g @ self.g),
            participation=self.participation.tolist(),
            wall_time=time.perf_counter() - start,
        )
        self.t += 1
        return metrics


def run_experiment(cfg: ExperimentConfig, **trainer_kwargs) -> Iterator[RoundMetrics]:
    """Yield :class:`RoundMetrics` every ``metric_every`` rounds (and for the last round).

    The finished :class:`Trainer` is the generator's return value.
    """
    trainer = Trainer(cfg, **trainer_kwargs)
    try:
        for t in range(cfg.rounds):
            m = trainer.step()
            if t % cfg.metric_every == 0 or t == cfg.rounds - 1:
                yield m
    finally:
        trainer.close()
    return trainer
