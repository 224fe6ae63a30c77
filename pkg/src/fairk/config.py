"""Experiment configuration: INI-style key/value file with sections.

Top-level keys live in ``[experiment]``; channel keys live in ``[channel]``
and analysis keys in ``[analysis]``. Example::

    [experiment]
    task = logistic
    dataset = digits
    num_clients = 50
    rounds = 500
    policy = fair_k
    rho = 0.1
    km_ratio = 0.75

    [channel]
    mode = analog
    fading = rayleigh
    mu_c = 1.0
    sigma_z2 = 1.0

Every field is validated in one pass; :class:`ConfigError` lists all the
problems found rather than the first.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .channel import ChannelMode, ChannelParams, FadingKind
from .errors import ConfigError
from .selection import PolicyConfig, PolicyKind
from .tasks import TaskKind

DATASETS = ("digits", "synthetic", "idx", "csv")
ROUND0_RULES = ("bootstrap", "top_init")
AGE_SOURCES = ("pre_update", "post_update")


@dataclass
class ChannelConfig:
    mode: str = "analog"
    fading: str = "rayleigh"
    mu_c: float = 1.0
    sigma_z2: float = 1.0
    p_flip: float = 0.0

    def params(self) -> ChannelParams:
        return ChannelParams(mu_c=self.mu_c, sigma_z2=self.sigma_z2, mode=self.mode,
                             fading=self.fading, p_flip=self.p_flip)


@dataclass
class AnalysisConfig:
    lipschitz_pairs: int = 2000
    radius: float = 1e-2
    lh_samples: int = 500
    spread: float = 0.1
    noise_samples: int = 20
    exact_constants: bool = False
    strict: bool = False


@dataclass
class ExperimentConfig:
    task: str = "logistic"
    hidden: int = 32
    dataset: str = "digits"
    n_samples: int = 2000
    num_features: int = 20
    num_classes: int = 10
    test_fraction: float = 0.2
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None

    num_clients: int = 50
    rounds: int = 200
    local_steps: int = 5
    batch_size: int = 50
    eta: float = 0.01
    eta_l: float = 0.01
    dir_alpha: float = 0.3

    policy: str = "fair_k"
    k: Optional[int] = None
    rho: float = 0.1
    k_m: Optional[int] = None
    km_ratio: float = 0.75
    k0: Optional[int] = None
    k0_ratio: float = 0.25

    round0: str = "bootstrap"
    selection_ages: str = "post_update"
    debias_by_mu_c: bool = False

    seed: int = 0
    out: str = "runs/default"
    metric_every: int = 1
    workers: int = 1

    channel: ChannelConfig = field(default_factory=ChannelConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def budget(self, d: int):
        """Resolve ``(k, k_m)`` for model dimension ``d``."""
        k = self.k if self.k is not None else max(1, int(round(self.rho * d)))
        k_m = self.k_m if self.k_m is not None else int(round(self.km_ratio * k))
        return k, k_m

    def policy_config(self, d: int) -> PolicyConfig:
        k, k_m = self.budget(d)
        return PolicyConfig(kind=self.policy, k=k, k_m=k_m, seed=self.seed)

    def exchange_k0(self, d: int) -> int:
        _, k_m = self.budget(d)
        return self.k0 if self.k0 is not None else max(1, int(round(self.k0_ratio * k_m)))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "ExperimentConfig":
        problems = []

        def check(cond, msg):
            if not cond:
                problems.append(msg)

        check(self.task in {t.value for t in TaskKind}, f"task: unknown task {self.task!r}")
        check(self.dataset in DATASETS, f"dataset: must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                check(getattr(self, key), f"{key}: required when dataset = idx")
        if self.dataset == "csv":
            check(self.train_csv, "train_csv: required when dataset = csv")
        if self.task == "quadratic":
            check(self.dataset == "synthetic", "dataset: quadratic task needs dataset = synthetic")
        for key in ("hidden", "n_samples", "num_features", "num_clients", "rounds",
                    "local_steps", "batch_size", "metric_every", "workers"):
            check(isinstance(getattr(self, key), int) and getattr(self, key) >= 1,
                  f"{key}: must be a positive integer, got {getattr(self, key)!r}")
        check(self.num_classes >= 2, f"num_classes: need at least 2, got {self.num_classes}")
        check(0.0 < self.test_fraction < 1.0, f"test_fraction: must lie in (0, 1), got {self.test_fraction}")
        for key in ("eta", "eta_l", "dir_alpha"):
            v = getattr(self, key)
            check(isinstance(v, (int, float)) and math.isfinite(v) and v > 0,
                  f"{key}: must be positive, got {v!r}")
        check(self.policy in {p.value for p in PolicyKind},
              f"policy: must be one of {[p.value for p in PolicyKind]}, got {self.policy!r}")
        if self.k is not None:
            check(self.k >= 1, f"k: must be positive, got {self.k}")
        else:
            check(0.0 < self.rho <= 1.0, f"rho: must lie in (0, 1], got {self.rho}")
        if self.k_m is not None:
            check(self.k_m >= 0 and (self.k is None or self.k_m <= self.k),
                  f"k_m: must lie in [0, k], got {self.k_m}")
        else:
            check(0.0 <= self.km_ratio <= 1.0, f"km_ratio: must lie in [0, 1], got {self.km_ratio}")
        if self.k0 is not None:
            check(self.k0 >= 1, f"k0: must be positive, got {self.k0}")
        check(0.0 < self.k0_ratio < 1.0, f"k0_ratio: must lie in (0, 1), got {self.k0_ratio}")
        check(self.round0 in ROUND0_RULES, f"round0: must be one of {ROUND0_RULES}, got {self.round0!r}")
        check(self.selection_ages in AGE_SOURCES,
              f"selection_ages: must be one of {AGE_SOURCES}, got {self.selection_ages!r}")

        ch = self.channel
        check(ch.mode in {m.value for m in ChannelMode}, f"channel.mode: unknown mode {ch.mode!r}")
        check(ch.fading in {f.value for f in FadingKind}, f"channel.fading: unknown fading {ch.fading!r}")
        check(isinstance(ch.mu_c, (int, float)) and ch.mu_c > 0, f"channel.mu_c: must be positive, got {ch.mu_c!r}")
        check(isinstance(ch.sigma_z2, (int, float)) and math.isfinite(ch.sigma_z2) and ch.sigma_z2 >= 0,
              f"channel.sigma_z2: must be finite and nonnegative, got {ch.sigma_z2!r}")
        check(0.0 <= ch.p_flip <= 0.5, f"channel.p_flip: must lie in [0, 0.5], got {ch.p_flip!r}")

        an = self.analysis
        check(an.lipschitz_pairs >= 100, f"analysis.lipschitz_pairs: need >= 100, got {an.lipschitz_pairs}")
        check(an.radius > 0, f"analysis.radius: must be positive, got {an.radius}")
        check(an.lh_samples >= 1, f"analysis.lh_samples: must be positive, got {an.lh_samples}")
        check(an.spread > 0, f"analysis.spread: must be positive, got {an.spread}")
        check(an.noise_samples >= 2, f"analysis.noise_samples: need >= 2, got {an.noise_samples}")
        if problems:
            raise ConfigError(problems)
        return self


_SECTIONS = {"experiment": ExperimentConfig, "channel": ChannelConfig, "analysis": AnalysisConfig}


def _coerce(raw: str, ftype: str, key: str, problems):
    raw = raw.strip()
    optional = ftype.startswith("Optional[")
    if optional and raw.lower() in ("", "none", "null"):
        return None
    base = ftype[9:-1] if optional else ftype
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        if base == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        problems.append(f"{key}: cannot parse {raw!r} as {base}")
        return None


def from_mapping(sections) -> ExperimentConfig:
    """Build and validate a config from ``{section: {key: str}}``."""
    problems = []
    built = {}
    for name, cls in _SECTIONS.items():
        values = dict(sections.get(name, {}))
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            qual = key if name == "experiment" else f"{name}.{key}"
            if key not in fields or key in ("channel", "analysis"):
                problems.append(f"{qual}: unknown key")
                continue
            val = _coerce(str(raw), str(fields[key].type), qual, problems)
            if val is not None or str(fields[key].type).startswith("Optional["):
                kwargs[key] = val
        built[name] = kwargs
    for name in sections:
        if name not in _SECTIONS:
            problems.append(f"[{name}]: unknown section")
    cfg = ExperimentConfig(**built["experiment"], channel=ChannelConfig(**built["channel"]),
                           analysis=AnalysisConfig(**built["analysis"]))
    try:
        cfg.validate()
    except ConfigError as err:
        problems.extend(err.problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return from_mapping({s: dict(parser[s]) for s in parser.sections()})


def dump_config(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    top = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)
           if f.name not in ("channel", "analysis")}
    parser["experiment"] = {k: "none" if v is None else str(v) for k, v in top.items()}
    parser["channel"] = {k: str(v) for k, v in dataclasses.asdict(cfg.channel).items()}
    parser["analysis"] = {k: str(v) for k, v in dataclasses.asdict(cfg.analysis).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
