"""Command-line entry point: ``fairk {run,compare,aou-dist,estimate-lipschitz,bound}``.

Every subcommand accepts ``--config PATH`` (INI file, defaults used when
omitted) and the overrides ``--seed``, ``--out``, ``--policy`` and
``--rounds``. Errors exit nonzero with a one-line ``error:`` prefix;
configuration errors list every offending key.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import List, Optional

from . import analysis as an
from .aou_markov import ExchangeModel, analytic_staleness, simulate_exchange_process
from .config import ExperimentConfig, dump_config, load_config
from .errors import ConfigError, FairKError
from .metrics import persist_metrics, summarize, write_summary
from .selection import PolicyKind
from .tasks import make_task
from .training import Trainer, load_data, run_experiment, seed_streams

COMPARE_FIELDS = ("round", "policy", "train_loss", "test_loss", "test_accuracy", "avg_aou", "max_aou",
                  "grad_sq_norm")


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.policy is not None:
        overrides["policy"] = args.policy
    if args.rounds is not None:
        overrides["rounds"] = args.rounds
    return cfg.replace(**overrides).validate()


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    return out


def _model_dim(cfg: ExperimentConfig) -> int:
    gens, _ = seed_streams(cfg.seed, 1)
    train, _ = load_data(cfg, gens["data"])
    num_classes = int(train.y.max()) + 1 if cfg.task != "quadratic" else cfg.num_classes
    return make_task(cfg.task, train.X.shape[1], num_classes, cfg.hidden).dim


def _clean(v):
    """Strict-JSON view of ``v``: non-finite floats become null, numpy scalars become Python ones."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n")


# --- subcommands -----------------------------------------------------------------

def cmd_run(cfg: ExperimentConfig, args) -> int:
    out = _prepare_out(cfg)
    rows = persist_metrics(run_experiment(cfg), out, policy=cfg.policy)
    last = rows[-1]
    print(f"{cfg.policy}: {last.round + 1} rounds, train_loss={last.train_loss:.6g}, "
          f"test_accuracy={last.test_accuracy:.4f}, avg_aou={last.avg_aou:.3f} -> {out}")
    return 0


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    """Matched-seed runs, one per policy; same data, partition and channel streams."""
    out = _prepare_out(cfg)
    summaries = []
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_FIELDS, extrasaction="ignore")
        w.writeheader()
        for policy in args.policies:
            arm = cfg.replace(policy=policy, out=str(out / policy))
            rows = persist_metrics(run_experiment(arm), arm.out, policy=policy)
            for m in rows:
                w.writerow(m.record())
            summaries.append(summarize(rows, "completed", sum(m.wall_time for m in rows)))
            print(f"{policy}: final test_accuracy={rows[-1].test_accuracy:.4f}, "
                  f"mean avg_aou={summaries[-1]['mean_avg_aou']:.3f}")
    write_summary(out / "summary.csv", summaries)
    return 0


def _exchange_model(cfg: ExperimentConfig, args) -> ExchangeModel:
    d = args.d if args.d is not None else _model_dim(cfg)
    k, k_m = cfg.budget(d)
    k = args.k if args.k is not None else k
    k_m = args.k_m if args.k_m is not None else k_m
    k0 = args.k0 if args.k0 is not None else (
        cfg.k0 if cfg.k0 is not None else max(1, int(round(cfg.k0_ratio * k_m))))
    return ExchangeModel(d=d, k=k, k_m=k_m, k_0=k0)


def cmd_aou_dist(cfg: ExperimentConfig, args) -> int:
    m = _exchange_model(cfg, args)
    q = analytic_staleness(m)
    cap = m.max_staleness
    rounds = args.sim_rounds or max(10 * cap, math.ceil(1_000_000 / m.d) + 3 * cap)
    emp = simulate_exchange_process(m, rounds=rounds, seed=cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    n = max(q.q.size, emp.q.size)
    qa, qe = q.padded(n), emp.padded(n)
    with open(out / "aou_dist.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["l", "analytic_prob", "empirical_prob"])
        for l in range(n):
            w.writerow([l, repr(float(qa[l])), repr(float(qe[l]))])
    print(f"d={m.d} k={m.k} k_m={m.k_m} k0={m.k_0}: E[tau]={q.mean:.4f} (empirical {emp.mean:.4f}), "
          f"T={cap}, TV={q.total_variation(emp):.4f} over {emp.samples} samples -> {out / 'aou_dist.csv'}")
    return 0


def _estimate_constants(cfg: ExperimentConfig):
    tr = Trainer(cfg)
    try:
        obj = an.FederatedObjective.from_task(tr.task, tr.clients)
        a = cfg.analysis
        w0 = tr.w.copy()
        doc = {
            "L_g": an.estimate_Lg(obj, a.lipschitz_pairs, a.radius, cfg.seed, center=w0),
            "L_tilde": an.estimate_Ltilde(obj, a.lipschitz_pairs, a.radius, cfg.seed, center=w0),
            "L_h": an.estimate_Lh(obj, a.lh_samples, a.spread, cfg.seed, center=w0),
        }
        doc.update(an.estimate_noise_constants(obj, samples=a.noise_samples, seed=cfg.seed, center=w0))
        doc["f_gap"] = obj.loss(w0) - an.min_loss(obj, w0)
        doc.update(d=tr.d, N=cfg.num_clients, dataset=cfg.dataset, task=cfg.task, dir_alpha=cfg.dir_alpha,
                   seed=cfg.seed, lipschitz_pairs=a.lipschitz_pairs, radius=a.radius,
                   lh_samples=a.lh_samples, spread=a.spread, noise_samples=a.noise_samples)
        return doc
    finally:
        tr.close()


def cmd_estimate_lipschitz(cfg: ExperimentConfig, args) -> int:
    doc = _estimate_constants(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "constants.json", doc)
    print(f"L_g={doc['L_g']:.6g} L_tilde={doc['L_tilde']:.6g} L_h={doc['L_h']:.6g} -> {out / 'constants.json'}")
    return 0


def cmd_bound(cfg: ExperimentConfig, args) -> int:
    if args.constants:
        est = json.loads(Path(args.constants).read_text())
    else:
        est = _estimate_constants(cfg)
    m = _exchange_model(cfg, argparse.Namespace(d=est.get("d"), k=None, k_m=None, k0=None))
    q = analytic_staleness(m)
    p = cfg.channel.params()
    c = an.ConvergenceConstants(
        L_g=est["L_g"], L_h=est["L_h"], sigma_s2=est["sigma_s2"], sigma_g2=est["sigma_g2"], G2=est["G2"],
        mu_c=p.mu_c, sigma_c2=p.sigma_c2, sigma_z2=p.sigma_z2, d=m.d, N=cfg.num_clients,
        H=cfg.local_steps, eta=cfg.eta, eta_l=cfg.eta_l, E_tau=q.mean, f_gap=max(est["f_gap"], 0.0),
        T_rounds=cfg.rounds,
        L_tilde=math.nan if est.get("L_tilde") is None else est["L_tilde"])
    res = an.theorem1_bound(c, exact_constants=cfg.analysis.exact_constants, strict=cfg.analysis.strict)
    doc = {
        "constants": {k: v for k, v in vars(c).items()},
        "exact_constants": cfg.analysis.exact_constants,
        "admissibility_violations": c.admissibility_violations(),
        "bound": res.value, "terms": res.terms,
        "asymptotic": res.asymptotic, "asymptotic_terms": res.asymptotic_terms,
    }
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "bound.json", doc)
    if not args.constants:
        _write_json(out / "constants.json", est)
    print(f"bound={res.value:.6g} (asymptotic {res.asymptotic:.6g}), E[tau]={q.mean:.4f} -> {out / 'bound.json'}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "aou-dist": cmd_aou_dist,
    "estimate-lipschitz": cmd_estimate_lipschitz,
    "bound": cmd_bound,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", metavar="DIR", help="output directory override")
    common.add_argument("--policy", choices=[p.value for p in PolicyKind], help="selection policy override")
    common.add_argument("--rounds", type=int, help="number of rounds override")

    parser = argparse.ArgumentParser(prog="fairk", description="FAIR-k over-the-air federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="train one policy and persist metrics")
    p = sub.add_parser("compare", parents=[common], help="matched-seed runs across policies")
    p.add_argument("--policies", nargs="+", default=[k.value for k in PolicyKind],
                   choices=[k.value for k in PolicyKind])
    p = sub.add_parser("aou-dist", parents=[common], help="analytic vs simulated staleness distribution")
    p.add_argument("--d", type=int, help="model dimension (default: from the configured task)")
    p.add_argument("--k", type=int)
    p.add_argument("--k-m", dest="k_m", type=int)
    p.add_argument("--k0", type=int)
    p.add_argument("--sim-rounds", type=int, default=None)
    sub.add_parser("estimate-lipschitz", parents=[common], help="estimate smoothness and noise constants")
    p = sub.add_parser("bound", parents=[common], help="evaluate the convergence bound")
    p.add_argument("--constants", metavar="PATH", help="reuse a constants.json instead of estimating")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: file not found: {err.filename}" if err.filename else f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        where = f" ({err.filename})" if err.filename else ""
        print(f"error: I/O failure{where}: {err.strerror or err}", file=sys.stderr)
        return 1
    except (FairKError, ValueError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
