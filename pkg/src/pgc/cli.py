"""Command-line entry point.

Output directory layout::

    traces/ep_<seed>.jsonl            clean episodes (collect)
    models/pair_<i>_<j>.json          one predictor per pair, or
    models/victim_<j>.json            one per victim when sharing (train-predictor)
    models/training.json              final losses
    attacks/<condition>.json          trained attack parameters (train-attack)
    attacks/<condition>.log           elite objective per CEM iteration
    results.json                      per-episode statistics (evaluate)
    report/                           CSV / JSON / SVG (evaluate, report)

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import env as envmod
from . import io as pio
from .attacks import KINDS, TRAINABLE, AttackSpec
from .benchmark import collect, condition_name, episode_seeds, evaluate, train_attack
from .config import ConfigError, RunConfig, load
from .evaluation import RocCurve, roc
from .experiment import train_bank
from .linalg import LinAlgError
from .predictor import DivergenceDetected
from .report import write_report
from .rollout import PredictorBank, Rollout

log = logging.getLogger("pgc")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
OUT_ENV = "PGC_OUT"


class UnknownTrainable(ConfigError):
    pass


class MissingArtifacts(FileNotFoundError):
    pass


class MissingTraces(MissingArtifacts):
    pass


class MissingModels(MissingArtifacts):
    pass


# ---------------------------------------------------------------- setup


def resolve(args) -> tuple[RunConfig, Path]:
    run = load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run = run.replace(seed=args.seed)
    if getattr(args, "share_params", False):
        run = run.replace(predictor=replace(run.predictor, shared=True))
    if getattr(args, "diagonal_only", False):
        run = run.replace(predictor=replace(run.predictor, head="diagonal"))
    if getattr(args, "mode", None):
        run = run.replace(detector=replace(run.detector, mode=args.mode))
    out = args.out or os.environ.get(OUT_ENV) or run.evaluation.out_dir
    return run, Path(out)


# ---------------------------------------------------------------- traces


def rollout_from_traces(cfg, paths) -> Rollout:
    traces = [pio.read_trace(p) for p in paths]
    obs = np.stack([t["obs"] for t in traces])
    acts = np.stack([t["actions"] for t in traces])
    pos = np.stack([t["positions"] for t in traces])
    final = envmod.transition(cfg, pos[:, -1], acts[:, -1])
    return Rollout(np.array([t["header"]["episode_seed"] for t in traces]),
                   np.concatenate([pos, final[:, None]], axis=1),
                   np.stack([t["goal"] for t in traces]), obs, acts,
                   np.stack([t["rewards"] for t in traces]),
                   np.stack([t["attack_active"] for t in traces]))


def cmd_collect(run: RunConfig, out: Path, workers: int = 1, n: int | None = None) -> list:
    n = run.predictor.train_episodes if n is None else n
    if n == 0:
        log.warning("collect: zero episodes requested, nothing written")
        return []
    ro = collect(run, "train", n, workers)
    d = out / "traces"
    d.mkdir(parents=True, exist_ok=True)
    h = run.hash()
    paths = []
    for k, s in enumerate(ro.seeds):
        p = d / f"ep_{int(s):09d}.jsonl"
        pio.write_trace(p, ro, k, {"config_hash": h, "env": run.to_dict()["env"]})
        paths.append(p)
    log.info("collect: wrote %d traces to %s", len(paths), d)
    return paths


# ---------------------------------------------------------------- predictors


def cmd_train_predictor(run: RunConfig, out: Path, workers: int = 1) -> list:
    paths = sorted((out / "traces").glob("ep_*.jsonl"))
    if not paths:
        raise MissingTraces(f"no traces under {out / 'traces'}; run collect first")
    ro = rollout_from_traces(run.env, paths)
    p = run.predictor
    val = collect(run, "validation", workers=workers) if p.head == "categorical" else None
    bank, curves = train_bank(run.env, ro, run.train, run.seed, head=p.head, shared=p.shared,
                              prev_action=p.prev_action, levels=p.levels, validation=val,
                              workers=workers)
    d = out / "models"
    d.mkdir(parents=True, exist_ok=True)
    for old in d.glob("*.json"):
        old.unlink()
    h = run.hash()
    written = []
    for key, net in sorted(bank.nets.items()):
        observer, victim = (None, key) if bank.shared else key
        name = f"victim_{victim}.json" if bank.shared else f"pair_{observer}_{victim}.json"
        pio.save_model(d / name, net, observer=observer, victim=victim,
                       moments=bank.moments.get(key), cfg_hash=h)
        written.append(d / name)
    summary = {"config_hash": h, "tool_version": __version__, "head": p.head,
               "tag": pio.TAGS[p.head], "shared": bank.shared,
               "final_loss": {_keyname(k): c[-1] for k, c in sorted(curves.items())}}
    (d / "training.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("train-predictor: wrote %d models to %s", len(written), d)
    return written


def _keyname(key) -> str:
    return f"victim_{key}" if isinstance(key, int) else f"pair_{key[0]}_{key[1]}"


def load_bank(run: RunConfig, out: Path) -> PredictorBank:
    d = out / "models"
    files = sorted(f for f in d.glob("*.json") if f.name != "training.json")
    if not files:
        raise MissingModels(f"no predictor models under {d}")
    nets, moments, shared = {}, {}, set()
    for f in files:
        net, blob = pio.load_model(f)
        key = blob["victim"] if blob["shared"] else (blob["observer"], blob["victim"])
        nets[key] = net
        shared.add(blob["shared"])
        if blob["moments"] is not None:
            moments[key] = tuple(blob["moments"])
    if len(shared) != 1:
        raise MissingModels("mixture of shared and per-pair models")
    bank = PredictorBank(run.env, nets, shared.pop(), moments)
    try:
        bank.check()
    except KeyError as e:
        raise MissingModels(str(e)) from e
    return bank


# ---------------------------------------------------------------- attacks


def cmd_train_attack(run: RunConfig, out: Path, kind: str, lam: float = 0.0,
                     victims=(0,), t0: int = 0) -> Path:
    if kind not in TRAINABLE:
        raise UnknownTrainable(f"{kind!r} needs no training (trainable: {', '.join(TRAINABLE)})")
    spec = AttackSpec(kind, tuple(victims), t0, lam=lam if kind == "dyn" else 0.0)
    bank = load_bank(run, out) if kind == "dyn" else None
    lines = []
    spec, history = train_attack(run, spec, bank,
                                 log=lambda it, m, b: lines.append(f"{it} {m!r} {b!r}"))
    d = out / "attacks"
    d.mkdir(parents=True, exist_ok=True)
    name = condition_name(spec)
    h = run.hash()
    pio.save_attack(d / f"{name}.json", spec,
                    hyper={"cem": run.to_dict()["cem"], "history": history}, cfg_hash=h)
    (d / f"{name}.log").write_text(
        f"# config={h} tool={__version__}\n# iteration elite_mean best\n"
        + "\n".join(lines) + "\n")
    log.info("train-attack: %s elite objective %.4f -> %.4f", name, history[0], history[-1])
    return d / f"{name}.json"


def load_attacks(run: RunConfig, out: Path) -> list:
    specs = []
    for spec in run.attacks:
        if spec.kind in TRAINABLE and spec.policy_params is None:
            f = out / "attacks" / f"{condition_name(spec)}.json"
            if not f.exists():
                raise MissingArtifacts(f"attack file {f} missing; run train-attack first")
            loaded, _ = pio.load_attack(f)
            spec = spec.with_(policy_params=loaded.policy_params)
        specs.append(spec)
    return specs


# ---------------------------------------------------------------- evaluation


def cmd_evaluate(run: RunConfig, out: Path, workers: int = 1) -> dict:
    bank = load_bank(run, out)
    if bank.head_kind == "categorical" and run.detector.mode != "window":
        raise ConfigError("categorical predictors need --mode window")
    res = evaluate(run, bank, load_attacks(run, out), workers)
    results = {
        "format": "pgc-results", "version": 1, "tool_version": __version__,
        "config_hash": run.hash(), "config": run.to_dict(),
        "seeds": {"clean": _span(res.clean.seeds)},
        "clean_reward": res.clean.total_reward.tolist(),
        "conditions": {},
    }
    from .evaluation import episode_statistics
    for name, cond in res.conditions.items():
        results["seeds"][name] = _span(cond.seeds)
        results["conditions"][name] = {
            "victims": list(cond.attack.victims),
            "clean_stat": episode_statistics(res.clean, cond.attack.victims).tolist(),
            "attacked_stat": episode_statistics(cond).tolist(),
            "reward": cond.total_reward.tolist(),
            "ttd": res.ttd[name],
        }
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(json.dumps(results) + "\n")
    return cmd_report(run, out)


def _span(seeds) -> list:
    return [int(seeds[0]), int(seeds[-1]) + 1] if len(seeds) else []


def cmd_report(run: RunConfig, out: Path) -> dict:
    f = out / "results.json"
    if not f.exists():
        raise MissingArtifacts(f"{f} missing; run evaluate first")
    r = json.loads(f.read_text())
    betas = run.evaluation.betas()
    curves, ttd = {}, {}
    impact = {"none": _impact(r["clean_reward"])}
    for name, c in r["conditions"].items():
        curves[name] = roc(c["clean_stat"], c["attacked_stat"], betas)
        ttd[name] = [tuple(row) for row in c["ttd"]]
        impact[name] = _impact(c["reward"])
    summary = write_report(out / "report", curves, ttd, impact, r["config_hash"],
                           r["config"], r["seeds"])
    for name, a in summary["auc"].items():
        print(f"{name:24s} AUC {a:.4f}   reward {impact[name]['mean']:9.3f}")
    return summary


def _impact(rewards) -> dict:
    x = np.asarray(rewards, float)
    se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")
    return {"mean": float(x.mean()), "se": se, "n": int(len(x))}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the base seed")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or config)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--share-params", action="store_true",
                        help="one predictor per victim shared by its observers")
    common.add_argument("--diagonal-only", action="store_true",
                        help="diagonal covariance head (I-PGC)")
    common.add_argument("--mode", choices=("cusum", "window"), help="detection statistic")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pgc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pgc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("collect", parents=[common], help="record clean episode traces")
    c.add_argument("--episodes", type=int, help="number of episodes (default: config)")
    sub.add_parser("train-predictor", parents=[common], help="fit action predictors")
    a = sub.add_parser("train-attack", parents=[common], help="train a learned attack")
    a.add_argument("--kind", required=True, choices=[k for k in KINDS])
    a.add_argument("--lam", type=float, default=0.0, help="detectability weight (dyn)")
    a.add_argument("--victims", type=int, nargs="+", default=[0])
    a.add_argument("--t0", type=int, default=0)
    sub.add_parser("evaluate", parents=[common], help="run all conditions and report")
    sub.add_parser("report", parents=[common], help="rewrite report files from results")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        run, out = resolve(args)
        if args.command == "collect":
            cmd_collect(run, out, args.workers, args.episodes)
        elif args.command == "train-predictor":
            cmd_train_predictor(run, out, args.workers)
        elif args.command == "train-attack":
            cmd_train_attack(run, out, args.kind, args.lam, args.victims, args.t0)
        elif args.command == "evaluate":
            cmd_evaluate(run, out, args.workers)
        elif args.command == "report":
            cmd_report(run, out)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifacts, FileNotFoundError, KeyError) as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (DivergenceDetected, LinAlgError, FloatingPointError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
