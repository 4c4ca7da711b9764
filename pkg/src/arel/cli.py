"""Command-line runner: ``train``, ``eval``, ``redistribute``, ``verify``, ``gradcheck``.

Exit codes: 0 ok, 2 configuration/validation error, 3 numerical divergence,
4 verification failure.  Relative output paths are resolved against
``$AREL_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, config as config_mod, envs, gradsuite, verify
from . import ndtensor as nd
from .attention import ConfigError
from .config import RunConfig
from .io import atomic_write_text, write_json
from .marl_learner import (EVAL_SEED_OFFSET, SeedResult, TabularSoftmaxPolicy, aggregate_csv,
                           credit_model_for, curve_csv, evaluate, rollout, run_seed)
from .redistribution import NumericalDivergence, TrajectoryError, load_trajectories

OUTPUT_ROOT_ENV = "AREL_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4


def resolve_output(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def _load_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = [args.seed]
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _versions() -> dict:
    return {"arel": __version__, "numpy": np.__version__, "python": platform.python_version()}


# -- train -------------------------------------------------------------------------

def _train_seed(cfg_dict: dict, seed: int, out: str) -> dict:
    """Run and persist one seed; returns its curve (picklable for process pools)."""
    cfg = config_mod.from_dict(cfg_dict)
    res = run_seed(cfg, seed)
    out_dir = Path(out)
    tag = f"{res.strategy}_seed{seed}"
    atomic_write_text(out_dir / f"curve_{tag}.csv", curve_csv([res]))
    atomic_write_text(out_dir / f"policy_{tag}.json", json.dumps(res.policy.to_dict()))
    if res.credit_model is not None:
        nd.save_parameters(out_dir / f"credit_{tag}.arlk", res.credit_model.parameters())
        atomic_write_text(out_dir / f"credit_loss_{tag}.csv",
                          "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(res.credit_losses)))
    # the greedy evaluation episodes, in the buffer's JSONL schema, for `redistribute`
    spec = cfg.env_spec()
    lines = []
    for s in EVAL_SEED_OFFSET + seed * 10_000 + np.arange(cfg.eval_episodes):
        traj = rollout(res.policy, spec, int(s), np.random.default_rng(int(s)), 0.0, greedy=True,
                       episode_id=int(s))
        lines.append(json.dumps(traj.to_dict()))
    atomic_write_text(out_dir / f"episodes_{tag}.jsonl", "\n".join(lines) + "\n")
    return {"seed": seed, "strategy": res.strategy, "curve": res.curve}


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = resolve_output(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.txt", config_mod.dump(cfg))
    jobs = [(cfg.to_dict(), s, str(out)) for s in cfg.seeds]
    if args.parallel_seeds > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel_seeds) as pool:
            summaries = list(pool.map(_train_seed, *zip(*jobs)))
    else:
        summaries = [_train_seed(*j) for j in jobs]
    results = [SeedResult(s["seed"], s["strategy"], s["curve"]) for s in summaries]
    atomic_write_text(out / f"curve_{cfg.strategy}_aggregate.csv", aggregate_csv(results))
    manifest = {
        "config_sha256": cfg.digest(), "config": cfg.to_dict(), "seeds": cfg.seeds, "strategy": cfg.strategy,
        "versions": _versions(), "parallel_seeds": args.parallel_seeds,
        "final_success": {str(r.seed): r.final_success for r in results},
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    write_json(out / "manifest.json", manifest)
    print(json.dumps({"out_dir": str(out), "final_success": manifest["final_success"]}))
    return EXIT_OK


# -- eval --------------------------------------------------------------------------

def cmd_eval(args) -> int:
    cfg = _load_config(args)
    spec = cfg.env_spec()
    policy = TabularSoftmaxPolicy(envs.policy_key(spec, cfg.policy_features), spec.n_actions)
    policy.load_dict(json.loads(Path(args.checkpoint).read_text()))
    seed = cfg.seeds[0]
    metrics = evaluate(policy, spec, EVAL_SEED_OFFSET + seed * 10_000 + np.arange(args.episodes or cfg.eval_episodes))
    metrics.update({"seed": seed, "episodes": args.episodes or cfg.eval_episodes, "checkpoint": str(args.checkpoint)})
    if args.out:
        write_json(resolve_output(args.out), metrics)
    print(json.dumps(metrics))
    return EXIT_OK


# -- redistribute ------------------------------------------------------------------

def normalize01(values: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant vector maps to 0.5 everywhere."""
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 0:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def redistribute_rows(model, trajectories, n_actions: int) -> list[list]:
    want = model.config.obs_dim
    rows = []
    for traj in trajectories:
        x = traj.inputs(n_actions)
        if x.shape[-1] != want:
            raise nd.DimensionError(f"episode {traj.episode_id}: input width {x.shape[-1]} but checkpoint expects {want}")
        if traj.length > model.config.t_max:
            raise nd.DimensionError(f"episode {traj.episode_id}: length {traj.length} > model t_max {model.config.t_max}")
        r_hat = model.predict(x)
        norm = normalize01(r_hat)
        for t in range(traj.length):
            true = "" if traj.hidden_rewards is None else repr(float(traj.hidden_rewards[t]))
            rows.append([traj.episode_id, t, repr(float(r_hat[t])), repr(float(norm[t])), true])
    return rows


def cmd_redistribute(args) -> int:
    cfg = _load_config(args)
    spec = cfg.env_spec()
    model = credit_model_for(cfg, spec, seed=0)
    model.load_arrays(nd.load_parameters(args.checkpoint))
    rows = redistribute_rows(model, load_trajectories(args.episodes), spec.n_actions)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "t", "r_hat", "r_hat_normalized", "true_hidden_reward"])
    w.writerows(rows)
    if args.out:
        atomic_write_text(resolve_output(args.out), buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# -- verify / gradcheck --------------------------------------------------------------

def _report(report: dict, out) -> int:
    if out:
        write_json(resolve_output(out), report)
    print(json.dumps(report, indent=2, sort_keys=True, default=float))
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def cmd_verify(args) -> int:
    return _report(verify.run_all(seed=args.seed or 0, theorem_instances=args.instances), args.out)


def cmd_gradcheck(args) -> int:
    return _report(gradsuite.run(instances=args.instances, seed=args.seed or 0), args.out)


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the full rollout / redistribution / policy-update loop")
    t.add_argument("--config", help="key = value run configuration")
    t.add_argument("--seed", type=int, help="override the configured seed list with one seed")
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.add_argument("--parallel-seeds", type=int, default=1, help="worker processes across seeds")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a saved policy")
    e.add_argument("--checkpoint", required=True, help="policy_*.json written by train")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--episodes", type=int)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("redistribute", help="per-step predicted rewards for stored episodes")
    r.add_argument("--checkpoint", required=True, help="credit_*.arlk written by train")
    r.add_argument("--episodes", required=True, help="episodes in the JSONL trajectory schema")
    r.add_argument("--config")
    r.add_argument("--out", help="CSV path (default: stdout)")
    r.set_defaults(fn=cmd_redistribute)

    v = sub.add_parser("verify", help="run the theory checks and emit a JSON report")
    v.add_argument("--seed", type=int)
    v.add_argument("--instances", type=int, default=100)
    v.add_argument("--out")
    v.set_defaults(fn=cmd_verify)

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    g.add_argument("--seed", type=int)
    g.add_argument("--instances", type=int, default=105)
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, TrajectoryError, nd.DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
