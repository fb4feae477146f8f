"""Command line surface: generate | train | predict | eval.

Each subcommand reads an optional JSON config file; flags override file values
and unknown keys are rejected. Every run writes the fully-resolved config next
to its outputs so results are reproducible from (config, seed) alone. The
dataset directory is never written to after generation.

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as configio
from .baselines import (BcConfig, bc_policy, bc_train, ekf_forecast_cells,
                        irl_no_kinematics, random_policy)
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import GenerateConfig, generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, ConvergenceError
from .maps import save_map_csv, save_map_pgm
from .mdp import GridWorld, compute_svf, sample_trajectories, value_iteration
from .metrics import (METHOD_ORDER, EvalResult, cells_to_xy, export_csv,
                      export_json, hausdorff, mean_sampled_hd, nll,
                      terminal_entropy)
from .nn import ParameterStore
from .reward_net import net_from_store, reward_forward, reward_from_env
from .synthetic import DEMO_BETA, TAGS, Demonstration
from .trainer import TrainConfig, demo_stack, train, write_report, write_timings


# ---------------------------------------------------------------------------
# config plumbing

def _file_data(config_path) -> dict:
    if config_path is None:
        return {}
    data = configio.load_json(config_path)
    if not isinstance(data, dict):
        raise ConfigError(f"config file {config_path} must hold a JSON object")
    return data


def _overlay(data: dict, overrides: dict) -> dict:
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _effective_workers(configured: int) -> int:
    raw = os.environ.get("MEIRL_WORKERS")
    if raw is None:
        return configured
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"MEIRL_WORKERS must be an integer, got {raw!r}")
    if workers < 1:
        raise ConfigError("MEIRL_WORKERS must be at least 1")
    return workers


def _write_resolved(out_dir: Path, command: str, payload: dict) -> None:
    configio.dump_json(out_dir / "resolved_config.json",
                       {"command": command, **payload})


# ---------------------------------------------------------------------------
# generate

def _parse_balance(raw: str):
    if raw == "none":
        return None
    if raw == "equal":
        return {tag: 1.0 / len(TAGS) for tag in TAGS}
    if raw.lstrip().startswith("{"):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad balance spec: {e}") from e
    raise ConfigError(
        f"balance must be 'equal', 'none', or a JSON object of tag fractions, got {raw!r}")


def cmd_generate(args) -> None:
    overrides = {
        "n_demos": args.n_demos, "split": args.split, "seed": args.seed,
        "rows": args.rows, "cols": args.cols, "resolution": args.resolution,
        "trail_width": args.trail_width,
        "horizon_min": args.horizon_min, "horizon_max": args.horizon_max,
    }
    if args.layouts is not None:
        overrides["layouts"] = tuple(s.strip() for s in args.layouts.split(","))
    if args.balance is not None:
        overrides["balance"] = _parse_balance(args.balance)
    data = _overlay(_file_data(args.config), overrides)
    if args.speed_min is not None or args.speed_max is not None:
        lo, hi = data.get("speeds", (2.0, 8.0))
        data["speeds"] = (lo if args.speed_min is None else args.speed_min,
                          hi if args.speed_max is None else args.speed_max)
    cfg = GenerateConfig.from_dict(data)

    out = Path(args.out)
    train_demos, test_demos = generate_dataset(cfg)
    manifest = save_dataset(out, train_demos, test_demos, cfg,
                            overwrite=args.overwrite)
    _write_resolved(out, "generate", {"out": str(out),
                                      "config": configio.to_dict(cfg)})
    print(f"wrote {manifest['n_train']} train / {manifest['n_test']} test "
          f"demos to {out}")
    for split_name in ("train", "test"):
        counts = manifest["tag_counts"][split_name]
        per_tag = "  ".join(f"{tag}={counts.get(tag, 0)}" for tag in TAGS)
        print(f"  {split_name}: {per_tag}")


# ---------------------------------------------------------------------------
# train

def _bc_report_csv(rows, path) -> None:
    lines = ["epoch,train_loss,val_loss"]
    for row in rows:
        lines.append(f"{row['epoch']},{row['train_loss']:.17g},{row['val_loss']:.17g}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def cmd_train(args) -> None:
    train_demos, _, _ = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.method == "bc":
        if args.resume is not None:
            raise ConfigError("behavior cloning does not support --resume")
        overrides = {"epochs": args.iterations, "learning_rate": args.learning_rate,
                     "seed": args.seed}
        cfg = BcConfig.from_dict(_overlay(_file_data(args.config), overrides))
        net, rows = bc_train(train_demos, cfg)
        store = ParameterStore.create(net.parameters(), cfg.learning_rate)
        save_checkpoint(out / "checkpoint.ckpt", store,
                        meta={"arch": net.arch_meta(), "method": "bc",
                              "config": configio.to_dict(cfg)},
                        iteration=len(rows))
        _bc_report_csv(rows, out / "report.csv")
        _write_resolved(out, "train", {"method": "bc", "dataset": str(args.dataset),
                                       "out": str(out),
                                       "config": configio.to_dict(cfg)})
        last = rows[-1]["val_loss"] if rows else float("nan")
        print(f"behavior cloning ran {len(rows)} epochs, "
              f"best validation loss {last:.4f}")
        print(f"checkpoint: {out / 'checkpoint.ckpt'}")
        return

    overrides = {
        "iterations": args.iterations, "batch_size": args.batch_size,
        "learning_rate": args.learning_rate, "gamma": args.gamma,
        "epsilon": args.epsilon, "beta0": args.beta0, "tau": args.tau,
        "seed": args.seed, "workers": args.workers,
        "checkpoint_every": args.checkpoint_every, "augment": args.augment,
    }
    cfg = TrainConfig.from_dict(_overlay(_file_data(args.config), overrides))
    cfg = dataclasses.replace(cfg, workers=_effective_workers(cfg.workers))
    runner = irl_no_kinematics if args.method == "irl_nokin" else train
    _, _, reports, timings = runner(train_demos, cfg, out_dir=out,
                                    resume=args.resume)
    write_report(reports, out / "report.csv")
    write_timings(timings, out / "timings.csv")
    _write_resolved(out, "train", {"method": args.method,
                                   "dataset": str(args.dataset), "out": str(out),
                                   "resume": args.resume and str(args.resume),
                                   "config": configio.to_dict(cfg)})
    if reports:
        print(f"trained iterations {reports[0]['iteration']}..."
              f"{reports[-1]['iteration']}, final training NLL "
              f"{reports[-1]['nll']:.4f}, final SVF L1 gap "
              f"{reports[-1]['svf_l1']:.4f}")
    else:
        print("no iterations requested; checkpoint holds the initialization")
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")


# ---------------------------------------------------------------------------
# predict

@dataclass
class PredictConfig:
    method: str = "ours"
    demo: int = 0
    which: str = "test"
    samples: int = 100
    seed: int = 0
    zero_lidar: bool = False

    def __post_init__(self):
        if self.method not in ("ours", "random", "ekf"):
            raise ConfigError(f"predict method must be ours|random|ekf, got {self.method!r}")
        if self.which not in ("train", "test"):
            raise ConfigError("which must be 'train' or 'test'")
        if self.demo < 0:
            raise ConfigError("demo index must be nonnegative")
        if self.samples < 0:
            raise ConfigError("samples must be nonnegative")

    @classmethod
    def from_dict(cls, data: dict) -> "PredictConfig":
        return configio.from_dict(cls, data)


def _constant_env_world(world: GridWorld) -> GridWorld:
    # Fig-style ablation input: every channel flattened to its spatial mean
    env = np.empty_like(world.env)
    for c in range(env.shape[0]):
        env[c] = world.env[c].mean()
    return GridWorld(rows=world.rows, cols=world.cols,
                     resolution=world.resolution, env=env)


def _forecast_beta(manifest: dict) -> float:
    """Sharpness of the forecast policy.

    Held-out likelihood is only meaningful when the planner runs at the
    temperature the experts were sampled at; the dataset manifest carries it.
    """
    return float((manifest.get("config") or {}).get("demo_beta", DEMO_BETA))


def _policy_from_checkpoint(checkpoint_path, demo: Demonstration, beta: float):
    """Policy plus (when the net defines one) the reward map behind it."""
    store, meta, iteration = load_checkpoint(checkpoint_path)
    net = net_from_store(meta, store.params)
    if net.kind == "action_head":
        return bc_policy(net, demo), None
    tcfg = TrainConfig.from_dict(meta.get("config") or {})
    if net.kind == "two_stage":
        reward = reward_forward(net, demo_stack(net, demo))
    else:
        reward = reward_from_env(net, demo.world.env)
    policy = value_iteration(reward, gamma=tcfg.gamma, epsilon=tcfg.epsilon,
                             beta=beta)
    return policy, reward


def _write_samples_csv(path, rollouts: np.ndarray) -> None:
    lines = ["sample,step,row,col"]
    for s in range(rollouts.shape[0]):
        for t in range(rollouts.shape[1]):
            lines.append(f"{s},{t},{rollouts[s, t, 0]},{rollouts[s, t, 1]}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def cmd_predict(args) -> None:
    overrides = {"method": args.method, "demo": args.demo, "which": args.which,
                 "samples": args.samples, "seed": args.seed,
                 "zero_lidar": args.zero_lidar}
    cfg = PredictConfig.from_dict(_overlay(_file_data(args.config), overrides))

    train_demos, test_demos, manifest = load_dataset(args.dataset)
    pool = test_demos if cfg.which == "test" else train_demos
    if cfg.demo >= len(pool):
        raise ConfigError(f"demo index {cfg.demo} out of range, "
                          f"{cfg.which} split holds {len(pool)} demos")
    demo = pool[cfg.demo]
    if cfg.zero_lidar:
        demo = dataclasses.replace(demo, world=_constant_env_world(demo.world))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = tuple(int(v) for v in demo.future[0])
    horizon = demo.horizon

    if cfg.method == "ekf":
        cells = ekf_forecast_cells(demo)
        xy = cells_to_xy(cells, demo.world.resolution)
        lines = ["step,row,col,x,y"]
        for k in range(len(cells)):
            lines.append(f"{k},{cells[k, 0]},{cells[k, 1]},"
                         f"{xy[k, 0]:.17g},{xy[k, 1]:.17g}")
        (out / "trajectory.csv").write_text("\n".join(lines) + "\n")
        summary = {"method": "ekf", "horizon": horizon, "start": list(start)}
        hd = hausdorff(xy, cells_to_xy(demo.future, demo.world.resolution))
        summary["hd"] = hd
        print(f"EKF forecast written; HD to the demonstration {hd:.3f} m")
    else:
        if cfg.method == "ours":
            if args.checkpoint is None:
                raise ConfigError("--checkpoint is required for method 'ours'")
            policy, reward = _policy_from_checkpoint(args.checkpoint, demo,
                                                     _forecast_beta(manifest))
        else:
            policy, reward = random_policy(demo.world), None
        if reward is not None:
            save_map_csv(out / "reward.csv", reward)
            save_map_pgm(out / "reward.pgm", reward)
        svf = compute_svf(policy, start, horizon)
        if abs(float(svf.sum()) - horizon) > 1e-6:
            raise ConvergenceError(
                f"visitation mass {svf.sum():.9f} drifted from horizon {horizon}")
        save_map_csv(out / "svf.csv", svf)
        save_map_pgm(out / "svf.pgm", svf)
        if cfg.samples > 0:
            rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
            rollouts = sample_trajectories(policy, start, horizon, cfg.samples, rng)
            _write_samples_csv(out / "samples.csv", rollouts)
        entropy = terminal_entropy(policy, start, horizon)
        summary = {
            "method": cfg.method, "horizon": horizon, "start": list(start),
            "svf_mass": float(svf.sum()), "terminal_entropy": entropy,
            "demo_nll": nll(policy, demo) if horizon > 1 else None,
            "zero_lidar": cfg.zero_lidar,
        }
        print(f"prediction written; terminal entropy {entropy:.3f} nats")
    configio.dump_json(out / "summary.json", summary)
    _write_resolved(out, "predict", {
        "dataset": str(args.dataset), "out": str(out),
        "checkpoint": args.checkpoint and str(args.checkpoint),
        "config": configio.to_dict(cfg)})


# ---------------------------------------------------------------------------
# eval

@dataclass
class EvalConfig:
    methods: tuple = METHOD_ORDER
    samples: int = 1000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ConfigError("need at least one method to evaluate")
        bad = sorted(set(self.methods) - set(METHOD_ORDER))
        if bad:
            raise ConfigError(f"unknown methods: {bad}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods requested")
        if self.samples < 1:
            raise ConfigError("samples must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        return configio.from_dict(cls, data)


_CKPT_ARG = {"ours": "checkpoint", "irl_nokin": "checkpoint_nokin",
             "bc": "checkpoint_bc"}
_CKPT_KIND = {"ours": ("two_stage", "env_only"), "irl_nokin": ("env_only",),
              "bc": ("action_head",)}


def _demo_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=base,
                                      spawn_key=(index,)).generate_state(1)[0])


def _eval_method(method, demos, cfg: EvalConfig, nets, beta: float):
    """One EvalResult; per-demo work is order-stable under any worker count."""
    def ekf_case(item):
        i, demo = item
        cells = ekf_forecast_cells(demo)
        res = demo.world.resolution
        return hausdorff(cells_to_xy(cells, res), cells_to_xy(demo.future, res))

    def policy_case(item):
        i, demo = item
        if method == "random":
            policy = random_policy(demo.world)
        elif method == "bc":
            policy = bc_policy(nets["bc"][0], demo)
        else:
            net, tcfg, iteration = nets[method]
            if net.kind == "two_stage":
                reward = reward_forward(net, demo_stack(net, demo))
            else:
                reward = reward_from_env(net, demo.world.env)
            policy = value_iteration(reward, gamma=tcfg.gamma,
                                     epsilon=tcfg.epsilon, beta=beta)
        hd = mean_sampled_hd(policy, demo, n_samples=cfg.samples,
                             seed=_demo_seed(cfg.seed, i))
        return (nll(policy, demo), hd,
                terminal_entropy(policy, tuple(demo.future[0]), demo.horizon))

    job = ekf_case if method == "ekf" else policy_case
    items = list(enumerate(demos))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outs = list(pool.map(job, items))
    else:
        outs = [job(item) for item in items]

    if method == "ekf":
        return EvalResult(method="ekf", hd_per_demo=list(outs))
    return EvalResult(method=method,
                      nll_per_demo=[o[0] for o in outs],
                      hd_per_demo=[o[1] for o in outs],
                      terminal_entropies=[o[2] for o in outs])


def cmd_eval(args) -> None:
    overrides = {"samples": args.samples, "seed": args.seed,
                 "workers": args.workers}
    if args.methods is not None:
        overrides["methods"] = tuple(s.strip() for s in args.methods.split(","))
    cfg = EvalConfig.from_dict(_overlay(_file_data(args.config), overrides))
    cfg = dataclasses.replace(cfg, workers=_effective_workers(cfg.workers))

    # every required artifact is checked before any work happens
    missing = []
    if not (Path(args.dataset) / "manifest.json").is_file():
        missing.append(f"dataset manifest at {args.dataset}")
    for method in cfg.methods:
        arg_name = _CKPT_ARG.get(method)
        if arg_name is None:
            continue
        path = getattr(args, arg_name)
        if path is None:
            missing.append(f"--{arg_name.replace('_', '-')} for method {method!r}")
        elif not Path(path).is_file():
            missing.append(f"checkpoint for method {method!r} at {path}")
    if missing:
        raise ConfigError("missing artifacts: " + "; ".join(missing))

    _, test_demos, manifest = load_dataset(args.dataset)
    if not test_demos:
        raise ConfigError("the dataset has no test demonstrations to evaluate")
    beta = _forecast_beta(manifest)

    nets = {}
    for method in cfg.methods:
        arg_name = _CKPT_ARG.get(method)
        if arg_name is None:
            continue
        store, meta, iteration = load_checkpoint(getattr(args, arg_name))
        net = net_from_store(meta, store.params)
        if net.kind not in _CKPT_KIND[method]:
            raise ConfigError(f"checkpoint for {method!r} holds a {net.kind!r} "
                              f"net, expected one of {_CKPT_KIND[method]}")
        if net.kind == "action_head":
            nets[method] = (net, None, iteration)
        else:
            nets[method] = (net, TrainConfig.from_dict(meta.get("config") or {}),
                            iteration)

    results = [_eval_method(m, test_demos, cfg, nets, beta) for m in cfg.methods]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_csv(results, out / "table.csv")
    export_json(results, out / "table.json")
    _write_resolved(out, "eval", {
        "dataset": str(args.dataset), "out": str(out),
        "checkpoints": {m: getattr(args, a) and str(getattr(args, a))
                        for m, a in _CKPT_ARG.items()},
        "config": configio.to_dict(cfg)})

    for r in results:
        s = r.summary()
        nll_txt = "N.A." if s["nll"] is None else f"{s['nll']:.4f}"
        print(f"{r.method:>10}:  NLL {nll_txt:>8}   HD {s['hd']:.4f} m")
    print(f"table: {out / 'table.csv'}")


# ---------------------------------------------------------------------------
# wiring

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="meirl",
        description="Max-ent deep IRL trajectory forecasting on grid worlds")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a demonstration dataset")
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--config", help="JSON file of generation settings")
    g.add_argument("--demos", type=int, dest="n_demos")
    g.add_argument("--split", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--resolution", type=float)
    g.add_argument("--layouts", help="comma-separated layout names")
    g.add_argument("--trail-width", type=int, dest="trail_width")
    g.add_argument("--speed-min", type=float, dest="speed_min")
    g.add_argument("--speed-max", type=float, dest="speed_max")
    g.add_argument("--horizon-min", type=int, dest="horizon_min")
    g.add_argument("--horizon-max", type=int, dest="horizon_max")
    g.add_argument("--balance", help="'equal' or a JSON object of tag fractions")
    g.add_argument("--overwrite", action="store_true")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="fit a model on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--method", choices=("ours", "irl_nokin", "bc"),
                   default="ours")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--iterations", type=int,
                   help="IRL iterations, or epochs for --method bc")
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--learning-rate", type=float, dest="learning_rate")
    t.add_argument("--gamma", type=float)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--beta0", type=float)
    t.add_argument("--tau", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   default=None)
    t.set_defaults(fn=cmd_train)

    pr = sub.add_parser("predict", help="forecast one demonstration")
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--checkpoint")
    pr.add_argument("--config")
    pr.add_argument("--method", choices=("ours", "random", "ekf"))
    pr.add_argument("--demo", type=int)
    pr.add_argument("--which", choices=("train", "test"))
    pr.add_argument("--samples", type=int)
    pr.add_argument("--seed", type=int)
    pr.add_argument("--zero-lidar", action="store_true", dest="zero_lidar",
                    default=None)
    pr.set_defaults(fn=cmd_predict)

    ev = sub.add_parser("eval", help="score methods on the test split")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--config")
    ev.add_argument("--checkpoint", help="trained model for method 'ours'")
    ev.add_argument("--checkpoint-nokin", dest="checkpoint_nokin")
    ev.add_argument("--checkpoint-bc", dest="checkpoint_bc")
    ev.add_argument("--methods", help="comma-separated subset to evaluate")
    ev.add_argument("--samples", type=int)
    ev.add_argument("--seed", type=int)
    ev.add_argument("--workers", type=int)
    ev.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConvergenceError, OSError, RuntimeError, ValueError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
