"""Max-ent IRL training loop.

Each iteration samples a demonstration batch, plans under the current reward
with an annealed-softmax policy, and ascends the visitation-matching gradient:
the derivative of the objective with respect to the reward map is the demo
visitation count minus the expected visitation under the planner, so the
descent direction handed to Adam is its negation. Per-demonstration work can
run on a thread pool; gradients are summed in batch order regardless of worker
count, keeping runs bitwise reproducible.

Wall-clock timings go to a separate file from the per-iteration report, so the
report CSV is byte-identical across runs of the same config and seed.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as configio
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ConvergenceError
from .kinematics import build_input_stack, kinematic_context
from .mdp import compute_svf, value_iteration
from .metrics import nll
from .nn import ParameterStore, update_parameters
from .reward_net import (build_net, net_from_store, reward_backward, reward_backward_env,
                         reward_forward, reward_from_env, stage1_forward)
from .synthetic import Demonstration, augment_rotations

REPORT_COLUMNS = ("iteration", "nll", "grad_norm", "vi_sweeps", "svf_l1")


@dataclass
class TrainConfig:
    iterations: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-3
    gamma: float = 0.95
    epsilon: float = 1e-4
    beta0: float = 1.0
    tau: float = 50.0
    seed: int = 0
    use_kinematics: bool = True
    workers: int = 1
    checkpoint_every: int = 50
    augment: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.beta0 <= 0:
            raise ConfigError("beta0 must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return configio.from_dict(cls, data)


def training_beta(config: TrainConfig, iteration: int) -> float:
    return config.beta0 * (1.0 + iteration / config.tau)


def demo_svf(demo: Demonstration) -> np.ndarray:
    """Visit counts along the demo future; total mass equals the horizon."""
    counts = np.zeros((demo.world.rows, demo.world.cols))
    np.add.at(counts, (demo.future[:, 0], demo.future[:, 1]), 1.0)
    return counts


def demo_stack(net, demo: Demonstration):
    """The 30-channel input stack for one demo. BC shares this exact path."""
    feats = stage1_forward(net, demo.world.env)
    context = kinematic_context(demo.past)
    return build_input_stack(feats, demo.world, tuple(demo.future[0]), context)


def _demo_gradient(net, demo: Demonstration, beta: float, config: TrainConfig):
    start = tuple(demo.future[0])
    if net.kind == "two_stage":
        stack = demo_stack(net, demo)
        reward = reward_forward(net, stack)
    elif net.kind == "env_only":
        reward = reward_from_env(net, demo.world.env)
    else:
        raise ConfigError(f"cannot train a {net.kind!r} net with the IRL loop")
    policy = value_iteration(reward, gamma=config.gamma, epsilon=config.epsilon, beta=beta)
    mu_demo = demo_svf(demo)
    mu_expected = compute_svf(policy, start, demo.horizon)
    diff = mu_demo - mu_expected
    if net.kind == "two_stage":
        grads = reward_backward(net, stack, -diff)
    else:
        grads = reward_backward_env(net, demo.world.env, -diff)
    return grads, nll(policy, demo), policy.sweeps, float(np.abs(diff).sum())


def train_step(net, batch, config: TrainConfig, iteration: int, workers: int = 1):
    """Batch gradient (already divided by batch size) plus the report row.
    Parameters are left untouched; the caller applies the update."""
    batch = list(batch)
    if not batch:
        raise ConfigError("empty training batch")
    beta = training_beta(config, iteration)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda demo: _demo_gradient(net, demo, beta, config), batch))
    else:
        results = [_demo_gradient(net, demo, beta, config) for demo in batch]

    total = {name: np.zeros_like(p) for name, p in net.parameters().items()}
    for grads, _, _, _ in results:  # fixed batch order, independent of workers
        for name in total:
            total[name] += grads[name]
    for name in total:
        total[name] /= len(batch)
    grad_norm = float(np.sqrt(sum(float((g * g).sum()) for g in total.values())))
    report = {
        "iteration": iteration,
        "nll": float(np.mean([r[1] for r in results])),
        "grad_norm": grad_norm,
        "vi_sweeps": float(np.mean([r[2] for r in results])),
        "svf_l1": float(np.mean([r[3] for r in results])),
    }
    return total, report


def _save(path, store, net, config: TrainConfig, iteration: int) -> None:
    meta = {"arch": net.arch_meta(), "config": configio.to_dict(config)}
    save_checkpoint(path, store, meta=meta, iteration=iteration)


def train(demos, config: TrainConfig, out_dir=None, resume=None):
    """Run the IRL loop. Returns (net, store, report rows, timing rows).

    With an output directory, checkpoints land there every checkpoint_every
    iterations and at the end. Resuming continues the iteration counter and
    the annealing schedule from the stored iteration + 1.
    """
    demos = list(demos)
    if not demos:
        raise ConfigError("cannot train on an empty dataset")
    if config.augment:
        demos = [rot for demo in demos for rot in augment_rotations(demo)]

    if resume is not None:
        store, meta, stored_iter = load_checkpoint(resume)
        net = net_from_store(meta, store.params)
        want = "two_stage" if config.use_kinematics else "env_only"
        if net.kind != want:
            raise ConfigError(
                f"checkpoint holds a {net.kind!r} net but the config asks for {want!r}")
        store.learning_rate = config.learning_rate
        start_iter = stored_iter + 1
    else:
        net = build_net("two_stage" if config.use_kinematics else "env_only",
                        seed=config.seed)
        store = ParameterStore.create(net.parameters(), learning_rate=config.learning_rate)
        start_iter = 1

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    reports, timings = [], []
    last_iter = start_iter - 1
    for i in range(start_iter, start_iter + config.iterations):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(i,)))
        picks = rng.choice(len(demos), size=config.batch_size,
                           replace=config.batch_size > len(demos))
        batch = [demos[int(j)] for j in picks]
        started = time.perf_counter()
        try:
            grads, row = train_step(net, batch, config, i, workers=config.workers)
        except ConvergenceError as e:
            raise ConvergenceError(f"training iteration {i}: {e}") from e
        update_parameters(store, grads)
        reports.append(row)
        timings.append({"iteration": i, "seconds": time.perf_counter() - started})
        last_iter = i
        if out_dir is not None and config.checkpoint_every > 0 \
                and i % config.checkpoint_every == 0:
            _save(out_dir / f"checkpoint_{i:05d}.ckpt", store, net, config, i)
    if out_dir is not None:
        _save(out_dir / "checkpoint.ckpt", store, net, config, last_iter)
    return net, store, reports, timings


def write_report(rows, path) -> None:
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        lines.append(",".join(
            str(row["iteration"]) if c == "iteration" else f"{row[c]:.17g}"
            for c in REPORT_COLUMNS))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_timings(rows, path) -> None:
    lines = ["iteration,seconds"]
    for row in rows:
        lines.append(f"{row['iteration']},{row['seconds']:.6f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
