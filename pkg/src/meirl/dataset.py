"""Demonstration datasets on disk.

Layout: a directory with `manifest.json` plus `train/` and `test/` record files.
Each record is self-contained and little-endian:

    u32 rows, u32 cols, f64 resolution
    5 * rows * cols   f32 env channels, row-major
    u32 n_past, then n_past * (f64 t, f64 x, f64 y)
    u32 horizon, then horizon * (u32 row, u32 col)
    f64 expert speed, i64 seed, u8 tag code
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as configio
from .errors import ConfigError
from .kinematics import PastTrack
from .mdp import GridWorld
from .synthetic import (DEMO_BETA, LAYOUTS, OFF_TRAIL_PENALTY, RAY_RATE, TAG_CODES, TAGS,
                        Demonstration, WorldSpec, balance_dataset, generate_demonstration,
                        generate_world)

FORMAT_NAME = "meirl-demos-v1"


@dataclass
class GenerateConfig:
    n_demos: int = 660
    split: float = 0.9
    seed: int = 0
    rows: int = 32
    cols: int = 32
    resolution: float = 1.0
    layouts: tuple = ("straight", "curve", "tee", "cross")
    trail_width: int = 1
    speeds: tuple = (2.0, 8.0)
    horizon_min: int = 15
    horizon_max: int = 25
    demo_beta: float = DEMO_BETA
    gamma: float = 0.95
    off_trail: float = OFF_TRAIL_PENALTY
    ray_rate: float = RAY_RATE
    balance: Optional[dict] = None

    def __post_init__(self):
        if self.n_demos < 1:
            raise ConfigError("n_demos must be at least 1")
        if not 0.0 < self.split <= 1.0:
            raise ConfigError(f"split must be in (0, 1], got {self.split}")
        if not self.layouts:
            raise ConfigError("need at least one layout")
        bad = sorted(set(self.layouts) - set(LAYOUTS))
        if bad:
            raise ConfigError(f"unknown layouts: {bad}")
        if not (15 <= self.horizon_min <= self.horizon_max <= 40):
            raise ConfigError("horizon range must satisfy 15 <= min <= max <= 40")
        if any(s <= 0 for s in self.speeds):
            raise ConfigError("speeds must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "GenerateConfig":
        return configio.from_dict(cls, data)


def split_counts(n: int, split: float) -> int:
    return int(round(n * split))


def generate_dataset(config: GenerateConfig):
    """All demos for one config, shuffled and split. Deterministic per seed."""
    demos = []
    for i in range(config.n_demos):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(i,)))
        layout = config.layouts[rng.integers(len(config.layouts))]
        speed = float(config.speeds[rng.integers(len(config.speeds))])
        horizon = int(rng.integers(config.horizon_min, config.horizon_max + 1))
        world_seed = int(rng.integers(2**31 - 1))
        demo_seed = int(rng.integers(2**31 - 1))
        world = generate_world(WorldSpec(seed=world_seed, rows=config.rows, cols=config.cols,
                                         resolution=config.resolution, layout=layout,
                                         trail_width=config.trail_width))
        demos.append(generate_demonstration(
            world, speed=speed, seed=demo_seed, horizon=horizon,
            demo_beta=config.demo_beta, gamma=config.gamma,
            off_trail=config.off_trail, ray_rate=config.ray_rate))
    if config.balance is not None:
        demos = balance_dataset(demos, config.balance)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(config.n_demos,)))
    perm = shuffle_rng.permutation(len(demos))
    demos = [demos[int(j)] for j in perm]
    n_train = split_counts(len(demos), config.split)
    return demos[:n_train], demos[n_train:]


# ---------------------------------------------------------------------------
# record IO

def save_demo(path, demo: Demonstration) -> None:
    world = demo.world
    parts = [struct.pack("<IId", world.rows, world.cols, world.resolution),
             np.ascontiguousarray(world.env, dtype="<f4").tobytes()]
    n = len(demo.past.t)
    tri = np.empty((n, 3))
    tri[:, 0] = demo.past.t
    tri[:, 1:] = demo.past.xy
    parts.append(struct.pack("<I", n))
    parts.append(tri.astype("<f8").tobytes())
    parts.append(struct.pack("<I", len(demo.future)))
    parts.append(np.ascontiguousarray(demo.future, dtype="<u4").tobytes())
    parts.append(struct.pack("<dq", demo.expert_speed, demo.seed))
    parts.append(struct.pack("<B", TAG_CODES[demo.tag]))
    Path(path).write_bytes(b"".join(parts))


def _take(buf: bytes, offset: int, size: int, path) -> bytes:
    if offset + size > len(buf):
        raise ConfigError(f"truncated demo record: {path}")
    return buf[offset:offset + size]


def load_demo(path) -> Demonstration:
    buf = Path(path).read_bytes()
    off = 0
    rows, cols, resolution = struct.unpack("<IId", _take(buf, off, 16, path))
    off += 16
    env_bytes = 5 * rows * cols * 4
    env = np.frombuffer(_take(buf, off, env_bytes, path), dtype="<f4")
    env = env.reshape(5, rows, cols).astype(np.float64)
    off += env_bytes
    (n,) = struct.unpack("<I", _take(buf, off, 4, path))
    off += 4
    tri = np.frombuffer(_take(buf, off, n * 24, path), dtype="<f8").reshape(n, 3)
    off += n * 24
    (h,) = struct.unpack("<I", _take(buf, off, 4, path))
    off += 4
    future = np.frombuffer(_take(buf, off, h * 8, path), dtype="<u4")
    future = future.reshape(h, 2).astype(np.int64)
    off += h * 8
    speed, seed = struct.unpack("<dq", _take(buf, off, 16, path))
    off += 16
    (tag_code,) = struct.unpack("<B", _take(buf, off, 1, path))
    off += 1
    if off != len(buf):
        raise ConfigError(f"trailing bytes in demo record: {path}")
    if tag_code >= len(TAGS):
        raise ConfigError(f"bad tag code {tag_code} in {path}")
    world = GridWorld(rows=rows, cols=cols, resolution=resolution, env=env)
    past = PastTrack(t=tri[:, 0].copy(), xy=tri[:, 1:].copy())
    return Demonstration(world=world, past=past, future=future,
                         expert_speed=speed, seed=seed, tag=TAGS[tag_code])


def save_dataset(root, train, test, config: GenerateConfig, overwrite: bool = False) -> dict:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if manifest_path.exists() and not overwrite:
        raise ConfigError(f"dataset already exists at {root} (manifest.json present)")
    for split_name, demos in (("train", train), ("test", test)):
        sub = root / split_name
        sub.mkdir(parents=True, exist_ok=True)
        for i, demo in enumerate(demos):
            save_demo(sub / f"demo_{i:05d}.bin", demo)
    manifest = {
        "format": FORMAT_NAME,
        "rows": config.rows,
        "cols": config.cols,
        "resolution": config.resolution,
        "seed": config.seed,
        "split": config.split,
        "n_train": len(train),
        "n_test": len(test),
        "tag_counts": {name: dict(sorted(Counter(d.tag for d in demos).items()))
                       for name, demos in (("train", train), ("test", test))},
        "config": configio.to_dict(config),
    }
    configio.dump_json(manifest_path, manifest)
    return manifest


def load_dataset(root):
    root = Path(root)
    manifest = configio.load_json(root / "manifest.json")
    if manifest.get("format") != FORMAT_NAME:
        raise ConfigError(f"unrecognized dataset format in {root}")
    out = {}
    missing = []
    for split_name in ("train", "test"):
        n = manifest[f"n_{split_name}"]
        paths = [root / split_name / f"demo_{i:05d}.bin" for i in range(n)]
        missing.extend(str(p) for p in paths if not p.exists())
        out[split_name] = paths
    if missing:
        raise ConfigError(f"dataset records missing: {missing}")
    train = [load_demo(p) for p in out["train"]]
    test = [load_demo(p) for p in out["test"]]
    return train, test, manifest
