"""Experiment drivers: analytic sweep, detection heatmaps and planner training.

Every driver writes CSV files plus a ``manifest.json`` describing the run.
Numbers are written with ``repr`` so reruns with the same configuration give
byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import sweep_w0
from .causal import DiscretizationSpec, check_dynamics_fairness, fit_tables
from .dynamics import EnsembleConfig
from .envs import params_from_config, params_to_dict, preset, random_policy, rollout
from .planner import PlanConfig, learn, parse_mode

__all__ = [
    "ExperimentConfig",
    "HeatmapResult",
    "ANALYTIC_SETTINGS",
    "SWEEP_RANGES",
    "DETECT_STATE_BINS",
    "TRAIN_PLANNER_DEFAULTS",
    "TRAIN_MODEL_DEFAULTS",
    "FINAL_WINDOW",
    "config_hash",
    "write_manifest",
    "resolve_params",
    "run_analytic",
    "run_detect",
    "detect_cell",
    "run_train",
]

ANALYTIC_SETTINGS = {"w=0.1": 0.1, "w=3.0": 3.0}
# advantage parameter ranges swept per env and channel
SWEEP_RANGES = {
    "allocation": {"reward": (0.0, 1.0), "transition": (0.0, 0.5)},
    "lending": {"reward": (0.0, 0.2), "transition": (0.0, 0.5)},
}
DETECT_STATE_BINS = {"allocation": 10, "lending": 4}
# planner settings for training runs; the config's "planner" section overrides them
TRAIN_PLANNER_DEFAULTS = {
    "allocation": {"disparity_threshold": 0.05, "penalty": 3.0, "state_penalty": 100.0},
    "lending": {"disparity_threshold": 0.02, "penalty": 3.0, "state_penalty": 100.0},
}
# model settings for training runs; the config's "model" section overrides them.
# A higher log-variance floor keeps near-deterministic targets from dominating
# the likelihood, which otherwise leaves the mean unfit where rewards are noisy.
TRAIN_MODEL_DEFAULTS = {"min_logvar": -3.0}
# summary values average this many trailing epochs of the seed-averaged curve
FINAL_WINDOW = 5
EPOCH_HEADER = ("epoch", "return", "gap", "df_flag", "nde_r", "nde_s")
EPISODE_HEADER = ("step", "action_z0", "action_z1", "r_z0", "r_z1", "state_disparity", "decision_gap")


@dataclass
class ExperimentConfig:
    kind: str = "analytic"
    env: str = "allocation"
    setting: str | None = None
    env_overrides: dict = field(default_factory=dict)
    channel: str = "both"
    resolution: int = 8
    episodes: int = 200
    n_points: int = 101
    seeds: list = field(default_factory=lambda: [0])
    algos: list = field(default_factory=lambda: ["pets", "fair-a", "fair-s", "insightfair"])
    epochs: int = 30
    warmup_episodes: int = 5
    refit_epochs: int = 10
    n_boot: int = 200
    state_bins: int | None = None
    planner: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    out: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.kind not in ("analytic", "detect", "train", "plot"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.resolution < 2:
            raise ValueError("sweep resolution must be at least 2")
        if self.kind == "train" and not self.seeds:
            raise ValueError("training needs at least one seed")
        if self.channel not in ("reward", "transition", "both"):
            raise ValueError(f"unknown channel {self.channel!r}")
        self.algos = [parse_mode(a) for a in self.algos]

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("out")
        out.pop("workers")     # scheduling does not change results
        return out


@dataclass
class HeatmapResult:
    channel: str
    row_label: str
    col_label: str
    row_values: np.ndarray
    col_values: np.ndarray
    nde: np.ndarray          # (resolution, resolution)
    stderr: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        shape = (len(self.row_values), len(self.col_values))
        if self.nde.shape != shape or np.isnan(self.nde).any():
            raise ValueError("heatmap grid is incomplete")

    def rows(self):
        for i, rv in enumerate(self.row_values):
            for j, cv in enumerate(self.col_values):
                yield (float(rv), float(cv), float(self.nde[i, j]), float(self.stderr[i, j]),
                       float(self.tau[i, j]))

    def write_csv(self, path):
        _write_csv(path, (self.row_label, self.col_label, "nde", "stderr", "tau"), self.rows())


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _file_digest(path) -> str:
    """Git-style blob hash of a file's bytes."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(out_dir, config: ExperimentConfig, outputs, extra=None) -> Path:
    cfg = config.to_dict()
    manifest = {
        "package_version": __version__,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seeds": list(config.seeds),
        "outputs": {Path(p).name: _file_digest(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def resolve_params(config: ExperimentConfig):
    setting = config.setting or ("detect" if config.kind == "detect" else "unfair")
    base = params_to_dict(preset(config.env, setting))
    base.update(config.env_overrides)
    return params_from_config(base)


# ---------------------------------------------------------------------------
# analytic


def run_analytic(config: ExperimentConfig) -> list:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "analytic.csv"
    rows = []
    for name, w in ANALYTIC_SETTINGS.items():
        for r in sweep_w0(w, w, w, n_points=config.n_points):
            rows.append((name,) + tuple(float(v) for v in r))
    _write_csv(path, ("setting", "w0", "te", "nde", "neg_nie"), rows)
    write_manifest(out, config, [path])
    return [path]


# ---------------------------------------------------------------------------
# detection sweep


def detect_cell(params, channel: str, episodes: int, seed, state_bins: int, n_boot: int):
    """(nde, stderr, tau) of the channel's direct effect from random-policy data.

    For a multi-dimensional state the component with the largest magnitude
    is reported.
    """
    data = rollout(params, random_policy(params.menu), seed, episodes)
    spec = DiscretizationSpec.from_data(data, state_bins=state_bins, action_values=params.menu)
    seed_int = int(np.random.SeedSequence(seed).generate_state(1)[0]) if not isinstance(seed, int) else seed
    verdict = check_dynamics_fairness(fit_tables(data, spec), n_boot=n_boot, seed=seed_int)
    if channel == "reward":
        return float(verdict.nde_r.value), float(verdict.nde_r.stderr), float(verdict.tau_r)
    values = np.atleast_1d(verdict.nde_sprime.value)
    k = int(np.argmax(np.abs(values)))
    tau = np.atleast_1d(verdict.tau_s)
    return (float(values[k]), float(np.atleast_1d(verdict.nde_sprime.stderr)[k]),
            float(tau[k] if tau.size > 1 else tau[0]))


def _detect_job(args):
    return detect_cell(*args)


def _sweep_params(base, channel, first, second):
    key = "alpha" if channel == "reward" else "beta"
    return dataclasses.replace(base, **{key: (float(first), float(second))})


def run_detect(config: ExperimentConfig) -> list:
    """One heatmap per requested channel; cell seeds are independent streams."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    base = resolve_params(config)
    bins = config.state_bins or DETECT_STATE_BINS[base.kind]
    channels = ("reward", "transition") if config.channel == "both" else (config.channel,)
    k = config.resolution
    results, paths = [], []
    root = np.random.SeedSequence(config.seeds[0])
    for c_idx, channel in enumerate(channels):
        lo, hi = SWEEP_RANGES[base.kind][channel]
        grid = np.linspace(lo, hi, k)
        cell_seeds = np.random.SeedSequence(root.generate_state(1)[0] + c_idx).spawn(k * k)
        jobs = [
            (_sweep_params(base, channel, grid[i], grid[j]), channel, config.episodes,
             int(cell_seeds[i * k + j].generate_state(1)[0]), bins, config.n_boot)
            for i in range(k) for j in range(k)
        ]
        if config.workers > 1:
            with ProcessPoolExecutor(config.workers) as pool:
                values = list(pool.map(_detect_job, jobs))
        else:
            values = [_detect_job(j) for j in jobs]
        arr = np.array(values).reshape(k, k, 3)
        name = "alpha" if channel == "reward" else "beta"
        result = HeatmapResult(channel, f"{name}_z0", f"{name}_z1", grid, grid,
                               arr[..., 0], arr[..., 1], arr[..., 2])
        path = out / f"detect_{base.kind}_{channel}.csv"
        result.write_csv(path)
        results.append(result)
        paths.append(path)
    write_manifest(out, config, paths, {"state_bins": bins, "behavior_policy": "uniform random"})
    return results


# ---------------------------------------------------------------------------
# training


def _train_job(args):
    params, plan_cfg, model_cfg, config, seed = args
    res = learn(params, plan_cfg, epochs=config.epochs, seed=seed, model_config=model_cfg,
                warmup_episodes=config.warmup_episodes, refit_epochs=config.refit_epochs,
                n_boot=config.n_boot, state_bins=config.state_bins or DETECT_STATE_BINS[params.kind])
    return [e.row() for e in res.epochs], list(res.episodes[-1].rows())


def _slug(mode: str) -> str:
    return {"PETS": "pets", "FairA": "fair-a", "FairS": "fair-s", "InsightFair": "insightfair"}[mode]


def run_train(config: ExperimentConfig) -> dict:
    """Learning curves per algorithm and seed, their seed average, and the
    final-episode trace of every run.

    ``train_summary.csv`` reports, per algorithm, the return and |gap| of the
    seed-averaged curve averaged over the last ``FINAL_WINDOW`` epochs.

    Returns ``{algo: {"epochs": [...per seed rows], "episodes": [...]}}``.
    """
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    params = resolve_params(config)
    model_cfg = EnsembleConfig(**{**TRAIN_MODEL_DEFAULTS, **config.model})
    defaults = TRAIN_PLANNER_DEFAULTS[params.kind]
    paths, results, summary, planners = [], {}, [], {}
    for algo in config.algos:
        plan_cfg = PlanConfig(**{**defaults, **config.planner, "mode": algo})
        planners[algo] = dataclasses.asdict(plan_cfg)
        jobs = [(params, plan_cfg, model_cfg, config, s) for s in config.seeds]
        if config.workers > 1:
            with ProcessPoolExecutor(config.workers) as pool:
                runs = list(pool.map(_train_job, jobs))
        else:
            runs = [_train_job(j) for j in jobs]
        slug = _slug(algo)
        for seed, (epoch_rows, episode_rows) in zip(config.seeds, runs):
            p = out / f"train_{slug}_seed{seed}.csv"
            _write_csv(p, EPOCH_HEADER, epoch_rows)
            q = out / f"episode_{slug}_seed{seed}.csv"
            _write_csv(q, EPISODE_HEADER, episode_rows)
            paths += [p, q]
        curves = np.array([[row[1:] for row in r[0]] for r in runs], dtype=float)
        mean = np.nanmean(curves, axis=0) if len(runs) > 1 else curves[0]
        p = out / f"train_{slug}_mean.csv"
        _write_csv(p, EPOCH_HEADER, [(e,) + tuple(float(v) for v in mean[e]) for e in range(len(mean))])
        paths.append(p)
        tail = mean[-FINAL_WINDOW:]
        summary.append((slug, float(tail[:, 0].mean()), float(abs(tail[:, 1].mean()))))
        results[algo] = {"epochs": [r[0] for r in runs], "episodes": [r[1] for r in runs]}
    p = out / "train_summary.csv"
    _write_csv(p, ("algo", "final_return", "final_abs_gap"), summary)
    paths.append(p)
    write_manifest(out, config, paths, {"env_params": params_to_dict(params),
                                        "model": dataclasses.asdict(model_cfg), "planner": planners})
    return results
