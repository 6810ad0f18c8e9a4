"""Plug-in estimation of total, natural direct and natural indirect effects.

Transition data from a two-group decision process is binned over the joint
(state, action) grid. Per group we tabulate conditional means of the reward
and next state together with a Laplace-smoothed occupancy distribution, and
combine them into the effect estimates:

    TE   = sum E[R|z1,c] P(c|z1) - sum E[R|z0,c] P(c|z0)
    NDE  = sum (E[R|z1,c] - E[R|z0,c]) P(c|z0)
    NIE  = sum E[R|z1,c] (P(c|z0) - P(c|z1))

so that TE = NDE - NIE holds exactly for any fitted table. Uncertainty comes
from a group-stratified nonparametric bootstrap over records.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CausalDataError",
    "EmptyDataset",
    "EmptyGroup",
    "DegenerateSpec",
    "MissingStep",
    "NoOverlap",
    "SupportTooLarge",
    "TransitionRecord",
    "TrajectoryDataset",
    "DiscretizationSpec",
    "ConditionalTables",
    "EffectEstimate",
    "DecompositionReport",
    "FairnessVerdict",
    "DiscreteSCM",
    "fit_tables",
    "estimate_effects",
    "estimate_te_reward",
    "estimate_nde_reward",
    "estimate_nie_reward",
    "estimate_nde_next_state",
    "decompose_gap",
    "check_dynamics_fairness",
    "oracle_effects",
    "random_scm",
    "read_jsonl",
    "write_jsonl",
    "write_effects_csv",
]

DEFAULT_BOOTSTRAP = 200
TAU_MULTIPLIER = 3.0


class CausalDataError(ValueError):
    """Base class for data problems detected by the estimators."""


class EmptyDataset(CausalDataError):
    pass


class EmptyGroup(CausalDataError):
    pass


class DegenerateSpec(CausalDataError):
    pass


class MissingStep(CausalDataError):
    pass


class NoOverlap(CausalDataError):
    """No (state, action) cell is populated under both groups."""


class SupportTooLarge(CausalDataError):
    pass


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class TransitionRecord:
    group: int
    state: tuple
    action: tuple
    reward: float
    next_state: tuple
    step: int

    def __post_init__(self):
        if self.group not in (0, 1):
            raise ValueError(f"group must be 0 or 1, got {self.group!r}")
        if len(self.state) != len(self.next_state):
            raise ValueError("state and next_state differ in dimension")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        if self.step < 0:
            raise ValueError("step must be nonnegative")


class TrajectoryDataset:
    """Column-oriented store of logged transitions.

    Records are kept as parallel numpy arrays; ``records`` materializes the
    row view when needed.
    """

    def __init__(self, z, s, a, r, s2, t, discount: float = 0.99):
        z = np.asarray(z, dtype=np.int64).reshape(-1)
        n = z.shape[0]
        if n == 0:
            raise EmptyDataset("dataset has no records")
        s = np.asarray(s, dtype=float).reshape(n, -1)
        s2 = np.asarray(s2, dtype=float).reshape(n, -1)
        a = np.asarray(a, dtype=float).reshape(n, -1)
        r = np.asarray(r, dtype=float).reshape(n)
        t = np.asarray(t, dtype=np.int64).reshape(n)
        if s.shape != s2.shape:
            raise ValueError("state and next_state differ in dimension")
        if not np.isin(z, (0, 1)).all():
            raise ValueError("group labels must be 0 or 1")
        if not np.isfinite(r).all():
            raise ValueError("rewards must be finite")
        if (t < 0).any():
            raise ValueError("step indices must be nonnegative")
        if not 0.0 <= discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        self.z, self.s, self.a, self.r, self.s2, self.t = z, s, a, r, s2, t
        self.discount = float(discount)

    @classmethod
    def from_records(cls, records: Iterable[TransitionRecord], discount: float = 0.99):
        records = list(records)
        if not records:
            raise EmptyDataset("dataset has no records")
        return cls(
            [rec.group for rec in records],
            [rec.state for rec in records],
            [rec.action for rec in records],
            [rec.reward for rec in records],
            [rec.next_state for rec in records],
            [rec.step for rec in records],
            discount=discount,
        )

    @classmethod
    def concatenate(cls, parts: Sequence["TrajectoryDataset"]):
        if not parts:
            raise EmptyDataset("nothing to concatenate")
        return cls(
            np.concatenate([p.z for p in parts]),
            np.concatenate([p.s for p in parts]),
            np.concatenate([p.a for p in parts]),
            np.concatenate([p.r for p in parts]),
            np.concatenate([p.s2 for p in parts]),
            np.concatenate([p.t for p in parts]),
            discount=parts[0].discount,
        )

    def __len__(self):
        return self.z.shape[0]

    @property
    def state_dim(self) -> int:
        return self.s.shape[1]

    @property
    def action_dim(self) -> int:
        return self.a.shape[1]

    @property
    def records(self) -> list[TransitionRecord]:
        return [
            TransitionRecord(
                int(self.z[i]),
                tuple(self.s[i]),
                tuple(self.a[i]),
                float(self.r[i]),
                tuple(self.s2[i]),
                int(self.t[i]),
            )
            for i in range(len(self))
        ]

    def subset(self, mask) -> "TrajectoryDataset":
        mask = np.asarray(mask)
        return TrajectoryDataset(
            self.z[mask], self.s[mask], self.a[mask], self.r[mask],
            self.s2[mask], self.t[mask], discount=self.discount,
        )

    def swap_groups(self) -> "TrajectoryDataset":
        return TrajectoryDataset(
            1 - self.z, self.s, self.a, self.r, self.s2, self.t, discount=self.discount
        )


def read_jsonl(path, discount: float = 0.99) -> TrajectoryDataset:
    """Load records written one JSON object per line (keys z, s, a, r, s2, t)."""
    z, s, a, r, s2, t = [], [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            z.append(row["z"])
            s.append(row["s"])
            a.append(row["a"])
            r.append(row["r"])
            s2.append(row["s2"])
            t.append(row["t"])
    if not z:
        raise EmptyDataset(f"{path} contains no records")
    return TrajectoryDataset(z, s, a, r, s2, t, discount=discount)


def write_jsonl(data: TrajectoryDataset, path) -> None:
    with open(path, "w") as fh:
        for i in range(len(data)):
            row = {
                "z": int(data.z[i]),
                "s": [float(v) for v in data.s[i]],
                "a": [float(v) for v in data.a[i]],
                "r": float(data.r[i]),
                "s2": [float(v) for v in data.s2[i]],
                "t": int(data.t[i]),
            }
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# discretization


@dataclass(frozen=True)
class DiscretizationSpec:
    """Equal-width binning of states; actions binned by width or by menu.

    When ``action_values`` is given, each action dimension is mapped to the
    index of the nearest menu value (identity binning for finite menus) and
    ``action_bins``/``action_bounds`` are derived from it.
    """

    state_bins: tuple
    state_bounds: tuple
    action_bins: tuple = ()
    action_bounds: tuple = ()
    action_values: tuple | None = None
    laplace_alpha: float = 1.0

    def __post_init__(self):
        if self.action_values is not None:
            values = tuple(tuple(sorted(float(v) for v in vs)) for vs in self.action_values)
            object.__setattr__(self, "action_values", values)
            object.__setattr__(self, "action_bins", tuple(len(v) for v in values))
            object.__setattr__(
                self, "action_bounds", tuple((v[0] - 0.5, v[-1] + 0.5) for v in values)
            )
        object.__setattr__(self, "state_bins", tuple(int(b) for b in self.state_bins))
        object.__setattr__(self, "action_bins", tuple(int(b) for b in self.action_bins))
        if len(self.state_bins) != len(self.state_bounds):
            raise DegenerateSpec("state_bins and state_bounds differ in length")
        if len(self.action_bins) != len(self.action_bounds):
            raise DegenerateSpec("action_bins and action_bounds differ in length")
        if any(b < 1 for b in self.state_bins + self.action_bins):
            raise DegenerateSpec("every dimension needs at least one bin")
        for lo, hi in tuple(self.state_bounds) + tuple(self.action_bounds):
            if not hi > lo:
                raise DegenerateSpec(f"zero-width dimension [{lo}, {hi}]")
        if self.laplace_alpha < 0:
            raise DegenerateSpec("laplace_alpha must be nonnegative")

    @classmethod
    def from_data(
        cls,
        data: TrajectoryDataset,
        state_bins: int = 10,
        action_values=None,
        action_bins: int = 10,
        laplace_alpha: float = 1.0,
    ) -> "DiscretizationSpec":
        """Bounds from the observed state range; actions by menu if supplied."""
        s_bounds = tuple(_span(data.s[:, j], state_bins) for j in range(data.state_dim))
        kwargs = {}
        if action_values is not None:
            if np.ndim(action_values[0]) == 0:
                action_values = (tuple(action_values),) * data.action_dim
            kwargs["action_values"] = tuple(tuple(v) for v in action_values)
        else:
            kwargs["action_bins"] = (action_bins,) * data.action_dim
            kwargs["action_bounds"] = tuple(
                _span(data.a[:, j], action_bins) for j in range(data.action_dim)
            )
        return cls(
            state_bins=(state_bins,) * data.state_dim,
            state_bounds=s_bounds,
            laplace_alpha=laplace_alpha,
            **kwargs,
        )

    @property
    def shape(self) -> tuple:
        return self.state_bins + self.action_bins

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def cell_index(self, s, a) -> np.ndarray:
        """Flat cell id of every (state, action) row; out-of-range values clamp."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if s.shape[1] != len(self.state_bins) or a.shape[1] != len(self.action_bins):
            raise DegenerateSpec("data dimensions do not match the discretization")
        idx = [_equal_width(s[:, j], self.state_bins[j], self.state_bounds[j])
               for j in range(s.shape[1])]
        for j in range(a.shape[1]):
            if self.action_values is not None:
                idx.append(_nearest(a[:, j], self.action_values[j]))
            else:
                idx.append(_equal_width(a[:, j], self.action_bins[j], self.action_bounds[j]))
        return np.ravel_multi_index(idx, self.shape)


def _span(col, bins):
    # half-bin padding keeps bin edges off regularly spaced data values
    lo, hi = float(np.min(col)), float(np.max(col))
    if hi - lo < 1e-12:
        return (lo - 0.5, hi + 0.5)
    pad = 0.5 * (hi - lo) / bins
    return (lo - pad, hi + pad)


def _equal_width(x, bins, bounds):
    lo, hi = bounds
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _nearest(x, values):
    values = np.asarray(values)
    return np.abs(x[:, None] - values[None, :]).argmin(axis=1)


# ---------------------------------------------------------------------------
# tables


class ConditionalTables:
    """Per-group conditional means and smoothed occupancy over occupied cells.

    Only cells with at least one record are stored; the smoothing mass of the
    remaining grid cells is accounted for analytically through ``n_cells``.
    The record-level cell assignment is retained so the bootstrap can refit
    without re-binning.
    """

    def __init__(self, spec: DiscretizationSpec, cells, cell_of, z, r, s, s2):
        self.spec = spec
        self.cells = cells              # sorted occupied flat cell ids
        self.cell_of = cell_of          # record -> position in ``cells``
        self.z = z
        self.r = r
        self.s2 = s2
        self.ds = s2 - s
        self.n_cells = spec.n_cells
        self.alpha = float(spec.laplace_alpha)
        self.counts, self.sum_r, self.sum_ds = _accumulate(cell_of, z, r, self.ds, len(cells))
        _, _, self.sum_s2 = _accumulate(cell_of, z, r, s2, len(cells))
        self._boot_cache = {}

    @property
    def state_dim(self) -> int:
        return self.s2.shape[1]

    @property
    def group_sizes(self) -> tuple:
        return int(self.counts[0].sum()), int(self.counts[1].sum())

    def prob(self, z: int) -> np.ndarray:
        """Smoothed P(cell | z) for every occupied cell."""
        c = self.counts[z]
        return (c + self.alpha) / (c.sum() + self.alpha * self.n_cells)

    def unoccupied_mass(self, z: int) -> float:
        c = self.counts[z]
        empty = self.n_cells - len(self.cells)
        return empty * self.alpha / (c.sum() + self.alpha * self.n_cells)

    def mean_reward(self, z: int) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sum_r[z] / self.counts[z]

    def mean_next_state(self, z: int) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sum_s2[z] / self.counts[z][:, None]

    def mean_increment(self, z: int) -> np.ndarray:
        """E[S' - S | z, cell]."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sum_ds[z] / self.counts[z][:, None]

    def effective(self) -> np.ndarray:
        return (self.counts[0] > 0) & (self.counts[1] > 0)

    def point_values(self) -> np.ndarray:
        return _plug_in(self.counts, self.sum_r, self.sum_ds, self.alpha, self.n_cells)

    def bootstrap(self, n_boot: int, seed=0) -> np.ndarray:
        """Replicates of ``point_values`` under group-stratified resampling."""
        key = (n_boot, seed) if isinstance(seed, (int, np.integer)) else None
        if key is not None and key in self._boot_cache:
            return self._boot_cache[key]
        rng = np.random.default_rng(seed)
        groups = [np.flatnonzero(self.z == g) for g in (0, 1)]
        out = np.full((n_boot, 4 + self.state_dim), np.nan)
        n_occ = len(self.cells)
        for b in range(n_boot):
            idx = np.concatenate([g[rng.integers(0, len(g), len(g))] for g in groups])
            counts, sum_r, sum_ds = _accumulate(
                self.cell_of[idx], self.z[idx], self.r[idx], self.ds[idx], n_occ
            )
            try:
                out[b] = _plug_in(counts, sum_r, sum_ds, self.alpha, self.n_cells)
            except NoOverlap:
                pass
        if key is not None:
            self._boot_cache[key] = out
        return out


def _accumulate(cell_of, z, r, s2, n_occ):
    k = s2.shape[1]
    counts = np.zeros((2, n_occ))
    sum_r = np.zeros((2, n_occ))
    sum_s2 = np.zeros((2, n_occ, k))
    for g in (0, 1):
        m = z == g
        c = cell_of[m]
        counts[g] = np.bincount(c, minlength=n_occ)
        sum_r[g] = np.bincount(c, weights=r[m], minlength=n_occ)
        for j in range(k):
            sum_s2[g, :, j] = np.bincount(c, weights=s2[m, j], minlength=n_occ)
    return counts, sum_r, sum_s2


def _plug_in(counts, sum_r, sum_ds, alpha, n_cells):
    """Return [te, nde, nie, n_effective, nde_s...] from accumulated sums.

    The next-state effect is computed on the increment S' - S. Holding the
    state fixed, Z has no direct effect on S itself, so this is the same
    quantity; the increment form removes the bias that arises when the two
    groups occupy different positions inside a bin.
    """
    eff = (counts[0] > 0) & (counts[1] > 0)
    if not eff.any():
        raise NoOverlap("no cell is observed under both groups")
    totals = counts.sum(axis=1, keepdims=True)
    p = (counts + alpha) / (totals + alpha * n_cells)
    w = p[:, eff]
    w = w / w.sum(axis=1, keepdims=True)
    c = counts[:, eff]
    mr = sum_r[:, eff] / c
    ms = sum_ds[:, eff] / c[:, :, None]
    te = mr[1] @ w[1] - mr[0] @ w[0]
    nde = (mr[1] - mr[0]) @ w[0]
    nie = mr[1] @ (w[0] - w[1])
    nde_s = w[0] @ (ms[1] - ms[0])
    n_eff = c.sum()
    return np.concatenate([[te, nde, nie, n_eff], nde_s])


def fit_tables(data: TrajectoryDataset, spec: DiscretizationSpec) -> ConditionalTables:
    """Bin the records and tabulate per-group conditional statistics."""
    for g in (0, 1):
        if not (data.z == g).any():
            raise EmptyGroup(f"group {g} has no records")
    flat = spec.cell_index(data.s, data.a)
    cells, cell_of = np.unique(flat, return_inverse=True)
    return ConditionalTables(spec, cells, cell_of.reshape(-1), data.z, data.r, data.s, data.s2)


# ---------------------------------------------------------------------------
# estimates


@dataclass
class EffectEstimate:
    kind: str
    value: float | np.ndarray
    stderr: float | np.ndarray
    n_effective: int
    step: int | None = None

    KINDS = ("TE_R", "NDE_R", "NIE_R", "NDE_Sprime", "TE_G")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown effect kind {self.kind!r}")
        if np.any(np.asarray(self.stderr) < 0):
            raise ValueError("stderr must be nonnegative")

    def rows(self):
        """CSV rows (kind, step, value, stderr, n); vectors expand per component."""
        step = "" if self.step is None else self.step
        if np.ndim(self.value) == 0:
            return [(self.kind, step, float(self.value), float(self.stderr), self.n_effective)]
        return [
            (f"{self.kind}[{j}]", step, float(v), float(e), self.n_effective)
            for j, (v, e) in enumerate(zip(self.value, self.stderr))
        ]


def estimate_effects(tables: ConditionalTables, n_boot: int = DEFAULT_BOOTSTRAP, seed=0):
    """All four plug-in effects from one table, sharing one bootstrap run.

    Returns a dict keyed by effect kind.
    """
    point = tables.point_values()
    if n_boot > 0:
        reps = tables.bootstrap(n_boot, seed)
        se = np.nanstd(reps, axis=0, ddof=1)
        se = np.where(np.isfinite(se), se, 0.0)
    else:
        se = np.zeros_like(point)
    n_eff = int(point[3])
    return {
        "TE_R": EffectEstimate("TE_R", float(point[0]), float(se[0]), n_eff),
        "NDE_R": EffectEstimate("NDE_R", float(point[1]), float(se[1]), n_eff),
        "NIE_R": EffectEstimate("NIE_R", float(point[2]), float(se[2]), n_eff),
        "NDE_Sprime": EffectEstimate("NDE_Sprime", point[4:].copy(), se[4:].copy(), n_eff),
    }


def estimate_te_reward(tables, n_boot=DEFAULT_BOOTSTRAP, seed=0) -> EffectEstimate:
    return estimate_effects(tables, n_boot, seed)["TE_R"]


def estimate_nde_reward(tables, n_boot=DEFAULT_BOOTSTRAP, seed=0) -> EffectEstimate:
    return estimate_effects(tables, n_boot, seed)["NDE_R"]


def estimate_nie_reward(tables, n_boot=DEFAULT_BOOTSTRAP, seed=0) -> EffectEstimate:
    return estimate_effects(tables, n_boot, seed)["NIE_R"]


def estimate_nde_next_state(tables, n_boot=DEFAULT_BOOTSTRAP, seed=0) -> EffectEstimate:
    return estimate_effects(tables, n_boot, seed)["NDE_Sprime"]


# ---------------------------------------------------------------------------
# decomposition


@dataclass
class StepEffects:
    step: int
    te_r: EffectEstimate
    nde_r: EffectEstimate
    nie_r: EffectEstimate


@dataclass
class DecompositionReport:
    per_step: list
    te_g: EffectEstimate
    residual: float
    discount: float
    metadata: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for item in self.per_step:
            for est in (item.te_r, item.nde_r, item.nie_r):
                out.extend(est.rows())
        out.extend(self.te_g.rows())
        return out


def decompose_gap(
    data: TrajectoryDataset,
    spec: DiscretizationSpec,
    horizon: int | None = None,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed=0,
) -> DecompositionReport:
    """Per-step reward-gap decomposition and its discounted sum.

    Steps beyond ``horizon`` (default: the largest logged step + 1) are
    dropped; the truncation bound gamma**H * r_max / (1 - gamma) is recorded
    in the report metadata.
    """
    if horizon is None:
        horizon = int(data.t.max()) + 1
    gamma = data.discount
    per_step = []
    te_g = nde_sum = nie_sum = 0.0
    te_var = 0.0
    n_total = 0
    for k in range(horizon):
        mask = data.t == k
        for g in (0, 1):
            if not (mask & (data.z == g)).any():
                raise MissingStep(f"step {k} has no records for group {g}")
        tables = fit_tables(data.subset(mask), spec)
        eff = estimate_effects(tables, n_boot, _step_seed(seed, k))
        for est in eff.values():
            est.step = k
        per_step.append(StepEffects(k, eff["TE_R"], eff["NDE_R"], eff["NIE_R"]))
        weight = gamma ** k
        te_g += weight * eff["TE_R"].value
        nde_sum += weight * eff["NDE_R"].value
        nie_sum += weight * eff["NIE_R"].value
        te_var += (weight * eff["TE_R"].stderr) ** 2
        n_total += eff["TE_R"].n_effective
    residual = abs(te_g - (nde_sum - nie_sum))
    r_max = float(np.max(np.abs(data.r)))
    meta = {
        "horizon": horizon,
        "truncation_bound": gamma ** horizon * r_max / (1.0 - gamma),
        "r_max": r_max,
    }
    total = EffectEstimate("TE_G", float(te_g), float(np.sqrt(te_var)), n_total)
    return DecompositionReport(per_step, total, float(residual), gamma, meta)


def _step_seed(seed, k):
    if isinstance(seed, (int, np.integer)):
        return int(seed) * 1_000_003 + k
    return seed


def write_effects_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "step", "value", "stderr", "n"])
        for kind, step, value, stderr, n in rows:
            writer.writerow([kind, step, repr(float(value)), repr(float(stderr)), int(n)])


# ---------------------------------------------------------------------------
# fairness check


@dataclass
class FairnessVerdict:
    nde_r: EffectEstimate
    nde_sprime: EffectEstimate
    tau_r: float
    tau_s: np.ndarray
    violated: bool

    @property
    def threshold(self) -> float:
        """Largest threshold applied to any component."""
        return float(max(self.tau_r, np.max(self.tau_s)))


def check_dynamics_fairness(
    tables: ConditionalTables,
    tau: float | None = None,
    n_boot: int = DEFAULT_BOOTSTRAP,
    seed=0,
) -> FairnessVerdict:
    """Flag a violation when either direct effect exceeds its threshold.

    With ``tau=None`` each component is compared with three times its own
    bootstrap standard error; a user-supplied ``tau`` applies uniformly.
    """
    if tau is not None and tau < 0:
        raise ValueError("tau must be nonnegative")
    eff = estimate_effects(tables, n_boot, seed)
    nde_r, nde_s = eff["NDE_R"], eff["NDE_Sprime"]
    if tau is None:
        tau_r = TAU_MULTIPLIER * float(nde_r.stderr)
        tau_s = TAU_MULTIPLIER * np.asarray(nde_s.stderr, dtype=float)
    else:
        tau_r = float(tau)
        tau_s = np.full(np.shape(nde_s.value), float(tau))
    violated = bool(abs(nde_r.value) > tau_r or np.any(np.abs(nde_s.value) > tau_s))
    return FairnessVerdict(nde_r, nde_s, tau_r, tau_s, violated)


# ---------------------------------------------------------------------------
# brute-force oracle


@dataclass
class DiscreteSCM:
    """Finite structural model Z -> S -> A -> R with independent noises.

    ``f_s[z, us]`` gives S; ``f_a[z, s, ua]`` gives A; ``f_r[z, s, a, ur]``
    gives the (real) reward. Each noise has an explicit probability vector.
    """

    p_z1: float
    p_us: np.ndarray
    p_ua: np.ndarray
    p_ur: np.ndarray
    f_s: np.ndarray
    f_a: np.ndarray
    f_r: np.ndarray

    @property
    def n_s(self) -> int:
        return self.f_a.shape[1]

    @property
    def n_a(self) -> int:
        return self.f_r.shape[2]

    def sample(self, n: int, rng, discount: float = 0.99) -> TrajectoryDataset:
        z = (rng.random(n) < self.p_z1).astype(np.int64)
        us = rng.choice(len(self.p_us), size=n, p=self.p_us)
        ua = rng.choice(len(self.p_ua), size=n, p=self.p_ua)
        ur = rng.choice(len(self.p_ur), size=n, p=self.p_ur)
        s = self.f_s[z, us]
        a = self.f_a[z, s, ua]
        r = self.f_r[z, s, a, ur]
        zeros = np.zeros(n)
        return TrajectoryDataset(z, s, a, r, zeros, zeros.astype(np.int64), discount)

    def spec(self, laplace_alpha: float = 1.0) -> DiscretizationSpec:
        return DiscretizationSpec(
            state_bins=(self.n_s,),
            state_bounds=((-0.5, self.n_s - 0.5),),
            action_values=(tuple(range(self.n_a)),),
            laplace_alpha=laplace_alpha,
        )


def oracle_effects(scm: DiscreteSCM, max_support: int = 1_000_000):
    """Exact (te, nde, nie) by enumerating every exogenous noise combination."""
    size = len(scm.p_us) * len(scm.p_ua) * len(scm.p_ur)
    if size > max_support:
        raise SupportTooLarge(f"{size} noise combinations exceed cap {max_support}")
    e_r = [0.0, 0.0]
    e_cross = 0.0
    for (us, pu), (ua, pa), (ur, pr) in itertools.product(
        enumerate(scm.p_us), enumerate(scm.p_ua), enumerate(scm.p_ur)
    ):
        w = pu * pa * pr
        for z in (0, 1):
            s = scm.f_s[z, us]
            a = scm.f_a[z, s, ua]
            e_r[z] += w * scm.f_r[z, s, a, ur]
        s0 = scm.f_s[0, us]
        a0 = scm.f_a[0, s0, ua]
        e_cross += w * scm.f_r[1, s0, a0, ur]
    te = e_r[1] - e_r[0]
    nde = e_cross - e_r[0]
    nie = e_cross - e_r[1]
    return te, nde, nie


def random_scm(rng, max_cells: int = 16, noise_extra: int = 2) -> DiscreteSCM:
    """Random full-support SCM with |S| * |A| <= ``max_cells``."""
    while True:
        n_s, n_a = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        if n_s * n_a <= max_cells:
            break
    k_s, k_a, k_r = n_s + noise_extra, n_a + noise_extra, 3
    p_us = rng.dirichlet(np.full(k_s, 2.0))
    p_ua = rng.dirichlet(np.full(k_a, 2.0))
    p_ur = rng.dirichlet(np.full(k_r, 2.0))
    f_s = np.empty((2, k_s), dtype=np.int64)
    for z in (0, 1):
        f_s[z] = np.concatenate([rng.permutation(n_s), rng.integers(0, n_s, noise_extra)])
    f_a = np.empty((2, n_s, k_a), dtype=np.int64)
    for z in (0, 1):
        for s in range(n_s):
            f_a[z, s] = np.concatenate([rng.permutation(n_a), rng.integers(0, n_a, noise_extra)])
    f_r = rng.normal(0.0, 1.0, size=(2, n_s, n_a, k_r))
    return DiscreteSCM(0.5, p_us, p_ua, p_ur, f_s, f_a, f_r)
