"""Two-group resource allocation and lending simulators.

Both environments run one small MDP per group in parallel, share the action
menu, and return a reward per group. A pair of parameters ``alpha`` tilts the
reward channel and ``beta`` the transition channel toward whichever group has
the larger entry; equal entries give group-symmetric dynamics.

The step functions accept arrays with any leading batch shape so that many
episodes can be simulated at once; the single-state API wraps them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .causal import TrajectoryDataset

__all__ = [
    "ALLOCATION_MENU",
    "LENDING_MENU",
    "AllocationParams",
    "LendingParams",
    "GroupEnvState",
    "StepOutcome",
    "GroupEnv",
    "relative_advantage",
    "reset",
    "step_allocation",
    "step_lending",
    "shift_credit_mass",
    "rollout",
    "random_policy",
    "preset",
    "params_from_config",
    "load_env_config",
]

ALLOCATION_MENU = np.arange(11, dtype=float)
LENDING_MENU = np.arange(6, dtype=float)   # threshold index; 5 grants no loans
N_SCORE_BINS = 5


def relative_advantage(pair) -> np.ndarray:
    """Per-group advantage: the larger entry's group gets the difference."""
    first, second = float(pair[0]), float(pair[1])
    return np.array([max(first - second, 0.0), max(second - first, 0.0)])


@dataclass(frozen=True)
class AllocationParams:
    init_rates: tuple = (6.0, 6.0)
    alpha: tuple = (0.0, 0.0)
    beta: tuple = (0.0, 0.0)
    rate_delta: float = 0.1
    allocation_cost: float = 0.25
    episode_len: int = 100
    rate_max: float = 12.0
    advantage_channel_swap: bool = False

    kind = "allocation"
    menu = ALLOCATION_MENU
    state_dim = 1

    def __post_init__(self):
        if min(self.init_rates) <= 0:
            raise ValueError("initial incident rates must be positive")
        if self.rate_delta <= 0:
            raise ValueError("rate_delta must be positive")
        if self.episode_len < 1:
            raise ValueError("episode_len must be at least 1")

    def advantages(self):
        adv_r, adv_t = relative_advantage(self.alpha), relative_advantage(self.beta)
        return (adv_t, adv_r) if self.advantage_channel_swap else (adv_r, adv_t)

    def initial_state(self) -> np.ndarray:
        return np.array(self.init_rates, dtype=float).reshape(2, 1)


@dataclass(frozen=True)
class LendingParams:
    init_dists: tuple = ((0.0, 0.2, 0.3, 0.3, 0.2), (0.0, 0.2, 0.3, 0.3, 0.2))
    alpha: tuple = (0.0, 0.0)
    beta: tuple = (0.0, 0.0)
    shift_mass: float = 0.01
    interest: float = 1.0
    default_cost: float = 1.0
    applicants_per_step: int = 10
    base_repay: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    episode_len: int = 100
    advantage_channel_swap: bool = False

    kind = "lending"
    menu = LENDING_MENU
    state_dim = N_SCORE_BINS

    def __post_init__(self):
        dists = np.asarray(self.init_dists, dtype=float)
        if dists.shape != (2, N_SCORE_BINS):
            raise ValueError("init_dists must hold two 5-vectors")
        if (dists < 0).any() or np.abs(dists.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("each initial distribution must lie on the simplex")
        if not 0 < self.shift_mass < dists[dists > 0].min():
            raise ValueError("shift_mass must be below the smallest positive mass")
        if self.episode_len < 1:
            raise ValueError("episode_len must be at least 1")

    def advantages(self):
        adv_r, adv_t = relative_advantage(self.alpha), relative_advantage(self.beta)
        return (adv_t, adv_r) if self.advantage_channel_swap else (adv_r, adv_t)

    def initial_state(self) -> np.ndarray:
        return np.array(self.init_dists, dtype=float)


@dataclass
class GroupEnvState:
    states: np.ndarray      # shape (2, state_dim)
    step: int = 0

    def disparity(self) -> float:
        return float(np.abs(self.states[0] - self.states[1]).sum())


@dataclass
class StepOutcome:
    rewards: np.ndarray     # (r_z0, r_z1)
    next: GroupEnvState
    info: dict = field(default_factory=dict)


def preset(env: str, setting: str):
    """Environment parameters for the named experimental setting.

    ``setting`` is one of ``detect`` (equal starts, no advantage; sweeps
    overwrite alpha/beta), ``unfair`` (second group advantaged in both
    channels) or ``fair`` (no advantage, first group starts worse off).
    """
    if env == "allocation":
        table = {
            "detect": AllocationParams(),
            "unfair": AllocationParams(alpha=(0.0, 0.05), beta=(0.0, 0.05)),
            "fair": AllocationParams(init_rates=(6.2, 6.0)),
        }
    elif env == "lending":
        table = {
            "detect": LendingParams(),
            "unfair": LendingParams(alpha=(0.0, 0.01), beta=(0.0, 0.05)),
            "fair": LendingParams(
                init_dists=((0.0, 0.2, 0.35, 0.25, 0.2), (0.0, 0.2, 0.25, 0.35, 0.2))
            ),
        }
    else:
        raise ValueError(f"unknown environment {env!r}")
    if setting not in table:
        raise ValueError(f"unknown setting {setting!r}")
    return table[setting]


def params_from_config(cfg: dict):
    """Build parameters from a JSON-style dict (``env``, ``init``, ``alpha``, ...)."""
    cfg = dict(cfg)
    env = cfg.pop("env", "allocation")
    base = preset(env, cfg.pop("setting", "detect"))
    if "init" in cfg:
        key = "init_rates" if env == "allocation" else "init_dists"
        cfg[key] = tuple(tuple(v) if np.ndim(v) else v for v in cfg.pop("init"))
    for key in ("alpha", "beta", "base_repay"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    return replace(base, **cfg)


def load_env_config(path):
    with open(path) as fh:
        return params_from_config(json.load(fh))


def params_to_dict(params) -> dict:
    out = asdict(params)
    out["env"] = params.kind
    return out


def reset(params, seed=None) -> GroupEnvState:
    return GroupEnvState(params.initial_state(), 0)


# ---------------------------------------------------------------------------
# allocation


def _allocation_dynamics(rates, alloc, params: AllocationParams, rng):
    """Batched allocation step; ``rates`` and ``alloc`` have shape (..., 2)."""
    adv_r, adv_t = params.advantages()
    incidents = np.clip(np.rint(rng.normal(rates, 1.0)), 0.0, None)
    solved = np.minimum(incidents, alloc * (1.0 + adv_r))
    rewards = -(incidents - solved) - params.allocation_cost * alloc
    # a step with no incidents counts as handled
    improved = (solved > incidents / 2.0) | (incidents == 0)
    down = rates - params.rate_delta * (1.0 + adv_t)
    up = rates + params.rate_delta * (1.0 - adv_t)
    nxt = np.clip(np.where(improved, down, up), 0.0, params.rate_max)
    return rewards, nxt, incidents, solved


def step_allocation(state: GroupEnvState, action, params: AllocationParams, rng) -> StepOutcome:
    rates = state.states[:, 0]
    alloc = np.asarray(action, dtype=float).reshape(2)
    rewards, nxt, incidents, solved = _allocation_dynamics(rates, alloc, params, rng)
    return StepOutcome(
        rewards,
        GroupEnvState(nxt.reshape(2, 1), state.step + 1),
        {"incidents": incidents, "solved": solved},
    )


# ---------------------------------------------------------------------------
# lending


def shift_credit_mass(dists, repaid, defaulted, shift_mass, adv_t):
    """Move probability mass up per repayment and down per default.

    Mass leaving a bin is capped at what the bin holds, so the update
    conserves total mass exactly; a final clamp-and-rescale only absorbs
    floating-point drift.
    """
    dists = np.asarray(dists, dtype=float)
    adv_t = np.asarray(adv_t, dtype=float)
    up = repaid * shift_mass * (1.0 + adv_t)[..., None]
    up[..., -1] = 0.0
    down = defaulted * shift_mass
    down = np.asarray(down, dtype=float).copy()
    down[..., 0] = 0.0
    out = up + down
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(out > dists, dists / out, 1.0)
    up *= scale
    down *= scale
    nxt = dists - up - down
    nxt[..., 1:] += up[..., :-1]
    nxt[..., :-1] += down[..., 1:]
    nxt = np.clip(nxt, 0.0, None)
    return nxt / nxt.sum(axis=-1, keepdims=True)


def _lending_dynamics(dists, thresholds, params: LendingParams, rng):
    """Batched lending step; ``dists`` (..., 2, 5), ``thresholds`` (..., 2)."""
    adv_r, adv_t = params.advantages()
    pvals = np.clip(dists, 0.0, None)
    pvals = pvals / pvals.sum(axis=-1, keepdims=True)
    applicants = rng.multinomial(params.applicants_per_step, pvals)
    bins = np.arange(N_SCORE_BINS)
    granted = applicants * (bins >= np.asarray(thresholds)[..., None])
    p_repay = np.clip(np.asarray(params.base_repay) * (1.0 + adv_r)[:, None], 0.0, 1.0)
    repaid = rng.binomial(granted, np.broadcast_to(p_repay, granted.shape))
    defaulted = granted - repaid
    rewards = params.interest * repaid.sum(-1) - params.default_cost * defaulted.sum(-1)
    nxt = shift_credit_mass(dists, repaid, defaulted, params.shift_mass,
                            np.broadcast_to(adv_t, thresholds.shape))
    return rewards.astype(float), nxt, repaid, defaulted


def step_lending(state: GroupEnvState, action, params: LendingParams, rng) -> StepOutcome:
    thresholds = np.asarray(action, dtype=float).reshape(2)
    rewards, nxt, repaid, defaulted = _lending_dynamics(state.states, thresholds, params, rng)
    return StepOutcome(
        rewards,
        GroupEnvState(nxt, state.step + 1),
        {"repaid": repaid.sum(-1), "defaulted": defaulted.sum(-1)},
    )


def _batched_step(params, states, actions, rng):
    """Step a batch: ``states`` (E, 2, d), ``actions`` (E, 2)."""
    if params.kind == "allocation":
        rewards, nxt, _, _ = _allocation_dynamics(states[..., 0], actions, params, rng)
        return rewards, nxt[..., None]
    rewards, nxt, _, _ = _lending_dynamics(states, actions, params, rng)
    return rewards, nxt


class GroupEnv:
    """Stateful wrapper with its own seeded generator."""

    def __init__(self, params, seed=0):
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.state = reset(params)

    @property
    def menu(self) -> np.ndarray:
        return self.params.menu

    def reset(self) -> GroupEnvState:
        self.state = reset(self.params)
        return self.state

    def step(self, action) -> StepOutcome:
        if self.params.kind == "allocation":
            out = step_allocation(self.state, action, self.params, self.rng)
        else:
            out = step_lending(self.state, action, self.params, self.rng)
        self.state = out.next
        return out

    @property
    def done(self) -> bool:
        return self.state.step >= self.params.episode_len


# ---------------------------------------------------------------------------
# rollouts


def random_policy(menu) -> Callable:
    """Uniform draws from ``menu`` for every group independently."""
    menu = np.asarray(menu, dtype=float)

    def policy(states, step, rng):
        return menu[rng.integers(0, len(menu), size=states.shape[:-1])]

    return policy


def rollout(params, policy, seed, episodes: int, discount: float = 0.99) -> TrajectoryDataset:
    """Simulate ``episodes`` episodes in lockstep and log every group-step.

    ``policy(states, step, rng)`` maps a batch of states (E, 2, d) to actions
    (E, 2). Records are ordered by episode, then step, then group.
    """
    rng = np.random.default_rng(seed)
    E, T, d = episodes, params.episode_len, params.state_dim
    states = np.broadcast_to(params.initial_state(), (E, 2, d)).copy()
    S = np.empty((E, T, 2, d))
    A = np.empty((E, T, 2))
    R = np.empty((E, T, 2))
    S2 = np.empty((E, T, 2, d))
    for t in range(T):
        actions = np.asarray(policy(states, t, rng), dtype=float)
        rewards, nxt = _batched_step(params, states, actions, rng)
        S[:, t], A[:, t], R[:, t], S2[:, t] = states, actions, rewards, nxt
        states = nxt
    z = np.broadcast_to(np.array([0, 1]), (E, T, 2))
    t_idx = np.broadcast_to(np.arange(T)[None, :, None], (E, T, 2))
    return TrajectoryDataset(
        z.reshape(-1),
        S.reshape(-1, d),
        A.reshape(-1, 1),
        R.reshape(-1),
        S2.reshape(-1, d),
        t_idx.reshape(-1),
        discount=discount,
    )
