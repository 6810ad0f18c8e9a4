"""Cross-entropy-method planning over a learned ensemble.

Four objectives share one optimizer:

* ``PETS``: summed discounted return of both groups.
* ``FairA``: same objective, one action sequence shared by both groups.
* ``FairS``: return minus a penalty on the simulated terminal state disparity.
* ``InsightFair``: return minus ``penalty * |G_z1 - G_z0|``; the two groups
  share one action sequence when the environment passes the dynamics-fairness
  check and their states are within ``disparity_threshold`` of each other.

Candidates are sampled in the continuous embedding of the action menu and
projected to the nearest menu value before evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .causal import (
    CausalDataError,
    DiscretizationSpec,
    TrajectoryDataset,
    check_dynamics_fairness,
    fit_tables,
)
from .dynamics import EnsembleConfig, EnsembleModel, UntrainedModel, project_simplex
from .envs import GroupEnv, GroupEnvState, random_policy, rollout

__all__ = [
    "MODES",
    "parse_mode",
    "PlanConfig",
    "ActionDistribution",
    "CandidateEval",
    "PlanResult",
    "project_to_menu",
    "evaluate_candidates",
    "update_distribution",
    "plan",
    "plan_details",
    "EpisodeLog",
    "EpochSummary",
    "LearnResult",
    "run_episode",
    "learn",
]

MODES = ("PETS", "FairA", "FairS", "InsightFair")
_ALIASES = {
    "pets": "PETS",
    "faira": "FairA",
    "fair-a": "FairA",
    "fairs": "FairS",
    "fair-s": "FairS",
    "insightfair": "InsightFair",
}


def parse_mode(name: str) -> str:
    key = str(name).strip().lower().replace("_", "-")
    if key in _ALIASES:
        return _ALIASES[key]
    raise ValueError(f"unknown planner mode {name!r}; expected one of {MODES}")


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 10
    population: int = 200
    elites: int = 20
    iterations: int = 5
    particles: int = 5
    penalty: float = 1.0
    disparity_threshold: float = 0.05
    discount: float = 0.99
    mode: str = "PETS"
    state_penalty: float = 1.0
    std_floor: float = 1e-3
    keep_elites: bool = True
    common_noise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", parse_mode(self.mode))
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.particles < 1:
            raise ValueError("need at least one particle")
        if not 1 <= self.elites <= self.population:
            raise ValueError("need 1 <= elites <= population")
        if self.iterations < 1:
            raise ValueError("need at least one CEM iteration")
        if self.penalty < 0 or self.state_penalty < 0 or self.disparity_threshold < 0:
            raise ValueError("penalties and thresholds must be nonnegative")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")


@dataclass
class ActionDistribution:
    """Independent Gaussians per step and action column, clipped to the menu range.

    ``mean`` and ``std`` have shape (horizon, columns); one column means a
    sequence shared by both groups, two columns mean one per group.
    """

    mean: np.ndarray
    std: np.ndarray
    low: float
    high: float

    def __post_init__(self):
        self.mean = np.clip(np.asarray(self.mean, dtype=float), self.low, self.high)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same shape")
        if not (self.std > 0).all():
            raise ValueError("std must be positive")

    @classmethod
    def initial(cls, horizon: int, columns: int, low: float, high: float):
        shape = (horizon, columns)
        return cls(np.full(shape, 0.5 * (low + high)), np.full(shape, 0.25 * (high - low)), low, high)

    @property
    def shared(self) -> bool:
        return self.mean.shape[1] == 1

    def sample(self, n: int, rng) -> np.ndarray:
        draws = self.mean + self.std * rng.standard_normal((n,) + self.mean.shape)
        return np.clip(draws, self.low, self.high)


@dataclass
class CandidateEval:
    actions: np.ndarray          # (horizon, 2) menu values
    returns: np.ndarray          # simulated (G_z0, G_z1)
    gap: float                   # G_z1 - G_z0
    objective: float
    sample: np.ndarray | None = None   # continuous draw the actions came from


@dataclass
class PlanResult:
    action: np.ndarray
    best: CandidateEval
    shared: bool
    best_history: list = field(default_factory=list)


def project_to_menu(x, menu) -> np.ndarray:
    """Nearest menu value for every entry of ``x``; ties go to the lower value."""
    menu = np.asarray(menu, dtype=float)
    x = np.asarray(x, dtype=float)
    idx = np.abs(x[..., None] - menu).argmin(axis=-1)
    return menu[idx]


def _expand(actions) -> np.ndarray:
    """Broadcast shared (N, H, 1) sequences to both groups."""
    actions = np.asarray(actions, dtype=float)
    if actions.shape[-1] == 1:
        actions = np.repeat(actions, 2, axis=-1)
    return actions


def _simulate(model: EnsembleModel, state: GroupEnvState, actions, config: PlanConfig, rng,
              predictor=None):
    """Roll every candidate forward with ``config.particles`` particles each.

    Particle ``p`` is bound to ensemble member ``p % B`` for the whole
    rollout. With ``config.common_noise`` every candidate sees the same
    noise draws for a given particle, so candidates are ranked on their
    actions rather than on sampling luck. Returns particle-averaged discounted returns (N, 2), the
    particle-averaged terminal L1 disparity (N,), and the objective (N,).
    """
    if not model.trained:
        raise UntrainedModel("fit the model before planning")
    predictor = predictor or model.pair_predictor()
    actions = _expand(actions).astype(np.float32)
    N, H = actions.shape[:2]
    B = model.ensemble_size
    P = config.particles
    per_member = -(-P // B)
    d = model.state_dim
    shape = (B, per_member * N, 2)
    states = np.broadcast_to(np.asarray(state.states, dtype=np.float32), shape + (d,))
    returns = np.zeros(shape)
    weight = 1.0
    for t in range(H):
        a = np.broadcast_to(actions[None, None, :, t, :], (B, per_member, N, 2))
        s_mean, r_mean, std = predictor(states, a.reshape(shape + (1,)))
        if config.common_noise:
            noise = rng.standard_normal((B, per_member, 1) + std.shape[2:], dtype=np.float32)
            noise = np.broadcast_to(noise, (B, per_member, N) + std.shape[2:]).reshape(std.shape)
        else:
            noise = rng.standard_normal(std.shape, dtype=np.float32)
        states = s_mean + std[..., :-1] * noise[..., :-1]
        if model.simplex_state:
            states = project_simplex(states)
        returns += weight * (r_mean + std[..., -1] * noise[..., -1])
        weight *= config.discount
    # particle p = j * B + b lives at [b, j]; keep the first P
    returns = returns.reshape(B, per_member, N, 2).transpose(1, 0, 2, 3)
    returns = returns.reshape(B * per_member, N, 2)[:P]
    disp = np.abs(states[..., 0, :] - states[..., 1, :]).sum(-1).astype(float)
    disp = disp.reshape(B, per_member, N).transpose(1, 0, 2).reshape(B * per_member, N)[:P]
    mean_returns = returns.mean(axis=0)
    mean_disp = disp.mean(axis=0)
    total = mean_returns.sum(axis=1)
    if config.mode == "InsightFair":
        objective = total - config.penalty * np.abs(mean_returns[:, 1] - mean_returns[:, 0])
    elif config.mode == "FairS":
        objective = total - config.state_penalty * mean_disp
    else:
        objective = total
    return mean_returns, mean_disp, objective


def evaluate_candidates(model, state, candidates, config: PlanConfig, rng) -> list:
    """Score menu-valued candidates of shape (N, H, 2) or (N, H, 1)."""
    candidates = np.asarray(candidates, dtype=float)
    returns, _, objective = _simulate(model, state, candidates, config, rng)
    full = _expand(candidates)
    return [
        CandidateEval(full[i], returns[i], float(returns[i, 1] - returns[i, 0]), float(objective[i]))
        for i in range(len(full))
    ]


def update_distribution(dist: ActionDistribution, elites, std_floor: float = 1e-3) -> ActionDistribution:
    """Refit ``dist`` to the elite sequences (array or CandidateEvals)."""
    if isinstance(elites, np.ndarray):
        samples = elites
    else:
        samples = np.stack([
            e.sample if e.sample is not None else e.actions[:, : dist.mean.shape[1]]
            for e in elites
        ])
    if len(samples) < 1:
        raise ValueError("need at least one elite")
    samples = np.asarray(samples, dtype=float).reshape((len(samples),) + dist.mean.shape)
    mean = np.clip(samples.mean(axis=0), dist.low, dist.high)
    std = np.maximum(samples.std(axis=0), std_floor)
    return ActionDistribution(mean, std, dist.low, dist.high)


def _uses_shared_actions(config: PlanConfig, state: GroupEnvState, df_violated: bool) -> bool:
    if config.mode == "FairA":
        return True
    if config.mode == "InsightFair":
        return (not df_violated) and state.disparity() <= config.disparity_threshold
    return False


def plan_details(model, state: GroupEnvState, config: PlanConfig, df_violated: bool, rng, menu) -> PlanResult:
    """Run CEM and return the first action of the best candidate with diagnostics."""
    if not model.trained:
        raise UntrainedModel("fit the model before planning")
    menu = np.asarray(menu, dtype=float)
    shared = _uses_shared_actions(config, state, df_violated)
    dist = ActionDistribution.initial(config.horizon, 1 if shared else 2, menu.min(), menu.max())
    M = config.elites
    predictor = model.pair_predictor()
    kept = None   # (samples, actions, returns, objective) of retained elites
    history = []
    best, best_obj = None, -np.inf
    for _ in range(config.iterations):
        samples = dist.sample(config.population, rng)
        actions = project_to_menu(samples, menu)
        returns, _, objective = _simulate(model, state, actions, config, rng, predictor)
        if kept is not None:
            samples = np.concatenate([kept[0], samples])
            actions = np.concatenate([kept[1], actions])
            returns = np.concatenate([kept[2], returns])
            objective = np.concatenate([kept[3], objective])
        order = np.argsort(-objective, kind="stable")[:M]
        if config.keep_elites:
            kept = (samples[order], actions[order], returns[order], objective[order])
        dist = update_distribution(dist, samples[order], config.std_floor)
        top = order[0]
        history.append(float(objective[top]))
        if best is None or objective[top] >= best_obj:
            best_obj = objective[top]
            best = CandidateEval(
                _expand(actions[top][None])[0],
                returns[top],
                float(returns[top, 1] - returns[top, 0]),
                float(objective[top]),
                samples[top],
            )
    return PlanResult(best.actions[0].copy(), best, shared, history)


def plan(model, state: GroupEnvState, config: PlanConfig, df_violated: bool, rng, menu) -> np.ndarray:
    """Per-group action (a_z0, a_z1) for the current state."""
    return plan_details(model, state, config, df_violated, rng, menu).action


# ---------------------------------------------------------------------------
# learning loop


@dataclass
class EpisodeLog:
    actions: np.ndarray          # (T, 2)
    rewards: np.ndarray          # (T, 2)
    states: np.ndarray           # (T + 1, 2, d)
    shared: np.ndarray           # (T,) whether the planner used one sequence
    discount: float = 0.99

    @property
    def decision_gaps(self) -> np.ndarray:
        return np.abs(self.actions[:, 1] - self.actions[:, 0])

    @property
    def state_disparities(self) -> np.ndarray:
        """L1 disparity of the state each action was taken in."""
        return np.abs(self.states[:-1, 0] - self.states[:-1, 1]).sum(-1)

    @property
    def group_returns(self) -> np.ndarray:
        w = self.discount ** np.arange(len(self.rewards))
        return (w[:, None] * self.rewards).sum(axis=0)

    @property
    def total_return(self) -> float:
        return float(self.group_returns.sum())

    @property
    def gap(self) -> float:
        g = self.group_returns
        return float(g[1] - g[0])

    def to_dataset(self) -> TrajectoryDataset:
        T, d = len(self.actions), self.states.shape[-1]
        return TrajectoryDataset(
            np.tile([0, 1], T),
            self.states[:-1].reshape(-1, d),
            self.actions.reshape(-1, 1),
            self.rewards.reshape(-1),
            self.states[1:].reshape(-1, d),
            np.repeat(np.arange(T), 2),
            discount=self.discount,
        )

    def rows(self):
        gaps, disp = self.decision_gaps, self.state_disparities
        for t in range(len(self.actions)):
            yield (t, self.actions[t, 0], self.actions[t, 1], self.rewards[t, 0],
                   self.rewards[t, 1], disp[t], gaps[t])


@dataclass
class EpochSummary:
    epoch: int
    total_return: float
    gap: float
    df_flag: bool
    nde_r: float
    nde_s: float

    def row(self):
        return (self.epoch, self.total_return, self.gap, int(self.df_flag), self.nde_r, self.nde_s)


@dataclass
class LearnResult:
    epochs: list
    episodes: list
    model: EnsembleModel


def run_episode(params, model, config: PlanConfig, df_violated: bool, seed) -> EpisodeLog:
    """Act with the planner for one episode; deterministic per ``seed``."""
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_seed, plan_seed = seq.spawn(2)
    env = GroupEnv(params, np.random.default_rng(env_seed))
    rng = np.random.default_rng(plan_seed)
    T, d = params.episode_len, params.state_dim
    actions = np.empty((T, 2))
    rewards = np.empty((T, 2))
    states = np.empty((T + 1, 2, d))
    shared = np.zeros(T, dtype=bool)
    state = env.reset()
    states[0] = state.states
    for t in range(T):
        result = plan_details(model, state, config, df_violated, rng, params.menu)
        outcome = env.step(result.action)
        actions[t], rewards[t], shared[t] = result.action, outcome.rewards, result.shared
        state = outcome.next
        states[t + 1] = state.states
    return EpisodeLog(actions, rewards, states, shared, config.discount)


def _fairness_check(data, params, state_bins, tau, n_boot, seed):
    """(violated, nde_r, max |nde_s'|) on logged data; fails closed."""
    try:
        spec = DiscretizationSpec.from_data(data, state_bins=state_bins, action_values=params.menu)
        verdict = check_dynamics_fairness(fit_tables(data, spec), tau=tau, n_boot=n_boot, seed=seed)
    except CausalDataError:
        return True, float("nan"), float("nan")
    nde_s = float(np.max(np.abs(verdict.nde_sprime.value)))
    return bool(verdict.violated), float(verdict.nde_r.value), nde_s


def learn(
    params,
    config: PlanConfig,
    epochs: int = 30,
    seed: int = 0,
    model_config: EnsembleConfig | None = None,
    warmup_episodes: int = 5,
    refit_epochs: int = 10,
    tau=None,
    n_boot: int = 200,
    state_bins: int = 10,
    callback=None,
) -> LearnResult:
    """Model-based learning loop.

    Random-policy episodes seed the replay buffer. Each epoch refits the
    ensemble on the whole buffer, checks dynamics fairness on the buffer
    (the flag holds for the whole epoch), then runs one planned episode and
    appends its transitions.
    """
    model_config = model_config or EnsembleConfig()
    seq = np.random.SeedSequence(seed)
    warm_seed, model_seed, *epoch_seeds = seq.spawn(epochs + 2)
    buffer = rollout(params, random_policy(params.menu), warm_seed, warmup_episodes, config.discount)
    model = EnsembleModel(model_config, params.state_dim, 1, seed=model_seed.generate_state(1)[0],
                          simplex_state=params.kind == "lending")
    summaries, episodes = [], []
    for e in range(epochs):
        fit_seed = int(epoch_seeds[e].generate_state(1)[0])
        model.fit(buffer, seed=fit_seed, epochs=None if e == 0 else refit_epochs)
        violated, nde_r, nde_s = _fairness_check(buffer, params, state_bins, tau, n_boot, fit_seed)
        log = run_episode(params, model, config, violated, epoch_seeds[e])
        buffer = TrajectoryDataset.concatenate([buffer, log.to_dataset()])
        summary = EpochSummary(e, log.total_return, log.gap, violated, nde_r, nde_s)
        summaries.append(summary)
        episodes.append(log)
        if callback is not None:
            callback(summary)
    return LearnResult(summaries, episodes, model)
