"""Ensemble of probabilistic MLPs predicting (next state, reward) from (z, s, a).

Every member is a small tanh network with a Gaussian head (mean and
log-variance per output). Members are stored stacked along a leading axis so
that training and prediction run for the whole ensemble in one pass.
Gradients come from hand-written backpropagation; ``grad_check`` compares
them against central finite differences.

Inputs are laid out as concat(one_hot(z), s, a) and standardized. Targets are
the standardized (s' - s, r).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .causal import TrajectoryDataset

__all__ = [
    "EnsembleConfig",
    "EnsembleModel",
    "TrainingReport",
    "NonFinite",
    "UntrainedModel",
    "project_simplex",
    "grad_check",
    "PairPredictor",
]

CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-6


class NonFinite(RuntimeError):
    """Training loss became NaN or infinite (usually a learning rate issue)."""


class UntrainedModel(RuntimeError):
    pass


@dataclass
class EnsembleConfig:
    ensemble_size: int = 5
    hidden_layers: tuple = (32, 32)
    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 64
    weight_init_scale: float = 1.0
    min_logvar: float = -10.0
    max_logvar: float = 2.0
    optimizer: str = "adam"
    loss: str = "nll"

    def __post_init__(self):
        self.hidden_layers = tuple(int(h) for h in self.hidden_layers)
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be at least 1")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden widths must be positive")
        if not self.min_logvar < self.max_logvar:
            raise ValueError("min_logvar must be below max_logvar")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("nll", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainingReport:
    initial_nll: float
    epoch_nll: list = field(default_factory=list)

    @property
    def final_nll(self) -> float:
        return self.epoch_nll[-1] if self.epoch_nll else self.initial_nll


def _softplus(x):
    # log(1 + e^x) without overflow; faster than logaddexp
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def project_simplex(x):
    """Clamp negatives to zero and renormalize along the last axis."""
    x = np.clip(x, 0.0, None)
    total = x.sum(axis=-1, keepdims=True)
    n = x.shape[-1]
    return np.where(total > 0, x / np.where(total > 0, total, 1.0), 1.0 / n)


class EnsembleModel:
    def __init__(self, config: EnsembleConfig, state_dim: int, action_dim: int = 1,
                 seed=0, simplex_state: bool = False):
        self.config = config
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.simplex_state = simplex_state
        self.in_dim = 2 + self.state_dim + self.action_dim
        self.out_dim = self.state_dim + 1
        self.in_mean = np.zeros(self.in_dim)
        self.in_std = np.ones(self.in_dim)
        self.out_mean = np.zeros(self.out_dim)
        self.out_std = np.ones(self.out_dim)
        self.trained = False
        rng = np.random.default_rng(seed)
        B = config.ensemble_size
        widths = (self.in_dim,) + config.hidden_layers + (2 * self.out_dim,)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            scale = config.weight_init_scale / np.sqrt(fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(B, fan_in, fan_out)))
            self.biases.append(np.zeros((B, 1, fan_out)))
        self._adam = None

    # -- layout and normalization ------------------------------------------

    @property
    def ensemble_size(self) -> int:
        return self.config.ensemble_size

    def params(self) -> list:
        return self.weights + self.biases

    def encode(self, z, s, a) -> np.ndarray:
        z = np.asarray(z, dtype=np.int64)
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        lead = z.shape
        s = s.reshape(lead + (self.state_dim,))
        a = a.reshape(lead + (self.action_dim,))
        onehot = np.stack([z == 0, z == 1], axis=-1).astype(float)
        return np.concatenate([onehot, s, a], axis=-1)

    def normalize(self, x):
        return (x - self.in_mean) / self.in_std

    def denormalize(self, xn):
        return xn * self.in_std + self.in_mean

    def _targets(self, data: TrajectoryDataset) -> np.ndarray:
        return np.column_stack([data.s2 - data.s, data.r])

    def set_normalization(self, data: TrajectoryDataset) -> None:
        x = self.encode(data.z, data.s, data.a)
        y = self._targets(data)
        self.in_mean = x.mean(axis=0)
        self.in_std = np.maximum(x.std(axis=0), STD_FLOOR)
        self.out_mean = y.mean(axis=0)
        self.out_std = np.maximum(y.std(axis=0), STD_FLOOR)

    # -- network -----------------------------------------------------------

    def _forward(self, xn, cache: bool = False, dtype=None):
        """xn: (B, n, in) standardized inputs -> (mean, logvar), each (B, n, out).

        ``dtype=np.float32`` runs a faster reduced-precision pass for inference.
        """
        weights, biases = self.weights, self.biases
        if dtype is not None:
            weights = [w.astype(dtype) for w in weights]
            biases = [b.astype(dtype) for b in biases]
            xn = xn.astype(dtype)
        h = xn
        acts = [h]
        n_layers = len(weights)
        for i in range(n_layers):
            h = h @ weights[i] + biases[i]
            if i < n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        o = self.out_dim
        mean, raw = h[..., :o], h[..., o:]
        lo, hi = self.config.min_logvar, self.config.max_logvar
        lv1 = hi - _softplus(hi - raw)
        logvar = lo + _softplus(lv1 - lo)
        if cache:
            return mean, logvar, (acts, raw, lv1)
        return mean, logvar

    def _loss_grads(self, xn, yn):
        """Per-member mean loss and parameter gradients of its sum over members."""
        mean, logvar, (acts, raw, lv1) = self._forward(xn, cache=True)
        n = xn.shape[1]
        diff = mean - yn
        if self.config.loss == "mse":
            per = 0.5 * (diff ** 2).sum(-1).mean(-1)
            d_mean = diff / n
            d_raw = np.zeros_like(raw)
        else:
            inv = np.exp(-logvar)
            per = 0.5 * ((diff ** 2) * inv + logvar).sum(-1).mean(-1)
            d_mean = diff * inv / n
            d_logvar = 0.5 * (1.0 - diff ** 2 * inv) / n
            lo, hi = self.config.min_logvar, self.config.max_logvar
            d_raw = d_logvar * _sigmoid(lv1 - lo) * _sigmoid(hi - raw)
        delta = np.concatenate([d_mean, d_raw], axis=-1)
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].transpose(0, 2, 1) @ delta
            gb[i] = delta.sum(axis=1, keepdims=True)
            if i > 0:
                delta = (delta @ self.weights[i].transpose(0, 2, 1)) * (1.0 - acts[i] ** 2)
        return per, gw + gb

    def _step(self, grads, lr):
        params = self.params()
        if self.config.optimizer == "sgd":
            for p, g in zip(params, grads):
                p -= lr * g
            return
        if self._adam is None:
            self._adam = [0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params]]
        self._adam[0] += 1
        t, ms, vs = self._adam
        b1, b2, eps = 0.9, 0.999, 1e-8
        corr = lr * np.sqrt(1 - b2 ** t) / (1 - b1 ** t)
        for p, g, m, v in zip(params, grads, ms, vs):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= corr * m / (np.sqrt(v) + eps)

    # -- training ----------------------------------------------------------

    def fit(self, data: TrajectoryDataset, seed=0, epochs: int | None = None,
            renormalize: bool | None = None) -> TrainingReport:
        """Train every member on its own bootstrap resample of ``data``.

        Normalization statistics are taken from ``data`` on the first fit
        (or when ``renormalize`` is set); later fits warm-start from the
        current parameters.
        """
        if len(data) == 0:
            raise ValueError("cannot fit on an empty dataset")
        if renormalize or (renormalize is None and not self.trained):
            self.set_normalization(data)
        cfg = self.config
        epochs = cfg.epochs if epochs is None else epochs
        rng = np.random.default_rng(seed)
        x = self.normalize(self.encode(data.z, data.s, data.a))
        y = (self._targets(data) - self.out_mean) / self.out_std
        n, B = len(data), cfg.ensemble_size
        boot = rng.integers(0, n, size=(B, n))
        initial = float(self._loss_grads(x[boot], y[boot])[0].mean())
        report = TrainingReport(initial)
        if not np.isfinite(initial):
            raise NonFinite("initial loss is not finite")
        bs = min(cfg.batch_size, n)
        n_batches = max(n // bs, 1)
        rows = np.arange(B)[:, None]
        for _ in range(epochs):
            order = boot[rows, rng.permuted(np.tile(np.arange(n), (B, 1)), axis=1)]
            total = 0.0
            for b in range(n_batches):
                idx = order[:, b * bs:(b + 1) * bs]
                per, grads = self._loss_grads(x[idx], y[idx])
                loss = float(per.mean())
                if not np.isfinite(loss):
                    raise NonFinite("training loss diverged; lower the learning rate")
                self._step(grads, cfg.learning_rate)
                total += loss
            report.epoch_nll.append(total / n_batches)
        if epochs > 0:
            self.trained = True
        return report

    def mean_nll(self, data: TrajectoryDataset) -> float:
        x = self.normalize(self.encode(data.z, data.s, data.a))
        y = (self._targets(data) - self.out_mean) / self.out_std
        B = self.ensemble_size
        per, _ = self._loss_grads(np.broadcast_to(x, (B,) + x.shape),
                                  np.broadcast_to(y, (B,) + y.shape))
        return float(per.mean())

    # -- prediction --------------------------------------------------------

    def predict_all(self, z, s, a):
        """Moments for stacked member inputs.

        ``z`` has shape (B, n) and ``s``/``a`` (B, n, d). Returns next-state
        mean (B, n, state_dim), reward mean (B, n) and variances
        (B, n, state_dim + 1) in original units.
        """
        if not self.trained:
            raise UntrainedModel("fit the model before predicting")
        s = np.asarray(s, dtype=float)
        xn = self.normalize(self.encode(z, s, a))
        mean, logvar = self._forward(xn, dtype=np.float32)
        mean = mean.astype(float) * self.out_std + self.out_mean
        logvar = logvar.astype(float)
        var = np.exp(logvar) * self.out_std ** 2
        s_next = s.reshape(mean.shape[:-1] + (self.state_dim,)) + mean[..., :-1]
        return s_next, mean[..., -1], var

    def pair_predictor(self) -> "PairPredictor":
        """Fast float32 predictor for inputs laid out as (z0, z1) pairs."""
        if not self.trained:
            raise UntrainedModel("fit the model before predicting")
        return PairPredictor(self)

    def predict(self, member: int, z, s, a):
        """Moments of a single member for one or many (z, s, a) rows."""
        if not 0 <= member < self.ensemble_size:
            raise IndexError("member index out of range")
        z = np.asarray(z, dtype=np.int64)
        single = z.ndim == 0
        z = z.reshape(-1)
        s = np.asarray(s, dtype=float).reshape(len(z), self.state_dim)
        a = np.asarray(a, dtype=float).reshape(len(z), self.action_dim)
        B = self.ensemble_size
        s_next, r, var = self.predict_all(
            np.broadcast_to(z, (B,) + z.shape),
            np.broadcast_to(s, (B,) + s.shape),
            np.broadcast_to(a, (B,) + a.shape),
        )
        out = s_next[member], r[member], var[member]
        if single:
            return out[0][0], float(out[1][0]), out[2][0]
        return out

    def sample_transition(self, member: int, z, s, a, rng):
        s_mean, r_mean, var = self.predict(member, z, s, a)
        std = np.sqrt(var)
        noise = rng.normal(size=np.shape(var))
        s_next = s_mean + std[..., :-1] * noise[..., :-1]
        r = r_mean + std[..., -1] * noise[..., -1]
        if self.simplex_state:
            s_next = project_simplex(s_next)
        return s_next, r

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "simplex_state": self.simplex_state,
            "trained": self.trained,
            "norm": {
                "in_mean": self.in_mean.tolist(),
                "in_std": self.in_std.tolist(),
                "out_mean": self.out_mean.tolist(),
                "out_std": self.out_std.tolist(),
            },
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path, state_dim: int | None = None, action_dim: int | None = None):
        """Restore a checkpoint; reject it if the input layout does not match."""
        with open(path) as fh:
            blob = json.load(fh)
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
        if state_dim is not None and blob["state_dim"] != state_dim:
            raise ValueError("checkpoint state dimension does not match")
        if action_dim is not None and blob["action_dim"] != action_dim:
            raise ValueError("checkpoint action dimension does not match")
        model = cls(EnsembleConfig(**blob["config"]), blob["state_dim"], blob["action_dim"],
                    simplex_state=blob["simplex_state"])
        if len(blob["norm"]["in_mean"]) != model.in_dim:
            raise ValueError("checkpoint input layout does not match")
        for key in ("in_mean", "in_std", "out_mean", "out_std"):
            setattr(model, key, np.asarray(blob["norm"][key], dtype=float))
        model.weights = [np.asarray(w, dtype=float) for w in blob["weights"]]
        model.biases = [np.asarray(b, dtype=float) for b in blob["biases"]]
        if model.weights[0].shape[1] != model.in_dim:
            raise ValueError("checkpoint input layout does not match")
        model.trained = blob["trained"]
        return model


class PairPredictor:
    """Inference-only view of an ensemble for paired group inputs.

    Input standardization and the group one-hot are folded into the first
    layer, and the pass runs in float32. Call with ``s`` of shape
    (B, n, 2, state_dim) and ``a`` of shape (B, n, 2, action_dim), where the
    third axis is the group. Returns the next-state mean, reward mean and the
    per-output standard deviation, all float32.
    """

    def __init__(self, model: EnsembleModel):
        f32 = np.float32
        w0 = model.weights[0] / model.in_std[None, :, None]
        b0 = model.biases[0] - np.einsum("i,bio->bo", model.in_mean / model.in_std,
                                         model.weights[0])[:, None, :]
        # (B, 1, 2, H): bias for each group after folding in the one-hot rows
        self.group_bias = (b0[:, :, None, :] + w0[:, None, :2, :]).astype(f32)
        self.w_input = w0[:, 2:, :].astype(f32)
        self.weights = [w.astype(f32) for w in model.weights[1:]]
        self.biases = [b.astype(f32)[:, :, None, :] for b in model.biases[1:]]
        self.out_mean = model.out_mean.astype(f32)
        self.out_std = model.out_std.astype(f32)
        self.min_logvar = f32(model.config.min_logvar)
        self.max_logvar = f32(model.config.max_logvar)
        self.state_dim = model.state_dim

    def __call__(self, s, a):
        s = np.asarray(s, dtype=np.float32)
        x = np.concatenate([s, np.asarray(a, dtype=np.float32)], axis=-1)
        lead = x.shape[:-1]
        B = lead[0]
        h = (x.reshape(B, -1, x.shape[-1]) @ self.w_input).reshape(lead + (-1,))
        h = np.tanh(h + self.group_bias)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = (h.reshape(B, -1, h.shape[-1]) @ w).reshape(lead + (-1,)) + b
            if i < last:
                h = np.tanh(h)
        o = self.out_mean.shape[0]
        mean = h[..., :o] * self.out_std + self.out_mean
        lv = self.max_logvar - _softplus(self.max_logvar - h[..., o:])
        lv = self.min_logvar + _softplus(lv - self.min_logvar)
        std = np.exp(np.float32(0.5) * lv) * self.out_std
        d = self.state_dim
        return s + mean[..., :d], mean[..., d], std


def grad_check(config: EnsembleConfig, seed=0, batch: int = 8, h: float = 1e-5) -> float:
    """Largest relative gap between backprop and central-difference gradients."""
    rng = np.random.default_rng(seed)
    state_dim, action_dim = 2, 1
    model = EnsembleModel(config, state_dim, action_dim, seed=seed)
    for b in model.biases:
        b += rng.normal(0.0, 0.1, size=b.shape)
    B = config.ensemble_size
    xn = rng.normal(size=(B, batch, model.in_dim))
    yn = rng.normal(size=(B, batch, model.out_dim))
    _, grads = model._loss_grads(xn, yn)
    worst = 0.0
    for p, g in zip(model.params(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = model._loss_grads(xn, yn)[0].sum()
            flat[k] = old - h
            down = model._loss_grads(xn, yn)[0].sum()
            flat[k] = old
            num = (up - down) / (2 * h)
            denom = max(abs(num) + abs(gflat[k]), 1e-7)
            worst = max(worst, abs(num - gflat[k]) / denom)
    return worst
