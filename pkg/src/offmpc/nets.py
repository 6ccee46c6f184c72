"""Feed-forward regression from scratch: manual backprop, Adam, ensembles.

Every learner role (dynamics model, behavior-cloning prior, fixed-horizon
value) is a bootstrap ensemble of K identically shaped MLPs trained on the
same rows from different weight initializations.  Inputs and targets are
normalized by shared training-set statistics; the L2 loss lives in the
normalized target space.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_HIDDEN = (500, 500)
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, member: int, epoch: int, loss):
        super().__init__(
            f"member {member} diverged at epoch {epoch} (loss={loss})"
        )
        self.member = member
        self.epoch = epoch


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs, self.eps) <= 0:
            raise ValueError("training hyperparameters must be positive")


@dataclass
class MlpParams:
    """Weights/biases for in_dim -> hidden... -> out_dim with ReLU between
    hidden layers and a linear output layer."""

    weights: list
    biases: list

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(in_dim: int, out_dim: int, hidden=DEFAULT_HIDDEN, seed: int = 0) -> MlpParams:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)))
        biases.append(np.zeros(b))
    return MlpParams(weights, biases)


@dataclass
class NormStats:
    """Per-dimension input/target statistics; std floored at 1e-6."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    STD_FLOOR = 1e-6

    @classmethod
    def from_data(cls, x: np.ndarray, y: np.ndarray) -> "NormStats":
        return cls(
            x.mean(axis=0),
            np.maximum(x.std(axis=0), cls.STD_FLOOR),
            y.mean(axis=0),
            np.maximum(y.std(axis=0), cls.STD_FLOOR),
        )

    def norm_x(self, x):
        return (x - self.x_mean) / self.x_std

    def norm_y(self, y):
        return (y - self.y_mean) / self.y_std

    def denorm_y(self, yn):
        return yn * self.y_std + self.y_mean


def mlp_apply(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Raw network evaluation on already-normalized rows."""
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return h @ params.weights[-1] + params.biases[-1]


def forward(params: MlpParams, norm: NormStats, x) -> np.ndarray:
    """Normalized-input, denormalized-output evaluation; accepts a single row
    or a batch."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    single = x.ndim == 1
    y = norm.denorm_y(mlp_apply(params, norm.norm_x(np.atleast_2d(x))))
    return y[0] if single else y


def backward(params: MlpParams, xn: np.ndarray, yn: np.ndarray):
    """Mean-squared-error loss over all elements of the normalized batch and
    its exact gradients.  Inputs are already normalized."""
    if len(xn) == 0:
        raise ValueError("empty batch")
    acts = [xn]
    pre = []
    h = xn
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    out = h @ params.weights[-1] + params.biases[-1]

    err = out - yn
    loss = float(np.mean(err * err))
    scale = 2.0 / err.size
    d = scale * err

    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    for layer in range(len(params.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ d
        grads_b[layer] = d.sum(axis=0)
        if layer > 0:
            d = (d @ params.weights[layer].T) * (pre[layer - 1] > 0)
    return MlpParams(grads_w, grads_b), loss


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        zero = lambda arrs: [np.zeros_like(a) for a in arrs]
        return cls(
            MlpParams(zero(params.weights), zero(params.biases)),
            MlpParams(zero(params.weights), zero(params.biases)),
        )


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, config: TrainConfig) -> None:
    """Standard Adam with bias correction; updates params and state in place."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(
        params.weights + params.biases,
        grads.weights + grads.biases,
        state.m.weights + state.m.biases,
        state.v.weights + state.v.biases,
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)


@dataclass
class EnsembleNet:
    """K same-topology networks sharing normalization statistics."""

    members: list
    norm: NormStats
    role: str  # model | bc | value
    info: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.members)

    def member(self, head: int) -> MlpParams:
        if not 0 <= head < self.k:
            raise IndexError(f"ensemble head {head} out of range [0, {self.k})")
        return self.members[head]


@dataclass
class TrainReport:
    role: str
    train_curves: list  # per member, per epoch mean batch loss
    val_curves: list  # per member, per epoch validation loss (empty if no val rows)


def train_member(
    xn: np.ndarray,
    yn: np.ndarray,
    hidden,
    member_seed: int,
    config: TrainConfig,
    xn_val=None,
    yn_val=None,
    member_index: int = 0,
):
    """Train one network on normalized rows; returns (params, curve, val_curve)."""
    params = init_mlp(xn.shape[1], yn.shape[1], hidden, seed=member_seed)
    state = AdamState.zeros_like(params)
    # batch order comes from a stream distinct from the init stream
    shuffle = np.random.default_rng(np.random.SeedSequence((member_seed, 1)))
    n = len(xn)
    train_curve, val_curve = [], []
    for epoch in range(config.epochs):
        order = shuffle.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            grads, loss = backward(params, xn[idx], yn[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(member_index, epoch, loss)
            adam_step(params, grads, state, config)
            losses.append(loss)
        train_curve.append(float(np.mean(losses)))
        if xn_val is not None and len(xn_val):
            pred = mlp_apply(params, xn_val)
            val_curve.append(float(np.mean((pred - yn_val) ** 2)))
    return params, train_curve, val_curve


def train_ensemble(
    x: np.ndarray,
    y: np.ndarray,
    role: str,
    k: int = 3,
    config: TrainConfig = TrainConfig(),
    x_val=None,
    y_val=None,
    hidden=DEFAULT_HIDDEN,
    info: dict | None = None,
):
    """Train K members on the full row set, member i seeded with seed + i.

    Returns (EnsembleNet, TrainReport).  Normalization statistics come from
    the training rows and are shared by all members.
    """
    if len(x) == 0:
        raise ValueError("no training rows")
    if k < 1:
        raise ValueError("k must be >= 1")
    norm = NormStats.from_data(x, y)
    xn, yn = norm.norm_x(x), norm.norm_y(y)
    xn_val = norm.norm_x(x_val) if x_val is not None else None
    yn_val = norm.norm_y(y_val) if y_val is not None else None
    members, curves, val_curves = [], [], []
    for i in range(k):
        params, curve, val_curve = train_member(
            xn, yn, hidden, config.seed + i, config, xn_val, yn_val, member_index=i
        )
        members.append(params)
        curves.append(curve)
        val_curves.append(val_curve)
    ens = EnsembleNet(members, norm, role, dict(info or {}))
    return ens, TrainReport(role, curves, val_curves)


# --- role-specific queries -------------------------------------------------


def model_query(ens: EnsembleNet, s, a, head: int):
    """Head-consistent dynamics query: returns (reward, next_state).

    The network predicts (r, delta_s); the next state is s + delta_s.
    """
    s = np.asarray(s, dtype=float)
    out = forward(ens.member(head), ens.norm, np.concatenate([s, np.asarray(a, dtype=float)], axis=-1))
    return out[..., 0], s + out[..., 1:]


def reward_query_mean(ens: EnsembleNet, s, a):
    """Reward prediction averaged over all ensemble members."""
    x = np.concatenate([np.asarray(s, dtype=float), np.asarray(a, dtype=float)], axis=-1)
    outs = [forward(m, ens.norm, x)[..., 0] for m in ens.members]
    return sum(outs) / ens.k


def bc_query(ens: EnsembleNet, s, a_prev, head: int):
    x = np.concatenate([np.asarray(s, dtype=float), np.asarray(a_prev, dtype=float)], axis=-1)
    return forward(ens.member(head), ens.norm, x)


def bc_query_mean(ens: EnsembleNet, s, a_prev):
    x = np.concatenate([np.asarray(s, dtype=float), np.asarray(a_prev, dtype=float)], axis=-1)
    outs = [forward(m, ens.norm, x) for m in ens.members]
    return sum(outs) / ens.k


def value_query_mean(ens: EnsembleNet, s, a_prev):
    x = np.concatenate([np.asarray(s, dtype=float), np.asarray(a_prev, dtype=float)], axis=-1)
    outs = [forward(m, ens.norm, x)[..., 0] for m in ens.members]
    return sum(outs) / ens.k


# --- checkpoints -----------------------------------------------------------


def save_ensemble(ens: EnsembleNet, path) -> None:
    """Header (topology, role, norm stats, version) plus flat parameter
    arrays; the round trip is exact."""
    hidden = [w.shape[1] for w in ens.members[0].weights[:-1]]
    meta = {
        "version": CHECKPOINT_VERSION,
        "role": ens.role,
        "k": ens.k,
        "in_dim": ens.members[0].in_dim,
        "out_dim": ens.members[0].out_dim,
        "hidden": hidden,
        "info": ens.info,
    }
    arrays = {
        "norm_x_mean": ens.norm.x_mean,
        "norm_x_std": ens.norm.x_std,
        "norm_y_mean": ens.norm.y_mean,
        "norm_y_std": ens.norm.y_std,
    }
    for i, m in enumerate(ens.members):
        for j, (w, b) in enumerate(zip(m.weights, m.biases)):
            arrays[f"m{i}_w{j}"] = w
            arrays[f"m{i}_b{j}"] = b
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_ensemble(path) -> EnsembleNet:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {meta.get('version')} unsupported"
            )
        norm = NormStats(
            data["norm_x_mean"], data["norm_x_std"],
            data["norm_y_mean"], data["norm_y_std"],
        )
        n_layers = len(meta["hidden"]) + 1
        members = []
        for i in range(meta["k"]):
            weights = [data[f"m{i}_w{j}"] for j in range(n_layers)]
            biases = [data[f"m{i}_b{j}"] for j in range(n_layers)]
            members.append(MlpParams(weights, biases))
    ens = EnsembleNet(members, norm, meta["role"], meta.get("info", {}))
    expect = [meta["in_dim"], *meta["hidden"], meta["out_dim"]]
    for m in ens.members:
        dims = [w.shape[0] for w in m.weights] + [m.out_dim]
        if dims != expect:
            raise CheckpointError(f"topology mismatch: {dims} != {expect}")
    return ens
