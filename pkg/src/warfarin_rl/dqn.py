"""Deep Q-learning over the 31-dose grid.

A fully-connected network (ReLU hidden layers, logistic output affinely
mapped onto [q_min, 0]) approximates action values of the dosing MDP.
Episodes are rolled out epsilon-greedily, then processed from the last
decision to the first: each experience gets its bootstrap target under
the network as updated so far, enters the replay ring, and triggers one
mini-batch SGD step once the ring can fill a batch.  Checkpoints are
taken per epoch and the shipped selection rule keeps the one maximizing
the worst sensitivity class's (mean - SD) validation PTTR.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .cohort import PatientProfile, Sensitivity, generate_cohort
from .environment import DOSE_GRID, DOSE_STEP, Environment, MAX_DOSE, N_ACTIONS, DosingState
from .errors import ConfigError
from .metrics import CLASS_ORDER, pttr_daily
from .pkpd import Cyp2c9, Vkorc1
from .seeding import NS_EXPLORE, NS_INIT, NS_SGD, NS_TRAIN_COHORT, draw_seed, substream

_CYP_INDEX = {g: i for i, g in enumerate(Cyp2c9)}
_VK_INDEX = {g: i for i, g in enumerate(Vkorc1)}

AGE_SCALE = 100.0
INR_SCALE = 4.0
DOSE_SCALE = MAX_DOSE
DURATION_SCALE = 7.0
GENOTYPE_SLOTS = slice(1, 10)  # 6 CYP2C9 one-hots then 3 VKORC1 one-hots


def feature_length(h: int) -> int:
    return 11 + 3 * h


def encode_state(state: DosingState, genotype_blind: bool = False) -> np.ndarray:
    """Fixed-layout features: age, genotype one-hots, scaled INR, history."""
    h = len(state.history)
    x = np.zeros(feature_length(h))
    x[0] = state.patient.age / AGE_SCALE
    if not genotype_blind:
        x[1 + _CYP_INDEX[state.patient.cyp2c9]] = 1.0
        x[7 + _VK_INDEX[state.patient.vkorc1]] = 1.0
    x[10] = state.current_inr / INR_SCALE
    for k, (inr, dose, duration) in enumerate(state.history):
        base = 11 + 3 * k
        x[base] = inr / INR_SCALE
        x[base + 1] = dose / DOSE_SCALE
        x[base + 2] = duration / DURATION_SCALE
    return x


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class QNetwork:
    """MLP mapping state features to one Q-value per grid dose."""

    def __init__(self, widths, q_min: float = -250.0,
                 rng: np.random.Generator | None = None):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if q_min >= 0:
            raise ValueError("q_min must be negative")
        self.widths = tuple(int(w) for w in widths)
        self.q_min = float(q_min)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.widths, self.widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]

    def _forward_full(self, X: np.ndarray):
        acts = [X]
        a = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = _sigmoid(z) if i == len(self.weights) - 1 else np.maximum(z, 0.0)
            acts.append(a)
        q = self.q_min * (1.0 - acts[-1])
        return acts, q

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ValueError(f"expected (*, {self.n_inputs}) inputs, got {X.shape}")
        return self._forward_full(X)[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_inputs,):
            raise ValueError(f"expected {self.n_inputs} features, got {x.shape}")
        return self.forward_batch(x[None, :])[0]

    def gradients(self, X: np.ndarray, actions: np.ndarray, targets: np.ndarray):
        """Loss and parameter gradients of the squared error on Q(S, A).

        The error is measured in units of q_min (the logistic output's own
        scale), which is the same objective up to the constant factor
        q_min^2 but keeps the stated learning rate usable; the returned
        loss is on that normalized scale.
        """
        X = np.asarray(X, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.intp)
        targets = np.asarray(targets, dtype=np.float64)
        m = X.shape[0]
        acts, q = self._forward_full(X)
        sig = acts[-1]
        rows = np.arange(m)
        err = (q[rows, actions] - targets) / -self.q_min
        loss = float(np.mean(err**2))

        delta = np.zeros_like(q)
        s = sig[rows, actions]
        delta[rows, actions] = (2.0 / m) * err * s * (1.0 - s)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, grads_w, grads_b

    def sgd_step(self, X, actions, targets, learning_rate: float) -> float:
        loss, grads_w, grads_b = self.gradients(X, actions, targets)
        for W, b, gw, gb in zip(self.weights, self.biases, grads_w, grads_b):
            W -= learning_rate * gw
            b -= learning_rate * gb
        return loss

    def adam_step(self, X, actions, targets, learning_rate: float,
                  beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> float:
        """One Adam update; moment state lives on the network."""
        if not hasattr(self, "_adam"):
            self._adam = {"t": 0,
                          "mw": [np.zeros_like(W) for W in self.weights],
                          "vw": [np.zeros_like(W) for W in self.weights],
                          "mb": [np.zeros_like(b) for b in self.biases],
                          "vb": [np.zeros_like(b) for b in self.biases]}
        loss, grads_w, grads_b = self.gradients(X, actions, targets)
        st = self._adam
        st["t"] += 1
        c1 = 1 - beta1 ** st["t"]
        c2 = 1 - beta2 ** st["t"]
        for i, (gw, gb) in enumerate(zip(grads_w, grads_b)):
            st["mw"][i] = beta1 * st["mw"][i] + (1 - beta1) * gw
            st["vw"][i] = beta2 * st["vw"][i] + (1 - beta2) * gw**2
            st["mb"][i] = beta1 * st["mb"][i] + (1 - beta1) * gb
            st["vb"][i] = beta2 * st["vb"][i] + (1 - beta2) * gb**2
            self.weights[i] -= learning_rate * (st["mw"][i] / c1) / (
                np.sqrt(st["vw"][i] / c2) + eps)
            self.biases[i] -= learning_rate * (st["mb"][i] / c1) / (
                np.sqrt(st["vb"][i] / c2) + eps)
        return loss

    def loss(self, X, actions, targets) -> float:
        X = np.asarray(X, dtype=np.float64)
        q = self.forward_batch(X)
        err = (q[np.arange(X.shape[0]), np.asarray(actions, dtype=np.intp)]
               - targets) / -self.q_min
        return float(np.mean(err**2))

    def state_dict(self) -> dict:
        return {"widths": self.widths, "q_min": self.q_min,
                "weights": [W.copy() for W in self.weights],
                "biases": [b.copy() for b in self.biases]}

    @classmethod
    def from_state(cls, state: dict) -> "QNetwork":
        net = cls.__new__(cls)
        net.widths = tuple(state["widths"])
        net.q_min = float(state["q_min"])
        net.weights = [np.array(W, dtype=np.float64) for W in state["weights"]]
        net.biases = [np.array(b, dtype=np.float64) for b in state["biases"]]
        return net

    def copy(self) -> "QNetwork":
        return QNetwork.from_state(self.state_dict())


@dataclass
class Experience:
    """One replay record; ``target`` is precomputed in the backward pass."""

    features: np.ndarray
    action: int
    reward: float
    next_features: np.ndarray | None
    terminal: bool
    target: float | None = None


class ReplayBuffer:
    """Fixed-capacity ring; eviction is strictly oldest-first."""

    def __init__(self, capacity: int = 450):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Experience] = []
        self._pos = 0

    def __len__(self) -> int:
        return len(self._items)

    def append(self, exp: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(exp)
        else:
            self._items[self._pos] = exp
            self._pos = (self._pos + 1) % self.capacity

    def items(self) -> list[Experience]:
        """Contents oldest-first."""
        return self._items[self._pos:] + self._items[:self._pos]

    def sample(self, n: int, rng: np.random.Generator) -> list[Experience]:
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[i] for i in idx]


def allowed_actions(cap: float) -> int:
    """Number of grid actions with dose <= cap."""
    return int(round(cap / DOSE_STEP)) + 1


def epsilon(epoch: int) -> float:
    if epoch < 1:
        raise ValueError("epoch index starts at 1")
    return 1.0 / (1.0 + epoch)


def select_action(net: QNetwork, features: np.ndarray, epoch: int,
                  cap: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the allowed dose indices; ties pick the lowest dose."""
    n_allowed = allowed_actions(cap)
    if rng.random() < epsilon(epoch):
        return int(rng.integers(n_allowed))
    q = net.forward(features)
    return int(np.argmax(q[:n_allowed]))


def train_step(net: QNetwork, buffer: ReplayBuffer, rng: np.random.Generator,
               batch_size: int = 50, learning_rate: float = 0.001,
               validation_split: float = 0.3,
               optimizer: str = "adam") -> tuple[float, float] | None:
    """One gradient update from a uniform replay sample; None while underfull.

    The sampled batch is split 70/30; only the first part contributes
    gradients, the rest is scored for the validation loss.  Targets are
    clamped to [q_min, 0] to stay representable by the output unit.
    """
    if len(buffer) < batch_size:
        return None
    sample = buffer.sample(batch_size, rng)
    X = np.stack([e.features for e in sample])
    actions = np.array([e.action for e in sample], dtype=np.intp)
    targets = np.clip(np.array([e.target for e in sample]), net.q_min, 0.0)
    n_val = int(round(batch_size * validation_split))
    n_train = batch_size - n_val
    step = net.adam_step if optimizer == "adam" else net.sgd_step
    train_loss = step(X[:n_train], actions[:n_train], targets[:n_train],
                      learning_rate)
    val_loss = net.loss(X[n_train:], actions[n_train:], targets[n_train:]) \
        if n_val else float("nan")
    return train_loss, val_loss


def compute_target(net: QNetwork, exp: Experience, gamma: float) -> float:
    """Bootstrap target: R for terminal, else R + gamma * max_a Q(S', a)."""
    if exp.terminal:
        return exp.reward
    return exp.reward + gamma * float(np.max(net.forward(exp.next_features)))


def backward_episode_pass(net: QNetwork, episode: list[Experience],
                          gamma: float, buffer: ReplayBuffer,
                          sgd_rng: np.random.Generator | None = None,
                          batch_size: int = 50, learning_rate: float = 0.001,
                          validation_split: float = 0.3, optimizer: str = "adam",
                          train: bool = True) -> list[tuple[float, float]]:
    """Process an episode from its last decision to its first.

    Each experience gets its target under the network as updated by the
    later experiences, is appended to the buffer (backward order), and,
    when training is enabled and the buffer holds a full batch, triggers
    one replay update.  Returns the (train, validation) losses incurred.
    """
    losses = []
    for exp in reversed(episode):
        exp.target = compute_target(net, exp, gamma)
        buffer.append(exp)
        if train:
            res = train_step(net, buffer, sgd_rng, batch_size,
                             learning_rate, validation_split, optimizer)
            if res is not None:
                losses.append(res)
    return losses


@dataclass
class TrainConfig:
    """Hyper-parameters of one training run (all seeds derive from master_seed)."""

    epochs: int = 100
    cohort_per_epoch: int = 10_000
    T: int = 90
    h: int = 1
    gamma: float = 0.95
    learning_rate: float = 0.001
    batch_size: int = 50
    validation_split: float = 0.3
    q_min: float = -250.0
    d1_max: float = 15.0
    genotype_blind: bool = False
    master_seed: int = 0
    buffer_capacity: int = 450
    hidden_widths: tuple[int, ...] = (256, 128, 64, 32)
    validation_size: int = 1000
    optimizer: str = "adam"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must be in (0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ConfigError("batch_size cannot exceed buffer capacity")
        if self.h < 1 or self.epochs < 1 or self.cohort_per_epoch < 1:
            raise ConfigError("epochs, cohort size and h must be >= 1")
        if self.q_min >= 0:
            raise ConfigError("q_min must be negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        self.hidden_widths = tuple(self.hidden_widths)

    @property
    def widths(self) -> tuple[int, ...]:
        return (feature_length(self.h), *self.hidden_widths, N_ACTIONS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d


@dataclass
class Checkpoint:
    epoch: int
    state: dict                      # QNetwork.state_dict()
    config: TrainConfig
    class_stats: dict = field(default_factory=dict)  # per-class PTTR mean/sd

    def network(self) -> QNetwork:
        return QNetwork.from_state(self.state)


class GreedyPolicy:
    """Deterministic argmax policy over observable state (baseline interface)."""

    def __init__(self, net: QNetwork, genotype_blind: bool = False):
        self.net = net
        self.genotype_blind = genotype_blind

    def decide(self, state: DosingState, cap: float = MAX_DOSE) -> float:
        feats = encode_state(state, self.genotype_blind)
        q = self.net.forward(feats)
        return float(DOSE_GRID[int(np.argmax(q[:allowed_actions(cap)]))])

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "GreedyPolicy":
        return cls(ckpt.network(), ckpt.config.genotype_blind)


def run_episode(net: QNetwork, patient: PatientProfile, *, T: int, h: int,
                d1_max: float, genotype_blind: bool,
                epoch: int | None = None,
                explore_rng: np.random.Generator | None = None):
    """One episode; epsilon-greedy when an exploration stream is given."""
    env = Environment(patient, T=T, h=h, d1_max=d1_max)
    state = env.reset()
    episode: list[Experience] = []
    done = False
    while not done:
        feats = encode_state(state, genotype_blind)
        cap = env.dose_cap(state.decision_index)
        if explore_rng is not None:
            action = select_action(net, feats, epoch, cap, explore_rng)
        else:
            q = net.forward(feats)
            action = int(np.argmax(q[:allowed_actions(cap)]))
        state, r, _, done = env.step(float(DOSE_GRID[action]))
        episode.append(Experience(
            features=feats, action=action, reward=r,
            next_features=None if done else encode_state(state, genotype_blind),
            terminal=done))
    return env.trajectory, episode


def evaluate_policy(net: QNetwork, cohort: list[PatientProfile], *, T: int,
                    h: int, d1_max: float, genotype_blind: bool):
    """Greedy rollouts over a cohort; returns the trajectories."""
    return [run_episode(net, p, T=T, h=h, d1_max=d1_max,
                        genotype_blind=genotype_blind)[0] for p in cohort]


def class_pttr_stats(trajectories, cohort) -> dict:
    """Per-sensitivity-class mean/SD of daily PTTR (population SD)."""
    values = {cls: [] for cls in CLASS_ORDER}
    all_vals = []
    for traj, patient in zip(trajectories, cohort):
        v = pttr_daily(traj.latent_inrs)
        values[patient.sensitivity].append(v)
        all_vals.append(v)
    out = {}
    for cls, vals in values.items():
        arr = np.asarray(vals)
        out[cls.value] = {"n": arr.size,
                          "mean": float(arr.mean()) if arr.size else float("nan"),
                          "sd": float(arr.std()) if arr.size else float("nan")}
    arr = np.asarray(all_vals)
    out["all"] = {"n": arr.size, "mean": float(arr.mean()), "sd": float(arr.std())}
    return out


def worst_class_score(class_stats: dict) -> float:
    """min over sensitivity classes of (mean PTTR - SD)."""
    return min(class_stats[cls.value]["mean"] - class_stats[cls.value]["sd"]
               for cls in CLASS_ORDER)


def select_best(checkpoints: list[Checkpoint],
                validation_cohort: list[PatientProfile] | None = None) -> Checkpoint:
    """Checkpoint maximizing the worst-class (mean - SD) PTTR; ties -> earliest.

    Uses the per-epoch stats recorded at training time, or recomputes them
    on a supplied validation cohort.
    """
    if not checkpoints:
        raise ConfigError("no checkpoints to select from")
    scored = []
    for ckpt in checkpoints:
        stats = ckpt.class_stats
        if validation_cohort is not None:
            cfg = ckpt.config
            trajs = evaluate_policy(ckpt.network(), validation_cohort, T=cfg.T,
                                    h=cfg.h, d1_max=cfg.d1_max,
                                    genotype_blind=cfg.genotype_blind)
            stats = class_pttr_stats(trajs, validation_cohort)
        for cls in CLASS_ORDER:
            if not stats or stats[cls.value]["n"] == 0:
                raise ConfigError(
                    f"validation cohort has no {cls.value} patients; "
                    "cannot apply worst-class selection")
        scored.append(worst_class_score(stats))
    best = int(np.argmax(scored))  # argmax takes the earliest on ties
    return checkpoints[best]


def train(config: TrainConfig, validation_cohort: list[PatientProfile] | None = None,
          progress=None) -> tuple[list[Checkpoint], list[dict]]:
    """Full training run: one checkpoint and one log row per epoch."""
    net = QNetwork(config.widths, q_min=config.q_min,
                   rng=substream(config.master_seed, NS_INIT))
    buffer = ReplayBuffer(config.buffer_capacity)
    sgd_rng = substream(config.master_seed, NS_SGD)
    if validation_cohort is None:
        validation_cohort = generate_cohort(
            config.validation_size,
            draw_seed(substream(config.master_seed, NS_TRAIN_COHORT, 0)))

    checkpoints: list[Checkpoint] = []
    log: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        cohort_seed = draw_seed(substream(config.master_seed, NS_TRAIN_COHORT, epoch))
        cohort = generate_cohort(config.cohort_per_epoch, cohort_seed)
        losses = []
        for patient in cohort:
            explore_rng = substream(config.master_seed, NS_EXPLORE, epoch, patient.id)
            _, episode = run_episode(
                net, patient, T=config.T, h=config.h, d1_max=config.d1_max,
                genotype_blind=config.genotype_blind, epoch=epoch,
                explore_rng=explore_rng)
            losses.extend(backward_episode_pass(
                net, episode, config.gamma, buffer, sgd_rng,
                config.batch_size, config.learning_rate,
                config.validation_split, config.optimizer))

        trajs = evaluate_policy(net, validation_cohort, T=config.T, h=config.h,
                                d1_max=config.d1_max,
                                genotype_blind=config.genotype_blind)
        stats = class_pttr_stats(trajs, validation_cohort)
        checkpoints.append(Checkpoint(epoch=epoch, state=net.state_dict(),
                                      config=config, class_stats=stats))
        row = {"epoch": epoch, "epsilon": epsilon(epoch),
               "train_loss": float(np.mean([l[0] for l in losses])) if losses else float("nan"),
               "val_loss": float(np.nanmean([l[1] for l in losses])) if losses else float("nan")}
        for cls in (*CLASS_ORDER,):
            row[f"pttr_mean_{cls.value}"] = stats[cls.value]["mean"]
            row[f"pttr_sd_{cls.value}"] = stats[cls.value]["sd"]
        row["pttr_mean_all"] = stats["all"]["mean"]
        row["pttr_sd_all"] = stats["all"]["sd"]
        row["worst_class_score"] = worst_class_score(stats)
        log.append(row)
        if progress is not None:
            progress(row)
    return checkpoints, log


# --- checkpoint persistence ---

CHECKPOINT_FORMAT = 1


def save_checkpoint(ckpt: Checkpoint, path: str | Path,
                    extra_meta: dict | None = None) -> None:
    arrays = {}
    for i, W in enumerate(ckpt.state["weights"]):
        arrays[f"w{i}"] = W
    for i, b in enumerate(ckpt.state["biases"]):
        arrays[f"b{i}"] = b
    meta = {"format": CHECKPOINT_FORMAT, "epoch": ckpt.epoch,
            "widths": list(ckpt.state["widths"]), "q_min": ckpt.state["q_min"],
            "config": ckpt.config.to_dict(), "class_stats": ckpt.class_stats,
            **(extra_meta or {})}
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        n_layers = len(meta["widths"]) - 1
        state = {"widths": tuple(meta["widths"]), "q_min": meta["q_min"],
                 "weights": [data[f"w{i}"] for i in range(n_layers)],
                 "biases": [data[f"b{i}"] for i in range(n_layers)]}
    cfg_dict = meta["config"]
    cfg_dict["hidden_widths"] = tuple(cfg_dict["hidden_widths"])
    config = TrainConfig(**cfg_dict)
    return Checkpoint(epoch=meta["epoch"], state=state, config=config,
                      class_stats=meta.get("class_stats", {}))
