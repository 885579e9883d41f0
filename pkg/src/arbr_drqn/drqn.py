"""Recurrent deep-Q value function: one LSTM layer plus a linear 3-way head.

Everything is plain numpy in float64. Gradients come from a hand-written
backpropagation-through-time pass; tests compare them against central finite
differences.

Action encoding: index 0/1/2 of a Q vector corresponds to action -1/0/+1
(sell/hold/buy).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, DomainError, InsufficientDataError, NumericError

ACTIONS = (-1, 0, 1)
PARAM_NAMES = ("W", "b", "W_out", "b_out")
CHECKPOINT_FORMAT = "arbr_drqn.checkpoint"
CHECKPOINT_VERSION = 1


def action_to_index(action: int) -> int:
    return int(action) + 1


def index_to_action(index: int) -> int:
    return int(index) - 1


@dataclass(frozen=True)
class TrainingConfig:
    alpha: float = 1e-3
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.2
    batch_size: int = 32
    seq_len: int = 8
    hidden: int = 32
    replay_capacity: int = 10_000
    target_sync: int = 200
    use_target: bool = True
    max_grad_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be > 0")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must be in [0, 1)")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        if not 0 < self.epsilon_decay_fraction <= 1:
            raise ConfigError("epsilon_decay_fraction must be in (0, 1]")
        if self.hidden < 1:
            raise ConfigError("hidden size must be >= 1")
        for name in ("batch_size", "seq_len", "replay_capacity", "target_sync"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)


def epsilon_at(step: int, total_steps: int, cfg: TrainingConfig) -> float:
    """Linear anneal from ``epsilon_start`` to ``epsilon_end`` over the first
    ``epsilon_decay_fraction`` of training, flat afterwards."""
    horizon = max(1, int(round(cfg.epsilon_decay_fraction * total_steps)))
    frac = min(1.0, step / horizon)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class QNetwork:
    """LSTM(w -> h) followed by a linear head h -> 3.

    ``W`` stacks the input, forget, output and candidate gate weights as
    ``(4h, w + h)`` acting on ``[x_t, h_{t-1}]``.
    """

    def __init__(self, input_width: int, hidden: int, params: dict[str, np.ndarray] | None = None):
        if hidden < 1:
            raise ConfigError("hidden size must be >= 1")
        if input_width < 1:
            raise ConfigError("input width must be >= 1")
        self.w = int(input_width)
        self.h = int(hidden)
        shapes = self.shapes()
        if params is None:
            params = {k: np.zeros(s) for k, s in shapes.items()}
        for k, s in shapes.items():
            if params[k].shape != s:
                raise DimensionError(f"parameter {k} has shape {params[k].shape}, expected {s}")
        self.params = {k: np.array(params[k], dtype=float) for k in PARAM_NAMES}

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h, w = self.h, self.w
        return {"W": (4 * h, w + h), "b": (4 * h,), "W_out": (3, h), "b_out": (3,)}

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "QNetwork":
        return QNetwork(self.w, self.h, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])


def init_network(config: TrainingConfig, input_width: int, rng: np.random.Generator | None = None) -> QNetwork:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) initialisation, deterministic in ``config.seed``."""
    if rng is None:
        rng = np.random.default_rng([config.seed, 0])
    net = QNetwork(input_width, config.hidden)
    bound = 1.0 / math.sqrt(config.hidden)
    for k in PARAM_NAMES:
        net.params[k] = rng.uniform(-bound, bound, size=net.params[k].shape)
    return net


def _as_batch(states, width: int) -> np.ndarray:
    x = np.asarray(states, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise DimensionError(f"expected a (L, w) or (B, L, w) state sequence, got shape {x.shape}")
    if x.shape[2] != width:
        raise DimensionError(f"state width {x.shape[2]} != network input width {width}")
    if not np.all(np.isfinite(x)):
        raise DomainError("state sequence contains non-finite values")
    return x


def _run(net: QNetwork, x: np.ndarray, carry=None, keep=False):
    B, L, _ = x.shape
    h = net.h
    W, b = net.params["W"], net.params["b"]
    Wx, Wh = W[:, : net.w], W[:, net.w:]
    if carry is None:
        hs = np.zeros((B, h))
        cs = np.zeros((B, h))
    else:
        hs, cs = (np.broadcast_to(np.asarray(a, dtype=float), (B, h)).copy() for a in carry)
    cache = []
    for t in range(L):
        z = x[:, t] @ Wx.T + hs @ Wh.T + b
        i = _sigmoid(z[:, :h])
        f = _sigmoid(z[:, h: 2 * h])
        o = _sigmoid(z[:, 2 * h: 3 * h])
        g = np.tanh(z[:, 3 * h:])
        c_new = f * cs + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if keep:
            cache.append((x[:, t], hs, cs, i, f, o, g, tc))
        hs, cs = h_new, c_new
    q = hs @ net.params["W_out"].T + net.params["b_out"]
    return q, (hs, cs), cache


def forward(net: QNetwork, states, carry=None):
    """Run the LSTM over a state sequence and read Q from the final hidden state.

    ``states`` is ``(L, w)`` for one sequence or ``(B, L, w)`` for a batch.
    Returns ``(q, (h, c))`` where ``q`` is ``(3,)`` or ``(B, 3)``.
    """
    x = _as_batch(states, net.w)
    single = np.asarray(states).ndim == 2
    q, (hs, cs), _ = _run(net, x, carry)
    if single:
        return q[0], (hs[0], cs[0])
    return q, (hs, cs)


def loss_and_grads(net: QNetwork, states, action_idx, targets):
    """Mean squared error between Q(s, a) and ``targets`` with its BPTT gradient."""
    x = _as_batch(states, net.w)
    action_idx = np.asarray(action_idx, dtype=int)
    targets = np.asarray(targets, dtype=float)
    B = x.shape[0]
    h = net.h
    q, (h_last, _), cache = _run(net, x, keep=True)
    rows = np.arange(B)
    err = q[rows, action_idx] - targets
    loss = float(np.mean(err ** 2))

    dq = np.zeros_like(q)
    dq[rows, action_idx] = 2.0 * err / B
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    grads["W_out"] = dq.T @ h_last
    grads["b_out"] = dq.sum(axis=0)
    dh = dq @ net.params["W_out"]
    dc = np.zeros((B, h))
    W = net.params["W"]
    Wh = W[:, net.w:]
    for x_t, h_prev, c_prev, i, f, o, g, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1
        )
        grads["W"] += dz.T @ np.concatenate([x_t, h_prev], axis=1)
        grads["b"] += dz.sum(axis=0)
        dh = dz @ Wh
        dc = dc * f
    return loss, grads


def greedy_action(q) -> int:
    """Argmax over [sell, hold, buy]; ties go to hold, then sell."""
    q = np.asarray(q, dtype=float)
    if q.shape != (3,):
        raise DimensionError(f"expected 3 action values, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise DomainError("non-finite action values")
    m = q.max()
    if q[1] == m:
        return 0
    if q[0] == m:
        return -1
    return 1


def select_action(q, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy: uniform over {-1, 0, 1} with probability ``epsilon``."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    greedy = greedy_action(q)
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(-1, 2))
    return greedy


def td_target(reward: float, next_q, gamma: float, terminal: bool) -> float:
    if terminal:
        return float(reward)
    return float(reward + gamma * np.max(next_q))


@dataclass
class Transition:
    state: np.ndarray  # (L, w)
    action: int
    reward: float
    next_state: np.ndarray  # (L, w)
    terminal: bool = False
    key: int | None = None  # time index in the source series, for checkpointing

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}, got {self.action}")
        if np.shape(self.state) != np.shape(self.next_state):
            raise DimensionError("state and next_state sequences differ in shape")


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, t: Transition) -> None:
        self._items.append(t)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if batch_size > len(self._items):
            raise InsufficientDataError(f"buffer holds {len(self._items)} transitions, asked for {batch_size}")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]


def replay_push(buffer: ReplayBuffer, t: Transition) -> None:
    buffer.push(t)


def replay_sample(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> list[Transition]:
    return buffer.sample(batch_size, rng)


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    for k in PARAM_NAMES:
        np.copyto(target_net.params[k], net.params[k])


def batch_targets(target_net: QNetwork, batch: Sequence[Transition], gamma: float) -> np.ndarray:
    next_states = np.stack([t.next_state for t in batch])
    next_q, _ = forward(target_net, next_states)
    return np.array([td_target(t.reward, nq, gamma, t.terminal) for t, nq in zip(batch, next_q)])


def train_step(net: QNetwork, target_net: QNetwork | None, batch: Sequence[Transition], config: TrainingConfig) -> float:
    """One gradient-descent step of size ``alpha`` on the squared TD error.

    Targets come from ``target_net`` (or ``net`` itself when None) and are held
    fixed. Returns the loss before the update.
    """
    if not batch:
        raise InsufficientDataError("empty training batch")
    tnet = target_net if target_net is not None else net
    targets = batch_targets(tnet, batch, config.gamma)
    states = np.stack([t.state for t in batch])
    idx = [action_to_index(t.action) for t in batch]
    with np.errstate(invalid="ignore", over="ignore"):  # reported below
        loss, grads = loss_and_grads(net, states, idx, targets)
    norms = {k: float(np.linalg.norm(g)) for k, g in grads.items()}
    if not math.isfinite(loss) or not all(math.isfinite(v) for v in norms.values()):
        raise NumericError(f"non-finite loss {loss}; gradient norms {norms}")
    scale = 1.0
    if config.max_grad_norm is not None:
        total = math.sqrt(sum(v * v for v in norms.values()))
        if total > config.max_grad_norm:
            scale = config.max_grad_norm / total
    for k in PARAM_NAMES:
        net.params[k] -= config.alpha * scale * grads[k]
    return loss


def checkpoint_dict(net: QNetwork, config: TrainingConfig, extra: dict | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "seed": config.seed,
        "input_width": net.w,
        "hidden": net.h,
        "params": {k: net.params[k].tolist() for k in PARAM_NAMES},
    }
    if extra:
        doc.update(extra)
    return doc


def network_from_dict(doc: dict) -> QNetwork:
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} document")
    params = {k: np.array(doc["params"][k], dtype=float) for k in PARAM_NAMES}
    return QNetwork(int(doc["input_width"]), int(doc["hidden"]), params)
