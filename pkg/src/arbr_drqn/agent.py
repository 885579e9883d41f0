"""DRQN training loop over a precomputed state matrix.

The market is exogenous: the agent's action changes its reward, never the next
state. One episode is one pass over the training segment. The reward for
taking action ``a`` at group ``t`` is ``a * (P[t+1] - P[t])``, the one-step
price difference signed by the position the action expresses.
"""

from __future__ import annotations

import numpy as np

from . import drqn
from .backtest import reward as price_reward
from .drqn import QNetwork, ReplayBuffer, TrainingConfig, Transition
from .errors import ContractError, InsufficientHistoryError

TRAINER_FORMAT = "arbr_drqn.trainer"
TRAINER_VERSION = 1


def sequence_at(states: np.ndarray, t: int, seq_len: int) -> np.ndarray:
    if t - seq_len + 1 < 0:
        raise InsufficientHistoryError(f"group {t} has fewer than {seq_len} states of history")
    return states[t - seq_len + 1: t + 1]


def greedy_actions(net: QNetwork, states: np.ndarray, seq_len: int, ts, chunk: int = 512) -> np.ndarray:
    """Greedy action at each group in ``ts`` using only states up to that group."""
    ts = list(ts)
    out = np.zeros(len(ts), dtype=int)
    for lo in range(0, len(ts), chunk):
        part = ts[lo: lo + chunk]
        batch = np.stack([sequence_at(states, t, seq_len) for t in part])
        q, _ = drqn.forward(net, batch)
        out[lo: lo + len(part)] = [drqn.greedy_action(row) for row in q]
    return out


class Trainer:
    """Epsilon-greedy DRQN training on groups ``[start, end)`` of a state matrix.

    ``states`` rows must be finite from ``start - seq_len + 1`` on. The trainer
    can be serialised mid-run with :meth:`state_dict` and resumed with
    :meth:`from_state_dict`; the resumed run reproduces the uninterrupted loss
    sequence exactly.
    """

    def __init__(self, states: np.ndarray, prices: np.ndarray, start: int, end: int,
                 config: TrainingConfig, episodes: int = 10, reward_scale: float = 1.0):
        self.states = np.asarray(states, dtype=float)
        self.prices = np.asarray(prices, dtype=float)
        self.config = config
        self.episodes = int(episodes)
        self.reward_scale = float(reward_scale)
        L = config.seq_len
        finite = np.all(np.isfinite(self.states), axis=1)
        first_ok = int(np.argmax(finite)) if finite.any() else len(finite)
        self.t_first = max(start, first_ok + L - 1)
        self.t_last = end - 2
        if self.t_last < self.t_first:
            raise InsufficientHistoryError(
                f"training segment [{start}, {end}) leaves no usable steps after warm-up")
        if not np.all(finite[self.t_first - L + 1: self.t_last + 2]):
            raise InsufficientHistoryError("state matrix has gaps inside the training segment")
        self.episode_len = self.t_last - self.t_first + 1
        self.total_steps = self.episodes * self.episode_len
        self.net = drqn.init_network(config, self.states.shape[1])
        self.target = self.net.copy()
        self.rng = np.random.default_rng([config.seed, 1])
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.step = 0
        self.losses: list[tuple[int, float]] = []

    def seq(self, t: int) -> np.ndarray:
        return sequence_at(self.states, t, self.config.seq_len)

    def reward(self, t: int, action: int) -> float:
        return action * price_reward(self.prices[t + 1], self.prices[t]) * self.reward_scale

    def transition(self, t: int, action: int) -> Transition:
        return Transition(self.seq(t), action, self.reward(t, action), self.seq(t + 1),
                          terminal=(t == self.t_last), key=t)

    def run(self, n_steps: int | None = None) -> list[tuple[int, float]]:
        """Advance ``n_steps`` environment steps (default: to the end of training)."""
        cfg = self.config
        stop = self.total_steps if n_steps is None else min(self.total_steps, self.step + n_steps)
        new = []
        while self.step < stop:
            t = self.t_first + self.step % self.episode_len
            eps = drqn.epsilon_at(self.step, self.total_steps, cfg)
            q, _ = drqn.forward(self.net, self.seq(t))
            action = drqn.select_action(q, eps, self.rng)
            self.buffer.push(self.transition(t, action))
            self.step += 1
            if len(self.buffer) >= cfg.batch_size:
                batch = self.buffer.sample(cfg.batch_size, self.rng)
                loss = drqn.train_step(self.net, self.target if cfg.use_target else None, batch, cfg)
                self.losses.append((self.step, loss))
                new.append((self.step, loss))
            if cfg.use_target and self.step % cfg.target_sync == 0:
                drqn.sync_target(self.net, self.target)
        return new

    @property
    def done(self) -> bool:
        return self.step >= self.total_steps

    def state_dict(self) -> dict:
        return {
            "format": TRAINER_FORMAT,
            "version": TRAINER_VERSION,
            "step": self.step,
            "episodes": self.episodes,
            "reward_scale": self.reward_scale,
            "t_first": self.t_first,
            "t_last": self.t_last,
            "target_params": {k: v.tolist() for k, v in self.target.params.items()},
            "rng": self.rng.bit_generator.state,
            "buffer": [[tr.key, tr.action, tr.reward, tr.terminal] for tr in self.buffer],
            "losses": [[s, l] for s, l in self.losses],
        }

    def checkpoint(self, extra: dict | None = None) -> dict:
        doc = drqn.checkpoint_dict(self.net, self.config, extra)
        doc["trainer"] = self.state_dict()
        return doc

    @classmethod
    def from_state_dict(cls, checkpoint: dict, states: np.ndarray, prices: np.ndarray,
                        start: int, end: int) -> "Trainer":
        tr = checkpoint.get("trainer")
        if not tr or tr.get("format") != TRAINER_FORMAT or tr.get("version") != TRAINER_VERSION:
            raise ContractError("checkpoint carries no resumable trainer state")
        config = TrainingConfig.from_dict(checkpoint["config"])
        self = cls(states, prices, start, end, config, tr["episodes"], tr["reward_scale"])
        if (self.t_first, self.t_last) != (tr["t_first"], tr["t_last"]):
            raise ContractError("checkpoint was trained on a different segment")
        self.net = drqn.network_from_dict(checkpoint)
        self.target = QNetwork(self.net.w, self.net.h,
                               {k: np.array(v, dtype=float) for k, v in tr["target_params"].items()})
        self.rng.bit_generator.state = tr["rng"]
        for key, action, rew, terminal in tr["buffer"]:
            self.buffer.push(Transition(self.seq(key), int(action), float(rew), self.seq(key + 1),
                                        bool(terminal), key))
        self.step = int(tr["step"])
        self.losses = [(int(s), float(l)) for s, l in tr["losses"]]
        return self
