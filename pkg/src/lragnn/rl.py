"""Progressive age estimation as a walk on a 10x10 (decade x year) grid.

An agent starts from a row proposed by the auxiliary classifier and moves
one row or column at a time until it chooses ``STAY``.  Rewards favour the
correct row over the correct column, scale with the imbalance ratio of the
target's decade and grow with Manhattan distance from the label.  The Q
network is trained with Double-DQN targets plus the focal/MAE loss on its
auxiliary heads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionError, DomainError, InputError, StateError

GRID = 10
N_ACTIONS = 5
AGE_SCALE = 100.0
FOCAL_TAU = 1.3
ETA = 0.5
P_FLOOR = 1e-12


class ActionType(enum.IntEnum):
    ROW_UP = 0
    ROW_DOWN = 1
    COL_UP = 2
    COL_DOWN = 3
    STAY = 4


_DELTAS = {
    ActionType.ROW_UP: (1, 0),
    ActionType.ROW_DOWN: (-1, 0),
    ActionType.COL_UP: (0, 1),
    ActionType.COL_DOWN: (0, -1),
    ActionType.STAY: (0, 0),
}
_DELTA_ARRAY = np.array([_DELTAS[a] for a in ActionType])


@dataclass(frozen=True)
class GridPosition:
    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < GRID and 0 <= self.col < GRID):
            raise DomainError(f"grid position ({self.row}, {self.col}) outside 0..9")

    def moved(self, action: ActionType) -> "GridPosition":
        dr, dc = _DELTAS[ActionType(action)]
        return GridPosition(min(max(self.row + dr, 0), GRID - 1),
                            min(max(self.col + dc, 0), GRID - 1))


def encode_age(age) -> GridPosition:
    if age < 0:
        raise DomainError(f"negative age {age}")
    age = min(int(age), GRID * GRID - 1)
    return GridPosition(*divmod(age, GRID))


def decode_position(pos: GridPosition) -> int:
    return GRID * pos.row + pos.col


@dataclass
class ImbalanceTable:
    counts: np.ndarray   # per-group training counts
    ratios: np.ndarray   # majority count / group count, >= 1

    @classmethod
    def from_ages(cls, ages: Sequence[int]) -> "ImbalanceTable":
        groups = np.minimum(np.asarray(ages, dtype=np.int64), GRID * GRID - 1) // GRID
        counts = np.bincount(groups, minlength=GRID).astype(np.float64)
        if counts.sum() == 0:
            raise InputError("cannot build an imbalance table from no samples")
        present = counts > 0
        ratios = np.ones(GRID)
        ratios[present] = counts.max() / counts[present]
        # groups unseen in training borrow the largest observed ratio
        ratios[~present] = ratios[present].max()
        return cls(counts, ratios)

    @classmethod
    def balanced(cls) -> "ImbalanceTable":
        return cls(np.ones(GRID), np.ones(GRID))

    @property
    def majority_count(self) -> float:
        return float(self.counts.max())

    def ratio(self, group: int) -> float:
        return float(self.ratios[group])


def reward(pos: GridPosition, target: GridPosition, table: ImbalanceTable,
           use_imbalance: bool = True, use_distance: bool = True) -> float:
    rho = table.ratio(target.row) if use_imbalance else 1.0
    dist = abs(pos.row - target.row) + abs(pos.col - target.col)
    if not use_distance:
        dist = min(dist, 1)
    if pos.row == target.row:
        if pos.col == target.col:
            return rho
        return -dist * math.sqrt(rho)
    return -dist * rho


@dataclass
class AgentState:
    embedding: np.ndarray
    position: GridPosition
    steps_taken: int = 0
    done: bool = False
    sample: int = -1


def env_step(state: AgentState, action, target: GridPosition, table: ImbalanceTable,
             max_steps: int = 20, use_imbalance: bool = True,
             use_distance: bool = True) -> tuple[AgentState, float, bool]:
    if state.done:
        raise StateError("env_step called on a finished episode")
    action = ActionType(action)
    pos = state.position.moved(action)
    r = reward(pos, target, table, use_imbalance, use_distance)
    steps = state.steps_taken + 1
    done = action == ActionType.STAY or steps >= max_steps
    return replace(state, position=pos, steps_taken=steps, done=done), r, done


# ---------------------------------------------------------------------------
# Q network
# ---------------------------------------------------------------------------

Q_NAMES = ("q.W1", "q.b1", "q.W2", "q.b2", "q.Wq", "q.bq", "q.Wc", "q.bc", "q.Wr", "q.br")


def init_q_params(store: nx.ParamStore, rng: np.random.Generator, emb_dim: int,
                  hidden: int = 64) -> nx.ParamStore:
    d_in = emb_dim + 2 * GRID
    store.add("q.W1", nx.glorot_uniform(rng, d_in, hidden))
    store.add("q.b1", np.zeros((1, hidden)))
    store.add("q.W2", nx.glorot_uniform(rng, hidden, hidden))
    store.add("q.b2", np.zeros((1, hidden)))
    store.add("q.Wq", nx.glorot_uniform(rng, hidden, N_ACTIONS))
    store.add("q.bq", np.zeros((1, N_ACTIONS)))
    store.add("q.Wc", nx.glorot_uniform(rng, hidden, GRID))
    store.add("q.bc", np.zeros((1, GRID)))
    store.add("q.Wr", nx.glorot_uniform(rng, hidden, 1))
    store.add("q.br", np.zeros((1, 1)))
    return store


@dataclass
class QOutput:
    values: object         # (B, 5)
    class_logits: object   # (B, 10)
    age: object            # (B, 1), in years


def position_features(rows, cols) -> np.ndarray:
    """One-hot row and column; ``rows is None`` gives the all-zero encoding."""
    if rows is None:
        return None
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    out = np.zeros((rows.size, 2 * GRID))
    out[np.arange(rows.size), rows] = 1.0
    out[np.arange(rows.size), GRID + cols] = 1.0
    return out


def q_forward_batch(params: nx.ParamStore, embeddings, rows=None, cols=None, tape=None) -> QOutput:
    """Evaluate the network on a batch; missing positions encode as zeros."""
    get = (lambda n: tape.param(n, params)) if tape is not None else params.value
    emb_v = nx.value(embeddings)
    if emb_v.ndim == 1:
        embeddings = nx.reshape(embeddings, (1, -1))
        emb_v = nx.value(embeddings)
    d_in = params.value("q.W1").shape[0]
    if emb_v.shape[-1] + 2 * GRID != d_in:
        raise DimensionError(
            f"embedding width {emb_v.shape[-1]} does not match Q trunk input {d_in - 2 * GRID}")
    pos = position_features(rows, cols)
    if pos is None:
        pos = np.zeros((emb_v.shape[0], 2 * GRID))
    x = nx.concat([embeddings, pos], axis=-1)
    h = nx.relu(nx.add(nx.matmul(x, get("q.W1")), get("q.b1")))
    h = nx.relu(nx.add(nx.matmul(h, get("q.W2")), get("q.b2")))
    values = nx.add(nx.matmul(h, get("q.Wq")), get("q.bq"))
    logits = nx.add(nx.matmul(h, get("q.Wc")), get("q.bc"))
    age = nx.mul(nx.add(nx.matmul(h, get("q.Wr")), get("q.br")), AGE_SCALE)
    return QOutput(values, logits, age)


def q_forward(params: nx.ParamStore, state: AgentState) -> QOutput:
    out = q_forward_batch(params, np.asarray(state.embedding)[None, :],
                          [state.position.row], [state.position.col])
    return QOutput(out.values[0], out.class_logits[0], float(out.age[0, 0]))


def select_action(values, epsilon: float, rng: np.random.Generator) -> ActionType:
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError(f"epsilon={epsilon} outside [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return ActionType(int(rng.integers(N_ACTIONS)))
    return ActionType(int(np.argmax(np.asarray(values))))


# ---------------------------------------------------------------------------
# experience replay and targets
# ---------------------------------------------------------------------------

@dataclass
class Transition:
    state: AgentState
    action: ActionType
    reward: float
    next_state: AgentState
    done: bool
    age: int = 0


@dataclass
class TransitionBatch:
    embeddings: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_embeddings: np.ndarray
    next_rows: np.ndarray
    next_cols: np.ndarray
    dones: np.ndarray
    ages: np.ndarray
    samples: np.ndarray

    @classmethod
    def from_transitions(cls, ts: Sequence[Transition]) -> "TransitionBatch":
        return cls(
            embeddings=np.stack([t.state.embedding for t in ts]),
            rows=np.array([t.state.position.row for t in ts]),
            cols=np.array([t.state.position.col for t in ts]),
            actions=np.array([int(t.action) for t in ts]),
            rewards=np.array([t.reward for t in ts], dtype=np.float64),
            next_embeddings=np.stack([t.next_state.embedding for t in ts]),
            next_rows=np.array([t.next_state.position.row for t in ts]),
            next_cols=np.array([t.next_state.position.col for t in ts]),
            dones=np.array([t.done for t in ts], dtype=bool),
            ages=np.array([t.age for t in ts], dtype=np.float64),
            samples=np.array([t.state.sample for t in ts]),
        )


class ReplayBuffer:
    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise DomainError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def push(self, t: Transition):
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def items(self) -> list[Transition]:
        """Contents from oldest to newest."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if len(self._items) < batch:
            raise StateError(f"replay buffer holds {len(self._items)} < batch {batch} transitions")
        return rng.integers(0, len(self._items), size=batch)

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        return [self._items[i] for i in self.sample_indices(batch, rng)]


def double_q_target(batch: TransitionBatch, online: nx.ParamStore, target: nx.ParamStore,
                    gamma: float = 0.9) -> np.ndarray:
    """``r + gamma * Q_target(s', argmax_a Q_online(s', a))``; terminal rows give ``r``."""
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma={gamma} outside (0, 1)")
    q_online = q_forward_batch(online, batch.next_embeddings, batch.next_rows, batch.next_cols).values
    q_target = q_forward_batch(target, batch.next_embeddings, batch.next_rows, batch.next_cols).values
    best = np.argmax(q_online, axis=1)
    boot = q_target[np.arange(best.size), best]
    return np.where(batch.dones, batch.rewards, batch.rewards + gamma * boot)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def focal_loss(probabilities, true_group: int, tau: float = FOCAL_TAU) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("probabilities must be a distribution summing to 1")
    pt = max(p[true_group], P_FLOOR)
    return float(-((1.0 - pt) ** tau) * math.log(pt))


def combined_loss(class_probs, true_group: int, age_pred: float, age_true: float,
                  eta: float = ETA, tau: float = FOCAL_TAU) -> float:
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta={eta} outside [0, 1]")
    return eta * focal_loss(class_probs, true_group, tau) + (1.0 - eta) * abs(age_pred - age_true)


def focal_loss_batch(logits, groups, tau: float = FOCAL_TAU):
    """Per-sample focal loss from logits, shape (B, 1)."""
    groups = np.asarray(groups, dtype=np.int64).reshape(-1, 1)
    pt = nx.maximum(nx.take_along(nx.row_softmax(logits), groups, axis=-1), P_FLOOR)
    ce = nx.neg(nx.log(pt))
    if tau == 0:
        return ce
    return nx.mul(nx.power(nx.sub(1.0, pt), tau), ce)


def prlae_loss(out: QOutput, ages, eta: float = ETA, tau: float = FOCAL_TAU):
    """Batch mean of ``eta * focal + (1 - eta) * |age error|`` on the auxiliary heads."""
    ages = np.asarray(ages, dtype=np.float64).reshape(-1, 1)
    groups = np.minimum(ages.astype(np.int64), GRID * GRID - 1) // GRID
    fl = focal_loss_batch(out.class_logits, groups, tau)
    mae = nx.absolute(nx.sub(out.age, ages))
    return nx.mean(nx.add(nx.mul(eta, fl), nx.mul(1.0 - eta, mae)))


# ---------------------------------------------------------------------------
# rollout and training
# ---------------------------------------------------------------------------

def start_positions(params: nx.ParamStore, embeddings, start_col: int = 4) -> list[GridPosition]:
    logits = q_forward_batch(params, np.atleast_2d(embeddings)).class_logits
    return [GridPosition(int(r), start_col) for r in np.argmax(logits, axis=1)]


def rollout_positions(params: nx.ParamStore, embeddings, starts: Sequence[GridPosition],
                      horizon: int = 20) -> list[GridPosition]:
    """Greedy rollouts for a batch of samples, stopping at ``STAY`` or the horizon."""
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    rows = np.array([s.row for s in starts])
    cols = np.array([s.col for s in starts])
    active = np.ones(len(starts), dtype=bool)
    for _ in range(horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        q = q_forward_batch(params, emb[idx], rows[idx], cols[idx]).values
        acts = np.argmax(q, axis=1)
        stay = acts == ActionType.STAY
        move = idx[~stay]
        rows[move] = np.clip(rows[move] + _DELTA_ARRAY[acts[~stay], 0], 0, GRID - 1)
        cols[move] = np.clip(cols[move] + _DELTA_ARRAY[acts[~stay], 1], 0, GRID - 1)
        active[idx[stay]] = False
    return [GridPosition(int(r), int(c)) for r, c in zip(rows, cols)]


def predict_age(params: nx.ParamStore, embedding, start: Optional[GridPosition] = None,
                script: Optional[Sequence[ActionType]] = None, horizon: int = 20,
                start_col: int = 4) -> int:
    """Roll out one sample; ``script`` replaces the policy with fixed actions."""
    if start is None:
        start = start_positions(params, embedding, start_col)[0]
    if script is None:
        return decode_position(rollout_positions(params, embedding, [start], horizon)[0])
    pos = start
    for action in list(script)[:horizon]:
        if ActionType(action) == ActionType.STAY:
            break
        pos = pos.moved(action)
    return decode_position(pos)


def predict_ages(params: nx.ParamStore, embeddings, horizon: int = 20, start_col: int = 4) -> np.ndarray:
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if emb.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    starts = start_positions(params, emb, start_col)
    return np.array([decode_position(p) for p in rollout_positions(params, emb, starts, horizon)])


@dataclass
class RLConfig:
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    horizon: int = 20
    sync_interval: int = 500
    lam: float = 1.0
    eta: float = ETA
    focal_tau: float = FOCAL_TAU
    capacity: int = 10_000
    batch: int = 32
    epochs: int = 10
    n_envs: int = 32
    updates_per_step: int = 4
    q_hidden: int = 64
    huber_delta: float = 1.0
    start_col: int = 4
    one_shot: bool = False
    use_imbalance: bool = True
    use_distance: bool = True
    cotrain: bool = False
    lr: float = 1e-3
    lr_floor: float = 1e-6
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999

    @property
    def effective_horizon(self) -> int:
        return 1 if self.one_shot else self.horizon


def epsilon_at(cfg: RLConfig, episode: int, total_episodes: int) -> float:
    span = max(1.0, cfg.epsilon_decay_fraction * total_episodes)
    frac = min(episode / span, 1.0)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


@dataclass
class RLLog:
    episode_returns: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    epoch_mean_return: list = field(default_factory=list)
    steps: int = 0


def _update(params, target_net, buffer, cfg, rng, lr, embed_fn, update_names, log):
    batch = TransitionBatch.from_transitions(buffer.sample(cfg.batch, rng))
    y = double_q_target(batch, params, target_net, cfg.gamma)
    tape = nx.Tape(params)
    states = batch.embeddings if embed_fn is None else embed_fn(batch.samples, tape)
    out = q_forward_batch(params, states, batch.rows, batch.cols, tape)
    q_sa = nx.take_along(out.values, batch.actions.reshape(-1, 1), axis=-1)
    td = nx.mean(nx.huber(nx.sub(q_sa, y.reshape(-1, 1)), cfg.huber_delta))
    aux = prlae_loss(q_forward_batch(params, states, tape=tape), batch.ages, cfg.eta, cfg.focal_tau)
    loss = nx.add(td, nx.mul(cfg.lam, aux))
    params.zero_grad()
    tape.backward(loss)
    tape.release()
    nx.adam_step(params, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, names=update_names)
    log.losses.append(float(nx.value(loss)))


def train_prlae(embeddings, ages, params: nx.ParamStore, cfg: RLConfig,
                rng: np.random.Generator, table: Optional[ImbalanceTable] = None,
                embed_fn: Optional[Callable] = None, extra_names: Sequence[str] = ()) -> RLLog:
    """Double-DQN with one episode per sample per epoch; updates ``params`` in place.

    Episodes run ``cfg.n_envs`` at a time in lockstep.  After every joint
    step the new transitions enter the replay buffer and ``cfg.updates_per_step``
    minibatch updates follow.  With ``embed_fn(indices, tape)`` the state
    embeddings used in the loss are recomputed through the feature extractor
    so that its parameters (listed in ``extra_names``) co-train.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    ages = np.asarray(ages)
    n = emb.shape[0]
    if n == 0:
        raise InputError("cannot train on an empty dataset")
    table = table if table is not None else ImbalanceTable.from_ages(ages)
    targets = [encode_age(a) for a in ages]
    update_names = list(Q_NAMES) + list(extra_names)
    target_net = params.copy(prefix="q.")
    buffer = ReplayBuffer(cfg.capacity)
    horizon = cfg.effective_horizon
    total_episodes = cfg.epochs * n
    log = RLLog()
    episode = 0
    for epoch in range(cfg.epochs):
        lr = nx.cosine_lr(cfg.lr, epoch, cfg.epochs, cfg.lr_floor)
        order = rng.permutation(n)
        returns = np.zeros(n)
        for lo in range(0, n, cfg.n_envs):
            chunk = order[lo:lo + cfg.n_envs]
            eps = [epsilon_at(cfg, episode + k, total_episodes) for k in range(chunk.size)]
            episode += chunk.size
            starts = start_positions(params, emb[chunk], cfg.start_col)
            states = [AgentState(emb[i], p, sample=int(i)) for i, p in zip(chunk, starts)]
            while True:
                live = [k for k, st in enumerate(states) if not st.done]
                if not live:
                    break
                rows = [states[k].position.row for k in live]
                cols = [states[k].position.col for k in live]
                q = q_forward_batch(params, emb[chunk[live]], rows, cols).values
                for j, k in enumerate(live):
                    i = chunk[k]
                    action = select_action(q[j], eps[k], rng)
                    nxt, r, done = env_step(states[k], action, targets[i], table, horizon,
                                            cfg.use_imbalance, cfg.use_distance)
                    buffer.push(Transition(states[k], action, r, nxt, done, int(ages[i])))
                    returns[i] += r
                    states[k] = nxt
                    log.steps += 1
                    if log.steps % cfg.sync_interval == 0:
                        target_net = params.copy(prefix="q.")
                if len(buffer) >= cfg.batch:
                    for _ in range(cfg.updates_per_step):
                        _update(params, target_net, buffer, cfg, rng, lr, embed_fn, update_names, log)
        log.episode_returns.extend(float(returns[i]) for i in order)
        log.epoch_mean_return.append(float(np.mean(returns)))
    return log
