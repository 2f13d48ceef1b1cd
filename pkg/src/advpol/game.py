"""Finite two-player simultaneous-move Markov games.

States are integer-indexed. Both players act at once and a joint kernel
P(s' | s, a_adv, a_vic) drives the chain. Rewards are state-based and
credited on arrival: entering s' pays r_adv(s') / r_vic(s'). Absorbing
states self-loop with probability one and keep paying their reward, so an
outcome state entered at time k is worth gamma^k/(1-gamma) of its payoff.

Three desk-scale environments are provided:

- ``markov_rps``   one live state, simultaneous rock/paper/scissors, three
                   absorbing outcome states.
- ``grid_pass``    a runner (victim) tries to reach the far column of a
                   small grid while a blocker (adversary) intercepts.
                   Interception, swap-through, or timeout all favor the
                   blocker.
- ``push_duel``    two agents on an integer line shove each other toward
                   the ends; only a shove can push an agent off, timing out
                   is a tie.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

OUTCOMES = ("adv_win", "vic_win", "tie")
OUTCOME_CODE = {name: i for i, name in enumerate(OUTCOMES)}
LIVE = -1  # outcome code of non-absorbing states

NO_IMITATOR = -1  # Transition.imit_action sentinel when no imitator ran
NO_OBS = -1  # obs_index entry for states with no active column in a block

_ROW_TOL = 1e-12


# ---------------------------------------------------------------------------
# observation layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObsLayout:
    """Flat observation vector made of named one-hot blocks, in order."""

    blocks: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = [b[0] for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate block names in {names}")
        if any(n <= 0 for _, n in self.blocks):
            raise ValueError("block sizes must be positive")

    @property
    def size(self) -> int:
        return sum(n for _, n in self.blocks)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.blocks)

    def offset(self, name: str) -> int:
        off = 0
        for bname, n in self.blocks:
            if bname == name:
                return off
            off += n
        raise KeyError(f"no block named {name!r}")

    def block_slice(self, name: str) -> slice:
        off = self.offset(name)
        return slice(off, off + dict(self.blocks)[name])

    def with_block(self, name: str, size: int) -> "ObsLayout":
        """New layout with one more block appended."""
        return ObsLayout(self.blocks + ((name, size),))

    def mask(self, names) -> np.ndarray:
        """Boolean mask (True = zero this coordinate) covering the named blocks."""
        m = np.zeros(self.size, dtype=bool)
        for name in names:
            m[self.block_slice(name)] = True
        return m

    def to_json(self):
        return [[name, size] for name, size in self.blocks]

    @classmethod
    def from_json(cls, data) -> "ObsLayout":
        return cls(tuple((str(name), int(size)) for name, size in data))


# ---------------------------------------------------------------------------
# game container
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarkovGame:
    """Immutable tabular game. See module docstring for conventions.

    ``obs_index[s, b]`` is the active column of block b in state s's
    observation (NO_OBS = no active column; absorbing states in the grid
    and line games encode as all-zero observations).
    """

    name: str
    transition: np.ndarray  # (S, A_adv, A_vic, S), row-stochastic
    adv_reward: np.ndarray  # (S,)
    vic_reward: np.ndarray  # (S,)
    gamma: float
    horizon: int
    start_state: int
    absorbing: np.ndarray  # (S,) bool
    outcome_code: np.ndarray  # (S,) int8: LIVE or index into OUTCOMES
    timeout_outcome: str
    obs_layout: ObsLayout
    obs_index: np.ndarray  # (S, n_blocks) int64

    def __post_init__(self):
        self.validate()

    # -- sizes ------------------------------------------------------------
    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_adv_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_vic_actions(self) -> int:
        return self.transition.shape[2]

    @property
    def obs_dim(self) -> int:
        return self.obs_layout.size

    # -- derived ----------------------------------------------------------
    def dense_obs(self) -> np.ndarray:
        """(S, obs_dim) observation matrix (cached)."""
        cached = getattr(self, "_dense_obs", None)
        if cached is None:
            cached = dense_obs_matrix(self.obs_layout, self.obs_index)
            object.__setattr__(self, "_dense_obs", cached)
        return cached

    def outcome_of(self, state: int, absorbed: bool) -> str:
        if absorbed:
            return OUTCOMES[self.outcome_code[state]]
        return self.timeout_outcome

    def max_abs_reward(self) -> float:
        return float(max(np.abs(self.adv_reward).max(), np.abs(self.vic_reward).max()))

    # -- checks -----------------------------------------------------------
    def validate(self):
        P = self.transition
        S = P.shape[0]
        if P.ndim != 4 or P.shape[3] != S:
            raise ValueError(f"transition tensor has shape {P.shape}")
        if np.any(P < 0):
            raise ValueError("negative transition probability")
        rowsum = P.sum(axis=3)
        if np.max(np.abs(rowsum - 1.0)) > _ROW_TOL:
            raise ValueError("transition rows do not sum to 1")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"discount {self.gamma} outside [0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for arr in (self.adv_reward, self.vic_reward):
            if arr.shape != (S,) or not np.all(np.isfinite(arr)):
                raise ValueError("rewards must be finite, one per state")
        for s in np.flatnonzero(self.absorbing):
            if not np.all(P[s, :, :, s] == 1.0):
                raise ValueError(f"absorbing state {s} does not self-loop")
        if np.any((self.outcome_code >= 0) != self.absorbing):
            raise ValueError("outcome codes must cover exactly the absorbing states")
        if self.absorbing[self.start_state]:
            raise ValueError("start state is absorbing")
        if self.timeout_outcome not in OUTCOMES:
            raise ValueError(f"unknown timeout outcome {self.timeout_outcome!r}")
        if self.obs_index.shape != (S, len(self.obs_layout.blocks)):
            raise ValueError("obs_index shape does not match layout")


def dense_obs_matrix(layout: ObsLayout, obs_index: np.ndarray) -> np.ndarray:
    n = obs_index.shape[0]
    X = np.zeros((n, layout.size), dtype=np.float64)
    off = 0
    for b, (_, size) in enumerate(layout.blocks):
        idx = obs_index[:, b]
        rows = np.flatnonzero(idx != NO_OBS)
        X[rows, off + idx[rows]] = 1.0
        off += size
    return X


# ---------------------------------------------------------------------------
# transitions and trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    state: int
    adv_action: int
    vic_action: int
    imit_action: int  # NO_IMITATOR when no imitator ran
    adv_reward: float  # r_adv(next_state): arrival crediting
    vic_reward: float
    next_state: int
    done: bool


@dataclass
class Trajectory:
    """One episode. ``states`` has length T+1; the action arrays length T."""

    states: np.ndarray
    adv_actions: np.ndarray
    vic_actions: np.ndarray
    imit_actions: np.ndarray
    adv_rewards: np.ndarray
    vic_rewards: np.ndarray
    outcome: str
    absorbed: bool

    def __len__(self) -> int:
        return len(self.adv_actions)

    @property
    def final_state(self) -> int:
        return int(self.states[-1])

    def transitions(self) -> list:
        """Materialized per-step records (states chained by construction)."""
        T = len(self)
        return [
            Transition(
                state=int(self.states[t]),
                adv_action=int(self.adv_actions[t]),
                vic_action=int(self.vic_actions[t]),
                imit_action=int(self.imit_actions[t]),
                adv_reward=float(self.adv_rewards[t]),
                vic_reward=float(self.vic_rewards[t]),
                next_state=int(self.states[t + 1]),
                done=(t == T - 1),
            )
            for t in range(T)
        ]


def discounted_return(rewards: np.ndarray, gamma: float, absorbed: bool) -> float:
    """Arrival-credited discounted return of one episode's reward sequence.

    rewards[k] is r(s_{k+1}), credited with weight gamma^(k+1). When the
    episode ended absorbed, the terminal state keeps paying forever and the
    tail sum_{t>T} gamma^t r* is added in closed form, so the value is exact
    for absorbed episodes (the only truncation error is the live-timeout
    tail, bounded by gamma^(T+1) max|r| / (1-gamma)).
    """
    T = len(rewards)
    if T == 0:
        return 0.0
    w = gamma ** np.arange(1, T + 1)
    total = float(w @ np.asarray(rewards, dtype=np.float64))
    if absorbed:
        total += gamma ** (T + 1) / (1.0 - gamma) * float(rewards[-1])
    return total


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def sample_index(pmf: np.ndarray, u: float) -> int:
    """Index i with cdf[i-1] <= u < cdf[i] under the running-sum cdf."""
    cdf = np.cumsum(pmf)
    i = int(np.searchsorted(cdf, u, side="right"))
    return min(i, len(pmf) - 1)


def step(game: MarkovGame, state: int, adv_action: int, vic_action: int, rng):
    """Sample one transition; returns (next_state, r_adv, r_vic, done).

    ``rng`` is a seeded numpy Generator (or a bare uniform draw in [0,1)).
    done is True iff the next state is absorbing; the horizon budget is the
    caller's to track.
    """
    u = rng if isinstance(rng, float) else float(rng.random())
    row = game.transition[state, adv_action, vic_action]
    nxt = sample_index(row, u)
    return (
        nxt,
        float(game.adv_reward[nxt]),
        float(game.vic_reward[nxt]),
        bool(game.absorbing[nxt]),
    )


def marginalize_transition(game: MarkovGame, vic_policy, s: int, a_adv: int) -> np.ndarray:
    """Next-state distribution the adversary faces at (s, a_adv).

    Sums the joint kernel over the victim's action distribution at s:
    q_adv(s'|s, a_adv) = sum_b pi_vic(b|s) P(s'|s, a_adv, b).
    ``vic_policy`` may be a Policy or a ready (A_vic,) probability vector.
    """
    if hasattr(vic_policy, "action_dist"):
        probs = vic_policy.action_dist(game.dense_obs()[s])
    else:
        probs = np.asarray(vic_policy, dtype=np.float64)
    return probs @ game.transition[s, a_adv]


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvSpec:
    """Named environment plus its size parameters."""

    name: str
    params: dict = dataclasses.field(default_factory=dict)

    def to_json(self):
        return {"name": self.name, "params": dict(self.params)}

    @classmethod
    def from_json(cls, data) -> "EnvSpec":
        if isinstance(data, str):
            return cls(data)
        return cls(str(data["name"]), dict(data.get("params", {})))


MAX_STATES = 10_000  # keeps the exact oracle tractable


def make_env(spec, **overrides) -> MarkovGame:
    """Build one of the named environments.

    ``spec`` is an EnvSpec or a bare name; keyword overrides win over
    spec.params. Raises ValueError for unknown names or out-of-range sizes.
    """
    if isinstance(spec, str):
        spec = EnvSpec(spec)
    builder = _REGISTRY.get(spec.name)
    if builder is None:
        raise ValueError(
            f"unknown environment {spec.name!r}; known: {sorted(_REGISTRY)}"
        )
    params = dict(spec.params)
    params.update(overrides)
    game = builder(**params)
    if game.n_states > MAX_STATES:
        raise ValueError(
            f"{spec.name} with {game.n_states} states exceeds the "
            f"{MAX_STATES}-state oracle budget"
        )
    return game


def _absorbing_game(
    name,
    n_live,
    n_adv,
    n_vic,
    fill_live,
    *,
    outcome_states,  # ordered names of the absorbing states appended after live ones
    gamma,
    horizon,
    start_state,
    timeout_outcome,
    obs_layout,
    obs_index_live,
    adv_win_reward=1.0,
):
    """Assemble a game whose absorbing states sit after the live block."""
    S = n_live + len(outcome_states)
    if S > MAX_STATES:
        # fail before allocating the dense kernel, which grows as S^2
        raise ValueError(
            f"{name} with {S} states exceeds the {MAX_STATES}-state oracle budget"
        )
    P = np.zeros((S, n_adv, n_vic, S), dtype=np.float64)
    absorbing = np.zeros(S, dtype=bool)
    outcome_code = np.full(S, LIVE, dtype=np.int8)
    adv_reward = np.zeros(S, dtype=np.float64)
    vic_reward = np.zeros(S, dtype=np.float64)
    for k, out in enumerate(outcome_states):
        s = n_live + k
        absorbing[s] = True
        outcome_code[s] = OUTCOME_CODE[out]
        P[s, :, :, s] = 1.0
        if out == "adv_win":
            adv_reward[s], vic_reward[s] = adv_win_reward, -adv_win_reward
        elif out == "vic_win":
            adv_reward[s], vic_reward[s] = -adv_win_reward, adv_win_reward
    fill_live(P)
    n_blocks = len(obs_layout.blocks)
    obs_index = np.full((S, n_blocks), NO_OBS, dtype=np.int64)
    obs_index[:n_live] = obs_index_live
    return MarkovGame(
        name=name,
        transition=P,
        adv_reward=adv_reward,
        vic_reward=vic_reward,
        gamma=gamma,
        horizon=horizon,
        start_state=start_state,
        absorbing=absorbing,
        outcome_code=outcome_code,
        timeout_outcome=timeout_outcome,
        obs_layout=obs_layout,
        obs_index=obs_index,
    )


def markov_rps(gamma: float = 0.9, horizon: int = 16) -> MarkovGame:
    """Simultaneous rock/paper/scissors: one live state, three outcome states.

    Action i beats action j when (i - j) % 3 == 1 (paper > rock,
    scissors > paper, rock > scissors). State order: play, adv_win,
    vic_win, tie.
    """
    def fill(P):
        for a in range(3):
            for b in range(3):
                if (a - b) % 3 == 1:
                    nxt = 1  # adv_win
                elif (b - a) % 3 == 1:
                    nxt = 2  # vic_win
                else:
                    nxt = 3  # tie
                P[0, a, b, nxt] = 1.0

    layout = ObsLayout((("state", 4),))
    game = _absorbing_game(
        "markov_rps",
        n_live=1,
        n_adv=3,
        n_vic=3,
        fill_live=fill,
        outcome_states=("adv_win", "vic_win", "tie"),
        gamma=gamma,
        horizon=horizon,
        start_state=0,
        timeout_outcome="tie",
        obs_layout=layout,
        obs_index_live=np.array([[0]], dtype=np.int64),
    )
    # every state is visible in the single one-hot block, outcome states too
    obs_index = np.arange(4, dtype=np.int64).reshape(4, 1)
    return dataclasses.replace(game, obs_index=obs_index)


_GRID_MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0), (0, 0))  # up, down, left, right, stay


def grid_pass(W: int = 5, H: int = 3, horizon: int = 32, gamma: float = 0.95) -> MarkovGame:
    """Runner-vs-blocker grid. The victim (runner) starts in column 0 and
    must reach column W-1; the adversary (blocker) starts there. Moves are
    simultaneous and clipped at the walls. The blocker wins on interception
    (same cell, or swapping cells) and on timeout; the runner wins by
    standing in the far column. Collisions are checked before touchdown.
    """
    if W < 2 or H < 1:
        raise ValueError("grid_pass needs W >= 2 and H >= 1")
    cells = W * H
    n_live = cells * cells  # (blocker cell, runner cell) pairs

    def cell(x, y):
        return y * W + x

    def move(c, action):
        dx, dy = _GRID_MOVES[action]
        x, y = c % W, c // W
        return cell(min(max(x + dx, 0), W - 1), min(max(y + dy, 0), H - 1))

    adv_win, vic_win = n_live, n_live + 1

    def fill(P):
        for a_cell in range(cells):
            for v_cell in range(cells):
                s = a_cell * cells + v_cell
                for aa in range(5):
                    for av in range(5):
                        a_nxt = move(a_cell, aa)
                        v_nxt = move(v_cell, av)
                        if v_nxt == a_nxt:
                            nxt = adv_win
                        elif v_nxt == a_cell and a_nxt == v_cell:
                            nxt = adv_win  # swapped through each other
                        elif v_nxt % W == W - 1:
                            nxt = vic_win
                        else:
                            nxt = a_nxt * cells + v_nxt
                        P[s, aa, av, nxt] = 1.0

    start = cell(W - 1, H // 2) * cells + cell(0, H // 2)
    layout = ObsLayout((("adv_pos", cells), ("vic_pos", cells)))
    obs_index_live = np.stack(
        [np.repeat(np.arange(cells), cells), np.tile(np.arange(cells), cells)],
        axis=1,
    ).astype(np.int64)
    return _absorbing_game(
        "grid_pass",
        n_live=n_live,
        n_adv=5,
        n_vic=5,
        fill_live=fill,
        outcome_states=("adv_win", "vic_win"),
        gamma=gamma,
        horizon=horizon,
        start_state=start,
        timeout_outcome="adv_win",  # the blocker wins by running out the clock
        obs_layout=layout,
        obs_index_live=obs_index_live,
    )


def push_duel(L: int = 7, horizon: int = 50, gamma: float = 0.95) -> MarkovGame:
    """Two agents shove on an integer line of length L.

    The adversary holds the lower position a, the victim the higher v
    (a < v always). Actions: push (toward the opponent), hold, retreat.
    Voluntary moves are clamped at the ends; only a shove pushes an agent
    off the edge, which loses. Adjacent push-vs-push is a fair-coin shove
    contest; at gap two a push-push race for the middle cell is a fair
    coin for who takes it. Timeout is a tie.
    """
    if L < 4:
        raise ValueError("push_duel needs L >= 4")
    pairs = [(a, v) for a in range(L) for v in range(a + 1, L)]
    index = {pv: i for i, pv in enumerate(pairs)}
    n_live = len(pairs)
    adv_win, vic_win = n_live, n_live + 1
    PUSH, HOLD, RETREAT = 0, 1, 2

    def adv_move(a, act):  # voluntary, clamped
        return min(a + 1, L - 1) if act == PUSH else (max(a - 1, 0) if act == RETREAT else a)

    def vic_move(v, act):
        return max(v - 1, 0) if act == PUSH else (min(v + 1, L - 1) if act == RETREAT else v)

    def live_or(a, v):
        return index[(a, v)]

    def fill(P):
        for (a, v), s in index.items():
            gap = v - a
            for aa in range(3):
                for av in range(3):
                    outs = []  # (prob, next_state)
                    if gap == 1 and (aa == PUSH or av == PUSH):
                        if aa == PUSH and av == PUSH:
                            shoves = [(0.5, "adv"), (0.5, "vic")]
                        elif aa == PUSH:
                            shoves = [(1.0, "adv")]
                        else:
                            shoves = [(1.0, "vic")]
                        for p, winner in shoves:
                            if winner == "adv":  # victim shoved up the line
                                if v + 1 > L - 1:
                                    outs.append((p, adv_win))
                                else:
                                    outs.append((p, live_or(a + 1, v + 1)))
                            else:  # adversary shoved down the line
                                if a - 1 < 0:
                                    outs.append((p, vic_win))
                                else:
                                    outs.append((p, live_or(a - 1, v - 1)))
                    elif gap == 2 and aa == PUSH and av == PUSH:
                        # race for the middle cell; loser stays put
                        outs = [(0.5, live_or(a + 1, v)), (0.5, live_or(a, v - 1))]
                    else:
                        outs = [(1.0, live_or(adv_move(a, aa), vic_move(v, av)))]
                    for p, nxt in outs:
                        P[s, aa, av, nxt] += p

    a0 = (L - 1) // 2 - 1
    start = index[(a0, a0 + 2)]
    layout = ObsLayout((("adv_pos", L), ("vic_pos", L)))
    obs_index_live = np.array(pairs, dtype=np.int64)
    return _absorbing_game(
        "push_duel",
        n_live=n_live,
        n_adv=3,
        n_vic=3,
        fill_live=fill,
        outcome_states=("adv_win", "vic_win"),
        gamma=gamma,
        horizon=horizon,
        start_state=start,
        timeout_outcome="tie",
        obs_layout=layout,
        obs_index_live=obs_index_live,
    )


_REGISTRY = {
    "markov_rps": markov_rps,
    "grid_pass": grid_pass,
    "push_duel": push_duel,
}
