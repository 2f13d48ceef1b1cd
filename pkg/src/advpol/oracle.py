"""Exact tabular dynamic programming: ground truth for every estimator.

Conventions (shared by the whole package):

- Values are arrival-credited: V(s) = E[sum_{t>=1} gamma^t r(s_t) | s_0=s],
  i.e. Bellman V = gamma * M (r + V) with M the joint one-step kernel.
  Solved exactly as a linear system; the Bellman residual of the solution
  is checked against 1e-9.
- Inclusive values V_inc(s) = r(s) + V(s) obey V_inc = r + gamma M V_inc
  and appear where a formula needs the t=0 reward term: the competitive
  advantage (whose conditional mean is then exactly zero), the value-range
  constant of the policy-drift bound, and the adversary-value part of the
  eta identity. Differences of values across policies are identical under
  both conventions (the t=0 term is policy-independent).
- Occupancies d(s) = sum_t gamma^t Pr(s_t = s) count from t=0. The public
  ``occupancy`` keeps the documented truncated form; equivalence checks at
  1e-9 use the exact linear solve internally.
- State-action objectives J = E[sum_t gamma^t rho(s_t, a_t)] also count
  from t=0 (matching the occupancy weighting).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .game import MarkovGame
from .policy import LOG_FLOOR, LinearSoftmaxPolicy, MixedPolicy, dist_kl

MARGIN_TOL = 1e-9
RESIDUAL_TOL = 1e-9
TAIL_TOL = 1e-8

SQRT_2LN2 = math.sqrt(2.0 * math.log(2.0))


def pinsker_coeff(mode: str) -> float:
    """L1-vs-KL coefficient: the verbatim sqrt(2 ln 2) or the nats-safe sqrt 2."""
    if mode == "verbatim":
        return SQRT_2LN2
    if mode == "nats":
        return math.sqrt(2.0)
    raise ValueError(f"unknown pinsker mode {mode!r}")


# ---------------------------------------------------------------------------
# kernels and policy matrices
# ---------------------------------------------------------------------------

def policy_matrix(game: MarkovGame, policy, role: str) -> np.ndarray:
    """(S, A) action probabilities of a plain policy on the game's states.

    Accepts a ready probability matrix, a Policy on the game's observation
    layout, or a per-step mixture (whose marginal is itself a policy).
    Per-episode mixtures have no single kernel — average at the value level
    instead (victim_return and exact_objective do).
    """
    n_actions = game.n_adv_actions if role == "adversary" else game.n_vic_actions
    if isinstance(policy, np.ndarray):
        probs = np.asarray(policy, dtype=np.float64)
    elif isinstance(policy, MixedPolicy):
        if not policy.per_step:
            raise TypeError(
                "per-episode mixture has no state kernel; average component values"
            )
        probs = policy.batch_dist(game.dense_obs())
    else:
        if policy.obs_layout != game.obs_layout:
            raise ValueError(
                f"policy layout {policy.obs_layout.names} does not match the game; "
                "marginalize augmented adversaries first (marginal_adv_matrix)"
            )
        probs = policy.batch_dist(game.dense_obs())
    if probs.shape != (game.n_states, n_actions):
        raise ValueError(f"policy matrix shape {probs.shape} wrong for role {role}")
    return probs


def marginal_adv_matrix(game: MarkovGame, adv_policy, imit_policy) -> np.ndarray:
    """Marginal adversary policy when its pred block is fed by the imitator.

    pi(a|s) = sum_j imit(j|s) * adv(a | s ++ onehot(j)).
    """
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    if adv_policy.obs_layout != aug:
        raise ValueError("adversary is not augmented with a pred block")
    X = game.dense_obs()
    imit_probs = policy_matrix(game, imit_policy, "victim")
    S, n_vic = imit_probs.shape
    out = np.zeros((S, game.n_adv_actions))
    for j in range(n_vic):
        pred = np.zeros((S, n_vic))
        pred[:, j] = 1.0
        out += imit_probs[:, [j]] * adv_policy.batch_dist(np.hstack([X, pred]))
    return out


def joint_kernel(game: MarkovGame, adv_probs, vic_probs) -> np.ndarray:
    """One-step state kernel under a fixed joint policy."""
    return np.einsum("sa,sb,sabj->sj", adv_probs, vic_probs, game.transition)


def adv_state_action_kernel(game: MarkovGame, vic_probs) -> np.ndarray:
    """(S, A_adv, S) kernel the adversary faces (victim marginalized out)."""
    return np.einsum("sb,sabj->saj", vic_probs, game.transition)


def vic_state_action_kernel(game: MarkovGame, adv_probs) -> np.ndarray:
    """(S, A_vic, S) kernel the victim slot faces (adversary marginalized out)."""
    return np.einsum("sa,sabj->sbj", adv_probs, game.transition)


# ---------------------------------------------------------------------------
# linear-system machinery
# ---------------------------------------------------------------------------

def _check_gamma(gamma: float):
    if not (0.0 <= gamma < 1.0 - 1e-10):
        raise ArithmeticError(
            f"discount {gamma} too close to 1 for the exact solver"
        )


def solve_state_values(M: np.ndarray, rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Arrival-credited V solving V = gamma * M (rewards + V)."""
    _check_gamma(gamma)
    S = M.shape[0]
    return np.linalg.solve(np.eye(S) - gamma * M, gamma * (M @ rewards))


def solve_occupancy(M: np.ndarray, start_state: int, gamma: float) -> np.ndarray:
    """Exact discounted occupancy d = e_s0 + gamma * M^T d."""
    _check_gamma(gamma)
    S = M.shape[0]
    e = np.zeros(S)
    e[start_state] = 1.0
    return np.linalg.solve(np.eye(S) - gamma * M.T, e)


def solve_sa_values(K: np.ndarray, rho: np.ndarray, probs: np.ndarray, gamma: float):
    """Inclusive state-action solve for J = E[sum_t gamma^t rho(s_t,a_t)].

    Returns (Q, V) with V(s) = sum_a pi(a|s) Q(s,a) and
    Q(s,a) = rho(s,a) + gamma * sum_s' K(s'|s,a) V(s').
    """
    _check_gamma(gamma)
    S = K.shape[0]
    c = (probs * rho).sum(axis=1)
    M = np.einsum("sa,saj->sj", probs, K)
    V = np.linalg.solve(np.eye(S) - gamma * M, c)
    Q = rho + gamma * np.einsum("saj,j->sa", K, V)
    return Q, V


def equivalent_truncation_horizon(gamma: float, reward_scale: float) -> int:
    """Smallest T with gamma^T * scale < TAIL_TOL (the documented tail rule)."""
    scale = max(1.0, reward_scale)
    if gamma == 0.0:
        return 1
    return max(1, int(math.ceil(math.log(TAIL_TOL / scale) / math.log(gamma))))


# ---------------------------------------------------------------------------
# value tables and occupancy
# ---------------------------------------------------------------------------

@dataclass
class ValueTable:
    """Exact arrival-credited values for one reward function."""

    values: np.ndarray
    rewards: np.ndarray
    gamma: float
    residual: float
    horizon_used: int

    @property
    def inclusive(self) -> np.ndarray:
        """V_inc(s) = r(s) + V(s), the t=0-inclusive value."""
        return self.rewards + self.values


_SIDES = {
    "adversary": "adv",
    "adv": "adv",
    "victim": "vic",
    "vic": "vic",
    "delta": "delta",
}


def side_rewards(game: MarkovGame, side: str) -> np.ndarray:
    key = _SIDES.get(side)
    if key == "adv":
        return game.adv_reward
    if key == "vic":
        return game.vic_reward
    if key == "delta":
        return game.adv_reward - game.vic_reward
    raise ValueError(f"unknown side {side!r}")


def value_function(game: MarkovGame, adv_policy, vic_policy, side: str = "adversary") -> ValueTable:
    """Exact V table under the joint policy for the chosen reward side."""
    adv_probs = policy_matrix(game, adv_policy, "adversary")
    vic_probs = policy_matrix(game, vic_policy, "victim")
    rewards = side_rewards(game, side)
    M = joint_kernel(game, adv_probs, vic_probs)
    V = solve_state_values(M, rewards, game.gamma)
    residual = float(np.max(np.abs(V - game.gamma * (M @ (rewards + V)))))
    if residual > RESIDUAL_TOL:
        raise ArithmeticError(f"value solve residual {residual:.3e} above tolerance")
    bound = float(np.max(np.abs(rewards))) / max(1.0 - game.gamma, 1e-12)
    if np.max(np.abs(V)) > bound + 1e-9:
        raise ArithmeticError("value magnitudes exceed max|r|/(1-gamma)")
    return ValueTable(
        values=V,
        rewards=rewards,
        gamma=game.gamma,
        residual=residual,
        horizon_used=equivalent_truncation_horizon(game.gamma, game.max_abs_reward()),
    )


def occupancy(game: MarkovGame, adv_policy, vic_policy, horizon: int | None = None) -> np.ndarray:
    """Truncated discounted occupancy d(s) = sum_{t<=T} gamma^t Pr(s_t = s).

    T defaults to the documented tail rule (gamma^T * max(1,max|r|) < 1e-8);
    total mass is (1 - gamma^(T+1)) / (1 - gamma).
    """
    adv_probs = policy_matrix(game, adv_policy, "adversary")
    vic_probs = policy_matrix(game, vic_policy, "victim")
    M = joint_kernel(game, adv_probs, vic_probs)
    if horizon is None:
        horizon = equivalent_truncation_horizon(game.gamma, game.max_abs_reward())
    d = np.zeros(game.n_states)
    p = np.zeros(game.n_states)
    p[game.start_state] = 1.0
    w = 1.0
    for _ in range(horizon + 1):
        d += w * p
        p = M.T @ p
        w *= game.gamma
    return d


def occupancy_exact(game: MarkovGame, adv_policy, vic_policy) -> np.ndarray:
    """Exact infinite-horizon occupancy (linear solve)."""
    adv_probs = policy_matrix(game, adv_policy, "adversary")
    vic_probs = policy_matrix(game, vic_policy, "victim")
    M = joint_kernel(game, adv_probs, vic_probs)
    return solve_occupancy(M, game.start_state, game.gamma)


# ---------------------------------------------------------------------------
# victim return and competitive advantage
# ---------------------------------------------------------------------------

def _mixture_average(adv_policy, fn):
    """Average fn(component) over a per-episode mixture's components."""
    total = 0.0
    for prob, comp in zip(adv_policy.component_probs, adv_policy.components):
        if prob > 0.0:
            total += prob * fn(comp)
    return total


def victim_return(game: MarkovGame, adv_policy, vic_policy) -> float:
    """Expected discounted victim reward from the start state.

    Per-episode mixture adversaries average component returns (each episode
    runs one component, so the mixture's return is the convex combination).
    """
    if isinstance(adv_policy, MixedPolicy) and not adv_policy.per_step:
        return _mixture_average(adv_policy, lambda c: victim_return(game, c, vic_policy))
    table = value_function(game, adv_policy, vic_policy, side="victim")
    return float(table.values[game.start_state])


def competitive_advantage(game: MarkovGame, adv_policy, vic_policy, s: int, s_bar: int) -> float:
    """A(s, s_bar) = r_vic(s) + gamma * V_inc(s_bar) - V_inc(s).

    Uses inclusive victim values, for which E_{s_bar|s}[A] = 0 exactly.
    """
    table = value_function(game, adv_policy, vic_policy, side="victim")
    V = table.inclusive
    return float(game.vic_reward[s] + game.gamma * V[s_bar] - V[s])


def advantage_matrix(game: MarkovGame, adv_policy, vic_policy) -> np.ndarray:
    """(S, S) table of competitive advantages."""
    table = value_function(game, adv_policy, vic_policy, side="victim")
    V = table.inclusive
    return game.vic_reward[:, None] + game.gamma * V[None, :] - V[:, None]


def advantage_mean_residual(game: MarkovGame, adv_policy, vic_policy) -> np.ndarray:
    """|E_{s_bar ~ kernel}[A(s, s_bar)]| per state; zero for exact tables."""
    adv_probs = policy_matrix(game, adv_policy, "adversary")
    vic_probs = policy_matrix(game, vic_policy, "victim")
    M = joint_kernel(game, adv_probs, vic_probs)
    A = advantage_matrix(game, adv_policy, vic_policy)
    return np.abs((M * A).sum(axis=1))


# ---------------------------------------------------------------------------
# bound reports
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    check_name: str
    measured: float
    bound: float
    margin: float
    passed: bool
    degenerate: bool = False
    context: dict = field(default_factory=dict)

    @classmethod
    def make(cls, check_name, measured, bound, degenerate=False, **context) -> "BoundReport":
        measured = float(measured)
        bound = float(bound)
        margin = bound - measured
        return cls(
            check_name=check_name,
            measured=measured,
            bound=bound,
            margin=margin,
            passed=bool(margin >= -MARGIN_TOL),
            degenerate=degenerate,
            context=context,
        )

    def to_json(self) -> dict:
        return {
            "check_name": self.check_name,
            "measured": self.measured,
            "bound": self.bound,
            "margin": self.margin,
            "passed": self.passed,
            "degenerate": self.degenerate,
            "context": self.context,
        }


def drift_bound_check(
    game: MarkovGame, vic_policy, adv_a, adv_b, *, pinsker: str = "verbatim"
) -> BoundReport:
    """Victim-return drift bound between two adversary policies.

    measured = |Gamma(adv_b) - Gamma(adv_a)| against
    bound = gamma * Hmax * C / (1-gamma) * max_s sqrt(KL(adv_a || adv_b)),
    with Hmax = max_s |V_inc_victim(s)| under adv_a (the first policy's
    kernel) and C the chosen L1-vs-KL coefficient. The report also carries
    the Lipschitz variant gamma * Hmax / (1-gamma) * max_s L1(s).
    """
    a_probs = policy_matrix(game, adv_a, "adversary")
    b_probs = policy_matrix(game, adv_b, "adversary")
    vic_probs = policy_matrix(game, vic_policy, "victim")

    gamma_a = victim_return(game, a_probs, vic_probs)
    gamma_b = victim_return(game, b_probs, vic_probs)
    measured = abs(gamma_b - gamma_a)

    table = value_function(game, a_probs, vic_probs, side="victim")
    h_max = float(np.max(np.abs(table.inclusive)))

    live = ~game.absorbing
    kls = np.array([dist_kl(a_probs[s], b_probs[s]) for s in np.flatnonzero(live)])
    max_kl = float(np.max(kls)) if len(kls) else 0.0
    l1_max = float(np.max(np.abs(a_probs - b_probs)[live].sum(axis=-1))) if live.any() else 0.0

    coeff = pinsker_coeff(pinsker)
    degenerate = math.isinf(max_kl)
    bound = (
        math.inf
        if degenerate
        else game.gamma * h_max * coeff / (1.0 - game.gamma) * math.sqrt(max_kl)
    )
    lipschitz_bound = game.gamma * h_max / (1.0 - game.gamma) * l1_max
    return BoundReport.make(
        "value_drift",
        measured,
        bound,
        degenerate=degenerate,
        gamma=game.gamma,
        h_max=h_max,
        h_under="adv_a",
        max_kl=max_kl,
        pinsker=pinsker,
        coeff=coeff,
        l1_max=l1_max,
        lipschitz_bound=lipschitz_bound,
        gamma_a=gamma_a,
        gamma_b=gamma_b,
    )


def imitation_gap_constant(
    gamma: float, max_vic_reward: float, d_low: float, d_high: float, *, pinsker: str = "verbatim"
) -> float:
    """Performance-gap constant K(gamma, max r_vic, D_L, D_U).

    K = gamma * C * (max_vic_reward - ln(D_L - D_L * D_U)) / (1 - gamma)^2,
    with the log argument in the factored form D_L * (1 - D_U) for
    numerical safety. Decreasing in D_L, increasing in D_U and gamma.
    """
    if not (0.0 < d_low <= d_high < 1.0):
        raise ValueError("need 0 < D_L <= D_U < 1")
    if not (0.0 <= gamma < 1.0):
        raise ValueError("gamma outside [0, 1)")
    coeff = pinsker_coeff(pinsker)
    return gamma * coeff * (max_vic_reward - math.log(d_low - d_low * d_high)) / (1.0 - gamma) ** 2


# ---------------------------------------------------------------------------
# best response and the retraining probe
# ---------------------------------------------------------------------------

def best_response_value(game: MarkovGame, vic_probs, rewards: np.ndarray):
    """Exact adversary best response to a fixed victim on a state reward.

    Policy iteration with lowest-index tie-breaking; returns
    (value at the start state, deterministic policy matrix).
    """
    vic_probs = policy_matrix(game, vic_probs, "victim")
    K = adv_state_action_kernel(game, vic_probs)
    S, A = game.n_states, game.n_adv_actions
    policy = np.zeros(S, dtype=np.int64)
    for _ in range(S * A + 1):
        M = K[np.arange(S), policy]
        V = solve_state_values(M, rewards, game.gamma)
        Q = game.gamma * np.einsum("saj,j->sa", K, rewards + V)
        new_policy = np.argmax(Q, axis=1)
        if np.array_equal(new_policy, policy):
            break
        policy = new_policy
    else:  # pragma: no cover - policy iteration always terminates
        raise ArithmeticError("policy iteration failed to settle")
    probs = np.zeros((S, A))
    probs[np.arange(S), policy] = 1.0
    return float(V[game.start_state]), probs


_PROBE_ATTEMPT_FACTOR = 200


def retrain_radius_probe(
    game: MarkovGame,
    vic_policy_0,
    epsilon: float,
    n_samples: int,
    rng,
    *,
    pinsker: str = "verbatim",
) -> BoundReport:
    """Best-response value drift over a KL ball of victim policies.

    Y* is the exact best-response value (delta reward) against the
    reference victim. Candidate victims are rejection-sampled Gaussian
    logit perturbations with max-state KL(reference || candidate) <= eps;
    Y_est = min over candidates of the best-response value. Sampling gives
    Y_est >= the true ball minimum, so a pass is a necessary check, not a
    proof. eps = 0 short-circuits to exact copies.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    vic0 = policy_matrix(game, vic_policy_0, "victim")
    delta = game.adv_reward - game.vic_reward
    y_star, _ = best_response_value(game, vic0, delta)

    live = np.flatnonzero(~game.absorbing)
    logits0 = np.log(np.maximum(vic0[live], 1e-300))
    sigma = math.sqrt(epsilon)

    values = []
    attempts = 0
    cap = _PROBE_ATTEMPT_FACTOR * max(1, n_samples)
    while len(values) < n_samples:
        if epsilon == 0.0:
            cand = vic0
        else:
            if attempts >= cap:
                raise RuntimeError(
                    f"rejection sampling stalled after {cap} attempts "
                    f"(epsilon={epsilon} too large for the sampler)"
                )
            attempts += 1
            cand = vic0.copy()
            z = rng.normal(0.0, sigma, size=logits0.shape)
            shifted = logits0 + z
            shifted -= shifted.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            cand[live] = e / e.sum(axis=1, keepdims=True)
            max_kl = max(dist_kl(vic0[s], cand[s]) for s in live)
            if max_kl > epsilon:
                continue
        y_val, _ = best_response_value(game, cand, delta)
        values.append(y_val)

    y_est = float(min(values))
    coeff = pinsker_coeff(pinsker)
    bound = (
        game.gamma
        * coeff
        * float(np.max(np.abs(delta)))
        / (1.0 - game.gamma) ** 2
        * math.sqrt(epsilon)
    )
    return BoundReport.make(
        "retrain_radius",
        abs(y_est - y_star),
        bound,
        epsilon=epsilon,
        n_samples=n_samples,
        attempts=attempts,
        y_star=y_star,
        y_est=y_est,
        pinsker=pinsker,
    )


# ---------------------------------------------------------------------------
# exact objectives
# ---------------------------------------------------------------------------

def _disc_table(game: MarkovGame, disc) -> np.ndarray:
    """(S, A_vic) clamped discriminator outputs, from an object or an array."""
    if hasattr(disc, "state_action_matrix"):
        return disc.state_action_matrix(game)
    D = np.asarray(disc, dtype=np.float64)
    if D.shape != (game.n_states, game.n_vic_actions):
        raise ValueError(f"discriminator table shape {D.shape} is wrong")
    return D


def eta_table(game: MarkovGame, disc) -> np.ndarray:
    """(S, A_vic) shaped imitation reward: ln D(s, a) - r_adv(s)."""
    D = _disc_table(game, disc)
    return np.log(np.maximum(D, 1e-12)) - game.adv_reward[:, None]


def exact_objective(
    game: MarkovGame,
    adv_policy,
    vic_or_imit_policy,
    reward_select: str,
    *,
    disc=None,
) -> float:
    """Exact discounted objective under the joint policy.

    adv / vic / delta: arrival-credited state value at the start state
    (equals value_function(...).values[s0]). eta: inclusive state-action
    sum E[sum_{t>=0} gamma^t eta(s_t, a_t)] with eta = ln D - r_adv, the
    actor in the victim slot supplying a_t. Per-episode mixture
    adversaries average their components.
    """
    if isinstance(adv_policy, MixedPolicy) and not adv_policy.per_step:
        return _mixture_average(
            adv_policy,
            lambda c: exact_objective(game, c, vic_or_imit_policy, reward_select, disc=disc),
        )
    if reward_select == "eta":
        if disc is None:
            raise ValueError("reward_select='eta' needs a discriminator")
        adv_probs = policy_matrix(game, adv_policy, "adversary")
        actor_probs = policy_matrix(game, vic_or_imit_policy, "victim")
        K = vic_state_action_kernel(game, adv_probs)
        _, V = solve_sa_values(K, eta_table(game, disc), actor_probs, game.gamma)
        return float(V[game.start_state])
    table = value_function(game, adv_policy, vic_or_imit_policy, side=reward_select)
    return float(table.values[game.start_state])


def state_action_objective(
    game: MarkovGame, adv_policy, actor_policy, reward_sa: np.ndarray
) -> float:
    """Inclusive objective for an arbitrary (S, A_vic) reward table
    (backward-solve route)."""
    adv_probs = policy_matrix(game, adv_policy, "adversary")
    actor_probs = policy_matrix(game, actor_policy, "victim")
    K = vic_state_action_kernel(game, adv_probs)
    _, V = solve_sa_values(K, reward_sa, actor_probs, game.gamma)
    return float(V[game.start_state])


def occupancy_route_objective(
    game: MarkovGame, adv_policy, actor_policy, reward_sa: np.ndarray
) -> float:
    """Same objective via the forward route sum_s d(s) sum_a pi(a|s) rho(s,a).

    Independent of the backward solve (different linear system), so the two
    routes cross-check each other.
    """
    adv_probs = policy_matrix(game, adv_policy, "adversary")
    actor_probs = policy_matrix(game, actor_policy, "victim")
    M = joint_kernel(game, adv_probs, actor_probs)
    d = solve_occupancy(M, game.start_state, game.gamma)
    return float((d * (actor_probs * reward_sa).sum(axis=1)).sum())


def gail_objective_parts(
    game: MarkovGame, adv_policy, imit_policy, vic_policy, disc, entropy_coeff: float
) -> dict:
    """All pieces of the saddle objective and its enhanced form.

    phi = E_imit[sum gamma^t ln D] + E_expert[sum gamma^t ln(1-D)]
          - entropy_coeff * H(imit);
    phi_enhanced = phi - V_inc_adv(s0 | imitator in the victim slot).
    The eta route rebuilds phi_enhanced as
    eta_objective + expert_term - entropy_coeff * H (exact identity).
    """
    D = _disc_table(game, disc)
    logD = np.log(np.maximum(D, 1e-12))
    log1mD = np.log(np.maximum(1.0 - D, 1e-12))

    imit_logd = state_action_objective(game, adv_policy, imit_policy, logD)
    expert_term = state_action_objective(game, adv_policy, vic_policy, log1mD)

    adv_probs = policy_matrix(game, adv_policy, "adversary")
    imit_probs = policy_matrix(game, imit_policy, "victim")
    M = joint_kernel(game, adv_probs, imit_probs)
    d = solve_occupancy(M, game.start_state, game.gamma)
    ent = float(
        (d * -(imit_probs * np.log(np.maximum(imit_probs, LOG_FLOOR))).sum(axis=1)).sum()
    )

    V_adv = solve_state_values(M, game.adv_reward, game.gamma)
    adv_value_inc = float(game.adv_reward[game.start_state] + V_adv[game.start_state])

    phi = imit_logd + expert_term - entropy_coeff * ent
    eta_objective = occupancy_route_objective(game, adv_policy, imit_policy, eta_table(game, disc))
    return {
        "imit_logd": imit_logd,
        "expert_term": expert_term,
        "entropy": ent,
        "adv_value_inclusive": adv_value_inc,
        "phi": phi,
        "phi_enhanced": phi - adv_value_inc,
        "eta_objective": eta_objective,
        "eta_route_enhanced": eta_objective + expert_term - entropy_coeff * ent,
    }


# ---------------------------------------------------------------------------
# exact policy gradients
# ---------------------------------------------------------------------------

def _require_linear(policy):
    if not isinstance(policy, LinearSoftmaxPolicy):
        raise TypeError("exact gradients need a tabular (linear-softmax) policy")


def exact_policy_gradient(
    game: MarkovGame,
    adv_policy,
    actor_policy,
    *,
    wrt: str,
    reward_select: str,
    disc=None,
) -> np.ndarray:
    """Exact gradient of the chosen objective w.r.t. one policy's params.

    wrt='adversary' differentiates the arrival objective on the selected
    state reward w.r.t. the adversary (actor fixed in the victim slot);
    wrt='victim_slot' differentiates w.r.t. the victim-slot actor (the
    imitator), with reward_select='adv' giving the adversary-value gradient
    and 'eta' the shaped-reward objective gradient.
    Policy-gradient theorem over exact occupancies:
    grad = sum_s d(s) sum_a grad pi(a|s) Q(s,a).
    """
    adv_probs = policy_matrix(game, adv_policy, "adversary")
    actor_probs = policy_matrix(game, actor_policy, "victim")
    if wrt == "adversary":
        _require_linear(adv_policy)
        target, target_probs = adv_policy, adv_probs
        K = adv_state_action_kernel(game, actor_probs)
    elif wrt == "victim_slot":
        _require_linear(actor_policy)
        target, target_probs = actor_policy, actor_probs
        K = vic_state_action_kernel(game, adv_probs)
    else:
        raise ValueError(f"unknown wrt {wrt!r}")

    if reward_select == "eta":
        if disc is None:
            raise ValueError("reward_select='eta' needs a discriminator")
        tab = eta_table(game, disc)
        if wrt == "victim_slot":
            rho = tab
        else:
            # eta's action argument is supplied by the victim-slot actor;
            # the adversary only steers visitation, so it sees the
            # actor-averaged state reward (constant across its own actions)
            etabar = (actor_probs * tab).sum(axis=1)
            rho = np.repeat(etabar[:, None], game.n_adv_actions, axis=1)
    else:
        rewards = side_rewards(game, reward_select)
        # one-step lookahead embeds arrival crediting into an inclusive rho
        rho = game.gamma * np.einsum("saj,j->sa", K, rewards)

    Q, V = solve_sa_values(K, rho, target_probs, game.gamma)
    M = joint_kernel(game, adv_probs, actor_probs)
    d = solve_occupancy(M, game.start_state, game.gamma)

    X = game.dense_obs()
    coeff = d[:, None] * target_probs * (Q - V[:, None])
    return (coeff.T @ X).ravel()


def exact_entropy_gradient(game: MarkovGame, adv_policy, actor_policy) -> np.ndarray:
    """Exact gradient of sum_s d(s) H(pi(.|s)) w.r.t. the victim-slot actor.

    Product rule: a policy-gradient part treating h(s) = H(pi(.|s)) as a
    state reward, plus the direct entropy gradient at the visited states.
    """
    _require_linear(actor_policy)
    adv_probs = policy_matrix(game, adv_policy, "adversary")
    actor_probs = policy_matrix(game, actor_policy, "victim")
    logP = np.log(np.maximum(actor_probs, LOG_FLOOR))
    h = -(actor_probs * logP).sum(axis=1)

    K = vic_state_action_kernel(game, adv_probs)
    rho = np.repeat(h[:, None], game.n_vic_actions, axis=1)
    Q, V = solve_sa_values(K, rho, actor_probs, game.gamma)
    M = joint_kernel(game, adv_probs, actor_probs)
    d = solve_occupancy(M, game.start_state, game.gamma)

    X = game.dense_obs()
    coeff = d[:, None] * actor_probs * (Q - V[:, None])
    pg_part = (coeff.T @ X).ravel()
    direct = actor_policy.weighted_entropy_grad(X, d)
    return pg_part + direct
