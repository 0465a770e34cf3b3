"""Single-step objectives, exact belief updates, action selection and policy evaluation.

Objectives take either a state index (MDP view) or a belief over states
(POMDP view). An MDP objective evaluated at a belief uses the predicted state
distribution ``sum_s b(s) P(.|a, s)``, which reduces to the transition row
when the belief is a point mass.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import ClassVar, Literal, Optional, Union

import numpy as np
from numpy.typing import ArrayLike

from .errors import AbsoluteContinuityViolation, ConstantUtility, ZeroEvidence
from .mathcore import (
    CategoricalDist,
    DistLike,
    as_probs,
    entropy,
    expectation,
    expected_log,
    gibbs,
    gibbs_with_log_partition,
    kl_divergence,
)
from .models import (
    BeliefState,
    Linear,
    MDPModel,
    Model,
    POMDPModel,
    PolicySpec,
    PreferenceDistribution,
    UtilityFunction,
    as_pomdp,
    validate_policy,
)

StateOrBelief = Union[int, DistLike]


def _check_pref(pref: PreferenceDistribution, over: str, n: int) -> np.ndarray:
    if pref.over != over:
        raise ValueError(f"expected a preference over {over}, got one over {pref.over}")
    if pref.dist.support_size != n:
        raise ValueError(f"preference support {pref.dist.support_size} does not match {n} {over}")
    return pref.probs


def _belief_array(m: Model, x: StateOrBelief) -> np.ndarray:
    if isinstance(x, (int, np.integer)):
        return CategoricalDist.delta(m.n_states, int(x)).probs
    b = as_probs(x)
    if b.size != m.n_states:
        raise ValueError(f"belief over {b.size} states for a model with {m.n_states}")
    return b


# --------------------------------------------------------------------------
# MDP objectives


def expected_utility(m: Model, s_now: StateOrBelief, a: int, u: UtilityFunction = Linear(), payoff=None) -> float:
    """``E_{P(s'|a, s_now)} u(R(s'))``."""
    pred = _belief_array(m, s_now) @ m.transition[a]
    r = m.reward if payoff is None else np.asarray(payoff, dtype=float)
    nz = pred > 0
    return float(np.dot(pred[nz], u(r[nz])))


def efe_mdp(
    m: Model,
    s_now: StateOrBelief,
    a: int,
    pref: PreferenceDistribution,
    form: Literal["kl", "entropy_surprise"] = "kl",
    unnormalized: bool = False,
) -> float:
    """Expected free energy of one action in an MDP, in nats.

    ``form="kl"`` gives ``D_KL[P(s'|a,s) || P(s|C)]``; ``"entropy_surprise"``
    gives ``-H[P(s'|a,s)] - E[ln P(s|C)]``. With ``unnormalized=True`` the
    preference's log partition is subtracted, i.e. the preference is used
    without its normalizing denominator.
    """
    c = _check_pref(pref, "states", m.n_states)
    pred = _belief_array(m, s_now) @ m.transition[a]
    if form == "kl":
        g = kl_divergence(pred, c)
    elif form == "entropy_surprise":
        g = -entropy(pred) - expected_log(pred, c)
    else:
        raise ValueError(f"unknown EFE form {form!r}")
    if unnormalized:
        if pref.log_partition is None:
            raise ValueError("unnormalized EFE needs a Gibbs preference with a stored log partition")
        g -= pref.log_partition
    return g


def divergence_objective_mdp(m: Model, s_now: StateOrBelief, a: int, pref_star: PreferenceDistribution) -> float:
    """``D_KL[P(s'|a, s_now) || P*(s)]``."""
    c = _check_pref(pref_star, "states", m.n_states)
    return kl_divergence(_belief_array(m, s_now) @ m.transition[a], c)


# --------------------------------------------------------------------------
# bounded rationality


def itbr_optimal_posterior(prior: DistLike, utilities: ArrayLike, beta: float) -> CategoricalDist:
    """Maximizer of the bounded-rational free energy: ``prior * exp(beta*U) / Z``."""
    return gibbs(prior, utilities, beta)


def itbr_free_energy(q: DistLike, prior: DistLike, utilities: ArrayLike, beta: float) -> float:
    """``E_q[U] - D_KL[q || prior] / beta``."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    q = as_probs(q)
    return expectation(q, utilities) - kl_divergence(q, prior) / beta


def itbr_free_energy_mdp(
    m: Model, s_now: StateOrBelief, a: int, q: DistLike, u: UtilityFunction, beta: float
) -> float:
    prior = _belief_array(m, s_now) @ m.transition[a]
    return itbr_free_energy(q, prior, u(m.reward), beta)


def prior_joint(p: POMDPModel, belief: StateOrBelief, a: int) -> np.ndarray:
    """``Q(o, s | a) = P(o|s) * predicted(s)`` as an ``(n_obs, n_states)`` array."""
    pred = predicted_state_prior(p, belief, a).probs
    return (p.likelihood * pred[:, None]).T


def itbr_free_energy_pomdp(
    p: POMDPModel, belief: StateOrBelief, a: int, q_joint: DistLike, u: UtilityFunction, beta: float
) -> float:
    """Bounded-rational free energy over the joint ``(o, s)``, flattened observation-major.

    The utility of ``(o, s)`` is ``u(R(s))``.
    """
    prior = prior_joint(p, belief, a)
    utilities = np.broadcast_to(u(p.reward), prior.shape)
    return itbr_free_energy(as_probs(np.asarray(q_joint, dtype=float).reshape(-1)), prior.reshape(-1), utilities.reshape(-1), beta)


def itbr_value(pred: np.ndarray, utilities: np.ndarray, beta: float) -> float:
    """Optimal bounded-rational free energy ``ln Z_beta / beta``."""
    return gibbs_with_log_partition(pred, utilities, beta)[1] / beta


@dataclass(frozen=True)
class BetaSolution:
    beta: float
    kl: float
    saturated: bool  # budget at or beyond the largest attainable divergence


def kl_budget_to_beta(
    prior: DistLike, utilities: ArrayLike, K: float, tol: float = 1e-9, beta_max: float = 1e8
) -> BetaSolution:
    """Inverse temperature whose Gibbs posterior spends exactly ``K`` nats.

    ``beta -> D_KL[gibbs(prior, U, beta) || prior]`` increases from 0 to
    ``-ln prior(argmax U)``; the root is bracketed by doubling and then bisected.
    """
    if K < 0:
        raise ValueError(f"KL budget must be nonnegative, got {K}")
    p = as_probs(prior)
    u = np.asarray(utilities, dtype=float).reshape(-1)
    on = p > 0
    umax = u[on].max()
    if np.all(u[on] == umax):
        raise ConstantUtility("utilities are constant on the prior support")
    if K == 0:
        return BetaSolution(0.0, 0.0, False)

    def kl_at(b: float) -> float:
        return kl_divergence(gibbs(p, u, b), p)

    sup = -math.log(p[on & (u == umax)].sum())
    if K >= sup - tol:
        return BetaSolution(beta_max, kl_at(beta_max), True)
    lo, hi = 0.0, 1.0
    while kl_at(hi) < K:
        lo, hi = hi, 2 * hi
        if hi > beta_max:
            return BetaSolution(beta_max, kl_at(beta_max), True)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        d = kl_at(mid)
        if abs(d - K) <= tol:
            return BetaSolution(mid, d, False)
        if d < K:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    return BetaSolution(mid, kl_at(mid), False)


# --------------------------------------------------------------------------
# POMDP objectives


def predicted_state_prior(p: Model, belief: StateOrBelief, a: int) -> BeliefState:
    return CategoricalDist(_belief_array(p, belief) @ p.transition[a])


def exact_posterior(p: POMDPModel, predicted: StateOrBelief, o: int) -> BeliefState:
    """Bayes rule ``P(s | o) ∝ P(o | s) predicted(s)``."""
    joint = as_pomdp(p).likelihood[:, o] * _belief_array(p, predicted)
    z = joint.sum()
    if not z > 0:
        raise ZeroEvidence(f"observation {o} has zero probability under the predicted belief")
    return CategoricalDist(joint / z)


@dataclass(frozen=True)
class EfeTerms:
    ambiguity: float
    risk: Optional[float]
    intrinsic: float
    extrinsic: float  # E_joint[ln P(o|C)]; enters G with a minus sign

    @property
    def risk_ambiguity(self) -> float:
        return self.ambiguity + self.risk

    @property
    def value(self) -> float:
        return -self.intrinsic - self.extrinsic


def efe_pomdp_terms(
    p: POMDPModel,
    belief: StateOrBelief,
    a: int,
    pref_states: Optional[PreferenceDistribution],
    pref_obs: Optional[PreferenceDistribution],
) -> EfeTerms:
    """All four expected-free-energy terms by exact enumeration."""
    p = as_pomdp(p)
    pred = predicted_state_prior(p, belief, a).probs
    L = p.likelihood
    ambiguity = float(sum(pred[s] * entropy(L[s]) for s in range(p.n_states) if pred[s] > 0))
    risk = None
    if pref_states is not None:
        risk = kl_divergence(pred, _check_pref(pref_states, "states", p.n_states))
    q_o = pred @ L
    intrinsic = 0.0
    for o in range(p.n_obs):
        if q_o[o] > 0:
            intrinsic += q_o[o] * kl_divergence(exact_posterior(p, pred, o), pred)
    extrinsic = 0.0
    if pref_obs is not None:
        c = _check_pref(pref_obs, "observations", p.n_obs)
        joint = (L * pred[:, None]).T
        mass = joint > 0
        if np.any(mass & (c[:, None] == 0)):
            raise AbsoluteContinuityViolation("observation preference is zero where observations are predicted")
        extrinsic = float(np.sum(joint[mass] * np.broadcast_to(np.log(np.where(c > 0, c, 1.0))[:, None], joint.shape)[mass]))
    return EfeTerms(ambiguity, risk, float(intrinsic), extrinsic)


def efe_pomdp(
    p: POMDPModel,
    belief: StateOrBelief,
    a: int,
    pref_states: Optional[PreferenceDistribution],
    pref_obs: Optional[PreferenceDistribution],
    form: Literal["risk_ambiguity", "value"] = "value",
) -> float:
    """Expected free energy of one action in a POMDP.

    ``"risk_ambiguity"``: ``E_pred H[P(o|s)] + D_KL[pred || P(s|C)]``.
    ``"value"``: ``-E_{Q(o)} D_KL[Q(s|o) || pred] - E_{Q(o,s)} ln P(o|C)``.
    The two coincide only for matched preferences.
    """
    if form == "risk_ambiguity":
        if pref_states is None:
            raise ValueError("risk/ambiguity form needs a state preference")
        return efe_pomdp_terms(p, belief, a, pref_states, None).risk_ambiguity
    if form == "value":
        if pref_obs is None:
            raise ValueError("value form needs an observation preference")
        return efe_pomdp_terms(p, belief, a, None, pref_obs).value
    raise ValueError(f"unknown EFE form {form!r}")


def feef(p: POMDPModel, belief: StateOrBelief, a: int, pref_obs: PreferenceDistribution) -> float:
    """Free energy of the expected future ``D_KL[Q(o,s|a) || P*(o) Q(s|o)]``."""
    p = as_pomdp(p)
    c = _check_pref(pref_obs, "observations", p.n_obs)
    q = prior_joint(p, belief, a)
    pred = q.sum(axis=0)
    # unreachable observations get the predicted states as a stand-in posterior;
    # they carry no weight in the divergence
    target = np.outer(c, pred)
    for o in range(p.n_obs):
        if q[o].sum() > 0:
            target[o] = c[o] * exact_posterior(p, pred, o).probs
    return kl_divergence(q.reshape(-1), target.reshape(-1))


def feef_decomposition(
    p: POMDPModel, belief: StateOrBelief, a: int, pref_obs: PreferenceDistribution
) -> tuple[float, float]:
    """``(extrinsic, intrinsic)`` with ``feef = extrinsic - intrinsic``.

    extrinsic ``= E_{Q(s)} D_KL[P(o|s) || P*(o)]``;
    intrinsic ``= E_{Q(o)} D_KL[Q(s|o) || Q(s)]``.
    """
    p = as_pomdp(p)
    c = _check_pref(pref_obs, "observations", p.n_obs)
    pred = predicted_state_prior(p, belief, a).probs
    extrinsic = sum(pred[s] * kl_divergence(p.likelihood[s], c) for s in range(p.n_states) if pred[s] > 0)
    q_o = pred @ p.likelihood
    intrinsic = sum(
        q_o[o] * kl_divergence(exact_posterior(p, pred, o), pred) for o in range(p.n_obs) if q_o[o] > 0
    )
    return float(extrinsic), float(intrinsic)


# --------------------------------------------------------------------------
# objective specs


class Objective:
    """Base class for objective specs.

    ``step_value`` evaluates one action at a belief. Cumulative objectives
    (reward and expected utility) are instead scored on the distribution of
    total payoff at the end of a policy.
    """

    sense: ClassVar[str] = "minimize"
    cumulative: ClassVar[bool] = False

    def step_value(self, m: Model, belief: np.ndarray, a: int) -> float:
        raise NotImplementedError

    def check(self, m: Model) -> None:
        pass


@dataclass(frozen=True)
class RewardMax(Objective):
    payoff: Optional[tuple] = None
    sense: ClassVar[str] = "maximize"
    cumulative: ClassVar[bool] = True

    def __post_init__(self):
        if self.payoff is not None:
            object.__setattr__(self, "payoff", tuple(float(x) for x in np.ravel(self.payoff)))

    @property
    def utility(self) -> UtilityFunction:
        return Linear()

    def step_value(self, m, belief, a):
        return expected_utility(m, belief, a, Linear(), self.payoff)


@dataclass(frozen=True)
class ExpectedUtility(Objective):
    utility: UtilityFunction = Linear()
    payoff: Optional[tuple] = None
    sense: ClassVar[str] = "maximize"
    cumulative: ClassVar[bool] = True

    def __post_init__(self):
        if self.payoff is not None:
            object.__setattr__(self, "payoff", tuple(float(x) for x in np.ravel(self.payoff)))

    def step_value(self, m, belief, a):
        return expected_utility(m, belief, a, self.utility, self.payoff)


@dataclass(frozen=True)
class EfeMdp(Objective):
    pref: PreferenceDistribution
    unnormalized: bool = False

    def check(self, m):
        _check_pref(self.pref, "states", m.n_states)

    def step_value(self, m, belief, a):
        return efe_mdp(m, belief, a, self.pref, unnormalized=self.unnormalized)


@dataclass(frozen=True)
class EfePomdpRiskAmbiguity(Objective):
    pref_states: PreferenceDistribution
    pref_obs: Optional[PreferenceDistribution] = None

    def check(self, m):
        _check_pref(self.pref_states, "states", m.n_states)

    def step_value(self, m, belief, a):
        return efe_pomdp(m, belief, a, self.pref_states, self.pref_obs, form="risk_ambiguity")


@dataclass(frozen=True)
class EfePomdpValue(Objective):
    pref_obs: PreferenceDistribution

    def check(self, m):
        _check_pref(self.pref_obs, "observations", as_pomdp(m).n_obs)

    def step_value(self, m, belief, a):
        return efe_pomdp(m, belief, a, None, self.pref_obs, form="value")


@dataclass(frozen=True)
class ItbrMdp(Objective):
    """Optimal bounded-rational free energy ``max_q F(q) = ln Z_beta / beta``."""

    beta: float = 1.0
    utility: UtilityFunction = Linear()
    sense: ClassVar[str] = "maximize"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def step_value(self, m, belief, a):
        pred = _belief_array(m, belief) @ m.transition[a]
        return itbr_value(pred, self.utility(m.reward), self.beta)


@dataclass(frozen=True)
class ItbrPomdp(ItbrMdp):
    """Joint ``(o, s)`` version; with ``U = u(R(s))`` the observation factor sums out."""

    def step_value(self, m, belief, a):
        q = prior_joint(as_pomdp(m), belief, a)
        utilities = np.broadcast_to(self.utility(m.reward), q.shape)
        return itbr_value(q.reshape(-1), utilities.reshape(-1), self.beta)


@dataclass(frozen=True)
class DivergenceMdp(Objective):
    pref: PreferenceDistribution

    def check(self, m):
        _check_pref(self.pref, "states", m.n_states)

    def step_value(self, m, belief, a):
        return divergence_objective_mdp(m, belief, a, self.pref)


@dataclass(frozen=True)
class Feef(Objective):
    pref_obs: PreferenceDistribution

    def check(self, m):
        _check_pref(self.pref_obs, "observations", as_pomdp(m).n_obs)

    def step_value(self, m, belief, a):
        return feef(m, belief, a, self.pref_obs)


ObjectiveSpec = Objective


# --------------------------------------------------------------------------
# action selection


@dataclass(frozen=True)
class ActionEvaluation:
    values: np.ndarray
    optimal_set: frozenset
    tie: bool
    sense: str

    @property
    def best(self) -> float:
        return float(self.values.max() if self.sense == "maximize" else self.values.min())


def optimal_set(values: ArrayLike, sense: str, tie_tol: float = 1e-9) -> frozenset:
    """Indices within ``tie_tol`` of the optimum; never broken arbitrarily."""
    v = np.asarray(values, dtype=float)
    if sense == "maximize":
        return frozenset(np.flatnonzero(v >= v.max() - tie_tol).tolist())
    return frozenset(np.flatnonzero(v <= v.min() + tie_tol).tolist())


def select_action(m: Model, state_or_belief: StateOrBelief, spec: Objective, tie_tol: float = 1e-9) -> ActionEvaluation:
    spec.check(m)
    belief = _belief_array(m, state_or_belief)
    values = np.array([spec.step_value(m, belief, a) for a in range(m.n_actions)])
    best = optimal_set(values, spec.sense, tie_tol)
    return ActionEvaluation(values, best, len(best) > 1, spec.sense)


# --------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class TreeNode:
    """One decision point of a belief-tree rollout."""

    t: int
    weight: float
    belief: np.ndarray
    action: int
    obs_probs: np.ndarray


@dataclass(frozen=True)
class Rollout:
    nodes: list
    leaves: list  # (cumulative payoff, probability)

    def lottery(self):
        from .models import Lottery

        x = np.array([c for c, _ in self.leaves])
        w = np.array([w for _, w in self.leaves])
        return Lottery(x, CategoricalDist(w / w.sum()))


def belief_tree(m: Model, init: StateOrBelief, pi: PolicySpec, payoff: Optional[ArrayLike] = None) -> Rollout:
    """Exact rollout of ``pi`` expanding every observation with positive probability.

    Each branch carries the joint weight of (true state, cumulative payoff), so
    both per-step beliefs and the final payoff lottery come out of one pass.
    Zero-probability observations are pruned.
    """
    validate_policy(m, pi)
    p = as_pomdp(m)
    T, L = p.transition, p.likelihood
    r = p.reward if payoff is None else np.asarray(payoff, dtype=float)
    nS = p.n_states
    frontier = [(None, {0.0: _belief_array(p, init).copy()})]
    nodes = []
    for t in range(len(pi)):
        nxt = []
        for last_obs, joint in frontier:
            mass = sum(v.sum() for v in joint.values())
            belief = sum(joint.values()) / mass
            a = pi.action(t, last_obs)
            moved: dict = defaultdict(lambda: np.zeros(nS))
            for cum, v in joint.items():
                v2 = v @ T[a]
                for s2 in np.flatnonzero(v2 > 0):
                    moved[cum + float(r[s2])][s2] += v2[s2]
            obs_w = np.zeros(p.n_obs)
            for v in moved.values():
                obs_w += v @ L
            nodes.append(TreeNode(t, float(mass), belief, a, obs_w / mass))
            for o in np.flatnonzero(obs_w > 0):
                child = {}
                for cum, v in moved.items():
                    vo = v * L[:, o]
                    if vo.sum() > 0:
                        child[cum] = vo
                nxt.append((int(o), child))
        frontier = nxt
    leaves: dict = defaultdict(float)
    for _, joint in frontier:
        for cum, v in joint.items():
            leaves[cum] += float(v.sum())
    return Rollout(nodes, sorted(leaves.items()))


def evaluate_policy(m: Model, init: StateOrBelief, pi: PolicySpec, spec: Objective) -> float:
    """Value of a policy under ``spec``.

    Reward and expected-utility objectives score the lottery over total
    (undiscounted) payoff at the horizon, applying the utility to the total.
    All other objectives sum the per-step value at each branch's belief,
    weighted by the branch probability.
    """
    spec.check(m)
    if isinstance(m, MDPModel) and not isinstance(init, (int, np.integer)):
        # the state is observed, so a spread initial distribution is a mixture of known starts
        d = _belief_array(m, init)
        return float(sum(d[s] * evaluate_policy(m, s, pi, spec) for s in range(m.n_states) if d[s] > 0))
    tree = belief_tree(m, init, pi, getattr(spec, "payoff", None))
    if spec.cumulative:
        L = tree.lottery()
        return float(np.dot(L.probs, spec.utility(L.outcomes)))
    return float(sum(n.weight * spec.step_value(m, n.belief, n.action) for n in tree.nodes))
