"""Environment and preference data model: MDPs, POMDPs, utilities, lotteries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Optional, Union

import numpy as np
from numpy.typing import ArrayLike

from .errors import DegenerateLottery, DomainError
from .mathcore import (
    NORMALIZATION_TOL,
    CategoricalDist,
    DistLike,
    as_probs,
    expectation,
    gibbs_with_log_partition,
)

# Beliefs are plain distributions over states.
BeliefState = CategoricalDist


def _frozen_array(x, ndim: int, name: str) -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MDPModel:
    """Finite-horizon MDP with state-only rewards and no discounting.

    ``transition[a, s, s2]`` is ``P(s2 | a, s)``. The constructor only fixes
    shapes and dtypes; use :func:`validate_model` for the invariants.
    """

    states: tuple[str, ...]
    actions: tuple[str, ...]
    transition: np.ndarray
    reward: np.ndarray
    horizon: int = 1
    discount: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(str(a) for a in self.actions))
        object.__setattr__(self, "transition", _frozen_array(self.transition, 3, "transition"))
        object.__setattr__(self, "reward", _frozen_array(self.reward, 1, "reward"))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def row(self, a: int, s: int) -> CategoricalDist:
        return CategoricalDist(self.transition[a, s])

    def __eq__(self, other):
        if not isinstance(other, MDPModel):
            return NotImplemented
        return (
            self.states == other.states
            and self.actions == other.actions
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
            and self.horizon == other.horizon
            and self.discount == other.discount
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class POMDPModel:
    """An MDP plus observations; ``likelihood[s, o]`` is ``P(o | s)``."""

    base: MDPModel
    observations: tuple[str, ...]
    likelihood: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(str(o) for o in self.observations))
        object.__setattr__(self, "likelihood", _frozen_array(self.likelihood, 2, "likelihood"))

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    # the POMDP is read through its base MDP almost everywhere
    states = property(lambda self: self.base.states)
    actions = property(lambda self: self.base.actions)
    transition = property(lambda self: self.base.transition)
    reward = property(lambda self: self.base.reward)
    horizon = property(lambda self: self.base.horizon)
    n_states = property(lambda self: self.base.n_states)
    n_actions = property(lambda self: self.base.n_actions)

    def __eq__(self, other):
        if not isinstance(other, POMDPModel):
            return NotImplemented
        return (
            self.base == other.base
            and self.observations == other.observations
            and np.array_equal(self.likelihood, other.likelihood)
        )

    __hash__ = None


Model = Union[MDPModel, POMDPModel]


def as_pomdp(m: Model) -> POMDPModel:
    """View an MDP as a POMDP whose observation is the state itself."""
    if isinstance(m, POMDPModel):
        return m
    return POMDPModel(m, m.states, np.eye(m.n_states))


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


def _check_rows(rows: np.ndarray, path: str, out: list[Violation]) -> None:
    for idx in np.ndindex(*rows.shape[:-1]):
        row = rows[idx]
        where = path + "".join(f"[{i}]" for i in idx)
        if not np.all(np.isfinite(row)):
            out.append(Violation(where, "non-finite probability"))
            continue
        if np.any(row < 0):
            out.append(Violation(where, f"negative probability in {row.tolist()}"))
        total = float(row.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            out.append(Violation(where, f"row sums to {total!r}, not 1"))


def validate_model(m: Model) -> list[Violation]:
    """Every violated invariant with its index path; empty iff ``m`` is valid."""
    out: list[Violation] = []
    base = m.base if isinstance(m, POMDPModel) else m
    nS, nA = len(base.states), len(base.actions)
    if nS == 0:
        out.append(Violation("states", "no states"))
    if nA == 0:
        out.append(Violation("actions", "no actions"))
    if len(set(base.states)) != nS:
        out.append(Violation("states", "duplicate state labels"))
    if len(set(base.actions)) != nA:
        out.append(Violation("actions", "duplicate action labels"))
    if base.transition.shape != (nA, nS, nS):
        out.append(Violation("transition", f"shape {base.transition.shape}, expected {(nA, nS, nS)}"))
    else:
        _check_rows(base.transition, "transition", out)
    if base.reward.shape != (nS,):
        out.append(Violation("reward", f"shape {base.reward.shape}, expected {(nS,)}"))
    else:
        for i, r in enumerate(base.reward):
            if not np.isfinite(r):
                out.append(Violation(f"reward[{i}]", "non-finite reward"))
            elif r < 0:
                out.append(Violation(f"reward[{i}]", f"negative reward {r!r}"))
    if not (isinstance(base.horizon, (int, np.integer)) and base.horizon >= 1):
        out.append(Violation("horizon", f"must be a positive integer, got {base.horizon!r}"))
    if base.discount != 1:
        out.append(Violation("discount", f"must be exactly 1, got {base.discount!r}"))
    if isinstance(m, POMDPModel):
        nO = len(m.observations)
        if nO == 0:
            out.append(Violation("observations", "no observations"))
        if len(set(m.observations)) != nO:
            out.append(Violation("observations", "duplicate observation labels"))
        if m.likelihood.shape != (nS, nO):
            out.append(Violation("likelihood", f"shape {m.likelihood.shape}, expected {(nS, nO)}"))
        else:
            _check_rows(m.likelihood, "likelihood", out)
    return out


# --------------------------------------------------------------------------
# utilities


@dataclass(frozen=True)
class Linear:
    def __call__(self, r):
        return np.asarray(r, dtype=float) * 1.0

    def __str__(self) -> str:
        return "linear"


@dataclass(frozen=True)
class Power:
    """``r ** c``; concave for ``c < 1``, convex for ``c > 1``. Defined for ``r >= 0``."""

    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"power exponent must be positive, got {self.c}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise DomainError(f"power utility needs nonnegative argument, got {r}")
        return r**self.c

    def __str__(self) -> str:
        return f"power(c={self.c:g})"


@dataclass(frozen=True)
class Log:
    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise DomainError(f"log utility needs a strictly positive argument, got {r}")
        return np.log(r)

    def __str__(self) -> str:
        return "log"


@dataclass(frozen=True)
class Affine:
    """Positive affine transform ``a * r + b``."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"affine slope must be positive, got {self.a}")

    def __call__(self, r):
        return self.a * np.asarray(r, dtype=float) + self.b

    def __str__(self) -> str:
        return f"affine(a={self.a:g},b={self.b:g})"


UtilityFunction = Union[Linear, Power, Log, Affine]


def utility_apply(u: UtilityFunction, r: float) -> float:
    return float(u(r))


def is_shift_of_identity(u: UtilityFunction) -> bool:
    """True when ``u(r) - r`` is constant, so Gibbs weights of ``u`` and of ``r`` coincide."""
    return isinstance(u, Linear) or (isinstance(u, Affine) and u.a == 1) or (isinstance(u, Power) and u.c == 1)


# --------------------------------------------------------------------------
# lotteries


@dataclass(frozen=True, eq=False)
class Lottery:
    outcomes: np.ndarray
    dist: CategoricalDist

    def __post_init__(self):
        x = _frozen_array(self.outcomes, 1, "outcomes")
        d = self.dist if isinstance(self.dist, CategoricalDist) else CategoricalDist(self.dist)
        if x.shape != d.probs.shape:
            raise ValueError(f"{x.size} outcomes but {d.support_size} probabilities")
        object.__setattr__(self, "outcomes", x)
        object.__setattr__(self, "dist", d)

    @property
    def probs(self) -> np.ndarray:
        return self.dist.probs


def lottery_expected_value(L: Lottery) -> float:
    return expectation(L.dist, L.outcomes)


def lottery_expected_utility(L: Lottery, u: UtilityFunction) -> float:
    nz = L.probs > 0
    return float(np.dot(L.probs[nz], u(L.outcomes[nz])))


RiskAttitude = Literal["averse", "neutral", "loving"]


def classify_risk_attitude(u: UtilityFunction, L: Lottery, tol: float = 1e-12) -> RiskAttitude:
    """Compare ``u(E[L])`` with ``E[u(L)]`` for this one lottery."""
    support = np.unique(L.outcomes[L.probs > 0])
    if support.size < 2:
        raise DegenerateLottery("lottery has a single certain outcome")
    certain = float(u(lottery_expected_value(L)))
    risky = lottery_expected_utility(L, u)
    if certain > risky + tol:
        return "averse"
    if certain < risky - tol:
        return "loving"
    return "neutral"


# --------------------------------------------------------------------------
# preferences and policies


@dataclass(frozen=True, eq=False)
class PreferenceDistribution:
    """Target distribution over states or observations.

    For Gibbs-built preferences ``log_partition`` is ``ln sum_i w_i exp(beta * U_i)``
    over the unnormalized base weights ``w``; subtracting it from a KL gives
    the "drop the normalizer" convention for expected free energy.
    """

    over: Literal["states", "observations"]
    dist: CategoricalDist
    provenance: str = "explicit"
    beta: Optional[float] = None
    log_partition: Optional[float] = None

    def __post_init__(self):
        if self.over not in ("states", "observations"):
            raise ValueError(f"preference must be over states or observations, not {self.over!r}")
        if not isinstance(self.dist, CategoricalDist):
            object.__setattr__(self, "dist", CategoricalDist(self.dist))

    @property
    def probs(self) -> np.ndarray:
        return self.dist.probs

    @classmethod
    def explicit(cls, over, probs: DistLike) -> "PreferenceDistribution":
        return cls(over, probs if isinstance(probs, CategoricalDist) else CategoricalDist(probs))

    @classmethod
    def from_gibbs(
        cls, over, potentials: ArrayLike, beta: float = 1.0, prior: Optional[DistLike] = None, label: str = ""
    ) -> "PreferenceDistribution":
        """Gibbs preference; ``prior=None`` means unit weights, i.e. ``exp(beta*U)/sum exp(beta*U)``."""
        u = np.asarray(potentials, dtype=float).reshape(-1)
        base = np.ones_like(u) if prior is None else as_probs(prior)
        dist, log_z = gibbs_with_log_partition(base, u, beta)
        return cls(over, dist, provenance=f"gibbs(beta={beta:g}{', ' + label if label else ''})", beta=beta, log_partition=log_z)


def preference_from_rewards(
    m: Model, u: UtilityFunction = Linear(), beta: float = 1.0, prior: Optional[DistLike] = None
) -> PreferenceDistribution:
    """State preference ``prior(s) * exp(beta * u(R(s))) / Z``.

    With the default uniform prior, linear utility and ``beta = 1`` this is the
    softmax of the rewards.
    """
    if prior is not None and as_probs(prior).size != m.n_states:
        raise ValueError("prior support does not match the number of states")
    return PreferenceDistribution.from_gibbs("states", u(m.reward), beta, prior, label=str(u))


def observation_preference(
    p: POMDPModel, u: UtilityFunction = Linear(), beta: float = 1.0, payoff: Optional[ArrayLike] = None
) -> PreferenceDistribution:
    """Observation preference from the mean utility of the states emitting each observation.

    ``U(o) = sum_s P(o|s) u(R(s)) / sum_s P(o|s)``; observations that no state
    emits get utility 0.
    """
    r = p.reward if payoff is None else np.asarray(payoff, dtype=float)
    us = u(r)
    mass = p.likelihood.sum(axis=0)
    uo = np.divide(p.likelihood.T @ us, mass, out=np.zeros(p.n_obs), where=mass > 0)
    return PreferenceDistribution.from_gibbs("observations", uo, beta, label=str(u))


PolicyStep = Union[int, Mapping[int, int]]


@dataclass(frozen=True)
class PolicySpec:
    """A sequence of actions, one per period.

    A step may be a plain action index or a mapping from the observation just
    received to an action (a reactive step). The first step must be a plain
    action.
    """

    steps: tuple

    def __post_init__(self):
        steps = []
        for st in self.steps:
            if isinstance(st, Mapping):
                steps.append(tuple(sorted((int(o), int(a)) for o, a in st.items())))
            else:
                steps.append(int(st))
        object.__setattr__(self, "steps", tuple(steps))
        if steps and not isinstance(steps[0], int):
            raise ValueError("the first policy step cannot depend on an observation")

    def __len__(self) -> int:
        return len(self.steps)

    def action(self, t: int, last_obs: Optional[int]) -> int:
        st = self.steps[t]
        if isinstance(st, int):
            return st
        table = dict(st)
        if last_obs not in table:
            raise KeyError(f"policy step {t} has no action for observation {last_obs}")
        return table[last_obs]

    def action_indices(self) -> set[int]:
        out = set()
        for st in self.steps:
            out.update([st] if isinstance(st, int) else (a for _, a in st))
        return out

    def describe(self, m: Model) -> str:
        parts = []
        obs = m.observations if isinstance(m, POMDPModel) else m.states
        for st in self.steps:
            if isinstance(st, int):
                parts.append(m.actions[st])
            else:
                parts.append("{" + ",".join(f"{obs[o]}:{m.actions[a]}" for o, a in st) + "}")
        return " -> ".join(parts)


def validate_policy(m: Model, pi: PolicySpec) -> None:
    if len(pi) > m.horizon:
        raise ValueError(f"policy length {len(pi)} exceeds horizon {m.horizon}")
    bad = [a for a in pi.action_indices() if not 0 <= a < m.n_actions]
    if bad:
        raise ValueError(f"invalid action indices {bad}")
