"""Environment builders, seeded random instances, and model files."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np

from .agents import belief_tree
from .errors import ParseError, ValidationError
from .mathcore import CategoricalDist
from .models import (
    Lottery,
    MDPModel,
    Model,
    POMDPModel,
    PolicySpec,
    PreferenceDistribution,
    Violation,
    validate_model,
)

FORMAT_VERSION = 1


def build_paraglider() -> MDPModel:
    """Single-step choice between a safe and a tall mountain across a chasm.

    States are (mountain 1, mountain 2, chasm); the reward is the height in km.
    There is only one decision state, so every prior state shares the same rows.
    """
    rows = np.array([[0.6, 0.0, 0.4], [0.0, 0.4, 0.6]])
    transition = np.repeat(rows[:, None, :], 3, axis=1)
    return MDPModel(("s1", "s2", "s3"), ("a1", "a2"), transition, [1.0, 1.5, 0.0], horizon=1)


# --------------------------------------------------------------------------
# T-maze

CONTEXTS = ("left", "right")
LOCATIONS = ("center", "left-arm", "right-arm", "cue")
TMAZE_ACTIONS = ("go-left", "go-right", "go-cue", "stay")
TMAZE_OBS = ("null", "cue-left", "cue-right", "reward", "punishment")
GO_LEFT, GO_RIGHT, GO_CUE, STAY = range(4)
CENTER, LEFT_ARM, RIGHT_ARM, CUE = range(4)
NULL, CUE_LEFT, CUE_RIGHT, REWARD, PUNISHMENT = range(5)

Variant = Literal["absorbing", "correctable"]


def tmaze_state(context: int, location: int) -> int:
    return context * len(LOCATIONS) + location


@dataclass(frozen=True, eq=False)
class TMaze:
    """T-maze POMDP plus the payoffs used for expected-utility lotteries.

    ``payoff`` may be negative (punishment); ``model.reward`` is the payoff
    shifted to be nonnegative and is what Gibbs preferences are built from.
    """

    variant: str
    model: POMDPModel
    payoff: np.ndarray
    obs_payoff: np.ndarray
    initial_belief: CategoricalDist

    def obs_preference(self, beta: float = 1.0) -> PreferenceDistribution:
        return PreferenceDistribution.from_gibbs("observations", self.obs_payoff, beta, label="tmaze payoff")

    def cue_first_policy(self) -> PolicySpec:
        return PolicySpec((GO_CUE, {CUE_LEFT: GO_LEFT, CUE_RIGHT: GO_RIGHT}))

    def gamble_policy(self, arm: int = GO_LEFT) -> PolicySpec:
        """Enter an arm without consulting the cue and stay whatever happens."""
        return PolicySpec((arm, {REWARD: STAY, PUNISHMENT: STAY}))


def _tmaze_move(variant: Variant, location: int, action: int) -> int:
    target = {GO_LEFT: LEFT_ARM, GO_RIGHT: RIGHT_ARM, GO_CUE: CUE, STAY: location}[action]
    if location in (LEFT_ARM, RIGHT_ARM):
        if variant == "absorbing" or target == location:
            return location
        # leaving an arm goes back through the junction
        return CENTER
    return target


def build_tmaze(variant: Variant = "absorbing") -> TMaze:
    """Eight-state T-maze: context (reward left/right) x location.

    ``"absorbing"``: arms cannot be left; correct arm pays +1 and wrong arm -1
    per period. ``"correctable"``: leaving an arm returns to the center; correct
    arm pays +1 per period and wrong arm 0. Horizon 2 in both.
    """
    if variant not in ("absorbing", "correctable"):
        raise ValueError(f"unknown T-maze variant {variant!r}")
    wrong = -1.0 if variant == "absorbing" else 0.0
    nS = len(CONTEXTS) * len(LOCATIONS)
    states = [f"{c}-context/{loc}" for c in CONTEXTS for loc in LOCATIONS]
    T = np.zeros((len(TMAZE_ACTIONS), nS, nS))
    L = np.zeros((nS, len(TMAZE_OBS)))
    payoff = np.zeros(nS)
    for c in range(len(CONTEXTS)):
        correct_arm = LEFT_ARM if c == 0 else RIGHT_ARM
        for loc in range(len(LOCATIONS)):
            s = tmaze_state(c, loc)
            for a in range(len(TMAZE_ACTIONS)):
                T[a, s, tmaze_state(c, _tmaze_move(variant, loc, a))] = 1.0
            if loc == CENTER:
                L[s, NULL] = 1.0
            elif loc == CUE:
                L[s, CUE_LEFT if c == 0 else CUE_RIGHT] = 1.0
            elif loc == correct_arm:
                L[s, REWARD] = 1.0
                payoff[s] = 1.0
            else:
                L[s, PUNISHMENT] = 1.0
                payoff[s] = wrong
    reward = payoff - min(0.0, payoff.min())
    base = MDPModel(states, TMAZE_ACTIONS, T, reward, horizon=2)
    obs_payoff = np.array([0.0, 0.0, 0.0, 1.0, wrong])
    init = np.zeros(nS)
    init[tmaze_state(0, CENTER)] = init[tmaze_state(1, CENTER)] = 0.5
    payoff.setflags(write=False)
    obs_payoff.setflags(write=False)
    return TMaze(variant, POMDPModel(base, TMAZE_OBS, L), payoff, obs_payoff, CategoricalDist(init))


def enumerate_policies(m: Model, init, length: int) -> list[PolicySpec]:
    """Every policy of ``length`` steps whose later steps react to the last observation.

    Only observations reachable with positive probability get an entry, so
    each listed policy is distinct in behaviour.
    """
    nA = m.n_actions
    out: list[PolicySpec] = []

    def extend(prefix: tuple) -> None:
        if len(prefix) == length:
            out.append(PolicySpec(prefix))
            return
        if not prefix:
            for a in range(nA):
                extend((a,))
            return
        tree = belief_tree(m, init, PolicySpec(prefix))
        reach = sorted(
            {int(o) for n in tree.nodes if n.t == len(prefix) - 1 for o in np.flatnonzero(n.obs_probs > 0)}
        )
        for combo in itertools.product(range(nA), repeat=len(reach)):
            extend(prefix + (dict(zip(reach, combo)),))

    extend(())
    return out


# --------------------------------------------------------------------------
# St. Petersburg


def build_st_petersburg(n_terms: int) -> Lottery:
    """Coin-toss lottery paying ``2**i`` with probability ``2**-i``, truncated.

    The last outcome repeats ``2**n_terms`` and carries the tail mass
    ``2**-n_terms``, so probabilities sum to exactly 1.
    """
    if not (isinstance(n_terms, (int, np.integer)) and 1 <= n_terms <= 60):
        raise ValueError(f"n_terms must be an integer in [1, 60], got {n_terms!r}")
    i = np.arange(1, n_terms + 1, dtype=float)
    outcomes = np.append(2.0**i, 2.0**n_terms)
    probs = np.append(2.0**-i, 2.0**-n_terms)
    return Lottery(outcomes, CategoricalDist(probs))


def st_petersburg_pre_tail_value(L: Lottery) -> float:
    """Expected payout excluding the tail-closure outcome (equals the number of terms)."""
    return float(np.dot(L.probs[:-1], L.outcomes[:-1]))


# --------------------------------------------------------------------------
# random instances


@dataclass(frozen=True)
class InstanceSpec:
    kind: Literal["mdp", "pomdp"]
    n_states: int
    n_actions: int
    n_obs: int = 2
    seed: int = 0
    reward_range: tuple = (0.0, 1.0)
    horizon: int = 1

    def __post_init__(self):
        if self.kind not in ("mdp", "pomdp"):
            raise ValueError(f"kind must be 'mdp' or 'pomdp', got {self.kind!r}")
        if min(self.n_states, self.n_actions, self.n_obs) < 1:
            raise ValueError("sizes must be positive")
        lo, hi = self.reward_range
        if not 0 <= lo <= hi:
            raise ValueError(f"reward_range must satisfy 0 <= lo <= hi, got {self.reward_range}")


POSITIVITY_FLOOR = 1e-6


def _random_rows(rng: np.random.Generator, shape: tuple, n: int) -> np.ndarray:
    # flat Dirichlet mixed with a floor so every entry is >= POSITIVITY_FLOOR
    x = rng.dirichlet(np.ones(n), size=shape)
    return POSITIVITY_FLOOR + (1.0 - n * POSITIVITY_FLOOR) * x


def random_instance(spec: InstanceSpec) -> Model:
    rng = np.random.default_rng(spec.seed)
    nS, nA = spec.n_states, spec.n_actions
    T = _random_rows(rng, (nA, nS), nS)
    reward = rng.uniform(*spec.reward_range, size=nS)
    base = MDPModel(
        [f"s{i}" for i in range(nS)], [f"a{i}" for i in range(nA)], T, reward, horizon=spec.horizon
    )
    if spec.kind == "mdp":
        return base
    L = _random_rows(rng, (nS,), spec.n_obs)
    return POMDPModel(base, [f"o{i}" for i in range(spec.n_obs)], L)


def instance_spec_for_seed(kind: str, seed: int, max_states: int = 4, max_actions: int = 3, max_obs: int = 4) -> InstanceSpec:
    """Seed-determined small instance sizes (2..max_states states, 1..max_actions actions)."""
    rng = np.random.default_rng([seed, 7919])
    return InstanceSpec(
        kind,
        n_states=int(rng.integers(2, max_states + 1)),
        n_actions=int(rng.integers(1, max_actions + 1)),
        n_obs=int(rng.integers(2, max_obs + 1)),
        seed=seed,
        reward_range=(0.0, 2.0),
    )


# --------------------------------------------------------------------------
# model files

_MDP_KEYS = {"format_version", "kind", "states", "actions", "transition", "reward", "horizon"}
_POMDP_KEYS = _MDP_KEYS | {"observations", "likelihood"}
_OPTIONAL_KEYS = {"discount", "gamma"}


def model_to_dict(m: Model) -> dict:
    base = m.base if isinstance(m, POMDPModel) else m
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "pomdp" if isinstance(m, POMDPModel) else "mdp",
        "states": list(base.states),
        "actions": list(base.actions),
        "transition": base.transition.tolist(),
        "reward": base.reward.tolist(),
        "horizon": int(base.horizon),
    }
    if isinstance(m, POMDPModel):
        doc["observations"] = list(m.observations)
        doc["likelihood"] = m.likelihood.tolist()
    return doc


def save_model(m: Model, path: Union[str, Path]) -> None:
    report = validate_model(m)
    if report:
        raise ValidationError("refusing to save an invalid model", report)
    Path(path).write_text(json.dumps(model_to_dict(m), indent=1) + "\n")


def _array(doc: dict, key: str, ndim: int, report: list) -> Optional[np.ndarray]:
    try:
        a = np.array(doc[key], dtype=float)
    except (ValueError, TypeError) as e:
        report.append(Violation(key, f"not a rectangular numeric array ({e})"))
        return None
    if a.ndim != ndim:
        report.append(Violation(key, f"expected {ndim} dimensions, got shape {a.shape}"))
        return None
    return a


def model_from_dict(doc: dict, source: str = "<dict>") -> Model:
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top level must be a mapping")
    for key in ("format_version", "kind"):
        if key not in doc:
            raise ParseError(f"{source}: missing field {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise ParseError(f"{source}: field 'format_version': unsupported version {doc['format_version']!r}")
    kind = doc["kind"]
    if kind not in ("mdp", "pomdp"):
        raise ParseError(f"{source}: field 'kind': must be 'mdp' or 'pomdp', got {kind!r}")
    required = _MDP_KEYS if kind == "mdp" else _POMDP_KEYS
    unknown = sorted(set(doc) - required - _OPTIONAL_KEYS)
    if unknown:
        raise ParseError(f"{source}: unknown field(s) {unknown}")
    missing = sorted(required - set(doc))
    if missing:
        raise ParseError(f"{source}: missing field(s) {missing}")
    for key in ("states", "actions") + (("observations",) if kind == "pomdp" else ()):
        if not isinstance(doc[key], list) or not all(isinstance(x, str) for x in doc[key]):
            raise ParseError(f"{source}: field {key!r}: must be a list of strings")
    if not isinstance(doc["horizon"], int) or isinstance(doc["horizon"], bool):
        raise ParseError(f"{source}: field 'horizon': must be an integer")

    report: list[Violation] = []
    for key in _OPTIONAL_KEYS & set(doc):
        if doc[key] != 1:
            report.append(Violation(key, f"discount must be exactly 1, got {doc[key]!r}"))
    T = _array(doc, "transition", 3, report)
    R = _array(doc, "reward", 1, report)
    L = _array(doc, "likelihood", 2, report) if kind == "pomdp" else None
    if report or T is None or R is None or (kind == "pomdp" and L is None):
        raise ValidationError(f"{source}: invalid model: " + "; ".join(map(str, report)), report)
    base = MDPModel(doc["states"], doc["actions"], T, R, horizon=doc["horizon"])
    m: Model = base if kind == "mdp" else POMDPModel(base, doc["observations"], L)
    report = validate_model(m)
    if report:
        raise ValidationError(f"{source}: invalid model: " + "; ".join(map(str, report)), report)
    return m


def load_model(path: Union[str, Path]) -> Model:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    return model_from_dict(doc, str(path))
