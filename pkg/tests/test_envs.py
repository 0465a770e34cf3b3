import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agency_bridge.envs import (
    GO_RIGHT,
    POSITIVITY_FLOOR,
    STAY,
    InstanceSpec,
    build_paraglider,
    build_st_petersburg,
    build_tmaze,
    enumerate_policies,
    instance_spec_for_seed,
    load_model,
    model_from_dict,
    model_to_dict,
    random_instance,
    save_model,
    st_petersburg_pre_tail_value,
)
from agency_bridge.errors import ParseError, ValidationError
from agency_bridge.models import MDPModel, POMDPModel, validate_model


class TestBuilders:
    def test_paraglider_rows(self):
        m = build_paraglider()
        np.testing.assert_array_equal(m.transition[:, 0], [[0.6, 0.0, 0.4], [0.0, 0.4, 0.6]])
        np.testing.assert_array_equal(m.reward, [1.0, 1.5, 0.0])

    @pytest.mark.parametrize("variant", ["absorbing", "correctable"])
    def test_tmaze_valid(self, variant):
        tm = build_tmaze(variant)
        assert validate_model(tm.model) == []
        assert tm.model.horizon == 2
        assert tm.model.reward.min() == 0.0

    def test_tmaze_unknown_variant(self):
        with pytest.raises(ValueError):
            build_tmaze("open")

    def test_absorbing_arms(self):
        tm = build_tmaze("absorbing")
        T = tm.model.transition
        arm = 1  # left-context/left-arm
        for a in range(4):
            assert T[a, arm, arm] == 1.0

    def test_correctable_arm_returns_to_center(self):
        tm = build_tmaze("correctable")
        T = tm.model.transition
        assert T[GO_RIGHT, 1, 0] == 1.0
        assert T[STAY, 1, 1] == 1.0

    def test_policy_count(self):
        tm = build_tmaze("absorbing")
        policies = enumerate_policies(tm.model, tm.initial_belief, 2)
        # arms and cue each branch on two observations (3 * 4^2), stay only sees null (4)
        assert len(policies) == 52
        assert len(set(policies)) == 52
        assert tm.cue_first_policy() in policies


class TestStPetersburg:
    @pytest.mark.parametrize("n", [1, 2, 10, 60])
    def test_pre_tail_value(self, n):
        L = build_st_petersburg(n)
        assert st_petersburg_pre_tail_value(L) == n
        assert L.probs.sum() == 1.0

    @pytest.mark.parametrize("n", [0, 61, 2.5])
    def test_bad_depth(self, n):
        with pytest.raises(ValueError):
            build_st_petersburg(n)

    def test_log_value_converges(self):
        L = build_st_petersburg(60)
        assert float(np.dot(L.probs, np.log(L.outcomes))) == pytest.approx(2 * math.log(2), abs=1e-12)


class TestRandomInstances:
    @given(st.integers(0, 10_000), st.sampled_from(["mdp", "pomdp"]))
    def test_valid_and_floored(self, seed, kind):
        m = random_instance(instance_spec_for_seed(kind, seed))
        assert validate_model(m) == []
        assert m.transition.min() >= POSITIVITY_FLOOR
        if kind == "pomdp":
            assert m.likelihood.min() >= POSITIVITY_FLOOR

    @given(st.integers(0, 10_000))
    def test_deterministic(self, seed):
        spec = instance_spec_for_seed("pomdp", seed)
        assert random_instance(spec) == random_instance(spec)

    def test_sizes_in_range(self):
        for seed in range(1, 101):
            spec = instance_spec_for_seed("mdp", seed)
            assert 2 <= spec.n_states <= 4 and 1 <= spec.n_actions <= 3

    @pytest.mark.parametrize(
        "kwargs",
        [dict(kind="dbn", n_states=2, n_actions=1), dict(kind="mdp", n_states=0, n_actions=1),
         dict(kind="mdp", n_states=2, n_actions=1, reward_range=(-1.0, 1.0))],
    )
    def test_bad_spec(self, kwargs):
        with pytest.raises(ValueError):
            InstanceSpec(**kwargs)


def tiny_mdp_doc():
    return {
        "format_version": 1,
        "kind": "mdp",
        "states": ["x", "y"],
        "actions": ["a"],
        "transition": [[[0.5, 0.5], [0.0, 1.0]]],
        "reward": [0.0, 1.0],
        "horizon": 1,
    }


class TestModelFiles:
    @settings(max_examples=25)
    @given(st.integers(0, 1000), st.sampled_from(["mdp", "pomdp"]))
    def test_round_trip(self, seed, kind):
        m = random_instance(instance_spec_for_seed(kind, seed))
        assert model_from_dict(json.loads(json.dumps(model_to_dict(m)))) == m

    def test_round_trip_file(self, tmp_path):
        tm = build_tmaze("correctable")
        path = tmp_path / "tmaze.json"
        save_model(tm.model, path)
        assert load_model(path) == tm.model

    def test_discount_one_accepted(self):
        assert isinstance(model_from_dict({**tiny_mdp_doc(), "gamma": 1}), MDPModel)

    def test_discount_rejected(self):
        with pytest.raises(ValidationError) as err:
            model_from_dict({**tiny_mdp_doc(), "gamma": 0.9})
        assert err.value.report[0].path == "gamma"

    def test_negative_reward(self):
        with pytest.raises(ValidationError) as err:
            model_from_dict({**tiny_mdp_doc(), "reward": [-1.0, 1.0]})
        assert [v.path for v in err.value.report] == ["reward[0]"]

    def test_unknown_key(self):
        with pytest.raises(ParseError):
            model_from_dict({**tiny_mdp_doc(), "colour": "blue"})

    def test_ragged(self):
        with pytest.raises(ValidationError):
            model_from_dict({**tiny_mdp_doc(), "transition": [[[0.5, 0.5], [1.0]]]})

    def test_bad_json_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"kind": "mdp",\n  "states": [1,}\n')
        with pytest.raises(ParseError, match=r"broken.json:2:"):
            load_model(path)

    def test_pomdp_missing_likelihood(self):
        doc = {**tiny_mdp_doc(), "kind": "pomdp", "observations": ["o"]}
        with pytest.raises(ParseError, match="likelihood"):
            model_from_dict(doc)

    def test_save_refuses_invalid(self, tmp_path):
        m = MDPModel(["x"], ["a"], [[[1.0]]], [-2.0])
        with pytest.raises(ValidationError):
            save_model(m, tmp_path / "bad.json")
        assert not (tmp_path / "bad.json").exists()

    def test_pomdp_shape(self):
        m = random_instance(InstanceSpec("pomdp", 3, 2, n_obs=4, seed=5))
        assert isinstance(m, POMDPModel) and m.likelihood.shape == (3, 4)
