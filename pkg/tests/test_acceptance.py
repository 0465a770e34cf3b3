"""End-to-end acceptance gate; one PASS/FAIL line per criterion is printed in the summary."""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from agency_bridge.agents import EfeMdp, ExpectedUtility, efe_mdp, select_action
from agency_bridge.bridge import (
    compare_preference_distributions,
    reproduce_tmaze,
    run_identity_suite,
)
from agency_bridge.envs import (
    build_paraglider,
    build_st_petersburg,
    build_tmaze,
    instance_spec_for_seed,
    random_instance,
    st_petersburg_pre_tail_value,
)
from agency_bridge.models import Affine, Linear, Log, Power, lottery_expected_utility, preference_from_rewards

SEEDS = range(1, 101)


@pytest.mark.acceptance(1, "paraglider EFE indifference")
def test_paraglider_efe_indifference():
    start = time.perf_counter()
    m = build_paraglider()
    pref = preference_from_rewards(m)
    g = [efe_mdp(m, 0, a, pref, unnormalized=True) for a in range(m.n_actions)]
    best = select_action(m, 0, EfeMdp(pref, unnormalized=True)).optimal_set
    elapsed = time.perf_counter() - start
    assert g[0] == pytest.approx(-1.2725, abs=2e-3)
    assert g[1] == pytest.approx(-1.2725, abs=2e-3)
    assert abs(g[0] - g[1]) <= 1e-12
    assert best == {0, 1}
    assert elapsed < 1.0


@pytest.mark.acceptance(2, "paraglider expected-utility thresholds")
@pytest.mark.parametrize("c, best, values", [(0.5, {0}, None), (1.0, {0, 1}, (0.6, 0.6)), (2.0, {1}, (0.6, 0.9))])
def test_paraglider_eu_thresholds(c, best, values):
    ev = select_action(build_paraglider(), 0, ExpectedUtility(Power(c)), tie_tol=1e-12)
    assert ev.optimal_set == best
    if values is not None:
        assert np.max(np.abs(ev.values - values)) <= 1e-12


@pytest.mark.acceptance(3, "St. Petersburg log utility and divergence witness")
def test_st_petersburg():
    start = time.perf_counter()
    L = build_st_petersburg(60)
    eu = lottery_expected_utility(L, Log())
    pre_tail = {n: st_petersburg_pre_tail_value(build_st_petersburg(n)) for n in (1, 2, 5, 10, 20, 40, 60)}
    elapsed = time.perf_counter() - start
    assert eu == pytest.approx(2 * math.log(2), abs=1e-6)
    assert all(v == n for n, v in pre_tail.items())
    assert elapsed < 0.1


def tmaze_columns(variant):
    rep = reproduce_tmaze(variant)
    table = rep.tables[0]
    tm = build_tmaze(variant)
    names = [row[0] for row in table.rows]
    cue = names.index(tm.cue_first_policy().describe(tm.model))
    gamble = names.index(tm.gamble_policy().describe(tm.model))
    cols = {h: np.array([row[i] for row in table.rows]) for i, h in enumerate(table.headers) if i}
    return cols, cue, gamble


@pytest.mark.acceptance(4, "T-maze with absorbing arms")
def test_tmaze_absorbing():
    cols, cue, gamble = tmaze_columns("absorbing")
    lin = cols["linear"]
    assert lin[cue] == 1.0
    assert lin[gamble] == 0.0
    others = np.delete(lin, cue)
    assert others.max() < lin[cue]
    for key in ("efe", "feef"):
        assert cols[key][cue] <= cols[key].min() + 1e-9


@pytest.mark.acceptance(5, "T-maze with correctable arms")
@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_tmaze_correctable(c):
    cols, cue, gamble = tmaze_columns("correctable")
    col = cols[str(Power(c))]
    assert col[gamble] == pytest.approx(0.5 * 2**c, abs=1e-12)
    assert col[cue] == pytest.approx(1.0, abs=1e-12)
    if c == 1.0:
        assert abs(col[gamble] - col[cue]) <= 1e-12
    if c == 0.5:
        assert np.delete(col, cue).max() < col[cue]


@pytest.fixture(scope="module")
def identity_suite():
    start = time.perf_counter()
    reports = run_identity_suite(SEEDS)
    return reports, time.perf_counter() - start


@pytest.mark.acceptance(6, "identity suite over 100 MDPs and 100 POMDPs")
@pytest.mark.parametrize(
    "name, tol",
    [
        ("efe_mdp_forms", 1e-12),
        ("gibbs_optimality_mdp", 1e-12),
        ("gibbs_optimality_pomdp", 1e-12),
        ("itbr_divergence_mdp", 1e-12),
        ("feef_decomposition", 1e-10),
        ("efe_feef_relation", 1e-10),
    ],
)
def test_identity_suite(identity_suite, name, tol):
    reports, elapsed = identity_suite
    mine = [r for r in reports if r.identity_name == name]
    assert sorted(r.seed for r in mine) == list(SEEDS)
    worst = max(r.residual for r in mine)
    assert worst <= tol, f"{name}: worst residual {worst:.3e}"
    assert all(r.tolerance == tol for r in mine)
    assert elapsed < 60.0


def test_identity_suite_instance_sizes():
    for seed in SEEDS:
        for kind in ("mdp", "pomdp"):
            m = random_instance(instance_spec_for_seed(kind, seed))
            assert m.n_states <= 4 and m.n_actions <= 3
            if kind == "pomdp":
                assert m.n_obs <= 4


@pytest.mark.acceptance(7, "utility versus reward preference distributions")
@pytest.mark.parametrize("b", [0.0, 0.5, 3.0, -0.25])
def test_shift_utilities_equal(b):
    for u in (Linear(), Affine(1.0, b)):
        r = compare_preference_distributions(build_paraglider(), u)
        assert r.residual <= 1e-12
    for seed in range(1, 21):
        m = random_instance(instance_spec_for_seed("mdp", seed))
        assert compare_preference_distributions(m, Affine(1.0, b)).residual <= 1e-12


@pytest.mark.acceptance(7, "utility versus reward preference distributions")
@pytest.mark.parametrize("c", [0.5, 2.0])
def test_power_utilities_differ(c):
    r = compare_preference_distributions(build_paraglider(), Power(c))
    assert r.residual > 1e-12
    sets = r.details["divergence_optimal_sets"]
    assert len(sets) == build_paraglider().n_states
    print(f"power(c={c:g}) divergence optimal sets {sets}; agreement rate {r.details['agreement_rate']:g}")


@pytest.mark.acceptance(8, "verify output is byte-identical across runs")
@pytest.mark.parametrize("fmt", ["table", "csv", "json"])
def test_verify_determinism(fmt):
    cmd = [sys.executable, "-m", "agency_bridge", "verify", "all", "--seeds", "1..100", "--format", fmt]
    first = subprocess.run(cmd, capture_output=True, check=True).stdout
    second = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert first and first == second
