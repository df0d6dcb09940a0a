from fractions import Fraction

import numpy as np
import pytest

from brute_oracle import enumerate_joint
from cfx.environments import replay as rp
from cfx.errors import AbductionError, InputError, OracleInfeasible
from cfx.effects import tcfe
from cfx.inference import (
    BranchPlan,
    BranchSpec,
    abduct,
    counterfactual_sample,
    intervention_branch,
    sample_posterior,
)
from cfx.mmdp import MmdpSpec, PolicySet, compile_mmdp
from cfx.oracle import exact_effects, exact_joint_distribution
from cfx.query import EffectQuery, ResponseSpec
from cfx.scm import Cpd, ScmModel, Trajectory, VarId, solve
from conftest import deterministic_model


def _single_state(cpd):
    model = ScmModel(1, 0, {VarId.state(0): cpd})
    return model


def test_deterministic_variable_gives_full_interval():
    _, _, model = deterministic_model()
    tau = solve(model, np.full(model.n_noise, 0.5))
    post = abduct(model, tau)
    assert np.all(post.lo == 0.0) and np.all(post.hi == 1.0)


def test_pink_observation_interval():
    model = _single_state(Cpd([-70, -50, -30], {(): ["1/3", "1/3", "1/3"]}))
    post = abduct(model, Trajectory(model, [-50]))
    lo, hi = post[VarId.state(0)]
    assert lo == pytest.approx(1 / 3, abs=1e-15) and hi == pytest.approx(2 / 3, abs=1e-15)


def test_green_observation_interval():
    model = _single_state(Cpd([-50, -40, -30], {(): ["0.3", "0.4", "0.3"]}))
    post = abduct(model, Trajectory(model, [-30]))
    lo, hi = post[VarId.state(0)]
    assert lo == pytest.approx(0.7, abs=1e-15) and hi == 1.0


def test_zero_probability_observation_names_variable():
    model = _single_state(Cpd(["a", "b"], {(): [1, 0]}))
    with pytest.raises(AbductionError, match="S0"):
        abduct(model, Trajectory(model, ["b"]))


def test_posterior_draw_with_full_intervals_is_a_plain_uniform():
    _, _, model = deterministic_model()
    post = abduct(model, solve(model, np.full(model.n_noise, 0.5)))
    u = np.linspace(0, 0.99, model.n_noise)
    assert np.array_equal(post.draw(u.copy()), u)


def test_posterior_draw_is_addressed_by_seed_and_index(grid, grid_tau):
    post = abduct(grid.model, grid_tau)
    a = sample_posterior(post, 7, 3).values
    b = sample_posterior(post, 7, 3).values
    c = sample_posterior(post, 7, 4).values
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.all(a >= post.lo) and np.all(a < post.hi)


def test_posterior_draws_reproduce_gridworld_trajectory(grid, grid_tau):
    post = abduct(grid.model, grid_tau)
    for index in range(20):
        assert solve(grid.model, sample_posterior(post, 0, index)) == grid_tau


def test_empty_branch_and_factual_action_reproduce_tau(grid, grid_tau):
    ref = grid_tau.action(2, 3)
    specs = [BranchSpec("plain"), intervention_branch(grid_tau, 2, 3, ref, "do")]
    for index in range(5):
        out = counterfactual_sample(grid.model, grid_tau, specs, 0, index)
        assert out["plain"] == grid_tau and out["do"] == grid_tau


def test_a2_intervention_follows_the_second_transcript(grid, grid_tau):
    other = rp.replay(rp.load_fixture(2), grid).trajectory
    model = grid.model
    spec = [intervention_branch(grid_tau, 2, 3, "pickup green", "do")]
    for index in range(25):
        cf = counterfactual_sample(model, grid_tau, spec, 1, index)["do"]
        for t in range(model.h):
            for i in range(1, model.n + 1):
                assert cf.action(i, t) == other.action(i, t)


def test_copy_cycles_rejected(grid):
    specs = [BranchSpec("x", copy_from="y"), BranchSpec("y", copy_from="x")]
    with pytest.raises(InputError, match="cycle"):
        BranchPlan(grid.model, specs)
    with pytest.raises(InputError):
        BranchPlan(grid.model, [BranchSpec("x", copy_from="missing")])


def _two_step_model():
    states, acts = [0, 1], ("x", "y")
    h = Fraction(1, 2)
    trans = {
        (0, ("x",)): {0: Fraction(1, 5), 1: Fraction(4, 5)},
        (0, ("y",)): {0: Fraction(3, 5), 1: Fraction(2, 5)},
        (1, ("x",)): {0: h, 1: h},
        (1, ("y",)): {0: Fraction(9, 10), 1: Fraction(1, 10)},
    }
    pi = PolicySet([{0: {"x": h, "y": h}, 1: {"y": 1}}])
    mmdp = MmdpSpec(1, [acts], trans, 2, {0: 1}, states=states, state_value=float)
    model = compile_mmdp(mmdp, pi)
    tau = Trajectory(model, [0, "x", 1, "y", 0])
    return model, tau


def test_two_step_hand_computed_counterfactual_law():
    model, tau = _two_step_model()
    # step-1 posterior (0.2, 1): under y, state 0 has mass 0.4 / 0.8 = 1/2.
    # From state 0 the policy is 50/50 and the step-2 posterior is (0, 0.9):
    # x leads to state 0 with 0.2 / 0.9, y with 0.6 / 0.9. From state 1 nothing changes.
    want0 = Fraction(1, 2) * (Fraction(1, 2) * Fraction(2, 9) + Fraction(1, 2) * Fraction(2, 3)) + Fraction(1, 2)
    assert want0 == Fraction(13, 18)
    res = exact_joint_distribution(model, tau, [BranchSpec("do", {VarId.action(1, 0): "y"})], ResponseSpec.state(2))
    assert res.marginal("do") == pytest.approx({0.0: float(want0), 1.0: float(1 - want0)}, abs=1e-12)
    q = EffectQuery(tau, 1, 0, "y", ResponseSpec.state(2))
    assert exact_effects(q)["tcfe"] == pytest.approx(5 / 18, abs=1e-12)
    est = tcfe(model, q, n_samples=2000, seed=3)
    assert abs(est.mean - 5 / 18) <= 3 * est.std_error


def test_factual_branch_is_point_mass(grid, grid_tau):
    resp = grid.responses["return"]
    res = exact_joint_distribution(grid.model, grid_tau, [BranchSpec("factual")], resp)
    (value, p), = res.marginal("factual").items()
    assert value == pytest.approx(resp.evaluate(grid_tau), abs=1e-9) and p == pytest.approx(1.0, abs=1e-12)


def test_oracle_matches_brute_force_on_gridworld(grid, grid_queries):
    from brute_oracle import brute_effects

    for q in grid_queries.values():
        dp = exact_effects(q)
        bf = brute_effects(q)
        for key in bf:
            assert dp[key] == pytest.approx(bf[key], abs=1e-9)


def test_oracle_cap_raises(grid_queries):
    with pytest.raises(OracleInfeasible):
        exact_effects(grid_queries["a2_pickup_green"], cap=2)


def test_gridworld_mc_tcfe_within_three_errors(grid, grid_queries):
    q = grid_queries["a2_pickup_green"]
    exact = exact_effects(q)["tcfe"]
    est = tcfe(grid.model, q, n_samples=100, seed=0)
    assert abs(est.mean - exact) <= 3 * est.std_error


def test_branch_marginals_agree_with_brute_force_joint():
    model, tau = _two_step_model()
    specs = [BranchSpec("do", {VarId.action(1, 0): "y"}), BranchSpec("keep")]
    joint = enumerate_joint(model, tau, specs, ResponseSpec.state(2))
    p0 = sum(p for key, p in joint.items() if key[0] == 0.0)
    assert p0 == pytest.approx(13 / 18, abs=1e-12)
