"""Property-based checks of the structural, inference, effect and attribution invariants."""

import itertools
import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from brute_oracle import brute_effects
from cfx.attribution import exact_shapley, gini, r_sse_icc, sampled_shapley
from cfx.effects import explanation_formula, r_sse, sse, tcfe, tot_ase
from cfx.environments import sepsis as sp
from cfx.inference import BranchSpec, abduct, counterfactual_sample, intervention_branch, sample_posterior
from cfx.oracle import exact_effects, exact_joint_distribution, standard_branches
from cfx.query import EffectQuery
from cfx.scm import VarId, check_measure, check_noise_monotonicity, sample_prior, solve
from cfx.toy import random_case, random_toy

seeds = st.integers(min_value=0, max_value=2**31 - 1)


@given(seeds)
def test_compiled_models_are_monotone_and_measure_exact(seed):
    model = random_toy(seed).model
    assert check_noise_monotonicity(model, grid_resolution=16).passed
    assert check_measure(model).max_deviation <= 1e-12


@given(seeds, seeds)
def test_solve_is_idempotent(seed, draw):
    model = random_toy(seed).model
    u, _ = sample_prior(model, draw)
    assert solve(model, u) == solve(model, u)


@given(seeds, seeds, st.data())
def test_interventions_only_touch_descendants(seed, draw, data):
    model = random_toy(seed).model
    u, base = sample_prior(model, draw)
    agent = data.draw(st.integers(1, model.n))
    t = data.draw(st.integers(0, model.h - 1))
    action = data.draw(st.sampled_from(model.action_domain(agent, t)))
    target = VarId.action(agent, t)
    alt = solve(model, u, {target: action})
    allowed = {target} | model.descendants(target)
    assert set(base.differing(alt)) <= allowed


@given(seeds, seeds, st.integers(0, 1000))
def test_posterior_draws_reproduce_the_trajectory(seed, draw, index):
    model = random_toy(seed).model
    _, tau = sample_prior(model, draw)
    post = abduct(model, tau)
    assert solve(model, sample_posterior(post, draw, index)) == tau


@given(seeds, st.integers(0, 50))
def test_branches_share_one_noise_draw(seed, index):
    toy, q = random_case(seed)
    model, tau = toy.model, q.tau
    specs = [BranchSpec("plain"), intervention_branch(tau, q.agent, q.time, q.action, "do")]
    out = counterfactual_sample(model, tau, specs, 3, index)
    u = sample_posterior(abduct(model, tau), 3, index)
    assert out["plain"] == tau
    assert out["do"] == solve(model, u, {q.target: q.action})


@given(seeds, st.integers(0, 10**6))
def test_identity_holds_per_sample(seed, run_seed):
    toy, q = random_case(seed)
    res = explanation_formula(toy.model, q, n_samples=25, seed=run_seed)
    assert res.max_sample_residual <= 1e-9 and res.residual <= 1e-9


@given(seeds)
def test_factual_action_is_null_for_every_estimator(seed):
    toy, q = random_case(seed)
    null = EffectQuery(q.tau, q.agent, q.time, q.reference, q.response)
    for fn in (tcfe, tot_ase, sse, r_sse):
        est = fn(toy.model, null, n_samples=10, seed=0)
        assert est.mean == 0.0 and est.std_error == 0.0


@given(seeds, st.integers(0, 10**6))
def test_estimates_depend_only_on_seed(seed, run_seed):
    toy, q = random_case(seed)
    a = explanation_formula(toy.model, q, n_samples=15, seed=run_seed)
    b = explanation_formula(toy.model, q, n_samples=15, seed=run_seed)
    assert a.to_dict(with_samples=True) == b.to_dict(with_samples=True)


@given(seeds)
def test_layered_oracle_agrees_with_enumeration(seed):
    _, q = random_case(seed)
    dp, bf = exact_effects(q), brute_effects(q)
    for key in bf:
        assert dp[key] == pytest.approx(bf[key], abs=1e-9)


@given(seeds)
def test_joint_marginals_match_single_branch_laws(seed):
    toy, q = random_case(seed)
    specs = standard_branches(q)
    joint = exact_joint_distribution(toy.model, q.tau, specs, q.response)
    for spec in specs:
        alone = exact_joint_distribution(toy.model, q.tau, [spec] if spec.copy_from is None else
                                         [s for s in specs if s.label in (spec.label, spec.copy_from)], q.response)
        want, got = alone.marginal(spec.label), joint.marginal(spec.label)
        assert set(want) == set(got)
        for k in want:
            assert got[k] == pytest.approx(want[k], abs=1e-12)


def _game(values):
    def v(s):
        return values[frozenset(s)]

    return v


@st.composite
def games(draw, n_min=1, n_max=5):
    n = draw(st.integers(n_min, n_max))
    table = {frozenset(): 0.0}
    for size in range(1, n + 1):
        for c in itertools.combinations(range(1, n + 1), size):
            table[frozenset(c)] = draw(st.floats(-100, 100, allow_nan=False))
    return n, table


@given(games())
def test_exact_shapley_is_efficient(game):
    n, table = game
    phi = exact_shapley(n, _game(table))
    assert math.fsum(phi.values()) == pytest.approx(table[frozenset(range(1, n + 1))], abs=1e-9)


@given(games(), st.integers(1, 30), seeds)
def test_sampled_shapley_is_efficient(game, budget, seed):
    n, table = game
    res = sampled_shapley(n, _game(table), budget, seed)
    assert math.fsum(res.phi.values()) == pytest.approx(table[frozenset(range(1, n + 1))], abs=1e-9)


@given(games(n_min=1, n_max=4), st.floats(-50, 50, allow_nan=False))
def test_symmetric_players_share_equally(game, bonus):
    # add players 5 and 6 that are interchangeable: value depends on how many of them are present
    n, table = game
    base = _game(table)

    def v(s):
        rest = frozenset(j for j in s if j <= n)
        k = len(s & {n + 1, n + 2})
        return base(rest) + bonus * k + 0.5 * k * len(rest)

    phi = exact_shapley(n + 2, v)
    assert phi[n + 1] == pytest.approx(phi[n + 2], abs=1e-9)


@given(games(n_min=1, n_max=4))
def test_dummy_player_gets_nothing(game):
    n, table = game
    base = _game(table)
    phi = exact_shapley(n + 1, lambda s: base(frozenset(j for j in s if j <= n)))
    assert abs(phi[n + 1]) <= 1e-9


@given(st.lists(st.floats(0, 1e6, allow_nan=False), max_size=30))
def test_gini_lies_in_unit_interval(values):
    g = gini(values)
    assert -1e-12 <= g <= 1.0


@given(seeds, st.integers(0, 1000))
def test_icc_telescopes_and_stays_local(seed, run_seed):
    toy, q = random_case(seed, horizon=3)
    rep = r_sse_icc(toy.model, q, h1=6, h2=3, seed=run_seed, n_samples=20)
    t, t_y = q.time, q.response.t_y
    assert all(v == 0.0 for k, v in rep.psi.items() if k <= t)
    assert all(v >= 0.0 for v in rep.icc.values())
    if rep.var_delta > 1e-12 and any(v > 0 for v in rep.icc.values()):
        assert math.fsum(rep.psi.values()) == pytest.approx(rep.r_sse, abs=1e-9)
        raw = math.fsum(rep.icc_raw.values())
        assert raw == pytest.approx(rep.unc[t + 1] - rep.unc.get(t_y + 1, 0.0), abs=1e-9)


vitals = st.tuples(*(st.integers(0, 2) for _ in range(4)))


@given(vitals, st.sampled_from(sp.TREATMENTS))
def test_override_probability_falls_with_trust(vs, rec):
    sims = [sp.build_sepsis(trust=mu).sim for mu in (0.0, 0.25, 0.5, 0.75, 1.0)]
    status = sims[0].status_of(vs)
    assume(status == sp.ALIVE)
    s = sp.Patient(vs, status, rec)
    probs = [sim.override_probability(s) for sim in sims]
    assert all(a >= b for a, b in zip(probs, probs[1:]))
    assert probs[-1] == 0
