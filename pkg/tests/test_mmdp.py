from fractions import Fraction

import pytest

from cfx.environments import sepsis as sp
from cfx.errors import InputError, ModelError
from cfx.mmdp import MmdpSpec, PolicySet, chi_square_check, compile_mmdp, consistency_check, induced_distribution
from cfx.scm import Cpd, ScmModel, VarId, sample_prior
from cfx.toy import random_toy
from conftest import chain_model


def test_single_state_model_is_constant():
    mmdp = MmdpSpec(1, [("only",)], {("s", ("only",)): {"s": 1}}, horizon=3, initial={"s": 1}, states=["s"])
    pi = PolicySet([{"s": {"only": 1}}])
    model = compile_mmdp(mmdp, pi)
    trajs = {sample_prior(model, seed)[1] for seed in range(5)}
    assert len(trajs) == 1


def test_chain_row_and_breakpoint():
    _, _, model = chain_model()
    cpd = model.mechanisms[VarId.state(1)]
    assert cpd.probabilities((0, "stay")) == (Fraction(3, 10), Fraction(7, 10))
    assert cpd.breakpoints((0, "stay"))[1] == pytest.approx(0.3, abs=1e-15)


def test_compiled_model_passes_consistency_exactly():
    mmdp, pi, model = chain_model()
    rep = consistency_check(model, mmdp, pi)
    assert rep.passed and rep.max_deviation == 0.0 and rep.rows_checked > 0


def test_perturbed_probability_fails_and_names_the_triplet():
    mmdp, pi, model = chain_model()
    bad = dict(mmdp.transition)
    bad[(1, ("go",))] = {0: Fraction(31, 100), 1: Fraction(69, 100)}
    other = MmdpSpec(1, mmdp.action_spaces, bad, mmdp.horizon, mmdp.initial, states=mmdp.states)
    rep = consistency_check(model, other, pi)
    assert not rep.passed
    assert rep.max_deviation == pytest.approx(0.01, abs=1e-12)
    kind, s, a, _ = rep.worst
    assert (kind, s, a) == ("transition", 1, ("go",))


def test_gridworld_consistency(grid):
    rep = consistency_check(grid.model, grid.mmdp, grid.policies)
    assert rep.passed


def test_sepsis_consistency():
    b = sp.build_sepsis(trust=0.5)
    rep = consistency_check(b.model, b.mmdp, b.policies)
    assert rep.passed and rep.rows_checked > 100


def test_policy_gap_is_reported():
    mmdp, _, _ = chain_model()
    pi = PolicySet([{0: {"stay": 1}}])  # nothing for state 1
    with pytest.raises(ModelError):
        compile_mmdp(mmdp, pi)


def test_dimension_mismatch():
    mmdp, pi, _ = chain_model()
    with pytest.raises(InputError):
        compile_mmdp(mmdp, PolicySet([pi.policies[0], pi.policies[0]]))


def test_ordering_override_keeps_law():
    mmdp, pi, _ = chain_model()
    model = compile_mmdp(mmdp, pi, orderings={"S": [1, 0], 1: ["go", "stay"]})
    assert model.mechanisms[VarId.state(1)].domain == (1, 0)
    assert induced_distribution(model.mechanisms[VarId.state(1)], (0, "go")) == pytest.approx({0: 0.3, 1: 0.7})
    assert consistency_check(model, mmdp, pi).passed


def test_chi_square_accepts_compiled_toy():
    toy = random_toy(5)
    rep = chi_square_check(toy.model, n_samples=100_000, seed=1, alpha=0.01)
    assert rep.passed and rep.rows_tested > 0


class _MisreportedCpd(Cpd):
    """Samples with the true breakpoints but reports a shifted table to the test."""

    def probabilities(self, pa):
        return (Fraction(2, 5), Fraction(3, 5))

    def breakpoints(self, pa):
        return (0.0, 0.5, 1.0)


def test_chi_square_rejects_wrong_table():
    _, _, model = chain_model(row=(Fraction(1, 2), Fraction(1, 2)))
    assert chi_square_check(model, n_samples=20_000, seed=0).passed
    lying = _MisreportedCpd([0, 1], lambda pa: [Fraction(1, 2), Fraction(1, 2)], name="S")
    mechs = {v: (lying if v.is_state and v.t > 0 else model.mechanisms[v]) for v in model.variables}
    rep = chi_square_check(ScmModel(1, model.h, mechs), n_samples=20_000, seed=0)
    assert not rep.passed and rep.failures
