"""Random small MMDPs for property tests, oracle comparisons and sweeps."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from . import rng as _rng
from .mmdp import MmdpSpec, PolicySet, compile_mmdp
from .query import EffectQuery, ResponseSpec
from .scm import ScmModel, sample_prior

TOY = 8


@dataclass
class ToyModel:
    mmdp: MmdpSpec
    policies: PolicySet
    model: ScmModel


def _random_row(gen: np.random.Generator, size: int, grain: int, zero_prob: float) -> List[Fraction]:
    """A probability vector with denominator ``grain``; some entries may be exactly 0."""
    while True:
        mask = gen.random(size) >= zero_prob
        if not mask.any():
            mask[gen.integers(size)] = True
        weights = np.where(mask, gen.integers(1, grain, size=size), 0)
        total = int(weights.sum())
        if total:
            return [Fraction(int(w), total) for w in weights]


def random_toy(
    seed: int,
    n_agents: Optional[int] = None,
    n_states: Optional[int] = None,
    n_actions: Optional[int] = None,
    horizon: Optional[int] = None,
    zero_prob: float = 0.2,
    action_dependent: bool = True,
) -> ToyModel:
    """A random MMDP with integer-valued states (the state label is its value).

    Unspecified sizes are drawn from small ranges so the exact oracle stays
    cheap: 1 to 3 agents, 2 to 3 states, 2 to 3 actions, horizon 2 to 3.
    """
    gen = _rng.stream(seed, TOY)
    n = int(n_agents or gen.integers(1, 4))
    m = int(n_states or gen.integers(2, 4))
    k = int(n_actions or gen.integers(2, 4))
    h = int(horizon or gen.integers(2, 4))
    states = list(range(m))
    actions = [tuple(f"a{j}" for j in range(k)) for _ in range(n)]
    values = {s: float(v) for s, v in zip(states, gen.integers(-3, 6, size=m))}

    transition = {}
    base = {s: _random_row(gen, m, 6, zero_prob) for s in states}
    for s in states:
        for joint in itertools.product(*actions):
            row = _random_row(gen, m, 6, zero_prob) if action_dependent else base[s]
            transition[(s, joint)] = {s2: p for s2, p in zip(states, row) if p}
    policies = []
    for i in range(n):
        pol = {}
        for s in states:
            row = _random_row(gen, k, 5, zero_prob)
            pol[s] = {a: p for a, p in zip(actions[i], row) if p}
        policies.append(pol)
    init_row = _random_row(gen, m, 4, zero_prob)
    mmdp = MmdpSpec(
        n=n,
        action_spaces=actions,
        transition=transition,
        horizon=h,
        initial={s: p for s, p in zip(states, init_row) if p},
        states=states,
        state_value=values.__getitem__,
        name=f"toy-{seed}",
        metadata={"seed": seed, "state_values": {str(s): v for s, v in values.items()}},
    )
    pi = PolicySet(policies)
    return ToyModel(mmdp, pi, compile_mmdp(mmdp, pi))


def random_query(toy: ToyModel, seed: int, response: Optional[ResponseSpec] = None) -> EffectQuery:
    """Sample a factual trajectory from the prior and pick an alternative action in it."""
    model = toy.model
    _, tau = sample_prior(model, seed, index=1)
    gen = _rng.stream(seed, TOY, a=1)
    agent = int(gen.integers(1, model.n + 1))
    time = int(gen.integers(0, model.h))
    domain = model.action_domain(agent, time)
    others = [a for a in domain if a != tau.action(agent, time)]
    action = others[int(gen.integers(len(others)))] if others else domain[0]
    if response is None:
        response = ResponseSpec.state(model.h) if gen.random() < 0.5 else ResponseSpec.discounted_return(0.9, 0, model.h)
    return EffectQuery(tau, agent, time, action, response)


def random_case(seed: int, **kwargs) -> Tuple[ToyModel, EffectQuery]:
    toy = random_toy(seed, **kwargs)
    return toy, random_query(toy, seed)
