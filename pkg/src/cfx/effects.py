"""Monte Carlo estimators of counterfactual effects over shared posterior noise.

All estimators draw posterior sample ``i`` from the stream addressed by
``(seed, i)``, so any two estimates computed with the same seed see exactly
the same noise draws. That is what makes ``TCFE = tot-ASE - r-SSE`` hold per
sample and not only in expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import rng as _rng
from .errors import InputError
from .inference import (
    BranchPlan,
    BranchSpec,
    PosteriorMap,
    abduct,
    agent_specific_branch,
    intervention_branch,
    state_specific_branch,
)
from .parallel import map_indices
from .query import EffectQuery
from .scm import ScmModel

DEFAULT_SAMPLES = 100


@dataclass
class EffectEstimate:
    mean: float
    std_error: float
    n_samples: int
    per_sample: Optional[List[float]] = field(default=None, repr=False)
    note: str = ""

    @classmethod
    def from_samples(cls, values: Sequence[float], keep: bool = True, note: str = "") -> "EffectEstimate":
        vals = [float(x) for x in values]
        n = len(vals)
        if n == 0:
            return cls(0.0, 0.0, 0, [] if keep else None, note)
        mean = math.fsum(vals) / n
        if n > 1:
            var = math.fsum((x - mean) ** 2 for x in vals) / (n - 1)
            se = math.sqrt(var / n)
        else:
            se = 0.0
        return cls(mean, se, n, vals if keep else None, note)

    @classmethod
    def exact_zero(cls, note: str) -> "EffectEstimate":
        return cls(0.0, 0.0, 0, [], note)

    def to_dict(self, with_samples: bool = False) -> dict:
        out = {"mean": self.mean, "std_error": self.std_error, "n_samples": self.n_samples}
        if self.note:
            out["note"] = self.note
        if with_samples and self.per_sample is not None:
            out["per_sample"] = list(self.per_sample)
        return out


class BranchSampler:
    """Per-sample responses of a set of branches for one query."""

    def __init__(self, query: EffectQuery, specs: Sequence[BranchSpec], posterior: Optional[PosteriorMap] = None):
        self.query = query
        self.model = query.model
        self.plan = BranchPlan(self.model, specs)
        self.posterior = posterior if posterior is not None else abduct(self.model, query.tau)
        self.tau_values = query.tau.values

    def noise(self, seed: int, index: int) -> List[float]:
        unit = _rng.uniforms(seed, _rng.POSTERIOR, self.model.n_noise, c=index)
        return self.posterior.draw(unit).tolist()

    def responses_at(self, seed: int, index: int) -> Dict[str, float]:
        solved = self.plan.solve(self.noise(seed, index), self.tau_values)
        resp = self.query.response
        return {lbl: resp.evaluate_values(self.model, vals) for lbl, vals in solved.items()}

    def run(self, n_samples: int, seed: int, workers: int = 1) -> Dict[str, np.ndarray]:
        if n_samples < 1:
            raise InputError("need at least one posterior sample")
        rows = map_indices(_sampler_job, (self, seed), range(n_samples), workers)
        return {lbl: np.array([r[lbl] for r in rows]) for lbl in self.plan.labels}


def _sampler_job(payload, index):
    sampler, seed = payload
    return sampler.responses_at(seed, index)


def _check(model: ScmModel, query: EffectQuery) -> None:
    if model is not query.model and model.variables != query.model.variables:
        raise InputError("query trajectory belongs to a different model")


def _all_agents(model: ScmModel) -> frozenset:
    return frozenset(range(1, model.n + 1))


def _per_sample(query, specs, n_samples, seed, workers):
    return BranchSampler(query, specs).run(n_samples, seed, workers)


def tcfe(model: ScmModel, query: EffectQuery, n_samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1) -> EffectEstimate:
    """Total counterfactual effect ``E[Y_a | tau] - tau(Y)``."""
    _check(model, query)
    r = _per_sample(query, [intervention_branch(query.tau, query.agent, query.time, query.action)], n_samples, seed, workers)
    return EffectEstimate.from_samples(r["do"] - query.factual_response)


def ase_subset(
    model: ScmModel, query: EffectQuery, effect_agents: Iterable[int], n_samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1
) -> EffectEstimate:
    """Agent-specific effect through the agents in ``effect_agents``.

    Agents in the set replay their later actions from the ``do(a)`` world,
    the others keep their factual actions, and the intervened action itself
    stays natural. The empty set gives exactly 0: every variable then
    reproduces ``tau``.
    """
    _check(model, query)
    agents = frozenset(int(a) for a in effect_agents)
    if not agents <= _all_agents(model):
        raise InputError(f"effect agents must be a subset of 1..{model.n}")
    if not agents:
        return EffectEstimate.exact_zero("empty agent set: defined as 0 (factual reproduction)")
    specs = [
        intervention_branch(query.tau, query.agent, query.time, query.action),
        agent_specific_branch(query.tau, query.time, agents, "do", "I"),
    ]
    r = _per_sample(query, specs, n_samples, seed, workers)
    return EffectEstimate.from_samples(r["I"] - query.factual_response)


def tot_ase(model: ScmModel, query: EffectQuery, n_samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1) -> EffectEstimate:
    """Total agent-specific effect (every agent replays its ``do(a)`` actions)."""
    return ase_subset(model, query, _all_agents(model), n_samples, seed, workers)


def sse(model: ScmModel, query: EffectQuery, n_samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1) -> EffectEstimate:
    """State-specific effect: ``do(a)`` with every later action pinned to ``tau``."""
    _check(model, query)
    spec = state_specific_branch(query.tau, query.agent, query.time, query.action)
    r = _per_sample(query, [spec], n_samples, seed, workers)
    return EffectEstimate.from_samples(r["sse"] - query.factual_response)


def r_sse(model: ScmModel, query: EffectQuery, n_samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1) -> EffectEstimate:
    """Reverse state-specific effect ``E[Y_I - Y_a | tau]``."""
    _check(model, query)
    specs = [
        intervention_branch(query.tau, query.agent, query.time, query.action),
        agent_specific_branch(query.tau, query.time, _all_agents(model), "do", "I"),
    ]
    r = _per_sample(query, specs, n_samples, seed, workers)
    return EffectEstimate.from_samples(r["I"] - r["do"])


@dataclass
class ExplanationResult:
    tcfe: EffectEstimate
    tot_ase: EffectEstimate
    r_sse: EffectEstimate
    sse: EffectEstimate
    residual: float
    max_sample_residual: float

    @property
    def percentages(self) -> Dict[str, Optional[float]]:
        """Shares of TCFE carried by tot-ASE and by -r-SSE (they sum to 100)."""
        t = self.tcfe.mean
        if t == 0.0:
            return {"tot_ase": None, "neg_r_sse": None}
        return {"tot_ase": 100.0 * self.tot_ase.mean / t, "neg_r_sse": -100.0 * self.r_sse.mean / t}

    def to_dict(self, with_samples: bool = False) -> dict:
        return {
            "tcfe": self.tcfe.to_dict(with_samples),
            "tot_ase": self.tot_ase.to_dict(with_samples),
            "sse": self.sse.to_dict(with_samples),
            "r_sse": self.r_sse.to_dict(with_samples),
            "identity_residual": self.residual,
            "max_sample_residual": self.max_sample_residual,
            "percentages": self.percentages,
        }


def explanation_formula(
    model: ScmModel, query: EffectQuery, n_samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1
) -> ExplanationResult:
    """TCFE, tot-ASE, r-SSE (and SSE) on the same draws, with the identity residual.

    Per sample ``(y_a - tau(Y)) = (y_I - tau(Y)) - (y_I - y_a)``; the reported
    residual is ``|TCFE - (tot-ASE - r-SSE)|`` for the means.
    """
    _check(model, query)
    specs = [
        intervention_branch(query.tau, query.agent, query.time, query.action),
        agent_specific_branch(query.tau, query.time, _all_agents(model), "do", "I"),
        state_specific_branch(query.tau, query.agent, query.time, query.action),
    ]
    r = _per_sample(query, specs, n_samples, seed, workers)
    ref = query.factual_response
    d_tcfe = r["do"] - ref
    d_tot = r["I"] - ref
    d_rsse = r["I"] - r["do"]
    est_t = EffectEstimate.from_samples(d_tcfe)
    est_a = EffectEstimate.from_samples(d_tot)
    est_r = EffectEstimate.from_samples(d_rsse)
    est_s = EffectEstimate.from_samples(r["sse"] - ref)
    per = np.abs(d_tcfe - (d_tot - d_rsse))
    residual = abs(est_t.mean - (est_a.mean - est_r.mean))
    return ExplanationResult(est_t, est_a, est_r, est_s, residual, float(per.max()) if per.size else 0.0)
