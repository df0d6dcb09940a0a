"""Abduction, posterior noise sampling and multi-branch counterfactual solving."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import rng as _rng
from .errors import AbductionError, InputError
from .scm import Label, NoiseVector, ScmModel, Trajectory, VarId, solve_values


@dataclass(frozen=True)
class PosteriorMap:
    """Posterior of the noise given a trajectory: one interval per noise channel.

    ``lo`` and ``hi`` are laid out like the model's noise vector. The posterior
    is the product of uniforms on these intervals.
    """

    model: ScmModel = field(repr=False, compare=False)
    lo: np.ndarray
    hi: np.ndarray

    def __getitem__(self, v: VarId):
        sl = self.model.noise_slice(v)
        pairs = tuple(zip(self.lo[sl].tolist(), self.hi[sl].tolist()))
        return pairs[0] if len(pairs) == 1 else pairs

    @property
    def intervals(self) -> Dict[VarId, tuple]:
        return {v: self[v] for v in self.model.variables}

    def draw(self, unit: np.ndarray) -> np.ndarray:
        """Map unit uniforms onto the posterior intervals, keeping each value strictly below ``hi``."""
        u = self.lo + unit * (self.hi - self.lo)
        over = u >= self.hi
        if over.any():
            u[over] = np.nextafter(self.hi[over], 0.0)
        return u


def abduct(model: ScmModel, tau: Trajectory) -> PosteriorMap:
    """Invert every mechanism at the observed labels.

    For a variable observed at ``domain[j]`` with parents ``pa`` the interval is
    ``(c_{j-1}(pa), c_j(pa))``; a zero-width interval means the trajectory is
    impossible under the model.
    """
    if tau.model is not model and tau.model.variables != model.variables:
        raise InputError("trajectory belongs to a different model")
    lo = np.zeros(model.n_noise)
    hi = np.ones(model.n_noise)
    vals = tau.values
    for k, v in enumerate(model.variables):
        mech = model._mech[k]
        pa = tuple(vals[p] for p in model._parents[k])
        try:
            idx = mech.decompose(pa, vals[k])
        except (InputError, KeyError, ValueError) as exc:
            raise AbductionError(f"{v}: observed value {vals[k]!r} cannot be produced ({exc})") from None
        brks = mech.channel_breakpoints(pa)
        o = model._offsets[k]
        for c, j in enumerate(idx):
            a, b = brks[c][j], brks[c][j + 1]
            if not b > a:
                raise AbductionError(f"{v}: observed value {vals[k]!r} has zero probability given its parents")
            lo[o + c], hi[o + c] = a, b
    return PosteriorMap(model, lo, hi)


def sample_posterior(posterior: PosteriorMap, rng_seed: int, index: int) -> NoiseVector:
    """Posterior noise draw addressed by ``(seed, index)``; coordinates are independent."""
    unit = _rng.uniforms(rng_seed, _rng.POSTERIOR, posterior.model.n_noise, c=index)
    return NoiseVector(posterior.model, posterior.draw(unit))


@dataclass(frozen=True)
class BranchSpec:
    """One counterfactual world sharing the posterior noise with all others.

    ``hard`` pins action variables. When ``copy_from`` names another branch,
    actions at times strictly after ``copy_after`` are taken from that branch's
    solution, restricted to ``copy_agents`` (all agents when ``None``). Hard
    pins win over copies.
    """

    label: str
    hard: Mapping[VarId, Label] = field(default_factory=dict)
    copy_from: Optional[str] = None
    copy_after: int = -1
    copy_agents: Optional[FrozenSet[int]] = None


class BranchPlan:
    """Branch specs resolved against a model: copy order checked, indices precomputed."""

    def __init__(self, model: ScmModel, specs: Sequence[BranchSpec]):
        self.model = model
        labels = [s.label for s in specs]
        if len(set(labels)) != len(labels):
            raise InputError("branch labels must be unique")
        by_label = {s.label: s for s in specs}
        order: List[str] = []
        state: Dict[str, int] = {}

        def visit(lbl: str, chain: Tuple[str, ...]):
            if state.get(lbl) == 2:
                return
            if state.get(lbl) == 1:
                raise InputError(f"copy references form a cycle: {' -> '.join(chain + (lbl,))}")
            spec = by_label.get(lbl)
            if spec is None:
                raise InputError(f"branch {chain[-1] if chain else '?'} copies from unknown branch {lbl!r}")
            state[lbl] = 1
            if spec.copy_from is not None:
                visit(spec.copy_from, chain + (lbl,))
            state[lbl] = 2
            order.append(lbl)

        for s in specs:
            visit(s.label, ())
        self.specs = [by_label[lbl] for lbl in order]
        self.labels = labels
        self.position = {lbl: k for k, lbl in enumerate(order)}

        self.fixed: List[Dict[int, Label]] = []
        self.copies: List[Tuple[Optional[int], List[int]]] = []
        self.starts: List[int] = []
        for spec in self.specs:
            fixed = {}
            for v, lab in spec.hard.items():
                if v not in model.index or not v.is_action:
                    raise InputError(f"branch {spec.label}: {v} is not an action variable")
                if lab not in model.mechanisms[v].domain:
                    raise InputError(f"branch {spec.label}: {lab!r} is not a value of {v}")
                fixed[model.index[v]] = lab
            copy_idx: List[int] = []
            src = None
            if spec.copy_from is not None:
                if not -1 <= spec.copy_after < model.h:
                    raise InputError(f"branch {spec.label}: copy threshold outside the horizon")
                src = self.position[spec.copy_from]
                agents = spec.copy_agents if spec.copy_agents is not None else range(1, model.n + 1)
                for t in range(spec.copy_after + 1, model.h):
                    for i in sorted(agents):
                        k = model.index[VarId.action(i, t)]
                        if k not in fixed:
                            copy_idx.append(k)
            self.fixed.append(fixed)
            self.copies.append((src, copy_idx))
            starts = list(fixed) + copy_idx
            self.starts.append(min(starts) if starts else len(model.variables))

    def solve(
        self,
        u: Sequence[float],
        tau_values: Sequence[Label],
        resume_at: int = 0,
        previous: Optional[Mapping[str, Sequence[Label]]] = None,
    ) -> Dict[str, List[Label]]:
        """Solve every branch for one posterior noise draw ``u`` (a list of floats).

        Everything before a branch's first forced variable equals ``tau``
        because ``u`` lies in the posterior, so solving starts there. With
        ``previous`` (an earlier solution for noise that agrees with ``u`` on
        all variables before causal index ``resume_at``) solving restarts at
        ``resume_at``.
        """
        out: List[List[Label]] = []
        nvars = len(tau_values)
        for k, spec in enumerate(self.specs):
            fixed = self.fixed[k]
            src, copy_idx = self.copies[k]
            if copy_idx:
                fixed = dict(fixed)
                src_vals = out[src]
                for j in copy_idx:
                    fixed[j] = src_vals[j]
            start, prefix = self.starts[k], tau_values
            if previous is not None and resume_at > start:
                start, prefix = resume_at, previous[spec.label]
            if start >= nvars:
                out.append(list(prefix))
            else:
                out.append(solve_values(self.model, u, fixed, prefix=prefix, start=start))
        return {spec.label: vals for spec, vals in zip(self.specs, out)}


def counterfactual_sample(
    model: ScmModel,
    tau: Trajectory,
    branch_specs: Sequence[BranchSpec],
    rng_seed: int,
    index: int,
    posterior: Optional[PosteriorMap] = None,
) -> Dict[str, Trajectory]:
    """Abduction-action-prediction for one posterior draw shared by all branches."""
    posterior = posterior if posterior is not None else abduct(model, tau)
    plan = BranchPlan(model, branch_specs)
    u = sample_posterior(posterior, rng_seed, index)
    solved = plan.solve(u.values.tolist(), tau.values)
    return {lbl: Trajectory(model, solved[lbl]) for lbl in plan.labels}


def intervention_branch(tau: Trajectory, agent: int, time: int, action: Label, label: str = "do") -> BranchSpec:
    return BranchSpec(label, {VarId.action(agent, time): action})


def agent_specific_branch(
    tau: Trajectory, time: int, effect_agents, source: str = "do", label: Optional[str] = None
) -> BranchSpec:
    """Natural-intervention branch: agents in ``effect_agents`` copy the source's later actions, the rest keep ``tau``'s."""
    model = tau.model
    effect_agents = frozenset(int(a) for a in effect_agents)
    pinned = {
        VarId.action(j, t): tau.action(j, t)
        for t in range(time + 1, model.h)
        for j in range(1, model.n + 1)
        if j not in effect_agents
    }
    name = label or "I[" + ",".join(str(a) for a in sorted(effect_agents)) + "]"
    return BranchSpec(name, pinned, copy_from=source, copy_after=time, copy_agents=effect_agents)


def state_specific_branch(tau: Trajectory, agent: int, time: int, action: Label, label: str = "sse") -> BranchSpec:
    """``do(a)`` with every later action pinned to its factual value."""
    model = tau.model
    hard = {VarId.action(j, t): tau.action(j, t) for t in range(time + 1, model.h) for j in range(1, model.n + 1)}
    hard[VarId.action(agent, time)] = action
    return BranchSpec(label, hard)
