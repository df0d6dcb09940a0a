"""Exact counterfactual laws for small models.

All branches share one uniform per noise channel, restricted to its posterior
interval. Within that interval the breakpoints of every branch's CDF cut the
interval into pieces; on each piece every branch produces a fixed category,
so the joint law of the branches is the piece widths divided by the interval
width (the comonotone coupling). Running this layer by layer in causal order
gives the joint law of the branch responses exactly, up to float rounding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from .errors import OracleInfeasible
from .inference import BranchPlan, BranchSpec, abduct, agent_specific_branch, intervention_branch, state_specific_branch
from .query import EffectQuery, ResponseSpec
from .scm import Label, ScmModel, Trajectory, locate

DEFAULT_CAP = 1_000_000

# DP key per branch: (current state label, actions chosen so far at this time, accumulated response)
BranchKey = Tuple[Label, Tuple[Label, ...], float]


def _pieces(lo: float, hi: float, breaks_per_branch: Sequence[Sequence[float]]):
    """Yield ``(weight, [index per branch])`` for the partition of ``(lo, hi)``."""
    pts = {lo, hi}
    for brks in breaks_per_branch:
        for b in brks:
            if lo < b < hi:
                pts.add(b)
    pts = sorted(pts)
    width = hi - lo
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        mid = a + (b - a) / 2.0
        yield (b - a) / width, [locate(brks, mid) for brks in breaks_per_branch]


@dataclass
class OracleResult:
    labels: List[str]
    joint: Dict[Tuple[float, ...], float]
    layer_sizes: List[int]

    def marginal(self, label: str) -> Dict[float, float]:
        k = self.labels.index(label)
        out: Dict[float, float] = {}
        for vals, p in self.joint.items():
            out[vals[k]] = out.get(vals[k], 0.0) + p
        return out

    def expectation(self, fn) -> float:
        """``E[fn(dict label -> response)]`` under the joint law."""
        return math.fsum(p * fn(dict(zip(self.labels, vals))) for vals, p in self.joint.items())

    def mean(self, label: str) -> float:
        k = self.labels.index(label)
        return math.fsum(p * vals[k] for vals, p in self.joint.items())


class _Engine:
    def __init__(self, model: ScmModel, tau: Trajectory, specs: Sequence[BranchSpec], response: ResponseSpec, cap: int):
        self.model = model
        self.tau = tau
        self.plan = BranchPlan(model, specs)
        self.post = abduct(model, tau)
        self.response = response
        self.cap = int(cap)
        nb = len(self.plan.specs)
        self.nb = nb
        # per branch: causal index -> ("hard", label) | ("copy", source branch position)
        self.rule: List[Dict[int, tuple]] = []
        for b in range(nb):
            r = {k: ("hard", lab) for k, lab in self.plan.fixed[b].items()}
            src, copy_idx = self.plan.copies[b]
            for k in copy_idx:
                r[k] = ("copy", src)
            self.rule.append(r)

    def initial(self) -> Dict[Tuple[BranchKey, ...], float]:
        return {tuple((None, (), 0.0) for _ in range(self.nb)): 1.0}

    def step(self, dist, k: int, record: bool = False):
        """Push the joint law through causal index ``k``."""
        model = self.model
        v = model.variables[k]
        mech = model._mech[k]
        o = model._offsets[k]
        nch = model._nch[k]
        lo = self.post.lo[o : o + nch]
        hi = self.post.hi[o : o + nch]
        weight_k = self.response.weight(v.t) if v.is_state else 0.0
        new: Dict[tuple, float] = {}
        trans: Dict[tuple, List[Tuple[tuple, float]]] = {} if record else None
        for key, p in dist.items():
            pas = []
            for b in range(self.nb):
                s, acts, _ = key[b]
                if v.is_state:
                    pas.append(() if v.t == 0 else (s,) + acts)
                else:
                    pas.append((s,))
            natural = [b for b in range(self.nb) if k not in self.rule[b]]
            per_channel = []
            for c in range(nch):
                brks = [mech.channel_breakpoints(pas[b])[c] for b in natural]
                per_channel.append(list(_pieces(float(lo[c]), float(hi[c]), brks)))
            outs = trans.setdefault(key, []) if record else None
            for combo in itertools.product(*per_channel):
                w = p
                for wc, _ in combo:
                    w *= wc
                if w == 0.0:
                    continue
                labels: List[Label] = [None] * self.nb
                for pos, b in enumerate(natural):
                    labels[b] = mech.compose(pas[b], tuple(idx[pos] for _, idx in combo))
                for b in range(self.nb):
                    r = self.rule[b].get(k)
                    if r is not None:
                        labels[b] = r[1] if r[0] == "hard" else labels[r[1]]
                nk = []
                for b in range(self.nb):
                    s, acts, acc = key[b]
                    if v.is_state:
                        if weight_k:
                            acc = acc + weight_k * model.state_value(labels[b])
                        nk.append((labels[b], (), acc))
                    else:
                        nk.append((s, acts + (labels[b],), acc))
                nk = tuple(nk)
                new[nk] = new.get(nk, 0.0) + w
                if record:
                    outs.append((nk, w / p))
            if len(new) > self.cap:
                raise OracleInfeasible(f"joint support exceeded the cap of {self.cap} at {v}")
        return new, trans

    def run(self, record: bool = False):
        dist = self.initial()
        layers = [dist]
        transitions = []
        for k in range(len(self.model.variables)):
            dist, tr = self.step(dist, k, record)
            layers.append(dist)
            transitions.append(tr)
        return layers, transitions


def exact_joint_distribution(
    model: ScmModel,
    tau: Trajectory,
    branch_specs: Sequence[BranchSpec],
    response: ResponseSpec,
    cap: int = DEFAULT_CAP,
) -> OracleResult:
    """Exact joint law of the response across counterfactual branches sharing the posterior noise."""
    eng = _Engine(model, tau, branch_specs, response, cap)
    layers, _ = eng.run()
    final = layers[-1]
    joint: Dict[Tuple[float, ...], float] = {}
    order = [spec.label for spec in eng.plan.specs]
    for key, p in final.items():
        vals = {order[b]: key[b][2] for b in range(eng.nb)}
        tup = tuple(vals[lbl] for lbl in eng.plan.labels)
        joint[tup] = joint.get(tup, 0.0) + p
    return OracleResult(list(eng.plan.labels), joint, [len(x) for x in layers])


def standard_branches(query: EffectQuery) -> List[BranchSpec]:
    tau = query.tau
    return [
        BranchSpec("factual"),
        intervention_branch(tau, query.agent, query.time, query.action, "do"),
        agent_specific_branch(tau, query.time, range(1, tau.model.n + 1), "do", "I"),
        state_specific_branch(tau, query.agent, query.time, query.action, "sse"),
    ]


def exact_effects(query: EffectQuery, cap: int = DEFAULT_CAP, subsets: Sequence[Sequence[int]] = ()) -> Dict[str, float]:
    """Exact TCFE, tot-ASE, SSE, r-SSE (and ASE for the given agent subsets)."""
    tau = query.tau
    specs = standard_branches(query)
    names = {}
    for sub in subsets:
        spec = agent_specific_branch(tau, query.time, sub, "do")
        if spec.label not in {s.label for s in specs}:
            specs.append(spec)
        names[tuple(sorted(sub))] = spec.label
    res = exact_joint_distribution(query.model, tau, specs, query.response, cap)
    ref = query.factual_response
    out = {
        "tcfe": res.mean("do") - ref,
        "tot_ase": res.mean("I") - ref,
        "sse": res.mean("sse") - ref,
        "r_sse": res.expectation(lambda r: r["I"] - r["do"]),
    }
    for sub, lbl in names.items():
        out["ase" + str(list(sub))] = 0.0 if not sub else res.mean(lbl) - ref
    return out


def exact_conditional_variances(query: EffectQuery, cap: int = DEFAULT_CAP) -> Dict[str, object]:
    """Exact ``E[Var(dY | tau, U^{<S_k})]`` for ``k = t+1 .. t_Y`` where ``dY = Y_I - Y_do``.

    ``unc[k]`` conditions on all noise before ``S_k`` in causal order, so
    ``unc[t_Y + 1]`` (conditioning on everything up to the actions at ``t_Y``)
    is zero. Returned keys: ``unc`` (dict k -> value), ``variance`` and
    ``mean`` of ``dY``.
    """
    model, tau = query.model, query.tau
    specs = [
        intervention_branch(tau, query.agent, query.time, query.action, "do"),
        agent_specific_branch(tau, query.time, range(1, model.n + 1), "do", "I"),
    ]
    eng = _Engine(model, tau, specs, query.response, cap)
    layers, transitions = eng.run(record=True)
    order = [s.label for s in eng.plan.specs]
    i_pos, d_pos = order.index("I"), order.index("do")

    # backward pass: g[L][key] = E[dY | key at layer L]
    g = {key: key[i_pos][2] - key[d_pos][2] for key in layers[-1]}
    conditional: Dict[int, Dict[tuple, float]] = {len(layers) - 1: g}
    for L in range(len(transitions) - 1, -1, -1):
        tr = transitions[L]
        prev = {}
        for key, outs in tr.items():
            prev[key] = math.fsum(w * g[nk] for nk, w in outs)
        g = prev
        conditional[L] = g

    final = layers[-1]
    e1 = math.fsum(p * (key[i_pos][2] - key[d_pos][2]) for key, p in final.items())
    e2 = math.fsum(p * (key[i_pos][2] - key[d_pos][2]) ** 2 for key, p in final.items())
    unc = {}
    t_y = query.response.t_y
    for k in range(query.time + 1, t_y + 2):
        # layer index L holds the law after causal indices < L; S_k has index k*(n+1)
        L = min(k * (model.n + 1), len(layers) - 1)
        gk = conditional[L]
        second = math.fsum(p * gk[key] ** 2 for key, p in layers[L].items())
        unc[k] = max(e2 - second, 0.0) if k <= t_y else 0.0
        if k > t_y:
            unc[k] = 0.0
    return {"unc": unc, "variance": max(e2 - e1 * e1, 0.0), "mean": e1}
