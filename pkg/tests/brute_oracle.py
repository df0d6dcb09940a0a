"""Exact counterfactual expectations by depth-first enumeration of noise pieces.

Independent of the layered dynamic program in ``cfx.oracle``: every
variable splits each noise channel's posterior interval at the breakpoints
seen by all branches, and every combination of pieces becomes its own path.
Exponential, so only for small models or one-off freezing of constants.
"""

from __future__ import annotations

import itertools
import math
from typing import Dict, List, Sequence, Tuple

from cfx.inference import BranchSpec, abduct
from cfx.query import EffectQuery, ResponseSpec
from cfx.scm import ScmModel, Trajectory, VarId


def _forced(model: ScmModel, spec: BranchSpec, var: VarId):
    """('hard', label), ('copy', source) or None for one branch at one variable."""
    if var in spec.hard:
        return ("hard", spec.hard[var])
    if spec.copy_from is not None and var.is_action and var.t > spec.copy_after:
        if spec.copy_agents is None or var.agent in spec.copy_agents:
            return ("copy", spec.copy_from)
    return None


def _pieces(lo: float, hi: float, cuts) -> List[Tuple[float, float]]:
    pts = sorted({lo, hi, *(c for c in cuts if lo < c < hi)})
    return [(a, b) for a, b in zip(pts, pts[1:]) if b > a]


def enumerate_joint(
    model: ScmModel, tau: Trajectory, specs: Sequence[BranchSpec], response: ResponseSpec
) -> Dict[Tuple[float, ...], float]:
    post = abduct(model, tau)
    labels = [s.label for s in specs]
    by_label = {s.label: s for s in specs}
    variables = model.variables
    joint: Dict[Tuple[float, ...], float] = {}

    def visit(k: int, vals: Dict[str, list], weight: float):
        if k == len(variables):
            key = tuple(response.evaluate_values(model, vals[lbl]) for lbl in labels)
            joint[key] = joint.get(key, 0.0) + weight
            return
        var = variables[k]
        mech = model.mechanisms[var]
        parents = model.parents(var)
        idx = {p: model.index[p] for p in parents}
        free = []
        for lbl in labels:
            if _forced(model, by_label[lbl], var) is None:
                free.append(lbl)
        pas = {lbl: tuple(vals[lbl][idx[p]] for p in parents) for lbl in free}
        sl = model.noise_slice(var)
        lo = post.lo[sl].tolist()
        hi = post.hi[sl].tolist()
        channel_pieces = []
        for c in range(len(lo)):
            cuts = set()
            for lbl in free:
                cuts.update(mech.channel_breakpoints(pas[lbl])[c])
            channel_pieces.append(_pieces(lo[c], hi[c], cuts))
        for combo in itertools.product(*channel_pieces):
            w = math.prod((b - a) / (h - l) for (a, b), l, h in zip(combo, lo, hi))
            u = [(a + b) / 2 for a, b in combo]
            new = {lbl: vals[lbl] + [None] for lbl in labels}
            pending = list(labels)
            while pending:
                rest = []
                for lbl in pending:
                    f = _forced(model, by_label[lbl], var)
                    if f is None:
                        new[lbl][k] = mech.evaluate(pas[lbl], u)
                    elif f[0] == "hard":
                        new[lbl][k] = f[1]
                    elif new[f[1]][k] is not None:
                        new[lbl][k] = new[f[1]][k]
                    else:
                        rest.append(lbl)
                pending = rest
            visit(k + 1, new, weight * w)

    visit(0, {lbl: [] for lbl in labels}, 1.0)
    return joint


def brute_effects(query: EffectQuery) -> Dict[str, float]:
    """TCFE, tot-ASE, SSE and r-SSE computed from the enumerated joint law."""
    from cfx.oracle import standard_branches

    specs = standard_branches(query)
    joint = enumerate_joint(query.model, query.tau, specs, query.response)
    pos = {s.label: j for j, s in enumerate(specs)}
    ref = query.factual_response

    def mean(fn):
        return math.fsum(p * fn(key) for key, p in joint.items())

    return {
        "tcfe": mean(lambda r: r[pos["do"]]) - ref,
        "tot_ase": mean(lambda r: r[pos["I"]]) - ref,
        "sse": mean(lambda r: r[pos["sse"]]) - ref,
        "r_sse": mean(lambda r: r[pos["I"]] - r[pos["do"]]),
    }
