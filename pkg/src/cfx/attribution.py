"""Attribution of the agent-mediated and state-mediated parts of an effect.

Agents: Shapley values of the characteristic ``v(N) = ASE^N`` (exact over all
subsets, or by sampled permutations with memoized ``v``).

States: intrinsic causal contributions. ``unc[k]`` is the expected residual
variance of ``dY = Y_I - Y_a`` once every noise term before ``S_k`` is known;
the contribution of ``S_k`` is the drop ``unc[k] - unc[k+1]`` and its share of
the reverse state-specific effect is that drop over ``unc[t+1]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from . import rng as _rng
from .effects import DEFAULT_SAMPLES, BranchSampler, EffectEstimate, _check
from .errors import InputError
from .inference import BranchPlan, abduct, agent_specific_branch, intervention_branch
from .parallel import map_indices
from .query import EffectQuery
from .scm import ScmModel, VarId

EXACT_CAP = 12
VARIANCE_EPS = 1e-12
# drops in unc below this fraction of unc[t+1] are float rounding, not signal
NOISE_FLOOR = 1e-9


# Shapley ------------------------------------------------------------------


def shapley_weight(size: int, n: int) -> float:
    return math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)


def exact_shapley(n: int, value: Callable[[FrozenSet[int]], float]) -> Dict[int, float]:
    """Weighted marginal contributions over all subsets; players are ``1..n``."""
    if n < 1:
        raise InputError("need at least one player")
    players = list(range(1, n + 1))
    cache: Dict[FrozenSet[int], float] = {}

    def v(s):
        if s not in cache:
            cache[s] = 0.0 if not s else float(value(s))
        return cache[s]

    phi = {}
    for j in players:
        others = [p for p in players if p != j]
        terms = []
        for size in range(n):
            w = shapley_weight(size, n)
            for sub in itertools.combinations(others, size):
                s = frozenset(sub)
                terms.append(w * (v(s | {j}) - v(s)))
        phi[j] = math.fsum(terms)
    return phi


@dataclass
class PermutationShapley:
    phi: Dict[int, float]
    marginals: np.ndarray  # permutations x players
    permutations: List[Tuple[int, ...]]

    def bootstrap_std(self, seed: int = 0, rounds: int = 500) -> Dict[int, float]:
        gen = _rng.stream(seed, _rng.BOOTSTRAP)
        m = self.marginals
        p = m.shape[0]
        if p < 2:
            return {j: 0.0 for j in self.phi}
        idx = gen.integers(0, p, size=(rounds, p))
        boot = m[idx].mean(axis=1)
        std = boot.std(axis=0, ddof=1)
        return {j: float(std[j - 1]) for j in self.phi}


def sampled_shapley(
    n: int, value: Callable[[FrozenSet[int]], float], budget: int, seed: int = 0
) -> PermutationShapley:
    """Average marginal contributions along ``budget`` random orderings.

    Along each ordering the marginals telescope to ``v(all) - v(empty)``, so the
    estimate is efficient exactly. ``v`` is memoized across orderings.
    """
    if budget < 1:
        raise InputError("permutation budget must be at least 1")
    cache: Dict[FrozenSet[int], float] = {frozenset(): 0.0}

    def v(s):
        if s not in cache:
            cache[s] = float(value(s))
        return cache[s]

    gen = _rng.stream(seed, _rng.PERMUTATIONS)
    perms = []
    if n <= 8 and budget >= math.factorial(n):
        perms = list(itertools.permutations(range(1, n + 1)))
    else:
        for _ in range(budget):
            perms.append(tuple(int(x) + 1 for x in gen.permutation(n)))
    marg = np.zeros((len(perms), n))
    for r, perm in enumerate(perms):
        s: FrozenSet[int] = frozenset()
        prev = 0.0
        for j in perm:
            s = s | {j}
            cur = v(s)
            marg[r, j - 1] = cur - prev
            prev = cur
    phi = {j: math.fsum(marg[:, j - 1]) / len(perms) for j in range(1, n + 1)}
    return PermutationShapley(phi, marg, perms)


@dataclass
class ShapleyReport:
    phi: Dict[int, float]
    characteristic: Dict[FrozenSet[int], EffectEstimate]
    mode: str
    permutations_used: int
    phi_std: Optional[Dict[int, float]] = None
    agent_names: Tuple[str, ...] = ()

    @property
    def efficiency_gap(self) -> float:
        full = frozenset(self.phi)
        return abs(math.fsum(self.phi.values()) - self.characteristic[full].mean)

    def to_dict(self) -> dict:
        names = self.agent_names or tuple(str(j) for j in self.phi)
        return {
            "mode": self.mode,
            "phi": {names[j - 1]: v for j, v in sorted(self.phi.items())},
            "phi_std": None if self.phi_std is None else {names[j - 1]: v for j, v in sorted(self.phi_std.items())},
            "characteristic": [
                {"agents": [names[j - 1] for j in sorted(s)], **est.to_dict()}
                for s, est in sorted(self.characteristic.items(), key=lambda kv: (len(kv[0]), sorted(kv[0])))
            ],
            "permutations_used": self.permutations_used,
            "efficiency_gap": self.efficiency_gap,
        }


class _Characteristic:
    """``v(N) = ASE^N`` estimated on one fixed set of posterior draws."""

    def __init__(self, query: EffectQuery, n_samples: int, seed: int, workers: int):
        self.query = query
        self.n_samples = n_samples
        self.seed = seed
        self.workers = workers
        self.posterior = abduct(query.model, query.tau)
        self.cache: Dict[FrozenSet[int], EffectEstimate] = {}

    def prefetch(self, subsets: Sequence[FrozenSet[int]]) -> None:
        todo = [s for s in subsets if s and s not in self.cache]
        if not todo:
            return
        q = self.query
        specs = [intervention_branch(q.tau, q.agent, q.time, q.action)]
        labels = {}
        for s in todo:
            spec = agent_specific_branch(q.tau, q.time, s, "do")
            specs.append(spec)
            labels[s] = spec.label
        r = BranchSampler(q, specs, self.posterior).run(self.n_samples, self.seed, self.workers)
        ref = q.factual_response
        for s, lbl in labels.items():
            self.cache[s] = EffectEstimate.from_samples(r[lbl] - ref)

    def estimate(self, s: FrozenSet[int]) -> EffectEstimate:
        if not s:
            return EffectEstimate.exact_zero("empty agent set: defined as 0")
        if s not in self.cache:
            self.prefetch([s])
        return self.cache[s]

    def __call__(self, s: FrozenSet[int]) -> float:
        return self.estimate(s).mean


def shapley_exact(
    model: ScmModel,
    query: EffectQuery,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    workers: int = 1,
    cap: int = EXACT_CAP,
) -> ShapleyReport:
    """Exact Shapley attribution of tot-ASE over all agents."""
    _check(model, query)
    n = model.n
    if n > cap:
        raise InputError(f"{n} agents exceed the exact Shapley cap of {cap}; use sampled mode")
    ch = _Characteristic(query, n_samples, seed, workers)
    subsets = [frozenset(c) for size in range(1, n + 1) for c in itertools.combinations(range(1, n + 1), size)]
    ch.prefetch(subsets)
    phi = exact_shapley(n, ch)
    characteristic = {frozenset(): ch.estimate(frozenset())}
    characteristic.update({s: ch.estimate(s) for s in subsets})
    return ShapleyReport(phi, characteristic, "exact", 0, None, model.agent_names)


def shapley_sampled(
    model: ScmModel,
    query: EffectQuery,
    permutation_budget: int,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    workers: int = 1,
) -> ShapleyReport:
    """Permutation-sampling Shapley attribution with memoized ``v(N)``."""
    _check(model, query)
    ch = _Characteristic(query, n_samples, seed, workers)
    full = frozenset(range(1, model.n + 1))
    ch.prefetch([full])
    res = sampled_shapley(model.n, ch, permutation_budget, seed)
    characteristic = {frozenset(): ch.estimate(frozenset())}
    characteristic.update(ch.cache)
    return ShapleyReport(
        res.phi, characteristic, "sampled", len(res.permutations), res.bootstrap_std(seed), model.agent_names
    )


# intrinsic causal contributions -------------------------------------------


class _NestedVariance:
    """Nested Monte Carlo estimates of ``E[Var(dY | tau, noise before causal index cut)]``.

    Outer draw ``o`` and inner draw ``j`` come from streams addressed by
    ``(o, j)`` alone, so every cut position sees the same uniforms. Two cuts
    separated only by noise that cannot move ``dY`` then give identical
    estimates, and their contribution is exactly zero.
    """

    def __init__(self, query: EffectQuery):
        q = query
        self.query = q
        self.model = q.model
        self.post = abduct(q.model, q.tau)
        self.plan = BranchPlan(
            q.model,
            [
                intervention_branch(q.tau, q.agent, q.time, q.action),
                agent_specific_branch(q.tau, q.time, range(1, q.model.n + 1), "do", "I"),
            ],
        )
        self.tau_values = q.tau.values

    def _delta(self, solved) -> float:
        resp = self.query.response
        return resp.evaluate_values(self.model, solved["I"]) - resp.evaluate_values(self.model, solved["do"])

    def outer(self, payload, o: int) -> List[float]:
        """Inner-sample variance of ``dY`` for outer draw ``o`` at each requested cut."""
        cuts, h2, seed, unbiased = payload
        model = self.model
        base = _rng.uniforms(seed, _rng.NESTED_OUTER, model.n_noise, c=o)
        inner = [_rng.uniforms(seed, _rng.NESTED_INNER, model.n_noise, a=j + 1, c=o) for j in range(h2)]
        first = self.plan.solve(self.post.draw(base.copy()).tolist(), self.tau_values)
        out = []
        for cut in cuts:
            noise_cut = model._offsets[cut] if cut < len(model.variables) else model.n_noise
            if noise_cut >= model.n_noise:
                out.append(0.0)
                continue
            vals = []
            for j in range(h2):
                unit = base.copy()
                unit[noise_cut:] = inner[j][noise_cut:]
                solved = self.plan.solve(self.post.draw(unit).tolist(), self.tau_values, resume_at=cut, previous=first)
                vals.append(self._delta(solved))
            out.append(_spread(vals, unbiased))
        return out

    def estimate(self, cuts: Sequence[int], h1: int, h2: int, seed: int, unbiased: bool, workers: int):
        """``{cut: (mean, standard error)}`` over ``h1`` outer draws."""
        rows = map_indices(_nested_job, (self, (tuple(cuts), h2, seed, unbiased)), range(h1), workers)
        arr = np.asarray(rows, dtype=float).reshape(h1, len(cuts))
        out = {}
        for c, cut in enumerate(cuts):
            col = arr[:, c]
            mean = math.fsum(col.tolist()) / h1
            se = float(col.std(ddof=1) / math.sqrt(h1)) if h1 > 1 else 0.0
            out[cut] = (max(mean, 0.0), se)
        return out


def _spread(vals: Sequence[float], unbiased: bool) -> float:
    if max(vals) == min(vals):
        return 0.0
    arr = np.asarray(vals)
    if unbiased:
        return float(arr.var(ddof=1))
    return float(np.mean(arr**2) - np.mean(arr) ** 2)


def _nested_job(payload, o):
    engine, args = payload
    return engine.outer(args, o)


def _state_index(model: ScmModel, k: int) -> int:
    return len(model.variables) if k > model.h else model.index[VarId.state(k)]


def conditional_variance(
    model: ScmModel,
    query: EffectQuery,
    k: int,
    h1: int = 100,
    h2: int = 20,
    seed: int = 0,
    inclusive: bool = False,
    unbiased: bool = True,
    workers: int = 1,
    return_se: bool = False,
):
    """``E[Var(Y_I - Y_a | tau, U^{<S_k})]`` by nested Monte Carlo.

    Outer draws fix the noise of every variable before ``S_k`` (before
    ``S_{k+1}`` when ``inclusive``, i.e. also the noise of ``S_k`` and of the
    actions at ``k``); inner draws resample the rest from the posterior. Streams
    do not depend on the cut, so the inclusive value at ``k`` equals the
    exclusive value at ``k + 1`` exactly. Inner variances use ``ddof=1``
    unless ``unbiased`` is false.
    """
    _check(model, query)
    if h1 < 2 or h2 < 2:
        raise InputError("H1 and H2 must both be at least 2")
    if not query.time < k <= query.response.t_y:
        raise InputError(f"k must satisfy t < k <= t_Y ({query.time} < k <= {query.response.t_y})")
    cut = _state_index(model, k + 1 if inclusive else k)
    mean, se = _NestedVariance(query).estimate([cut], h1, h2, seed, unbiased, workers)[cut]
    return (mean, se) if return_se else mean


@dataclass
class IccReport:
    psi: Dict[int, float]
    psi_raw: Dict[int, float]
    unc: Dict[int, float]
    unc_se: Dict[int, float]
    var_delta: float
    icc: Dict[int, float]
    icc_raw: Dict[int, float]
    grouping: int
    groups: List[Tuple[int, int]]
    r_sse: float
    t: int
    t_y: int
    clamped: bool
    sparse: bool
    evaluations: int

    @property
    def efficiency_gap(self) -> float:
        if self.var_delta <= VARIANCE_EPS:
            return 0.0
        return abs(math.fsum(self.psi.values()) - self.r_sse)

    def nonzero(self, tol: float = 1e-9) -> List[int]:
        return [k for k, v in sorted(self.psi.items()) if abs(v) > tol]

    def gini(self) -> float:
        return gini([abs(self.psi[k]) for k in range(self.t + 1, self.t_y + 1) if k in self.psi])

    def to_dict(self) -> dict:
        key = lambda d: {str(k): v for k, v in sorted(d.items())}
        return {
            "psi": key(self.psi),
            "psi_raw": key(self.psi_raw),
            "unc": key(self.unc),
            "unc_se": key(self.unc_se),
            "icc": key(self.icc),
            "icc_raw": key(self.icc_raw),
            "var_delta": self.var_delta,
            "r_sse": self.r_sse,
            "grouping": self.grouping,
            "groups": [list(g) for g in self.groups],
            "clamped": self.clamped,
            "sparse": self.sparse,
            "evaluations": self.evaluations,
            "efficiency_gap": self.efficiency_gap,
            "gini": self.gini(),
        }


def gini(values: Sequence[float]) -> float:
    """Gini coefficient of non-negative values (0 for an empty or all-zero list)."""
    x = np.sort(np.abs(np.asarray(values, dtype=float)))
    n = x.size
    if n == 0 or x.sum() == 0.0:
        return 0.0
    cum = np.arange(1, n + 1)
    return float((2.0 * np.sum(cum * x) / (n * x.sum())) - (n + 1.0) / n)


def r_sse_icc(
    model: ScmModel,
    query: EffectQuery,
    h1: int = 100,
    h2: int = 20,
    seed: int = 0,
    grouping: int = 1,
    r_sse_value: Optional[float] = None,
    n_samples: int = DEFAULT_SAMPLES,
    sparse: bool = False,
    sparse_tolerance: float = 0.05,
    unbiased: bool = True,
    workers: int = 1,
) -> IccReport:
    """Split the reverse state-specific effect over the states after the intervention.

    Each ``unc`` value is estimated once and shared by the two contributions
    it bounds, and ``unc[t_Y+1]`` is exactly 0, so the raw contributions
    telescope to ``unc[t+1]``. That value plays the role of ``Var(dY | tau)``,
    which makes ``sum(psi) == r_sse`` hold to float precision. Negative raw
    contributions are clamped to 0 and the rest renormalized; both versions
    are reported. ``r_sse_value`` defaults to the r-SSE estimate on the same
    seed and sample count.
    """
    from .effects import r_sse as _r_sse

    _check(model, query)
    if grouping < 1:
        raise InputError("grouping must be at least 1")
    t, t_y = query.time, query.response.t_y
    if r_sse_value is None:
        r_sse_value = _r_sse(model, query, n_samples, seed, workers).mean
    engine = _NestedVariance(query)
    unc: Dict[int, float] = {}
    unc_se: Dict[int, float] = {}
    evaluations = 0

    def fetch(ks: Sequence[int]) -> None:
        nonlocal evaluations
        todo = sorted({k for k in ks if k <= t_y and k not in unc})
        for k in ks:
            if k > t_y:
                unc[k], unc_se[k] = 0.0, 0.0
        if todo:
            cuts = {k: _state_index(model, k) for k in todo}
            got = engine.estimate(list(cuts.values()), h1, h2, seed, unbiased, workers)
            for k, cut in cuts.items():
                unc[k], unc_se[k] = got[cut]
            evaluations += len(todo)

    def get(k: int) -> float:
        fetch([k])
        return unc[k]

    if t_y <= t:
        groups: List[Tuple[int, int]] = []
    else:
        starts = list(range(t + 1, t_y + 1, grouping))
        groups = [(s, min(s + grouping, t_y + 1)) for s in starts]
    raw: Dict[int, float] = {}
    if groups and not sparse:
        fetch([s for s, _ in groups] + [t_y + 1])
        for s, e in groups:
            raw[s] = get(s) - get(e)
    elif groups:
        # bisection over group boundaries: refine only where unc drops noticeably
        bounds = [s for s, _ in groups] + [t_y + 1]
        scale = get(bounds[0])
        tol = max(VARIANCE_EPS, sparse_tolerance * scale)

        def refine(a: int, b: int):
            lo, hi = bounds[a], bounds[b]
            drop = get(lo) - get(hi)
            if b - a == 1:
                raw[lo] = drop
            elif drop <= tol:
                share = drop / (b - a)
                for m in range(a, b):
                    raw[bounds[m]] = share
            else:
                mid = (a + b) // 2
                refine(a, mid)
                refine(mid, b)

        refine(0, len(bounds) - 1)
    var_delta = get(t + 1) if groups else 0.0
    floor = NOISE_FLOOR * var_delta
    raw = {k: (0.0 if abs(v) <= floor else v) for k, v in raw.items()}
    clamped_vals = {k: max(0.0, v) for k, v in raw.items()}
    total_clamped = math.fsum(clamped_vals.values())
    psi = {k: 0.0 for k in range(model.h + 1)}
    psi_raw = {k: 0.0 for k in range(model.h + 1)}
    if var_delta > VARIANCE_EPS and total_clamped > 0.0:
        for k, v in clamped_vals.items():
            psi[k] = v / total_clamped * r_sse_value
            psi_raw[k] = raw[k] / var_delta * r_sse_value
        # absorb float rounding so the shares sum to r_sse
        last = max(k for k in clamped_vals if clamped_vals[k] > 0)
        psi[last] += r_sse_value - math.fsum(psi.values())
    any_negative = any(v < 0 for v in raw.values())
    return IccReport(
        psi=psi,
        psi_raw=psi_raw,
        unc=dict(sorted(unc.items())),
        unc_se=dict(sorted(unc_se.items())),
        var_delta=var_delta,
        icc=clamped_vals,
        icc_raw=raw,
        grouping=grouping,
        groups=groups,
        r_sse=r_sse_value,
        t=t,
        t_y=t_y,
        clamped=any_negative,
        sparse=sparse,
        evaluations=evaluations,
    )
