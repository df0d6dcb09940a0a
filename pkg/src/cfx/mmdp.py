"""Multi-agent MDPs, stationary joint policies, and their compilation to an SCM."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from . import rng as _rng
from .errors import InputError, ModelError
from .scm import Cpd, Label, Mechanism, ScmModel, VarId, to_fraction, validate_probabilities

Row = Mapping[Label, object]
JointAction = Tuple[Label, ...]


@dataclass
class MmdpSpec:
    """``states`` may be ``None`` for implicitly defined (lazily explored) state spaces.

    ``transition`` maps ``(s, joint_action)`` to a sparse row ``{s': p}`` or is a
    callable with that signature. ``transition_mechanism`` optionally supplies a
    multi-channel realization of the same law; compile then uses it for every
    ``S_{t+1}`` and :func:`consistency_check` verifies it against ``transition``.
    """

    n: int
    action_spaces: Sequence[Sequence[Label]]
    transition: Union[Mapping[Tuple[Label, JointAction], Row], Callable[[Label, JointAction], Row]]
    horizon: int
    initial: Row
    states: Optional[Sequence[Label]] = None
    transition_mechanism: Optional[Mechanism] = None
    state_value: Optional[Callable[[Label], float]] = None
    agent_names: Optional[Sequence[str]] = None
    name: str = "mmdp"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.action_spaces = tuple(tuple(a) for a in self.action_spaces)
        if len(self.action_spaces) != self.n:
            raise InputError(f"expected {self.n} action spaces, got {len(self.action_spaces)}")
        if self.horizon < 0:
            raise InputError("horizon must be non-negative")
        if self.states is not None:
            self.states = tuple(self.states)
            unknown = [s for s in self.initial if s not in set(self.states)]
            if unknown:
                raise InputError(f"initial distribution mentions unknown states {unknown[:3]!r}")
        _check_row(self.initial, "initial distribution")

    def row(self, s: Label, a: JointAction) -> Row:
        if callable(self.transition):
            out = self.transition(s, tuple(a))
        else:
            try:
                out = self.transition[(s, tuple(a))]
            except KeyError:
                raise ModelError(f"transition undefined for state {s!r} and joint action {tuple(a)!r}") from None
        if out is None:
            raise ModelError(f"transition undefined for state {s!r} and joint action {tuple(a)!r}")
        return out


@dataclass
class PolicySet:
    """Per-agent stationary policies: ``policies[i-1]`` maps a state to ``{action: p}``."""

    policies: Sequence[Union[Mapping[Label, Row], Callable[[Label], Row]]]

    def row(self, agent: int, s: Label) -> Row:
        pol = self.policies[agent - 1]
        if callable(pol):
            out = pol(s)
        else:
            out = pol.get(s)
        if out is None:
            raise ModelError(f"policy of agent {agent} is undefined in state {s!r}")
        return out

    @property
    def n(self) -> int:
        return len(self.policies)


def _check_row(row: Row, where: str) -> None:
    validate_probabilities([to_fraction(p) for p in row.values()], f"in {where}")


def _dense(row: Row, domain: Sequence[Label], where: str) -> List[Fraction]:
    pos = {v: j for j, v in enumerate(domain)}
    out = [Fraction(0)] * len(domain)
    for label, p in row.items():
        if label not in pos:
            raise ModelError(f"{where}: {label!r} is outside the declared domain")
        out[pos[label]] += to_fraction(p)
    return out


def _support(row: Row) -> List[Label]:
    return [k for k, p in row.items() if to_fraction(p) > 0]


def reachable_pairs(
    mmdp: MmdpSpec, pi: Optional[PolicySet] = None, max_states: int = 1_000_000
) -> Tuple[List[Label], List[Tuple[Label, JointAction]]]:
    """Forward closure from the support of the initial distribution.

    With ``pi`` only actions in the policies' support are followed; without it
    every joint action is (so the closure covers any action intervention).
    """
    seen: Dict[Label, None] = {}
    frontier = list(dict.fromkeys(_support(mmdp.initial)))
    for s in frontier:
        seen[s] = None
    pairs: Dict[Tuple[Label, JointAction], None] = {}
    depth = 0
    while frontier and depth < mmdp.horizon:
        nxt = []
        for s in frontier:
            if pi is None:
                spaces = mmdp.action_spaces
            else:
                spaces = [_support(pi.row(i, s)) for i in range(1, mmdp.n + 1)]
            for a in itertools.product(*spaces):
                pairs[(s, a)] = None
                for s2 in _support(mmdp.row(s, a)):
                    if s2 not in seen:
                        seen[s2] = None
                        nxt.append(s2)
                        if len(seen) > max_states:
                            raise ModelError("reachable state space exceeds the exploration cap")
        frontier = nxt
        depth += 1
    return list(seen), list(pairs)


def _state_domain(mmdp: MmdpSpec, reachable: Sequence[Label]) -> Tuple[Label, ...]:
    if mmdp.states is not None:
        return tuple(mmdp.states)
    return tuple(reachable)


def compile_mmdp(
    mmdp: MmdpSpec,
    pi: PolicySet,
    orderings: Optional[Mapping[Union[str, int], Sequence[Label]]] = None,
    materialize: bool = True,
) -> ScmModel:
    """Build the MMDP-SCM whose per-variable laws are exactly ``initial``, ``T`` and ``pi``.

    ``orderings`` may override the category order of states (key ``"S"``) or of
    agent ``i``'s actions (key ``i`` or ``"A<i>"``). With ``materialize`` set,
    table rows are built eagerly for every pair reachable under any joint
    action; otherwise rows are created on first lookup.
    """
    if pi.n != mmdp.n:
        raise InputError(f"policy set has {pi.n} agents, MMDP has {mmdp.n}")
    orderings = {str(k).lstrip("A") if str(k) != "S" else "S": v for k, v in (orderings or {}).items()}

    if materialize and mmdp.transition_mechanism is None:
        reach_states, reach_pairs = reachable_pairs(mmdp, None)
    else:
        reach_states, reach_pairs = list(dict.fromkeys(_support(mmdp.initial))), []
    if mmdp.states is None and mmdp.transition_mechanism is None and not materialize:
        raise InputError("an implicit state space needs either materialization or a transition mechanism")

    s_domain = _state_domain(mmdp, reach_states)
    if "S" in orderings:
        order = tuple(orderings["S"])
        if set(order) != set(s_domain):
            raise InputError("state ordering must be a permutation of the state space")
        s_domain = order

    initial_domain = s_domain if mmdp.transition_mechanism is None else tuple(mmdp.initial)
    if mmdp.transition_mechanism is not None and "S" in orderings:
        initial_domain = tuple(x for x in s_domain if x in mmdp.initial)
    s0 = Cpd(initial_domain, {(): _dense(mmdp.initial, initial_domain, "initial distribution")}, name="S0")

    if mmdp.transition_mechanism is not None:
        trans: Mechanism = mmdp.transition_mechanism
    else:
        def trans_row(pa, _dom=s_domain):
            s, *a = pa
            return _dense(mmdp.row(s, tuple(a)), _dom, f"T({s!r}, {tuple(a)!r})")

        trans = Cpd(s_domain, trans_row, name="S")
        for s, a in reach_pairs:
            trans.probabilities((s,) + tuple(a))

    action_cpds = []
    for i in range(1, mmdp.n + 1):
        dom = mmdp.action_spaces[i - 1]
        if str(i) in orderings:
            order = tuple(orderings[str(i)])
            if set(order) != set(dom):
                raise InputError(f"ordering for agent {i} must be a permutation of its action space")
            dom = order

        def pol_row(pa, _i=i, _dom=dom):
            return _dense(pi.row(_i, pa[0]), _dom, f"pi_{_i}({pa[0]!r})")

        cpd = Cpd(dom, pol_row, name=f"A{i}")
        for s in reach_states:
            cpd.probabilities((s,))
        action_cpds.append(cpd)

    mechs: Dict[VarId, Mechanism] = {VarId.state(0): s0}
    for t in range(mmdp.horizon):
        for i in range(1, mmdp.n + 1):
            mechs[VarId.action(i, t)] = action_cpds[i - 1]
        mechs[VarId.state(t + 1)] = trans
    return ScmModel(
        mmdp.n,
        mmdp.horizon,
        mechs,
        state_value=mmdp.state_value,
        agent_names=mmdp.agent_names,
        name=mmdp.name,
        metadata=dict(mmdp.metadata),
    )


def induced_distribution(mech: Mechanism, pa) -> Dict[Label, float]:
    """Law of ``f(pa, U)`` computed from the interval widths of each channel."""
    per_channel = []
    for brks in mech.channel_breakpoints(pa):
        per_channel.append([(j, brks[j + 1] - brks[j]) for j in range(len(brks) - 1) if brks[j + 1] > brks[j]])
    out: Dict[Label, float] = {}
    for combo in itertools.product(*per_channel):
        idx = tuple(j for j, _ in combo)
        w = math.prod(wj for _, wj in combo)
        label = mech.compose(pa, idx)
        out[label] = out.get(label, 0.0) + w
    return out


@dataclass
class ConsistencyReport:
    passed: bool
    max_deviation: float
    worst: Optional[tuple]
    rows_checked: int
    tolerance: float = 1e-12

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_deviation": self.max_deviation,
            "worst": None if self.worst is None else [repr(x) for x in self.worst],
            "rows_checked": self.rows_checked,
            "tolerance": self.tolerance,
        }


def _row_deviation(induced: Mapping[Label, float], spec_row: Row) -> Tuple[float, Optional[Label]]:
    worst, where = 0.0, None
    keys = set(induced) | {k for k in spec_row}
    for k in keys:
        p = float(to_fraction(spec_row[k])) if k in spec_row else 0.0
        d = abs(induced.get(k, 0.0) - p)
        if d > worst:
            worst, where = d, k
    return worst, where


def consistency_check(model: ScmModel, mmdp: MmdpSpec, pi: PolicySet, tolerance: float = 1e-12) -> ConsistencyReport:
    """Compare the measure of each noise preimage with sigma, T and pi.

    Rows checked: the initial distribution, every transition row reachable
    under the policies' support, every row the model has materialized, and the
    policy rows of every reachable state.
    """
    if model.n != mmdp.n or model.h != mmdp.horizon:
        raise InputError("model and MMDP disagree on agent count or horizon")
    worst_dev, worst = 0.0, None
    rows = 0

    def note(dev, info):
        nonlocal worst_dev, worst, rows
        rows += 1
        if dev > worst_dev:
            worst_dev, worst = dev, info

    s0 = model.mechanisms[VarId.state(0)]
    dev, where = _row_deviation(induced_distribution(s0, ()), mmdp.initial)
    note(dev, ("initial", where))

    states, pairs = reachable_pairs(mmdp, pi)
    if model.h > 0:
        trans = model.mechanisms[VarId.state(1)]
        pa_rows = {(s,) + tuple(a) for s, a in pairs}
        pa_rows.update(trans.known_parent_assignments())
        for pa in sorted(pa_rows, key=repr):
            dev, where = _row_deviation(induced_distribution(trans, pa), mmdp.row(pa[0], tuple(pa[1:])))
            note(dev, ("transition", pa[0], tuple(pa[1:]), where))
        for i in range(1, model.n + 1):
            cpd = model.mechanisms[VarId.action(i, 0)]
            for s in sorted(states, key=repr):
                dev, where = _row_deviation(induced_distribution(cpd, (s,)), pi.row(i, s))
                note(dev, ("policy", i, s, where))
    return ConsistencyReport(worst_dev <= tolerance, worst_dev, worst, rows, tolerance)


# empirical goodness of fit -------------------------------------------------


@dataclass
class ChiSquareReport:
    passed: bool
    rows_tested: int
    min_p_value: float
    threshold: float
    failures: List[tuple]


def _row_test(counts: np.ndarray, probs: np.ndarray):
    """Chi-square p-value of one table row; bins with expected count below 5 are pooled."""
    total = counts.sum()
    if total == 0:
        return None
    zero = probs == 0
    if counts[zero].sum() > 0:
        return 0.0
    counts, probs = counts[~zero], probs[~zero]
    expected = probs * total
    small = expected < 5
    if small.any():
        counts = np.append(counts[~small], counts[small].sum())
        expected = np.append(expected[~small], expected[small].sum())
        if expected[-1] < 5 and len(expected) > 1:
            counts = np.append(counts[:-2], counts[-2:].sum())
            expected = np.append(expected[:-2], expected[-2:].sum())
    if len(expected) < 2:
        return None
    expected = expected * (counts.sum() / expected.sum())
    return float(stats.chisquare(counts, expected).pvalue)


def chi_square_check(
    model: ScmModel,
    n_samples: int = 100_000,
    seed: int = 0,
    alpha: float = 0.01,
    rows_in_family: Optional[int] = None,
) -> ChiSquareReport:
    """Empirical law of prior samples against every visited table row of a single-channel model.

    Trajectories are sampled in batch with the model's own breakpoints. The
    threshold is ``alpha / rows_in_family`` (Bonferroni); by default the family
    is the set of rows tested here.
    """
    for v in model.variables:
        if model.mechanisms[v].n_channels != 1:
            raise InputError("batch chi-square check supports single-channel models only")
    gen = _rng.stream(seed, _rng.PRIOR, 0, 0, 1 << 40)
    tallies: Dict[Tuple[int, tuple], np.ndarray] = {}
    # labels become integer codes so rows can be grouped and counted with numpy
    labels: List[Label] = []
    codes: Dict[Label, int] = {}
    domain_codes: Dict[int, np.ndarray] = {}

    def code_of(cpd: Cpd) -> np.ndarray:
        arr = domain_codes.get(id(cpd))
        if arr is None:
            for lab in cpd.domain:
                if lab not in codes:
                    codes[lab] = len(labels)
                    labels.append(lab)
            arr = domain_codes[id(cpd)] = np.array([codes[lab] for lab in cpd.domain], dtype=np.int64)
        return arr

    def draw(v: VarId, cols: List[np.ndarray]) -> np.ndarray:
        cpd: Cpd = model.mechanisms[v]
        dom = code_of(cpd)
        u = gen.random(n_samples)
        # pack the parent codes into one integer per sample (base = number of labels)
        base = max(1, len(labels))
        if base ** len(cols) < 2**62:
            packed = np.zeros(n_samples, dtype=np.int64)
            for col in reversed(cols):
                packed = packed * base + col
            uniq, inv = np.unique(packed, return_inverse=True)
            rows = []
            for key_code in uniq.tolist():
                digits = []
                for _ in cols:
                    key_code, d = divmod(key_code, base)
                    digits.append(d)
                rows.append(digits)
        else:
            stacked, inv = np.unique(np.stack(cols, axis=1), axis=0, return_inverse=True)
            rows = stacked.tolist()
        inv = inv.reshape(-1)
        out = np.empty(n_samples, dtype=np.int64)
        for g, digits in enumerate(rows):
            mask = inv == g
            pa = tuple(labels[c] for c in digits)
            brks = np.asarray(cpd.breakpoints(pa))
            js = np.minimum(np.searchsorted(brks, u[mask], side="right") - 1, len(dom) - 1)
            key = (id(cpd), pa)
            counts = np.bincount(js, minlength=len(dom))
            tallies[key] = tallies[key] + counts if key in tallies else counts
            out[mask] = dom[js]
        return out

    states = draw(VarId.state(0), [])
    for t in range(model.h):
        acts = [draw(VarId.action(i, t), [states]) for i in range(1, model.n + 1)]
        states = draw(VarId.state(t + 1), [states] + acts)

    cpds = {id(m): m for m in (model.mechanisms[v] for v in model.variables)}
    pvals = []
    for (cid, pa), tally in tallies.items():
        cpd = cpds[cid]
        counts = tally.astype(float)
        probs = np.array([float(p) for p in cpd.probabilities(pa)])
        p = _row_test(counts, probs)
        if p is not None:
            pvals.append((p, cpd.name, pa))
    family = rows_in_family or max(1, len(pvals))
    threshold = alpha / family
    failures = [(name, pa, p) for p, name, pa in pvals if p < threshold]
    min_p = min((p for p, _, _ in pvals), default=1.0)
    return ChiSquareReport(not failures, len(pvals), min_p, threshold, failures)
