"""Categorical structural causal models over multi-agent MDP variables.

Every observed variable is produced by an inverse-CDF mechanism: a uniform
noise coordinate ``u`` selects the category whose cumulative interval
``[c_{j-1}, c_j)`` contains it. That makes each mechanism nondecreasing in its
noise under the declared category order, and it makes abduction a matter of
reading off one interval per noise coordinate.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Hashable, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import rng as _rng
from .errors import InputError, ModelError

Label = Hashable
ParentAssignment = Tuple[Label, ...]

PROB_TOLERANCE = 1e-12


class VarId(NamedTuple):
    """A state ``S_t`` (kind ``"S"``, agent 0) or an action ``A_{i,t}`` (kind ``"A"``)."""

    kind: str
    t: int
    agent: int = 0

    @classmethod
    def state(cls, t: int) -> "VarId":
        return cls("S", int(t), 0)

    @classmethod
    def action(cls, agent: int, t: int) -> "VarId":
        return cls("A", int(t), int(agent))

    @property
    def is_state(self) -> bool:
        return self.kind == "S"

    @property
    def is_action(self) -> bool:
        return self.kind == "A"

    def __str__(self) -> str:
        return f"S{self.t}" if self.kind == "S" else f"A{self.agent}_{self.t}"

    @classmethod
    def parse(cls, text: str) -> "VarId":
        text = text.strip()
        try:
            if text.startswith("S"):
                return cls.state(int(text[1:]))
            if text.startswith("A"):
                agent, t = text[1:].split("_")
                return cls.action(int(agent), int(t))
        except ValueError:
            pass
        raise InputError(f"cannot parse variable id {text!r}; expected 'S<k>' or 'A<i>_<t>'")


def to_fraction(p) -> Fraction:
    """Exact rational from a Fraction, int, decimal string, 'a/b' string or float."""
    if isinstance(p, Fraction):
        return p
    if isinstance(p, bool):
        raise InputError("booleans are not probabilities")
    if isinstance(p, int):
        return Fraction(p)
    if isinstance(p, float):
        # repr gives the shortest decimal that round-trips, so 0.3 -> 3/10
        return Fraction(repr(p))
    if isinstance(p, str):
        try:
            return Fraction(p.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"cannot read probability {p!r}") from exc
    raise InputError(f"unsupported probability value {p!r}")


def validate_probabilities(probs: Sequence[Fraction], where: str = "") -> None:
    if not probs:
        raise ModelError(f"empty probability vector {where}".strip())
    if any(p < 0 for p in probs):
        raise ModelError(f"negative probability {where}".strip())
    if abs(float(sum(probs)) - 1.0) > PROB_TOLERANCE:
        raise ModelError(f"probabilities sum to {float(sum(probs))!r}, not 1 {where}".strip())


def breakpoints_from(probs: Sequence[Fraction]) -> Tuple[float, ...]:
    """Float CDF breakpoints ``(0, c_1, ..., 1)``; each one is the correctly rounded exact cumulative sum."""
    out = [0.0]
    acc = Fraction(0)
    for p in probs[:-1]:
        acc += p
        out.append(min(float(acc), 1.0))
    out.append(1.0)
    return tuple(out)


def locate(breaks: Sequence[float], u: float) -> int:
    """Index j with ``breaks[j] <= u < breaks[j+1]``; zero-width intervals are never chosen."""
    j = bisect.bisect_right(breaks, u) - 1
    last = len(breaks) - 2
    return last if j > last else j


class Mechanism:
    """A structural function ``f(pa, u)`` split into independent inverse-CDF channels.

    Channel ``c`` turns its own uniform into a category index using the
    breakpoints returned by :meth:`channel_breakpoints`. :meth:`compose`
    assembles the variable's label from the per-channel indices and
    :meth:`decompose` inverts it, which is all abduction needs.
    """

    n_channels: int = 1

    def channel_breakpoints(self, pa: ParentAssignment) -> Tuple[Tuple[float, ...], ...]:
        raise NotImplementedError

    def channel_probabilities(self, pa: ParentAssignment) -> Tuple[Tuple[Fraction, ...], ...]:
        raise NotImplementedError

    def compose(self, pa: ParentAssignment, idx: Tuple[int, ...]) -> Label:
        raise NotImplementedError

    def decompose(self, pa: ParentAssignment, label: Label) -> Tuple[int, ...]:
        raise NotImplementedError

    def evaluate(self, pa: ParentAssignment, u: Sequence[float]) -> Label:
        brks = self.channel_breakpoints(pa)
        return self.compose(pa, tuple(locate(b, x) for b, x in zip(brks, u)))

    def rank(self, pa: ParentAssignment, label: Label) -> Tuple[int, ...]:
        """Position of ``label`` in the total order used for noise monotonicity."""
        return self.decompose(pa, label)

    def known_parent_assignments(self) -> List[ParentAssignment]:
        """Parent assignments materialized so far (the full table for explicit Cpds)."""
        return []


class Cpd(Mechanism):
    """Categorical conditional distribution with an ordered domain.

    ``table`` maps parent assignments (tuples of parent labels) to probability
    vectors over ``domain``. It may instead be a callable returning such a
    vector; rows are then materialized on first use and cached. Looking up an
    assignment the table does not cover raises :class:`ModelError`.
    """

    n_channels = 1

    def __init__(self, domain: Sequence[Label], table, name: str = ""):
        self.domain: Tuple[Label, ...] = tuple(domain)
        if len(set(self.domain)) != len(self.domain):
            raise ModelError(f"duplicate labels in domain of {name or 'cpd'}")
        self.name = name
        self._pos = {v: j for j, v in enumerate(self.domain)}
        self._rows: Dict[ParentAssignment, Tuple[Fraction, ...]] = {}
        self._breaks: Dict[ParentAssignment, Tuple[float, ...]] = {}
        self._factory: Optional[Callable[[ParentAssignment], Sequence]] = None
        if callable(table) and not isinstance(table, Mapping):
            self._factory = table
        else:
            for pa, probs in dict(table).items():
                self._store(tuple(pa), probs)

    def _store(self, pa: ParentAssignment, probs) -> Tuple[Fraction, ...]:
        row = tuple(to_fraction(p) for p in probs)
        if len(row) != len(self.domain):
            raise ModelError(f"{self.name or 'cpd'}: row for {pa!r} has {len(row)} entries, domain has {len(self.domain)}")
        validate_probabilities(row, f"in {self.name or 'cpd'} at {pa!r}")
        self._rows[pa] = row
        self._breaks[pa] = breakpoints_from(row)
        return row

    def probabilities(self, pa: ParentAssignment) -> Tuple[Fraction, ...]:
        row = self._rows.get(pa)
        if row is None:
            if self._factory is None:
                raise ModelError(f"{self.name or 'cpd'}: no table entry for parent assignment {pa!r}")
            row = self._store(pa, self._factory(pa))
        return row

    def breakpoints(self, pa: ParentAssignment) -> Tuple[float, ...]:
        b = self._breaks.get(pa)
        if b is None:
            self.probabilities(pa)
            b = self._breaks[pa]
        return b

    def channel_breakpoints(self, pa):
        return (self.breakpoints(pa),)

    def channel_probabilities(self, pa):
        return (self.probabilities(pa),)

    def compose(self, pa, idx):
        return self.domain[idx[0]]

    def decompose(self, pa, label):
        try:
            return (self._pos[label],)
        except KeyError:
            raise InputError(f"{label!r} is not in the domain of {self.name or 'cpd'}") from None

    def evaluate(self, pa, u):
        return self.domain[locate(self.breakpoints(pa), u[0])]

    def index_of(self, label: Label) -> int:
        return self.decompose((), label)[0]

    def known_parent_assignments(self):
        return list(self._rows)

    def is_explicit(self) -> bool:
        return self._factory is None

    def reordered(self, order: Sequence[Label]) -> "Cpd":
        """Same conditional law with the domain (and thus the monotone order) permuted."""
        order = tuple(order)
        if set(order) != set(self.domain) or len(order) != len(self.domain):
            raise InputError(f"ordering for {self.name or 'cpd'} must be a permutation of its domain")
        perm = [self._pos[v] for v in order]
        if self._factory is not None:
            factory = self._factory
            return Cpd(order, lambda pa: [factory(pa)[j] for j in perm], name=self.name)
        return Cpd(order, {pa: [row[j] for j in perm] for pa, row in self._rows.items()}, name=self.name)


def structural_eval(cpd: Cpd, parent_assignment: ParentAssignment, u: float) -> Label:
    """Inverse-CDF structural function: the label whose interval contains ``u``."""
    u = float(u)
    if not 0.0 <= u < 1.0:
        raise InputError(f"noise value {u!r} outside [0, 1)")
    return cpd.evaluate(tuple(parent_assignment), (u,))


class ScmModel:
    """MMDP-SCM with ``n`` agents and horizon ``h``.

    Variables in causal order are ``S_0, A_{1,0}, ..., A_{n,0}, S_1, ..., S_h``.
    ``S_{t+1}`` has parents ``(S_t, A_{1,t}, ..., A_{n,t})``, ``A_{i,t}`` has
    parent ``(S_t,)`` and ``S_0`` has none. ``mechanisms`` maps each variable to
    its structural function; time-homogeneous models share mechanism objects.

    ``state_value`` turns a state label into a real number (reward or
    outcome); responses are computed from it.
    """

    def __init__(
        self,
        n: int,
        h: int,
        mechanisms: Mapping[VarId, Mechanism],
        state_value: Optional[Callable[[Label], float]] = None,
        agent_names: Optional[Sequence[str]] = None,
        name: str = "model",
        metadata: Optional[dict] = None,
    ):
        if n < 1 or h < 0:
            raise ModelError("need at least one agent and a non-negative horizon")
        self.n = int(n)
        self.h = int(h)
        self.name = name
        self.metadata = dict(metadata or {})
        self.agent_names = tuple(agent_names) if agent_names else tuple(f"agent{i}" for i in range(1, n + 1))
        if len(self.agent_names) != self.n:
            raise ModelError("agent_names length must equal n")
        self._state_value = state_value
        self.variables: Tuple[VarId, ...] = self.skeleton(self.n, self.h)
        self.index: Dict[VarId, int] = {v: k for k, v in enumerate(self.variables)}
        missing = [str(v) for v in self.variables if v not in mechanisms]
        if missing:
            raise ModelError(f"no mechanism for {', '.join(missing[:5])}")
        extra = [str(v) for v in mechanisms if v not in self.index]
        if extra:
            raise ModelError(f"mechanisms given for unknown variables {', '.join(extra[:5])}")
        self.mechanisms: Dict[VarId, Mechanism] = {v: mechanisms[v] for v in self.variables}
        for v in self.variables:
            if v.is_action and not isinstance(self.mechanisms[v], Cpd):
                raise ModelError(f"action {v} must use a single-channel Cpd")

        self._mech = [self.mechanisms[v] for v in self.variables]
        self._parents = [tuple(self.index[p] for p in self.parents(v)) for v in self.variables]
        offsets, acc = [], 0
        for m in self._mech:
            offsets.append(acc)
            acc += m.n_channels
        self._offsets = offsets
        self._nch = [m.n_channels for m in self._mech]
        self.n_noise = acc

    # structure -----------------------------------------------------------
    @staticmethod
    def skeleton(n: int, h: int) -> Tuple[VarId, ...]:
        """Variables of an ``n``-agent, horizon-``h`` model in causal order."""
        variables = [VarId.state(0)]
        for t in range(h):
            variables.extend(VarId.action(i, t) for i in range(1, n + 1))
            variables.append(VarId.state(t + 1))
        return tuple(variables)

    def parents(self, v: VarId) -> Tuple[VarId, ...]:
        if v.is_state:
            if v.t == 0:
                return ()
            return (VarId.state(v.t - 1),) + tuple(VarId.action(i, v.t - 1) for i in range(1, self.n + 1))
        return (VarId.state(v.t),)

    def children(self, v: VarId) -> Tuple[VarId, ...]:
        if v.is_action:
            return (VarId.state(v.t + 1),)
        if v.t >= self.h:
            return ()
        return tuple(VarId.action(i, v.t) for i in range(1, self.n + 1)) + (VarId.state(v.t + 1),)

    def descendants(self, v: VarId) -> set:
        k0 = self.index[v]
        out = set()
        frontier = [v]
        while frontier:
            x = frontier.pop()
            for c in self.children(x):
                if c not in out:
                    out.add(c)
                    frontier.append(c)
        return {d for d in out if self.index[d] > k0}

    def noise_slice(self, v: VarId) -> slice:
        k = self.index[v]
        return slice(self._offsets[k], self._offsets[k] + self._nch[k])

    def action_domain(self, agent: int, t: int = 0) -> Tuple[Label, ...]:
        return self.mechanisms[VarId.action(agent, t)].domain

    def state_value(self, label: Label) -> float:
        if self._state_value is not None:
            return float(self._state_value(label))
        try:
            return float(label)
        except (TypeError, ValueError):
            raise ModelError(f"state label {label!r} has no numeric value; supply state_value") from None

    def distinct_mechanisms(self) -> Dict[int, Tuple[VarId, Mechanism]]:
        out: Dict[int, Tuple[VarId, Mechanism]] = {}
        for v in self.variables:
            m = self.mechanisms[v]
            out.setdefault(id(m), (v, m))
        return out

    def with_orderings(self, orderings: Mapping[VarId, Sequence[Label]]) -> "ScmModel":
        """Copy of the model with some Cpd domains reordered (same laws, different monotone order)."""
        mechs = dict(self.mechanisms)
        cache: Dict[Tuple[int, tuple], Cpd] = {}
        for v, order in orderings.items():
            m = mechs[v]
            if not isinstance(m, Cpd):
                raise InputError(f"ordering override for {v} requires a Cpd mechanism")
            key = (id(m), tuple(order))
            if key not in cache:
                cache[key] = m.reordered(order)
            mechs[v] = cache[key]
        return ScmModel(self.n, self.h, mechs, self._state_value, self.agent_names, self.name, self.metadata)


@dataclass(frozen=True)
class NoiseVector:
    """One uniform per noise channel, laid out in causal order."""

    model: ScmModel = field(repr=False, compare=False)
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.model.n_noise,):
            raise InputError(f"noise vector has {vals.size} entries, model needs {self.model.n_noise}")
        if np.any(vals < 0.0) or np.any(vals >= 1.0):
            raise InputError("noise values must lie in [0, 1)")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, v: VarId) -> Tuple[float, ...]:
        return tuple(self.values[self.model.noise_slice(v)])

    def as_dict(self) -> Dict[VarId, Tuple[float, ...]]:
        return {v: self[v] for v in self.model.variables}

    def __eq__(self, other):
        return isinstance(other, NoiseVector) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


class Trajectory:
    """Complete assignment of labels to every variable of a model."""

    __slots__ = ("model", "values")

    def __init__(self, model: ScmModel, values: Sequence[Label]):
        if len(values) != len(model.variables):
            raise InputError(f"trajectory has {len(values)} values, model has {len(model.variables)} variables")
        self.model = model
        self.values = tuple(values)

    @classmethod
    def from_mapping(cls, model: ScmModel, mapping: Mapping[VarId, Label]) -> "Trajectory":
        missing = [str(v) for v in model.variables if v not in mapping]
        if missing:
            raise InputError(f"trajectory is missing {', '.join(missing[:5])}")
        return cls(model, [mapping[v] for v in model.variables])

    def __getitem__(self, v: VarId) -> Label:
        return self.values[self.model.index[v]]

    def state(self, k: int) -> Label:
        return self.values[self.model.index[VarId.state(k)]]

    def action(self, agent: int, t: int) -> Label:
        return self.values[self.model.index[VarId.action(agent, t)]]

    def states(self) -> List[Label]:
        return [self.state(k) for k in range(self.model.h + 1)]

    def as_dict(self) -> Dict[VarId, Label]:
        return dict(zip(self.model.variables, self.values))

    def differing(self, other: "Trajectory") -> List[VarId]:
        return [v for v, a, b in zip(self.model.variables, self.values, other.values) if a != b]

    def __eq__(self, other):
        return isinstance(other, Trajectory) and self.values == other.values

    def __hash__(self):
        return hash(self.values)

    def __repr__(self):
        return f"Trajectory({self.values!r})"


class InterventionSet(dict):
    """Hard interventions ``do(A_{i,t} := a)`` keyed by action variable."""

    def validate(self, model: ScmModel) -> "InterventionSet":
        for v, label in self.items():
            if not isinstance(v, VarId) or v not in model.index:
                raise InputError(f"intervention target {v!r} is not a model variable")
            if not v.is_action:
                raise InputError(f"intervention target {v} is not an action")
            if label not in model.mechanisms[v].domain:
                raise InputError(f"{label!r} is not a valid value for {v}")
        return self


def solve_values(
    model: ScmModel,
    u: Sequence[float],
    fixed: Optional[Mapping[int, Label]] = None,
    prefix: Optional[Sequence[Label]] = None,
    start: int = 0,
) -> List[Label]:
    """Forward evaluation by causal index.

    ``fixed`` maps causal indices to forced labels. When ``prefix`` and
    ``start`` are given, indices below ``start`` are copied from ``prefix``
    instead of being recomputed.
    """
    fixed = fixed or {}
    nvars = len(model.variables)
    vals: List[Label] = list(prefix[:start]) + [None] * (nvars - start) if start else [None] * nvars
    mech, parents, offs, nch = model._mech, model._parents, model._offsets, model._nch
    for k in range(start, nvars):
        if k in fixed:
            vals[k] = fixed[k]
            continue
        pa = tuple(vals[p] for p in parents[k])
        o = offs[k]
        vals[k] = mech[k].evaluate(pa, u[o : o + nch[k]])
    return vals


def solve(model: ScmModel, u: NoiseVector, iv: Optional[Mapping[VarId, Label]] = None) -> Trajectory:
    """Unique solution of the model for noise ``u`` under hard interventions ``iv``."""
    if not isinstance(u, NoiseVector):
        u = NoiseVector(model, np.asarray(u, dtype=float))
    iv = InterventionSet(iv or {}).validate(model)
    fixed = {model.index[v]: lab for v, lab in iv.items()}
    return Trajectory(model, solve_values(model, u.values.tolist(), fixed))


def sample_prior(model: ScmModel, rng_seed: int, index: int = 0) -> Tuple[NoiseVector, Trajectory]:
    """Draw every noise coordinate uniformly and solve without interventions."""
    u = NoiseVector(model, _rng.uniforms(rng_seed, _rng.PRIOR, model.n_noise, c=index))
    return u, solve(model, u)


# checks -------------------------------------------------------------------


@dataclass
class MonotonicityReport:
    passed: bool
    checked: int
    violations: List[Tuple[VarId, ParentAssignment, float, float]]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checked": self.checked,
            "violations": [
                {"variable": str(v), "parents": repr(pa), "u1": u1, "u2": u2} for v, pa, u1, u2 in self.violations
            ],
        }


def _probe_points(breaks: Sequence[float], resolution: int) -> List[float]:
    pts = set(np.linspace(0.0, 1.0, max(2, resolution), endpoint=False).tolist())
    for b in breaks:
        if 0.0 <= b < 1.0:
            pts.add(b)
        if 0.0 < b <= 1.0:
            pts.add(float(np.nextafter(b, 0.0)))
    return sorted(pts)


def check_noise_monotonicity(
    model: ScmModel,
    grid_resolution: int = 32,
    parent_assignments: Optional[Mapping[VarId, Iterable[ParentAssignment]]] = None,
    max_violations: int = 20,
) -> MonotonicityReport:
    """Check ``f(pa, u1) <= f(pa, u2)`` for ``u1 < u2`` on a grid plus every CDF breakpoint.

    Each mechanism is probed once per known parent assignment (the explicit
    table, the rows materialized so far, or ``parent_assignments``). Channels
    are probed one at a time with the others held at 1/2.
    """
    violations: List[Tuple[VarId, ParentAssignment, float, float]] = []
    checked = 0
    extra = parent_assignments or {}
    for v, mech in model.distinct_mechanisms().values():
        pas = list(mech.known_parent_assignments())
        pas.extend(tuple(p) for p in extra.get(v, ()))
        for pa in dict.fromkeys(pas):
            brks = mech.channel_breakpoints(pa)
            for c in range(mech.n_channels):
                base = [0.5] * mech.n_channels
                prev_rank, prev_u = None, None
                for x in _probe_points(brks[c], grid_resolution):
                    base[c] = x
                    rank = mech.rank(pa, mech.evaluate(pa, base))
                    checked += 1
                    if prev_rank is not None and rank < prev_rank:
                        if len(violations) < max_violations:
                            violations.append((v, pa, prev_u, x))
                    prev_rank, prev_u = rank, x
    return MonotonicityReport(not violations, checked, violations)


class FunctionMechanism(Mechanism):
    """Arbitrary single-noise structural function; used to probe the monotonicity checker."""

    def __init__(self, domain: Sequence[Label], fn: Callable[[ParentAssignment, float], Label], parent_assignments):
        self.domain = tuple(domain)
        self._fn = fn
        self._pas = [tuple(p) for p in parent_assignments]
        self._pos = {v: j for j, v in enumerate(self.domain)}

    def channel_breakpoints(self, pa):
        return (tuple(np.linspace(0.0, 1.0, len(self.domain) + 1)),)

    def evaluate(self, pa, u):
        return self._fn(pa, u[0])

    def rank(self, pa, label):
        return (self._pos[label],)

    def known_parent_assignments(self):
        return list(self._pas)


@dataclass
class MeasureReport:
    passed: bool
    max_deviation: float
    worst: Optional[Tuple[VarId, ParentAssignment, Label]]


def check_measure(model: ScmModel, tolerance: float = PROB_TOLERANCE) -> MeasureReport:
    """Lebesgue measure of ``{u : f(pa, u) = v}`` against the table probability, per channel."""
    worst_dev, worst = 0.0, None
    for v, mech in model.distinct_mechanisms().values():
        for pa in mech.known_parent_assignments():
            for probs, brks in zip(mech.channel_probabilities(pa), mech.channel_breakpoints(pa)):
                for j, p in enumerate(probs):
                    dev = abs((brks[j + 1] - brks[j]) - float(p))
                    if dev > worst_dev:
                        worst_dev, worst = dev, (v, pa, j)
    return MeasureReport(worst_dev <= tolerance, worst_dev, worst)


def random_orderings(model: ScmModel, seed: int) -> Dict[VarId, Tuple[Label, ...]]:
    """A random permutation of every Cpd domain, keyed by each variable that uses it.

    Variables sharing a mechanism get the same permutation, so a
    time-homogeneous model stays time-homogeneous. Multi-channel mechanisms
    keep their order.
    """
    gen = _rng.stream(seed, _rng.ORDERINGS)
    chosen: Dict[int, Tuple[Label, ...]] = {}
    out: Dict[VarId, Tuple[Label, ...]] = {}
    for v in model.variables:
        m = model.mechanisms[v]
        if not isinstance(m, Cpd):
            continue
        if id(m) not in chosen:
            chosen[id(m)] = tuple(m.domain[j] for j in gen.permutation(len(m.domain)))
        out[v] = chosen[id(m)]
    return out
