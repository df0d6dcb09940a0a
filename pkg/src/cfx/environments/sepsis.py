"""A sepsis-style ICU simulator with an AI recommender and a clinician.

Each round has two turns. On the AI turn (even ``t``) the AI recommends one
of eight treatments, written into the state. On the clinician turn (odd
``t``) the clinician either accepts the recommendation or overrides it with
its own preferred treatment; the applied treatment then drives the patient's
vitals. Each vital sits in a low, normal or high band. The patient dies once
``death_threshold`` vitals are abnormal and is discharged once all are
normal; both are absorbing. The response is ``1`` unless the patient died.

Treatments ``T0..T7`` encode three on/off therapies as bits: antibiotics
(bit 0), vasopressors (bit 1) and mechanical ventilation (bit 2).

The clinician overrides with probability ``(1 - trust) * q(s)``, where ``q``
grows with the number of therapies on which the recommendation and the
clinician's own preference differ. At full trust the clinician always accepts.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from ..errors import ConfigError, InputError
from ..mmdp import MmdpSpec, PolicySet, compile_mmdp
from ..query import EffectQuery, ResponseSpec
from ..scm import Mechanism, ScmModel, Trajectory, breakpoints_from, sample_prior, to_fraction, validate_probabilities

TREATMENTS = tuple(f"T{k}" for k in range(8))
THERAPIES = ("antibiotics", "vasopressors", "ventilation")
NULL = "NULL"
ACCEPT = "accept"
AI_ACTIONS = (NULL,) + TREATMENTS
CLINICIAN_ACTIONS = (NULL, ACCEPT) + tuple(f"override {t}" for t in TREATMENTS)
VITALS = ("hr", "bp", "o2", "glucose")
LOW, NORMAL, HIGH = 0, 1, 2
DEAD, ALIVE, DISCHARGED = "dead", "alive", "discharged"


def treatment_name(label: str) -> str:
    k = TREATMENTS.index(label)
    parts = [THERAPIES[b] for b in range(3) if k >> b & 1]
    return "+".join(parts) or "none"


def _f(x) -> Fraction:
    return to_fraction(x)


# vital -> therapy bit that treats it (None: untreatable) and next-band rows
# keyed by "band:on" / "band:off"; rows list probabilities of (low, normal, high)
DEFAULT_DYNAMICS = {
    "hr": {
        "therapy": 0,
        "rows": {
            "0:off": ["0.7", "0.3", "0"],
            "0:on": ["0.4", "0.6", "0"],
            "1:off": ["0.05", "0.8", "0.15"],
            "1:on": ["0.05", "0.9", "0.05"],
            "2:off": ["0", "0.15", "0.85"],
            "2:on": ["0", "0.6", "0.4"],
        },
    },
    "bp": {
        "therapy": 1,
        "rows": {
            "0:off": ["0.85", "0.15", "0"],
            "0:on": ["0.3", "0.7", "0"],
            "1:off": ["0.15", "0.8", "0.05"],
            "1:on": ["0.02", "0.78", "0.2"],
            "2:off": ["0", "0.5", "0.5"],
            "2:on": ["0", "0.2", "0.8"],
        },
    },
    "o2": {
        "therapy": 2,
        "rows": {
            "0:off": ["0.85", "0.15", "0"],
            "0:on": ["0.25", "0.75", "0"],
            "1:off": ["0.1", "0.9", "0"],
            "1:on": ["0.02", "0.98", "0"],
            "2:off": ["0", "0.5", "0.5"],
            "2:on": ["0", "0.5", "0.5"],
        },
    },
    "glucose": {
        "therapy": None,
        "rows": {
            "0:off": ["0.5", "0.5", "0"],
            "1:off": ["0.1", "0.8", "0.1"],
            "2:off": ["0", "0.4", "0.6"],
        },
    },
}


@dataclass
class SepsisConfig:
    """``trust`` is the clinician's trust in the AI; everything else shapes the dynamics."""

    trust: float = 0.5
    rounds: int = 20
    vitals: Sequence[str] = VITALS
    dynamics: Mapping[str, Mapping] = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_DYNAMICS)))
    death_threshold: Optional[int] = None
    q_agree: Fraction = Fraction(1, 20)
    q_disagree: Fraction = Fraction(9, 10)
    ai_accuracy: Fraction = Fraction(4, 5)
    initial: Mapping[str, Sequence] = field(
        default_factory=lambda: {
            "hr": ["0.1", "0.4", "0.5"],
            "bp": ["0.5", "0.5", "0"],
            "o2": ["0.5", "0.5", "0"],
            "glucose": ["0.2", "0.5", "0.3"],
        }
    )

    def __post_init__(self):
        try:
            self.trust = float(self.trust)
            self.rounds = int(self.rounds)
            for name in ("q_agree", "q_disagree", "ai_accuracy"):
                setattr(self, name, _f(getattr(self, name)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid sepsis config: {exc}") from None
        if not 0.0 <= self.trust <= 1.0:
            raise ConfigError("trust must lie in [0, 1]")
        if self.rounds < 1:
            raise ConfigError("need at least one round")
        self.vitals = tuple(self.vitals)
        if not self.vitals or any(v not in self.dynamics for v in self.vitals) or len(set(self.vitals)) != len(self.vitals):
            raise ConfigError(f"vitals must be distinct names from {sorted(self.dynamics)}")
        if self.death_threshold is None:
            self.death_threshold = max(1, len(self.vitals) - 1)
        if not 1 <= int(self.death_threshold) <= len(self.vitals):
            raise ConfigError("death_threshold must lie between 1 and the number of vitals")
        self.death_threshold = int(self.death_threshold)
        for name in ("q_agree", "q_disagree", "ai_accuracy"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not self.q_disagree < 1:
            raise ConfigError("q_disagree must be below 1 so that accepting always has positive probability")
        for v in self.vitals:
            validate_probabilities([_f(p) for p in self.initial[v]], f"in initial distribution of {v}")
            for key, row in self.dynamics[v]["rows"].items():
                validate_probabilities([_f(p) for p in row], f"in dynamics of {v} at {key}")

    @property
    def horizon(self) -> int:
        return 2 * self.rounds

    @classmethod
    def from_dict(cls, data: Mapping) -> "SepsisConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sepsis config keys {sorted(unknown)}")
        return cls(**dict(data))

    @classmethod
    def from_json(cls, path) -> "SepsisConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class Patient(NamedTuple):
    vitals: Tuple[int, ...]
    status: str
    recommendation: Optional[str]


class Sepsis:
    def __init__(self, config: SepsisConfig):
        self.config = config
        self.vitals = tuple(config.vitals)
        self.therapy = [config.dynamics[v]["therapy"] for v in self.vitals]
        self.rows = [
            {key: tuple(_f(p) for p in row) for key, row in config.dynamics[v]["rows"].items()} for v in self.vitals
        ]
        self._cache: Dict[tuple, tuple] = {}

    # preferences ----------------------------------------------------------

    def _needs(self, vitals: Tuple[int, ...]) -> int:
        """Treatment that targets every abnormal, treatable vital."""
        k = 0
        for band, bit in zip(vitals, self.therapy):
            if bit is None:
                continue
            if (bit == 0 and band == HIGH) or (bit != 0 and band == LOW):
                k |= 1 << bit
        return k

    def ai_protocol(self, vitals) -> str:
        return TREATMENTS[self._needs(vitals)]

    def clinician_preference(self, vitals) -> str:
        """The clinician also gives antibiotics for high glucose and never ventilates a patient whose heart rate is low."""
        k = self._needs(vitals)
        named = dict(zip(self.vitals, vitals))
        if named.get("glucose") == HIGH:
            k |= 1
        if named.get("hr") == LOW:
            k &= ~(1 << 2)
        return TREATMENTS[k]

    def disagreement(self, s: Patient) -> Fraction:
        """Grows linearly with the number of therapies on which the recommendation and the clinician's preference differ."""
        cfg = self.config
        differ = bin(TREATMENTS.index(s.recommendation) ^ TREATMENTS.index(self.clinician_preference(s.vitals))).count("1")
        return cfg.q_agree + (cfg.q_disagree - cfg.q_agree) * Fraction(differ, len(THERAPIES))

    def override_probability(self, s: Patient) -> Fraction:
        if s.recommendation is None or s.status != ALIVE:
            return Fraction(0)
        return (1 - _f(repr(self.config.trust))) * self.disagreement(s)

    # policies -------------------------------------------------------------

    def ai_row(self, s: Patient) -> Dict[str, Fraction]:
        if s.recommendation is not None or s.status != ALIVE:
            return {NULL: Fraction(1)}
        best = self.ai_protocol(s.vitals)
        acc = self.config.ai_accuracy
        row = {t: (1 - acc) / 7 for t in TREATMENTS if t != best}
        row[best] = acc
        return row

    def clinician_row(self, s: Patient) -> Dict[str, Fraction]:
        if s.recommendation is None or s.status != ALIVE:
            return {NULL: Fraction(1)}
        p = self.override_probability(s)
        row = {ACCEPT: 1 - p}
        if p:
            row[f"override {self.clinician_preference(s.vitals)}"] = p
        return row

    def policies(self) -> PolicySet:
        return PolicySet([self.ai_row, self.clinician_row])

    # dynamics -------------------------------------------------------------

    def initial(self) -> Dict[Patient, Fraction]:
        """Product of the per-vital initial rows, conditioned on the patient being alive and not yet discharged."""
        per = [[(b, _f(p)) for b, p in enumerate(self.config.initial[v]) if _f(p) > 0] for v in self.vitals]
        out = {}
        for combo in itertools.product(*per):
            p = Fraction(1)
            for _, q in combo:
                p *= q
            vitals = tuple(b for b, _ in combo)
            if self.status_of(vitals) == ALIVE:
                s = Patient(vitals, ALIVE, None)
                out[s] = out.get(s, Fraction(0)) + p
        if not out:
            raise ConfigError("the initial distribution never yields a living, undischarged patient")
        total = sum(out.values())
        return {s: p / total for s, p in out.items()}

    def applied(self, s: Patient, ai: str, clinician: str) -> Optional[str]:
        if clinician == ACCEPT or clinician == NULL:
            return s.recommendation
        if clinician.startswith("override "):
            return clinician.split(" ", 1)[1]
        raise InputError(f"unknown clinician action {clinician!r}")

    def channels(self, s: Patient, joint: Tuple[str, str]):
        """``(next state, None)`` for deterministic turns, else ``(None, one band row per vital)``."""
        key = (s, joint)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ai, clinician = joint
        if ai not in AI_ACTIONS or clinician not in CLINICIAN_ACTIONS:
            raise InputError(f"unknown joint action {joint!r}")
        if s.status != ALIVE:
            out = (s, None)
        elif s.recommendation is None:
            # AI turn: the recommendation is written into the state
            out = (s._replace(recommendation=None if ai == NULL else ai), None)
        else:
            k = TREATMENTS.index(self.applied(s, ai, clinician))
            rows = []
            for band, bit, table in zip(s.vitals, self.therapy, self.rows):
                on = bit is not None and bool(k >> bit & 1)
                rows.append(table[f"{band}:{'on' if on else 'off'}"])
            out = (None, rows)
        self._cache[key] = out
        return out

    def status_of(self, vitals: Sequence[int]) -> str:
        abnormal = sum(1 for b in vitals if b != NORMAL)
        if abnormal >= self.config.death_threshold:
            return DEAD
        return DISCHARGED if abnormal == 0 else ALIVE

    def compose(self, s: Patient, joint, idx: Sequence[int]) -> Patient:
        fixed, rows = self.channels(s, joint)
        if fixed is not None:
            return fixed
        return Patient(tuple(idx), self.status_of(idx), None)

    def transition_row(self, s: Patient, joint) -> Dict[Patient, Fraction]:
        fixed, rows = self.channels(s, tuple(joint))
        if fixed is not None:
            return {fixed: Fraction(1)}
        out: Dict[Patient, Fraction] = {}
        options = [[(j, p) for j, p in enumerate(r) if p > 0] for r in rows]
        for combo in itertools.product(*options):
            p = Fraction(1)
            for _, q in combo:
                p *= q
            nxt = self.compose(s, joint, [j for j, _ in combo])
            out[nxt] = out.get(nxt, Fraction(0)) + p
        return out

    @staticmethod
    def value(s: Patient) -> float:
        return 0.0 if s.status == DEAD else 1.0


class SepsisTransition(Mechanism):
    """One inverse-CDF channel per vital, bands ordered low < normal < high."""

    def __init__(self, sim: Sepsis):
        self.sim = sim
        self.n_channels = len(sim.vitals)
        self.name = "S"
        self._breaks: Dict[tuple, tuple] = {}
        self._seen: Dict[tuple, None] = {}

    def _rows(self, pa):
        s, *joint = pa
        self._seen[tuple(pa)] = None
        return self.sim.channels(s, tuple(joint))

    def channel_breakpoints(self, pa):
        hit = self._breaks.get(pa)
        if hit is None:
            _, rows = self._rows(pa)
            hit = ((0.0, 1.0),) * self.n_channels if rows is None else tuple(breakpoints_from(list(r)) for r in rows)
            self._breaks[pa] = hit
        return hit

    def channel_probabilities(self, pa):
        _, rows = self._rows(pa)
        return ((Fraction(1),),) * self.n_channels if rows is None else tuple(tuple(r) for r in rows)

    def compose(self, pa, idx):
        s, *joint = pa
        return self.sim.compose(s, tuple(joint), idx)

    def decompose(self, pa, label):
        s, *joint = pa
        fixed, rows = self.sim.channels(s, tuple(joint))
        self._seen[tuple(pa)] = None
        if fixed is not None:
            if label != fixed:
                raise InputError(f"{label!r} cannot follow {s!r} under {tuple(joint)!r}")
            return (0,) * self.n_channels
        if (
            not isinstance(label, Patient)
            or label.recommendation is not None
            or len(label.vitals) != len(rows)
            or label.status != self.sim.status_of(label.vitals)
        ):
            raise InputError(f"{label!r} cannot follow a treatment of {s!r}")
        return tuple(label.vitals)

    def known_parent_assignments(self):
        return list(self._seen)


@dataclass
class SepsisBundle:
    sim: Sepsis
    mmdp: MmdpSpec
    policies: PolicySet
    responses: Dict[str, ResponseSpec]
    _model: Optional[ScmModel] = None

    def __iter__(self):
        return iter((self.mmdp, self.policies, self.responses))

    @property
    def model(self) -> ScmModel:
        if self._model is None:
            self._model = compile_mmdp(self.mmdp, self.policies)
        return self._model


def build_sepsis(config: Optional[SepsisConfig] = None, **overrides) -> SepsisBundle:
    """MMDP, AI and clinician policies and the survival response.

    Keyword overrides are applied to a default :class:`SepsisConfig`, e.g.
    ``build_sepsis(trust=0.25)``.
    """
    if config is None:
        config = SepsisConfig(**overrides)
    elif overrides:
        config = SepsisConfig(**{**config.__dict__, **overrides})
    sim = Sepsis(config)
    mmdp = MmdpSpec(
        n=2,
        action_spaces=[AI_ACTIONS, CLINICIAN_ACTIONS],
        transition=sim.transition_row,
        horizon=config.horizon,
        initial=sim.initial(),
        transition_mechanism=SepsisTransition(sim),
        state_value=Sepsis.value,
        agent_names=("AI", "Clinician"),
        name=f"sepsis-trust-{config.trust:g}",
        metadata={"environment": "sepsis", "trust": config.trust, "rounds": config.rounds},
    )
    responses = {"survival": ResponseSpec.state(config.horizon)}
    return SepsisBundle(sim, mmdp, sim.policies(), responses)


def failed_trajectories(bundle: SepsisBundle, count: int, seed: int = 0, max_draws: int = 100000) -> List[Trajectory]:
    """The first ``count`` prior samples (indices 0, 1, ...) in which the patient dies."""
    model = bundle.model
    out = []
    for index in range(max_draws):
        _, tau = sample_prior(model, seed, index=index)
        if tau.state(model.h).status == DEAD:
            out.append(tau)
            if len(out) == count:
                return out
    raise InputError(f"only {len(out)} failed trajectories in {max_draws} draws")


def accepted_throughout(tau: Trajectory) -> bool:
    """True if the clinician never overrode the AI in ``tau``."""
    model = tau.model
    return all(tau.action(2, t) in (NULL, ACCEPT) for t in range(model.h))


def with_trust(tau: Trajectory, bundle: SepsisBundle) -> Trajectory:
    """The same episode viewed under another bundle's model (e.g. a different trust level)."""
    return Trajectory(bundle.model, list(tau.values))


def ai_query(tau: Trajectory, bundle: SepsisBundle, rounds_before_death: int = 2) -> EffectQuery:
    """Query the AI's recommendation a few rounds before the patient died.

    The alternative is the AI's protocol treatment for that state, or the
    clinician's preference if the AI already followed its protocol.
    """
    model = tau.model
    sim = bundle.sim
    death = next((t for t in range(model.h + 1) if tau.state(t).status == DEAD), None)
    if death is None:
        raise InputError("the patient survives in this trajectory")
    ai_turns = [t for t in range(0, death) if tau.state(t).recommendation is None and tau.state(t).status == ALIVE]
    if not ai_turns:
        raise InputError("no AI turn before the patient died")
    t = ai_turns[max(0, len(ai_turns) - 1 - rounds_before_death)]
    s = tau.state(t)
    chosen = tau.action(1, t)
    alt = sim.ai_protocol(s.vitals)
    if alt == chosen:
        alt = sim.clinician_preference(s.vitals)
    if alt == chosen:
        alt = TREATMENTS[(TREATMENTS.index(chosen) + 1) % len(TREATMENTS)]
    return EffectQuery(tau, 1, t, alt, bundle.responses["survival"])
