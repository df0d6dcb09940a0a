"""Parse, audit, serialize and replay gridworld episode transcripts.

Grammar (one record per line; a line starting with whitespace continues the
previous one; blank lines are ignored)::

    Box 1: (C, C); Box 2: (C, C)
    Step: k; Reporter: <free text>;  Planner: (<instr>, <instr>); Reward <r>;
    Step: k; Actors (A1, A2): <a1>, <a2>; Reward: <r> (A1: <r1>, A2: <r2>);
    Step: k; Goal Reward: <g>; Total Reward: <total>;

``C`` is PINK, GREEN or YELLOW. All rewards are decimals. The audit checks
that each actor step's reward equals the sum of its parts, that the steps are
numbered 0, 1, 2, ... and that the step rewards plus the goal reward equal the
total, all in exact decimal arithmetic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from importlib import resources
from typing import Dict, List, Optional, Tuple

from ..errors import InputError, ReplayError
from ..scm import Trajectory, VarId
from .gridworld import NULL, GridworldBundle, build_gridworld, parse_planner_label, rollout

_BOXES = re.compile(r"^Box 1: \((\w+), (\w+)\); Box 2: \((\w+), (\w+)\)$")
_STEP = re.compile(r"^Step: (\d+); (.*)$")
_PLANNER = re.compile(r"^Reporter: (.*?)\s*Planner: (\(.*?\)); Reward (\S+);$")
_ACTORS = re.compile(r"^Actors \(A1, A2\): (.+?), (.+?); Reward: (\S+) \(A1: (\S+), A2: (\S+)\);$")
_GOAL = re.compile(r"^Goal Reward: (\S+); Total Reward: (\S+);$")


@dataclass
class ReplayStep:
    step: int
    kind: str  # "planner" | "actors"
    actions: Tuple[str, ...]
    reward: Decimal
    parts: Tuple[Decimal, ...] = ()
    reporter: str = ""


@dataclass
class ReplayRecord:
    boxes: Tuple[Tuple[str, str], Tuple[str, str]]
    steps: List[ReplayStep]
    goal_step: int
    goal: Decimal
    total: Decimal

    def __eq__(self, other):
        return isinstance(other, ReplayRecord) and serialize(self) == serialize(other)


@dataclass
class ReplayAudit:
    total: Decimal
    step_rewards: Dict[int, Decimal]
    goal: Decimal
    checks: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total": str(self.total),
            "goal": str(self.goal),
            "step_rewards": {str(k): str(v) for k, v in sorted(self.step_rewards.items())},
            "checks": list(self.checks),
        }


def _dec(text: str, where: str) -> Decimal:
    try:
        return Decimal(text)
    except InvalidOperation:
        raise ReplayError(f"{where}: {text!r} is not a decimal number") from None


def _logical_lines(text: str) -> List[str]:
    lines: List[str] = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        if raw[:1].isspace() and lines:
            lines[-1] = lines[-1] + " " + raw.strip()
        else:
            lines.append(raw.strip())
    return lines


def replay_parse(text: str) -> ReplayRecord:
    """Parse a transcript into a :class:`ReplayRecord` (no arithmetic checks)."""
    lines = _logical_lines(text)
    if not lines:
        raise ReplayError("empty transcript")
    m = _BOXES.match(lines[0])
    if not m:
        raise ReplayError(f"line 1: expected the box header, got {lines[0]!r}")
    cols = [c.upper() for c in m.groups()]
    boxes = ((cols[0], cols[1]), (cols[2], cols[3]))
    steps: List[ReplayStep] = []
    goal = None
    for line in lines[1:]:
        sm = _STEP.match(line)
        if not sm:
            raise ReplayError(f"cannot parse line {line!r}")
        k, body = int(sm.group(1)), sm.group(2)
        where = f"step {k}"
        if goal is not None:
            raise ReplayError(f"{where}: steps after the goal line")
        if (pm := _PLANNER.match(body)):
            label = pm.group(2)
            try:
                parse_planner_label(label)
            except InputError as exc:
                raise ReplayError(f"{where}: {exc}") from None
            steps.append(ReplayStep(k, "planner", (label,), _dec(pm.group(3), where), (), pm.group(1).strip()))
        elif (am := _ACTORS.match(body)):
            a1, a2 = am.group(1).strip(), am.group(2).strip()
            parts = (_dec(am.group(4), where), _dec(am.group(5), where))
            steps.append(ReplayStep(k, "actors", (a1, a2), _dec(am.group(3), where), parts))
        elif (gm := _GOAL.match(body)):
            goal = (k, _dec(gm.group(1), where), _dec(gm.group(2), where))
        else:
            raise ReplayError(f"{where}: cannot parse {body!r}")
    if goal is None:
        raise ReplayError("transcript has no goal line")
    return ReplayRecord(boxes, steps, goal[0], goal[1], goal[2])


def audit(record: ReplayRecord) -> ReplayAudit:
    """Exact decimal checks; the first failure raises :class:`ReplayError` naming the step."""
    checks = []
    expected = 0
    rewards: Dict[int, Decimal] = {}
    for st in record.steps:
        if st.step != expected:
            raise ReplayError(f"step {st.step}: expected step number {expected}")
        expected += 1
        if st.kind == "actors":
            if sum(st.parts, Decimal(0)) != st.reward:
                raise ReplayError(f"step {st.step}: reward {st.reward} differs from the sum of its parts {list(map(str, st.parts))}")
            checks.append(f"step {st.step}: {' + '.join(map(str, st.parts))} = {st.reward}")
        rewards[st.step] = st.reward
    if record.goal_step != expected:
        raise ReplayError(f"step {record.goal_step}: goal line should be step {expected}")
    total = sum(rewards.values(), Decimal(0)) + record.goal
    if total != record.total:
        raise ReplayError(f"step {record.goal_step}: rewards sum to {total}, transcript says {record.total}")
    checks.append(f"total: {total}")
    return ReplayAudit(total, rewards, record.goal, checks)


def serialize(record: ReplayRecord) -> str:
    """Canonical text form; planner steps and runs of actor steps are separated by blank lines."""
    b = record.boxes
    out = [f"Box 1: ({b[0][0]}, {b[0][1]}); Box 2: ({b[1][0]}, {b[1][1]})"]
    previous = None
    for st in record.steps:
        if st.kind == "planner" or previous != "actors":
            out.append("")
        if st.kind == "planner":
            out.append(f"Step: {st.step}; Reporter: {st.reporter}")
            out.append(f"         Planner: {st.actions[0]}; Reward {st.reward};")
        else:
            p = st.parts
            out.append(
                f"Step: {st.step}; Actors (A1, A2): {st.actions[0]}, {st.actions[1]}; "
                f"Reward: {st.reward} (A1: {p[0]}, A2: {p[1]});"
            )
        previous = st.kind
    out.append("")
    out.append(f"Step: {record.goal_step}; Goal Reward: {record.goal}; Total Reward: {record.total};")
    return "\n".join(out) + "\n"


def load_fixture(number: int) -> str:
    """Text of one of the shipped transcripts (1: factual, 2: A2 intervention, 3: planner intervention)."""
    path = resources.files("cfx.data").joinpath("trajectories").joinpath(f"trajectory_{int(number)}.txt")
    if not path.is_file():
        raise InputError(f"no shipped transcript number {number}")
    return path.read_text()


@dataclass
class ReplayResult:
    record: ReplayRecord
    audit: ReplayAudit
    trajectory: Trajectory
    model_total: Decimal
    policy_deviations: List[Tuple[int, str, str, str]]

    def to_dict(self) -> dict:
        return {
            "audit": self.audit.to_dict(),
            "model_total": str(self.model_total),
            "policy_deviations": [
                {"time": t, "agent": a, "scripted": s, "transcript": x} for t, a, s, x in self.policy_deviations
            ],
        }


def replay(text: str, bundle: Optional[GridworldBundle] = None) -> ReplayResult:
    """Audit a transcript, then rebuild it in the model and compare every reward.

    All actions are forced to the transcript's, and the penalty of each actor
    step is the actor's reward minus the step cost. The scripted policies'
    choices are compared with the transcript's and differences are reported
    (they locate the intervention in a counterfactual transcript).
    """
    record = replay_parse(text)
    aud = audit(record)
    bundle = bundle or build_gridworld()
    model, world = bundle.model, bundle.world
    names = model.agent_names
    cost = Decimal(str(world.config.step_cost.numerator)) / Decimal(world.config.step_cost.denominator)
    forced: Dict[VarId, str] = {}
    penalties: Dict[Tuple[int, int], float] = {}
    for st in record.steps:
        if st.step >= model.h:
            raise ReplayError(f"step {st.step}: beyond the model horizon {model.h}")
        if st.kind == "planner":
            acts = (NULL, NULL, st.actions[0])
        else:
            acts = (st.actions[0], st.actions[1], NULL)
            for j, part in enumerate(st.parts):
                pen = part - cost
                if pen:
                    penalties[(st.step, j + 1)] = float(pen)
        for i, a in enumerate(acts, start=1):
            forced[VarId.action(i, st.step)] = a
    for t in range(record.goal_step, model.h):
        for i in range(1, model.n + 1):
            forced[VarId.action(i, t)] = NULL
    s0 = next(iter(bundle.mmdp.initial))
    s0 = s0._replace(boxes=tuple(tuple(b) for b in record.boxes))
    try:
        tau = rollout(bundle, penalties, forced, initial=s0)
    except InputError as exc:
        raise ReplayError(f"transcript cannot be produced by the model: {exc}") from None
    deviations = []
    for st in record.steps:
        s = tau.state(st.step)
        for i in range(1, model.n + 1):
            scripted = model.mechanisms[VarId.action(i, st.step)].evaluate((s,), (0.5,))
            actual = tau.action(i, st.step)
            if scripted != actual:
                deviations.append((st.step, names[i - 1], scripted, actual))
        got = tau.state(st.step + 1)
        if st.kind == "actors" and got.reward_parts() != st.parts:
            raise ReplayError(f"step {st.step}: model rewards {list(map(str, got.reward_parts()))} differ from the transcript")
        if st.kind == "planner" and got.exact_reward() != st.reward:
            raise ReplayError(f"step {st.step}: model reward {got.exact_reward()} differs from the transcript")
    goal_state = tau.state(record.goal_step + 1)
    if Decimal(repr(goal_state.goal)) != record.goal:
        raise ReplayError(f"step {record.goal_step}: model goal reward {goal_state.goal} differs from {record.goal}")
    model_total = sum((tau.state(k).exact_reward() for k in range(model.h + 1)), Decimal(0))
    if model_total != record.total:
        raise ReplayError(f"step {record.goal_step}: model total {model_total} differs from {record.total}")
    return ReplayResult(record, aud, tau, model_total, deviations)


def penalties_of(record: ReplayRecord, step_cost: Decimal = Decimal("-0.2")) -> Dict[Tuple[int, int], float]:
    """Penalties per ``(step, actor)`` implied by a transcript."""
    out = {}
    for st in record.steps:
        if st.kind == "actors":
            for j, part in enumerate(st.parts):
                if part - step_cost:
                    out[(st.step, j + 1)] = float(part - step_cost)
    return out
