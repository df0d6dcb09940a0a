"""Two actors and a planner delivering coloured objects on a grid.

Agents are ``A1``, ``A2`` (actors) and ``Planner``. Turns follow a fixed
script: planner (examine), actors move next to their box, planner (pickup),
actors pick up, planner (goto), then actors walk to a delivery star. The
episode ends on the first actor turn in which both actors stand on a star and
both choose ``NULL``; that transition pays the delivery rewards and the state
becomes absorbing.

The only randomness is the penalty drawn when an actor enters a coloured cell.
Each (actor, penalty cell) pair owns an independent noise channel, so the
factual draw of one cell says nothing about a cell the actor never visited.
The reward of the step taken at time ``t`` is stored in ``S_{t+1}``.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from importlib import resources
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from ..errors import ConfigError, InputError
from ..mmdp import MmdpSpec, PolicySet, compile_mmdp
from ..query import EffectQuery, ResponseSpec
from ..scm import Mechanism, ScmModel, Trajectory, VarId, breakpoints_from, to_fraction, validate_probabilities

COLORS = ("PINK", "GREEN", "YELLOW")
MOVES = {"up": (-1, 0), "left": (0, -1), "down": (1, 0), "right": (0, 1)}
TIE_BREAK = ("up", "left", "down", "right")
NULL = "NULL"
ACTOR_ACTIONS = (NULL, "up", "down", "left", "right", "pickup pink", "pickup green", "pickup yellow")
INSTRUCTIONS = (
    "examine box 1",
    "examine box 2",
    "pickup pink",
    "pickup green",
    "pickup yellow",
    "goto pink",
    "goto green",
    "goto yellow",
)

PLAN_EXAMINE, EXAMINE, PLAN_PICKUP, PICKUP, PLAN_GOTO, DELIVER, DONE = range(7)
PLANNER_PHASES = (PLAN_EXAMINE, PLAN_PICKUP, PLAN_GOTO)

Cell = Tuple[int, int]


def planner_label(first: str, second: str) -> str:
    return f"({first}, {second})"


def parse_planner_label(label: str) -> Tuple[Optional[str], Optional[str]]:
    if label == NULL:
        return (None, None)
    inner = label.strip()
    if not (inner.startswith("(") and inner.endswith(")")):
        raise InputError(f"planner action {label!r} must look like '(instr, instr)'")
    parts = [p.strip() for p in inner[1:-1].split(",")]
    if len(parts) != 2 or any(p not in INSTRUCTIONS for p in parts):
        raise InputError(f"unknown planner instructions in {label!r}")
    return parts[0], parts[1]


PLANNER_ACTIONS = (NULL,) + tuple(planner_label(a, b) for a, b in itertools.product(INSTRUCTIONS, INSTRUCTIONS))


class GridState(NamedTuple):
    phase: int
    pos: Tuple[Cell, ...]
    carry: Tuple[Optional[str], ...]
    instr: Tuple[Optional[str], ...]
    boxes: Tuple[Tuple[str, ...], ...]
    pen: Tuple[float, ...]
    cost: Tuple[float, ...]
    goal: float

    def reward(self) -> float:
        return sum(self.pen) + sum(self.cost) + self.goal

    def reward_parts(self) -> Tuple[Decimal, ...]:
        """Per-actor step reward as exact decimals (goal excluded)."""
        return tuple(Decimal(repr(p)) + Decimal(repr(c)) for p, c in zip(self.pen, self.cost))

    def exact_reward(self) -> Decimal:
        return sum(self.reward_parts(), Decimal(0)) + Decimal(repr(self.goal))


@dataclass(frozen=True)
class PenaltyRow:
    values: Tuple[float, ...]
    reduced: Tuple[float, ...]
    probs: Tuple[Fraction, ...]

    @property
    def mean(self) -> Fraction:
        return sum((Fraction(repr(v)) * p for v, p in zip(self.values, self.probs)), Fraction(0))

    @property
    def reduced_mean(self) -> Fraction:
        return sum((Fraction(repr(v)) * p for v, p in zip(self.reduced, self.probs)), Fraction(0))

    def variance(self, reduced: bool = False) -> Fraction:
        vals = self.reduced if reduced else self.values
        m = self.reduced_mean if reduced else self.mean
        return sum(((Fraction(repr(v)) - m) ** 2 * p for v, p in zip(vals, self.probs)), Fraction(0))


@dataclass
class GridworldConfig:
    grid: Sequence[str]
    legend: Mapping[str, str]
    objects: object  # {"1": [c, c], ...} or "random"
    reward_table: Mapping[str, PenaltyRow]
    step_cost: Fraction = Fraction(-1, 5)
    delivery_rewards: Mapping[str, float] = field(default_factory=lambda: {"PINK": 180, "GREEN": 150, "YELLOW": 90})
    discount: float = 0.99
    horizon: int = 21
    actor_boxes: Sequence[int] = (1, 2)
    name: str = "gridworld"

    @classmethod
    def from_dict(cls, data: Mapping) -> "GridworldConfig":
        try:
            table = {
                k: PenaltyRow(
                    tuple(float(v) for v in row["values"]),
                    tuple(float(v) for v in row["reduced"]),
                    tuple(to_fraction(p) for p in row["probs"]),
                )
                for k, row in data["reward_table"].items()
            }
            return cls(
                grid=list(data["grid"]),
                legend=dict(data["legend"]),
                objects=data.get("objects", "random"),
                reward_table=table,
                step_cost=to_fraction(data.get("step_cost", "-0.2")),
                delivery_rewards={k.upper(): float(v) for k, v in data.get("delivery_rewards", {}).items()}
                or {"PINK": 180.0, "GREEN": 150.0, "YELLOW": 90.0},
                discount=float(data.get("discount", 0.99)),
                horizon=int(data.get("horizon", 21)),
                actor_boxes=tuple(int(b) for b in data.get("actor_boxes", (1, 2))),
                name=str(data.get("name", "gridworld")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid gridworld config: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "GridworldConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def preset(cls) -> "GridworldConfig":
        text = resources.files("cfx.data").joinpath("gridworld_preset.json").read_text()
        return cls.from_dict(json.loads(text))


@dataclass
class Layout:
    rows: int
    cols: int
    walls: frozenset
    boxes: Tuple[Cell, ...]
    spawns: Tuple[Cell, ...]
    deliveries: Dict[Cell, str]
    penalties: Dict[Cell, Tuple[str, str]]  # cell -> (colour, reward-table key)

    def passable(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.rows and 0 <= c < self.cols and cell not in self.walls and cell not in self.boxes

    def component(self, start: Cell) -> List[Cell]:
        seen = {start}
        queue = deque([start])
        while queue:
            r, c = queue.popleft()
            for dr, dc in MOVES.values():
                nb = (r + dr, c + dc)
                if nb not in seen and self.passable(nb):
                    seen.add(nb)
                    queue.append(nb)
        return sorted(seen)


def parse_layout(config: GridworldConfig) -> Layout:
    grid = list(config.grid)
    if not grid or len({len(r) for r in grid}) != 1:
        raise ConfigError("grid rows must be non-empty and of equal length")
    walls, boxes, deliveries, penalties = set(), [], {}, {}
    spawns: Dict[int, Cell] = {}
    for r, row in enumerate(grid):
        for c, ch in enumerate(row):
            kind = config.legend.get(ch)
            if kind is None:
                raise ConfigError(f"grid symbol {ch!r} at ({r}, {c}) is missing from the legend")
            parts = kind.split(":")
            if parts[0] == "wall":
                walls.add((r, c))
            elif parts[0] == "box":
                boxes.append((r, c))
            elif parts[0] == "spawn":
                spawns[int(parts[1])] = (r, c)
            elif parts[0] == "delivery":
                deliveries[(r, c)] = parts[1].upper()
            elif parts[0] == "penalty":
                colour, key = parts[1].upper(), parts[2]
                if key not in config.reward_table:
                    raise ConfigError(f"penalty distribution {key!r} is not in the reward table")
                penalties[(r, c)] = (colour, key)
            elif parts[0] != "blank":
                raise ConfigError(f"unknown cell kind {kind!r}")
    if sorted(spawns) != [1, 2]:
        raise ConfigError("the layout needs exactly two spawn cells (1 and 2)")
    return Layout(len(grid), len(grid[0]), frozenset(walls), tuple(boxes), (spawns[1], spawns[2]), deliveries, penalties)


def _validate_rewards(config: GridworldConfig) -> None:
    for key, row in config.reward_table.items():
        if not (len(row.values) == len(row.reduced) == len(row.probs)):
            raise ConfigError(f"reward row {key!r} has mismatched lengths")
        validate_probabilities(list(row.probs), f"in reward row {key!r}")
    for colour in config.delivery_rewards:
        if colour not in COLORS:
            raise ConfigError(f"unknown delivery colour {colour!r}")


class Gridworld:
    """Layout, scripted policies and the multi-channel transition mechanism."""

    def __init__(self, config: GridworldConfig):
        _validate_rewards(config)
        self.config = config
        self.layout = lay = parse_layout(config)
        if len(config.actor_boxes) != 2 or any(not 1 <= b <= len(lay.boxes) for b in config.actor_boxes):
            raise ConfigError("actor_boxes must name one existing box per actor")
        self.components = [frozenset(lay.component(s)) for s in lay.spawns]
        for j, comp in enumerate(self.components):
            box = lay.boxes[config.actor_boxes[j] - 1]
            if not any((box[0] + dr, box[1] + dc) in comp for dr, dc in MOVES.values()):
                raise ConfigError(f"actor {j + 1} cannot reach box {config.actor_boxes[j]}")
        # one channel per (actor, penalty cell the actor can reach)
        self.channels: List[Tuple[int, Cell]] = [
            (j, cell) for j in range(2) for cell in sorted(lay.penalties) if cell in self.components[j]
        ]
        self.channel_of = {key: c for c, key in enumerate(self.channels)}
        self.step_cost = float(config.step_cost)
        self._dist_cache: Dict[Tuple[int, frozenset], Dict[Cell, int]] = {}
        self._det_cache: Dict[tuple, tuple] = {}

    # geometry -----------------------------------------------------------

    def _distances(self, actor: int, targets: frozenset) -> Dict[Cell, int]:
        key = (actor, targets)
        if key not in self._dist_cache:
            dist = {t: 0 for t in targets}
            queue = deque(targets)
            while queue:
                r, c = queue.popleft()
                for dr, dc in MOVES.values():
                    nb = (r + dr, c + dc)
                    if nb not in dist and nb in self.components[actor]:
                        dist[nb] = dist[(r, c)] + 1
                        queue.append(nb)
            self._dist_cache[key] = dist
        return self._dist_cache[key]

    def step_towards(self, actor: int, pos: Cell, targets: Sequence[Cell]) -> str:
        """First move of a shortest path, ties broken in the order up, left, down, right."""
        targets = frozenset(t for t in targets if t in self.components[actor])
        dist = self._distances(actor, targets)
        d = dist.get(pos)
        if d is None or d == 0:
            return NULL
        for name in TIE_BREAK:
            dr, dc = MOVES[name]
            if dist.get((pos[0] + dr, pos[1] + dc)) == d - 1:
                return name
        return NULL

    def box_neighbours(self, box_id: int) -> List[Cell]:
        r, c = self.layout.boxes[box_id - 1]
        return [(r + dr, c + dc) for dr, dc in MOVES.values() if self.layout.passable((r + dr, c + dc))]

    def star(self, actor: int, colour: str) -> List[Cell]:
        return [cell for cell, col in self.layout.deliveries.items() if col == colour and cell in self.components[actor]]

    # states ---------------------------------------------------------------

    def initial_states(self) -> Dict[GridState, Fraction]:
        lay, objects = self.layout, self.config.objects
        if objects == "random":
            pairs = list(itertools.combinations(COLORS, 2))
            options = list(itertools.product(pairs, repeat=len(lay.boxes)))
        else:
            try:
                options = [tuple(tuple(str(c).upper() for c in objects[str(b + 1)]) for b in range(len(lay.boxes)))]
            except (KeyError, TypeError):
                raise ConfigError("objects must list the colours of every box, or be 'random'") from None
        p = Fraction(1, len(options))
        out = {}
        for boxes in options:
            s = GridState(PLAN_EXAMINE, lay.spawns, (None, None), (None, None), boxes, (0.0, 0.0), (0.0, 0.0), 0.0)
            out[s] = out.get(s, Fraction(0)) + p
        return out

    # policies -------------------------------------------------------------

    def planner_action(self, s: GridState) -> str:
        cfg = self.config
        if s.phase == PLAN_EXAMINE:
            return planner_label(*(f"examine box {b}" for b in cfg.actor_boxes))
        if s.phase == PLAN_PICKUP:
            picks = []
            for j in range(2):
                contents = s.boxes[cfg.actor_boxes[j] - 1]
                best = max(contents, key=lambda col: (cfg.delivery_rewards.get(col, 0.0), -COLORS.index(col)))
                picks.append(f"pickup {best.lower()}")
            return planner_label(*picks)
        if s.phase == PLAN_GOTO:
            goes = []
            for j in range(2):
                col = s.carry[j]
                goes.append(f"goto {col.lower()}" if col else f"examine box {cfg.actor_boxes[j]}")
            return planner_label(*goes)
        return NULL

    def actor_action(self, j: int, s: GridState) -> str:
        instr = s.instr[j]
        if instr is None:
            return NULL
        if s.phase == EXAMINE and instr.startswith("examine box "):
            return self.step_towards(j, s.pos[j], self.box_neighbours(int(instr.rsplit(" ", 1)[1])))
        if s.phase == PICKUP and instr.startswith("pickup "):
            return instr
        if s.phase == DELIVER and instr.startswith("goto "):
            return self.step_towards(j, s.pos[j], self.star(j, instr.split(" ", 1)[1].upper()))
        return NULL

    def policies(self) -> PolicySet:
        return PolicySet(
            [
                lambda s: {self.actor_action(0, s): 1},
                lambda s: {self.actor_action(1, s): 1},
                lambda s: {self.planner_action(s): 1},
            ]
        )

    # dynamics -------------------------------------------------------------

    def deterministic_part(self, s: GridState, joint: Tuple[str, ...]):
        """Next state with zero penalties, plus the penalty row each actor draws from (or None)."""
        key = (s, joint)
        hit = self._det_cache.get(key)
        if hit is not None:
            return hit
        if len(joint) != 3:
            raise InputError("a joint action needs one entry per agent (A1, A2, Planner)")
        zeros = (0.0, 0.0)
        draws: List[Optional[Tuple[int, PenaltyRow, bool]]] = [None, None]
        if s.phase == DONE:
            nxt = s._replace(pen=zeros, cost=zeros, goal=0.0)
        elif s.phase in PLANNER_PHASES:
            nxt = s._replace(phase=s.phase + 1, instr=parse_planner_label(joint[2]), pen=zeros, cost=zeros, goal=0.0)
        elif s.phase == DELIVER and joint[0] == NULL and joint[1] == NULL and all(
            s.pos[j] in self.layout.deliveries for j in range(2)
        ):
            goal = 0.0
            for j in range(2):
                if s.carry[j] is not None and self.layout.deliveries[s.pos[j]] == s.carry[j]:
                    goal += float(self.config.delivery_rewards.get(s.carry[j], 0.0))
            nxt = s._replace(phase=DONE, pen=zeros, cost=zeros, goal=goal)
        else:
            pos, carry = list(s.pos), list(s.carry)
            for j in range(2):
                a = joint[j]
                if a in MOVES:
                    dr, dc = MOVES[a]
                    target = (s.pos[j][0] + dr, s.pos[j][1] + dc)
                    if self.layout.passable(target):
                        pos[j] = target
                elif a.startswith("pickup ") and carry[j] is None:
                    colour = a.split(" ", 1)[1].upper()
                    for b, cell in enumerate(self.layout.boxes):
                        adjacent = abs(cell[0] - s.pos[j][0]) + abs(cell[1] - s.pos[j][1]) == 1
                        if adjacent and colour in s.boxes[b]:
                            carry[j] = colour
                            break
                elif a not in ACTOR_ACTIONS:
                    raise InputError(f"unknown actor action {a!r}")
                if pos[j] != s.pos[j] and pos[j] in self.layout.penalties:
                    colour, row_key = self.layout.penalties[pos[j]]
                    draws[j] = (self.channel_of[(j, pos[j])], self.config.reward_table[row_key], carry[j] == colour)
            phase = s.phase + 1 if s.phase in (EXAMINE, PICKUP) else s.phase
            nxt = GridState(phase, tuple(pos), tuple(carry), s.instr, s.boxes, zeros, (self.step_cost,) * 2, 0.0)
        out = (nxt, tuple(draws))
        self._det_cache[key] = out
        return out

    def transition_row(self, s: GridState, joint: Tuple[str, ...]) -> Dict[GridState, Fraction]:
        base, draws = self.deterministic_part(s, tuple(joint))
        options = []
        for d in draws:
            if d is None:
                options.append([(0.0, Fraction(1))])
            else:
                _, row, reduced = d
                vals = row.reduced if reduced else row.values
                options.append([(v, p) for v, p in zip(vals, row.probs) if p > 0])
        out: Dict[GridState, Fraction] = {}
        for combo in itertools.product(*options):
            nxt = base._replace(pen=tuple(v for v, _ in combo))
            p = Fraction(1)
            for _, q in combo:
                p *= q
            out[nxt] = out.get(nxt, Fraction(0)) + p
        return out

    def state_value(self, s: GridState) -> float:
        return s.reward()


class GridTransition(Mechanism):
    """Transition of the gridworld split into one inverse-CDF channel per (actor, penalty cell)."""

    def __init__(self, world: Gridworld):
        self.world = world
        self.n_channels = len(world.channels)
        self.name = "S"
        self._unit = (0.0, 1.0)
        self._breaks: Dict[tuple, tuple] = {}
        self._seen: Dict[tuple, None] = {}

    def _split(self, pa):
        s, *joint = pa
        self._seen[tuple(pa)] = None
        return self.world.deterministic_part(s, tuple(joint))

    def channel_breakpoints(self, pa):
        hit = self._breaks.get(pa)
        if hit is None:
            _, draws = self._split(pa)
            out = [self._unit] * self.n_channels
            for d in draws:
                if d is not None:
                    out[d[0]] = breakpoints_from(list(d[1].probs))
            hit = self._breaks[pa] = tuple(out)
        return hit

    def channel_probabilities(self, pa):
        _, draws = self._split(pa)
        out = [(Fraction(1),)] * self.n_channels
        for d in draws:
            if d is not None:
                out[d[0]] = tuple(d[1].probs)
        return tuple(out)

    def compose(self, pa, idx):
        base, draws = self._split(pa)
        pen = []
        for d in draws:
            if d is None:
                pen.append(0.0)
            else:
                ch, row, reduced = d
                pen.append((row.reduced if reduced else row.values)[idx[ch]])
        return base._replace(pen=tuple(pen))

    def decompose(self, pa, label):
        base, draws = self._split(pa)
        if not isinstance(label, GridState) or label._replace(pen=base.pen) != base:
            raise InputError(f"state {label!r} cannot follow {pa!r}")
        idx = [0] * self.n_channels
        for j, d in enumerate(draws):
            if d is None:
                if label.pen[j] != 0.0:
                    raise InputError(f"actor {j + 1} drew a penalty without entering a penalty cell")
                continue
            ch, row, reduced = d
            vals = row.reduced if reduced else row.values
            if label.pen[j] not in vals:
                raise InputError(f"penalty {label.pen[j]!r} is not a value of this cell")
            idx[ch] = vals.index(label.pen[j])
        return tuple(idx)

    def known_parent_assignments(self):
        return list(self._seen)


@dataclass
class GridworldBundle:
    world: Gridworld
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


def build_gridworld(config: Optional[GridworldConfig] = None) -> GridworldBundle:
    """MMDP, scripted policies and response specs for the gridworld (preset by default)."""
    config = config or GridworldConfig.preset()
    world = Gridworld(config)
    mmdp = MmdpSpec(
        n=3,
        action_spaces=[ACTOR_ACTIONS, ACTOR_ACTIONS, PLANNER_ACTIONS],
        transition=world.transition_row,
        horizon=config.horizon,
        initial=world.initial_states(),
        transition_mechanism=GridTransition(world),
        state_value=world.state_value,
        agent_names=("A1", "A2", "Planner"),
        name=config.name,
        metadata={"environment": "gridworld", "discount": config.discount},
    )
    h = config.horizon
    responses = {
        "return": ResponseSpec.discounted_return(config.discount, 0, h),
        "undiscounted": ResponseSpec.discounted_return(1.0, 0, h),
    }
    return GridworldBundle(world, mmdp, world.policies(), responses)


# rollouts with pinned penalties -------------------------------------------


def rollout(
    bundle: GridworldBundle,
    penalties: Mapping[Tuple[int, int], float] = None,
    interventions: Mapping[VarId, str] = None,
    initial: Optional[GridState] = None,
) -> Trajectory:
    """Scripted rollout with penalty values forced per ``(step, actor)``.

    ``penalties[(t, j)]`` is the penalty actor ``j`` (1 or 2) receives for the
    step taken at time ``t``. A penalty cell entered without an entry gets the
    cell's lowest-ranked value; an entry for a step without a penalty draw is
    an error, as is a value the cell cannot produce.
    """
    penalties = dict(penalties or {})
    interventions = dict(interventions or {})
    model = bundle.model
    world = bundle.world
    s = initial if initial is not None else next(iter(bundle.mmdp.initial))
    values: List = [s]
    used = set()
    for t in range(model.h):
        joint = []
        for i in range(1, 4):
            v = VarId.action(i, t)
            joint.append(interventions[v] if v in interventions else model.mechanisms[v].evaluate((s,), (0.5,)))
        values.extend(joint)
        base, draws = world.deterministic_part(s, tuple(joint))
        pen = []
        for j, d in enumerate(draws):
            want = penalties.get((t, j + 1))
            if d is None:
                if want not in (None, 0, 0.0):
                    raise InputError(f"step {t}: actor {j + 1} enters no penalty cell, got penalty {want}")
                pen.append(0.0)
                continue
            _, row, reduced = d
            vals = row.reduced if reduced else row.values
            if want is None:
                want = vals[0]
            if float(want) not in vals:
                raise InputError(f"step {t}: penalty {want} is not a value of the cell actor {j + 1} enters")
            used.add((t, j + 1))
            pen.append(float(want))
        s = base._replace(pen=tuple(pen))
        values.append(s)
    extra = {k for k, v in penalties.items() if v not in (0, 0.0)} - used
    if extra:
        raise InputError(f"penalties given for steps without a penalty draw: {sorted(extra)}")
    return Trajectory(model, values)


def standard_queries(bundle: GridworldBundle, tau: Trajectory, response: Optional[ResponseSpec] = None) -> Dict[str, EffectQuery]:
    """The two interventions studied on the factual episode.

    ``a2_pickup_green``: A2 picks up the green object at time 3.
    ``planner_pickup_green``: the planner tells A2 to pick up green at time 2.
    """
    response = response or bundle.responses["return"]
    first = tau.action(3, 2)
    a1 = parse_planner_label(first)[0] or "pickup pink"
    return {
        "a2_pickup_green": EffectQuery(tau, 2, 3, "pickup green", response),
        "planner_pickup_green": EffectQuery(tau, 3, 2, planner_label(a1, "pickup green"), response),
    }
