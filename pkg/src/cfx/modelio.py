"""JSON model, MMDP and trajectory files.

Model file::

    {"format": "cfx-model", "n": 1, "h": 2, "agent_names": ["a"],
     "cpds": {"S0": {"domain": [0, 1], "rows": [{"parents": [], "probs": ["1/2", "1/2"]}]},
              "A1": {"domain": ["x", "y"], "rows": [{"parents": [0], "probs": ["1", "0"]}, ...]},
              "S":  {"domain": [0, 1], "rows": [{"parents": [0, "x"], "probs": ["0.3", "0.7"]}, ...]}},
     "orderings": {"S": [1, 0]},
     "state_values": {"0": 0.0, "1": 1.0}}

``cpds`` keys are either one variable (``S3``, ``A2_0``) or a time-shared
template: ``S`` for every ``S_t`` with ``t >= 1`` and ``A<i>`` for every action
of agent ``i``. A variable-specific entry wins over the template. Parent
lists follow the causal order ``[S_t, A_1t, ..., A_nt]``. Probabilities may be
decimal strings, ``"p/q"`` rationals or JSON numbers. ``state_values`` is
keyed by ``str(label)``; without it labels must be numeric.

MMDP file::

    {"format": "cfx-mmdp", "states": [0, 1], "agents": ["a"], "actions": [["x", "y"]],
     "transitions": [[0, ["x"], 1, "0.3"], ...], "horizon": 2,
     "initial": {"0": "1"}, "policies": [{"0": {"x": "1"}, "1": {"y": "1"}}]}

Trajectory file: ``{"values": [...]}`` in causal order, or
``{"assignment": {"S0": ..., "A1_0": ...}}``.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

from .errors import ConfigError, InputError, ModelError
from .mmdp import MmdpSpec, PolicySet, compile_mmdp
from .scm import Cpd, ScmModel, Trajectory, VarId, to_fraction

Source = Union[str, Path, Mapping]


def _read(source: Source) -> dict:
    if isinstance(source, Mapping):
        return dict(source)
    try:
        with open(source) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such file: {source}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON ({exc})") from None


def _label(x):
    # JSON has no tuples; nested lists become tuples so labels stay hashable
    if isinstance(x, list):
        return tuple(_label(v) for v in x)
    return x


def _json_label(x):
    if isinstance(x, tuple):
        return [_json_label(v) for v in x]
    if isinstance(x, (str, int, float, bool)) or x is None:
        return x
    raise InputError(f"label {x!r} cannot be written to JSON")


def _prob_text(p: Fraction) -> str:
    return str(p.numerator) if p.denominator == 1 else f"{p.numerator}/{p.denominator}"


def _value_lookup(table: Optional[Mapping]) -> Optional[Callable]:
    if table is None:
        return None
    by_text = {str(k): float(v) for k, v in table.items()}

    def value(label):
        key = str(_json_label(label)) if isinstance(label, tuple) else str(label)
        if key not in by_text:
            raise ModelError(f"no state value for {label!r}")
        return by_text[key]

    return value


# models ---------------------------------------------------------------------


def _cpd_from(entry: Mapping, name: str) -> Cpd:
    try:
        domain = [_label(v) for v in entry["domain"]]
        rows = entry["rows"]
    except (KeyError, TypeError):
        raise ConfigError(f"cpd {name}: needs 'domain' and 'rows'") from None
    table = {}
    for row in rows:
        try:
            pa = tuple(_label(v) for v in row["parents"])
            probs = [to_fraction(p) for p in row["probs"]]
        except (KeyError, TypeError):
            raise ConfigError(f"cpd {name}: every row needs 'parents' and 'probs'") from None
        if pa in table:
            raise ConfigError(f"cpd {name}: duplicate row for parents {list(pa)!r}")
        table[pa] = probs
    return Cpd(domain, table, name=name)


def model_from_dict(data: Mapping) -> ScmModel:
    try:
        n, h = int(data["n"]), int(data["h"])
        cpds = data["cpds"]
    except (KeyError, TypeError, ValueError):
        raise ConfigError("model file needs integer 'n', 'h' and a 'cpds' object") from None
    built: Dict[str, Cpd] = {key: _cpd_from(entry, key) for key, entry in cpds.items()}
    orderings = data.get("orderings") or {}
    for key, order in orderings.items():
        if key not in built:
            raise ConfigError(f"ordering given for unknown cpd {key!r}")
        built[key] = built[key].reordered([_label(v) for v in order])
    mechs = {}
    skeleton = ScmModel.skeleton(n, h)
    for v in skeleton:
        shared = "S" if v.is_state and v.t > 0 else (f"A{v.agent}" if v.is_action else None)
        key = str(v) if str(v) in built else shared
        if key not in built:
            raise ConfigError(f"no cpd for {v} (looked for {str(v)!r}" + (f" and {shared!r})" if shared else ")"))
        mechs[v] = built[key]
    used = {str(v) for v in skeleton} | {"S"} | {f"A{i}" for i in range(1, n + 1)}
    unknown = sorted(set(built) - used)
    if unknown:
        raise ConfigError(f"cpds given for unknown variables {unknown}")
    if "variables" in data:
        listed = [VarId.parse(x) for x in data["variables"]]
        if listed != list(skeleton):
            raise ConfigError("'variables' must list S0, A1_0, ..., S<h> in causal order")
    return ScmModel(
        n,
        h,
        mechs,
        state_value=_value_lookup(data.get("state_values")),
        agent_names=data.get("agent_names"),
        name=str(data.get("name", "model")),
        metadata=dict(data.get("metadata") or {}),
    )


def load_model(source: Source) -> ScmModel:
    return model_from_dict(_read(source))


def model_to_dict(model: ScmModel, state_values: Optional[Mapping] = None) -> dict:
    """Serialize a model whose mechanisms are all single-channel Cpds.

    Mechanisms shared by every ``S_t`` (``t >= 1``) or by all actions of one
    agent are written once under the template key.
    """
    cpds = {}
    groups: Dict[int, list] = {}
    for v in model.variables:
        m = model.mechanisms[v]
        if not isinstance(m, Cpd):
            raise InputError(f"{v} uses a multi-channel mechanism, which has no JSON form")
        groups.setdefault(id(m), []).append(v)
    for vs in groups.values():
        m = model.mechanisms[vs[0]]
        all_s = [VarId.state(t) for t in range(1, model.h + 1)]
        if vs == all_s and all_s:
            keys = ["S"]
        elif len({v.agent for v in vs}) == 1 and vs[0].is_action and vs == [VarId.action(vs[0].agent, t) for t in range(model.h)]:
            keys = [f"A{vs[0].agent}"]
        else:
            keys = [str(v) for v in vs]
        rows = [
            {"parents": [_json_label(x) for x in pa], "probs": [_prob_text(p) for p in m.probabilities(pa)]}
            for pa in sorted(m.known_parent_assignments(), key=repr)
        ]
        entry = {"domain": [_json_label(x) for x in m.domain], "rows": rows}
        for key in keys:
            cpds[key] = entry
    out = {
        "format": "cfx-model",
        "name": model.name,
        "n": model.n,
        "h": model.h,
        "agent_names": list(model.agent_names),
        "variables": [str(v) for v in model.variables],
        "cpds": cpds,
    }
    if state_values is not None:
        out["state_values"] = {str(_json_label(k)): float(v) for k, v in state_values.items()}
    return out


def save_model(model: ScmModel, path, state_values: Optional[Mapping] = None) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, state_values), fh, indent=1)


# MMDPs ----------------------------------------------------------------------


def _keyed(mapping: Mapping, labels: Dict[str, object], what: str) -> Dict:
    out = {}
    for k, v in mapping.items():
        if k not in labels:
            raise ConfigError(f"{what}: unknown label {k!r}")
        out[labels[k]] = v
    return out


def mmdp_from_dict(data: Mapping) -> Tuple[MmdpSpec, PolicySet]:
    try:
        states = [_label(s) for s in data["states"]]
        actions = [[_label(a) for a in acts] for acts in data["actions"]]
        horizon = int(data["horizon"])
        triplets = data["transitions"]
        initial = data["initial"]
        policies = data["policies"]
    except (KeyError, TypeError, ValueError):
        raise ConfigError("MMDP file needs states, actions, transitions, horizon, initial and policies") from None
    agents = data.get("agents")
    n = len(actions)
    if isinstance(agents, int) and agents != n or isinstance(agents, list) and len(agents) != n:
        raise ConfigError("'agents' disagrees with the number of action spaces")
    names = agents if isinstance(agents, list) else None
    state_key = {str(_json_label(s)): s for s in states}
    if len(state_key) != len(states):
        raise ConfigError("state labels must be distinct as text")
    known = set(states)
    transition: Dict[tuple, Dict] = {}
    for row in triplets:
        try:
            s, joint, s2, p = _label(row[0]), tuple(_label(a) for a in row[1]), _label(row[2]), to_fraction(row[3])
        except (IndexError, TypeError):
            raise ConfigError(f"transition entry {row!r} must be [s, [a_1..a_n], s', p]") from None
        if s not in known or s2 not in known:
            raise ConfigError(f"transition entry {row!r} uses an unknown state")
        if len(joint) != n or any(a not in actions[i] for i, a in enumerate(joint)):
            raise ConfigError(f"transition entry {row!r} uses an unknown joint action")
        cell = transition.setdefault((s, joint), {})
        cell[s2] = cell.get(s2, Fraction(0)) + p
    pols = []
    if len(policies) != n:
        raise ConfigError(f"expected {n} policies, got {len(policies)}")
    for i, pol in enumerate(policies):
        table = {}
        for s, row in _keyed(pol, state_key, f"policy {i + 1}").items():
            act_key = {str(_json_label(a)): a for a in actions[i]}
            table[s] = {a: to_fraction(p) for a, p in _keyed(row, act_key, f"policy {i + 1}").items()}
        pols.append(table)
    spec = MmdpSpec(
        n=n,
        action_spaces=actions,
        transition=transition,
        horizon=horizon,
        initial={s: to_fraction(p) for s, p in _keyed(initial, state_key, "initial").items()},
        states=states,
        state_value=_value_lookup(data.get("state_values")),
        agent_names=names,
        name=str(data.get("name", "mmdp")),
        metadata=dict(data.get("metadata") or {}),
    )
    return spec, PolicySet(pols)


def load_mmdp(source: Source) -> Tuple[MmdpSpec, PolicySet]:
    return mmdp_from_dict(_read(source))


def mmdp_to_dict(mmdp: MmdpSpec, pi: PolicySet) -> dict:
    """Serialize an MMDP with an explicit state list and tabular transitions."""
    if mmdp.states is None or callable(mmdp.transition):
        raise InputError("only MMDPs with explicit states and transition tables can be written to JSON")
    trip = []
    for (s, joint), row in sorted(mmdp.transition.items(), key=repr):
        for s2, p in sorted(row.items(), key=repr):
            trip.append([_json_label(s), [_json_label(a) for a in joint], _json_label(s2), _prob_text(to_fraction(p))])
    pols = []
    for i in range(1, mmdp.n + 1):
        pols.append(
            {
                str(_json_label(s)): {str(_json_label(a)): _prob_text(to_fraction(p)) for a, p in pi.row(i, s).items()}
                for s in mmdp.states
            }
        )
    out = {
        "format": "cfx-mmdp",
        "name": mmdp.name,
        "states": [_json_label(s) for s in mmdp.states],
        "agents": list(mmdp.agent_names) if mmdp.agent_names else mmdp.n,
        "actions": [[_json_label(a) for a in acts] for acts in mmdp.action_spaces],
        "transitions": trip,
        "horizon": mmdp.horizon,
        "initial": {str(_json_label(s)): _prob_text(to_fraction(p)) for s, p in mmdp.initial.items()},
        "policies": pols,
    }
    if mmdp.state_value is not None:
        out["state_values"] = {str(_json_label(s)): float(mmdp.state_value(s)) for s in mmdp.states}
    return out


def save_mmdp(mmdp: MmdpSpec, pi: PolicySet, path) -> None:
    with open(path, "w") as fh:
        json.dump(mmdp_to_dict(mmdp, pi), fh, indent=1)


def load_any(source: Source) -> Tuple[ScmModel, Optional[MmdpSpec], Optional[PolicySet]]:
    """Read either file kind; MMDP files are compiled on the way."""
    data = _read(source)
    kind = data.get("format")
    if kind == "cfx-mmdp" or (kind is None and "transitions" in data):
        mmdp, pi = mmdp_from_dict(data)
        return compile_mmdp(mmdp, pi), mmdp, pi
    if kind in (None, "cfx-model"):
        return model_from_dict(data), None, None
    raise ConfigError(f"unknown model file format {kind!r}")


# trajectories ---------------------------------------------------------------


def trajectory_from_data(model: ScmModel, data: Union[Mapping, Sequence]) -> Trajectory:
    if isinstance(data, Mapping) and "values" in data:
        data = data["values"]
    if isinstance(data, Mapping):
        mapping = data.get("assignment", data)
        return Trajectory.from_mapping(model, {VarId.parse(k): _label(v) for k, v in mapping.items()})
    return Trajectory(model, [_label(v) for v in data])


def load_trajectory(model: ScmModel, source: Source) -> Trajectory:
    return trajectory_from_data(model, _read(source))


def trajectory_to_dict(tau: Trajectory) -> dict:
    return {"values": [_json_label(v) for v in tau.values]}
