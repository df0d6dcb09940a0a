import json

import pytest

from cfx import modelio
from cfx.errors import ConfigError, ModelError
from cfx.mmdp import consistency_check
from cfx.oracle import exact_effects
from cfx.scm import VarId, sample_prior
from cfx.toy import random_case, random_query, random_toy

HAND_MODEL = {
    "format": "cfx-model",
    "n": 1,
    "h": 1,
    "agent_names": ["solo"],
    "cpds": {
        "S0": {"domain": [0, 1], "rows": [{"parents": [], "probs": ["1/2", "1/2"]}]},
        "A1": {"domain": ["x", "y"], "rows": [{"parents": [0], "probs": ["1", "0"]}, {"parents": [1], "probs": ["0.25", "0.75"]}]},
        "S": {
            "domain": [0, 1],
            "rows": [
                {"parents": [s, a], "probs": ["0.3", "0.7"]} for s in (0, 1) for a in ("x", "y")
            ],
        },
    },
    "orderings": {"S": [1, 0]},
}


def test_hand_model_loads_with_ordering():
    model = modelio.model_from_dict(HAND_MODEL)
    assert model.agent_names == ("solo",)
    assert model.mechanisms[VarId.state(1)].domain == (1, 0)
    assert [float(p) for p in model.mechanisms[VarId.state(1)].probabilities((0, "x"))] == [0.7, 0.3]


def test_model_round_trip(tmp_path):
    toy = random_toy(3)
    path = tmp_path / "m.json"
    modelio.save_model(toy.model, path, state_values=toy.mmdp.metadata["state_values"])
    again = modelio.load_model(path)
    assert again.variables == toy.model.variables
    for v in toy.model.variables:
        a, b = toy.model.mechanisms[v], again.mechanisms[v]
        assert a.domain == b.domain
        for pa in a.known_parent_assignments():
            assert a.probabilities(pa) == b.probabilities(pa)
    _, tau = sample_prior(toy.model, 0)
    _, tau2 = sample_prior(again, 0)
    assert tau.values == tau2.values


def test_mmdp_round_trip_preserves_effects(tmp_path):
    toy, q = random_case(8)
    path = tmp_path / "mmdp.json"
    modelio.save_mmdp(toy.mmdp, toy.policies, path)
    model, mmdp, pi = modelio.load_any(path)
    assert consistency_check(model, mmdp, pi).passed
    tau = modelio.trajectory_from_data(model, modelio.trajectory_to_dict(q.tau))
    q2 = type(q)(tau, q.agent, q.time, q.action, q.response)
    assert exact_effects(q2) == pytest.approx(exact_effects(q), abs=1e-12)


def test_trajectory_by_assignment():
    model = modelio.model_from_dict(HAND_MODEL)
    tau = modelio.trajectory_from_data(model, {"assignment": {"S0": 1, "A1_0": "y", "S1": 0}})
    assert tau.values == (1, "y", 0)


@pytest.mark.parametrize(
    "mutate,error",
    [
        (lambda d: d["cpds"].pop("A1"), ConfigError),
        (lambda d: d["cpds"]["S0"].pop("rows"), ConfigError),
        (lambda d: d["cpds"]["S0"]["rows"][0].update(probs=["0.6", "0.6"]), ModelError),
        (lambda d: d.update(format="something-else"), ConfigError),
    ],
)
def test_bad_model_files(mutate, error):
    data = json.loads(json.dumps(HAND_MODEL))
    mutate(data)
    with pytest.raises(error):
        modelio.load_any(data)


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        modelio.load_any(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        modelio.load_any(bad)


def test_random_query_on_reloaded_model(tmp_path):
    toy = random_toy(12)
    path = tmp_path / "m.json"
    modelio.save_mmdp(toy.mmdp, toy.policies, path)
    model, mmdp, pi = modelio.load_any(path)
    reloaded = type(toy)(mmdp, pi, model)
    q = random_query(reloaded, 12)
    assert q.model is model
