import json

import jsonschema
import pytest

from cfx.reports import decompose, effects_report, load_schema, provenance, rows_to_csv, to_json

SCHEMA = load_schema()


def test_provenance_hash_ignores_timestamp_and_tracks_config():
    a = provenance(1, {"x": 1}, timestamp=True)
    b = provenance(1, {"x": 1}, timestamp=False)
    c = provenance(2, {"x": 1}, timestamp=False)
    d = provenance(1, {"x": 2}, timestamp=False)
    assert a["config_hash"] == b["config_hash"]
    assert len({b["config_hash"], c["config_hash"], d["config_hash"]}) == 3
    assert set(b["versions"]) >= {"cfx", "numpy", "scipy", "python"}


def test_non_finite_numbers_become_null():
    text = to_json({"a": float("nan"), "b": [1.0, float("inf")]})
    assert json.loads(text) == {"a": None, "b": [1.0, None]}


def test_rows_to_csv_merges_columns():
    text = rows_to_csv([{"a": 1, "b": 0.5}, {"a": 2, "c": "x"}])
    assert text.splitlines() == ["a,b,c", "1,0.5,", "2,,x"]
    assert rows_to_csv([]) == ""


@pytest.fixture(scope="module")
def grid_report(grid, grid_queries):
    return decompose(grid.model, grid_queries["a2_pickup_green"], n_samples=40, h1=10, h2=5, seed=0,
                     oracle=True, timestamp=False)


def test_decomposition_report_validates(grid_report):
    doc = grid_report.to_dict()
    jsonschema.validate(doc, SCHEMA)
    assert doc["kind"] == "decomposition" and doc["provenance"]["seed"] == 0
    assert doc["identity_residual"] <= 1e-9
    assert 0.0 <= doc["gini"] <= 1.0
    assert set(doc["oracle"]) >= {"tcfe", "tot_ase", "sse", "r_sse"}


def test_percentage_shares_sum_to_hundred(grid_report):
    pct = grid_report.to_dict()["percentages"]
    assert pct["tot_ase"] + pct["neg_r_sse"] == pytest.approx(100.0, abs=1e-9)


def test_csv_series_cover_psi_phi_and_effects(grid_report):
    series = grid_report.csv_series()
    assert series["psi"].startswith("k,psi")
    assert series["phi"].startswith("agent,phi")
    assert len(series["effects"].splitlines()) == 5


def test_report_rejected_when_identity_breaks(grid_report):
    doc = grid_report.to_dict()
    doc["identity_residual"] = 1e-3
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, SCHEMA)


def test_effects_report_validates(grid, grid_queries):
    doc = effects_report(grid.model, grid_queries["planner_pickup_green"], n_samples=20, timestamp=False)
    jsonschema.validate(doc, SCHEMA)


def test_unknown_shapley_mode(grid, grid_queries):
    with pytest.raises(ValueError):
        decompose(grid.model, grid_queries["a2_pickup_green"], shapley="guess")
