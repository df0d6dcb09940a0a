"""Full decomposition reports: JSON documents with provenance, plus CSV series for plotting."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as _dist_version
from typing import Dict, List, Mapping, Optional

import numpy as np
import scipy

from .attribution import IccReport, ShapleyReport, r_sse_icc, shapley_exact, shapley_sampled
from .effects import ExplanationResult, explanation_formula
from .errors import InputError
from .oracle import DEFAULT_CAP, exact_effects
from .query import EffectQuery
from .scm import ScmModel

SCHEMA_VERSION = 1


def package_version() -> str:
    try:
        return _dist_version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def versions() -> Dict[str, str]:
    return {
        "cfx": package_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def provenance(seed: int, config: Mapping, timestamp: bool = True) -> dict:
    """Seed, versions and a hash of (config, seed, versions). The timestamp is not hashed."""
    body = {"seed": int(seed), "config": dict(config), "versions": versions()}
    out = dict(body)
    out["config_hash"] = hashlib.sha256(_canonical(body).encode()).hexdigest()
    if timestamp:
        out["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return out


def _finite(x):
    # JSON has no NaN/inf; report them as null
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_finite(v) for v in x]
    return x


def to_json(report: Mapping, indent: int = 2) -> str:
    return json.dumps(_finite(report), indent=indent, sort_keys=True, allow_nan=False) + "\n"


def load_schema() -> dict:
    return json.loads(resources.files("cfx.data").joinpath("report.schema.json").read_text())


@dataclass
class DecompositionReport:
    query: EffectQuery
    effects: ExplanationResult
    shapley: ShapleyReport
    icc: IccReport
    provenance: dict
    oracle: Optional[Dict[str, float]] = None
    notes: List[str] = field(default_factory=list)

    @property
    def gini(self) -> float:
        return self.icc.gini()

    def to_dict(self) -> dict:
        eff = self.effects
        out = {
            "kind": "decomposition",
            "schema_version": SCHEMA_VERSION,
            "query": self.query.describe(),
            "tcfe": eff.tcfe.to_dict(),
            "tot_ase": eff.tot_ase.to_dict(),
            "sse": eff.sse.to_dict(),
            "r_sse": eff.r_sse.to_dict(),
            "identity_residual": eff.residual,
            "max_sample_residual": eff.max_sample_residual,
            "percentages": eff.percentages,
            "phi": self.shapley.to_dict(),
            "psi": self.icc.to_dict(),
            "gini": self.gini,
            "provenance": self.provenance,
            "notes": list(self.notes),
        }
        if self.oracle is not None:
            out["oracle"] = dict(self.oracle)
        return _finite(out)

    def to_json(self) -> str:
        return to_json(self.to_dict())

    # CSV series ----------------------------------------------------------

    def psi_rows(self) -> List[dict]:
        icc = self.icc
        return [
            {
                "k": k,
                "psi": icc.psi[k],
                "psi_raw": icc.psi_raw.get(k, 0.0),
                "unc": icc.unc.get(k, ""),
                "icc": icc.icc.get(k, ""),
            }
            for k in sorted(icc.psi)
        ]

    def phi_rows(self) -> List[dict]:
        sh = self.shapley
        names = sh.agent_names or tuple(str(j) for j in sh.phi)
        return [
            {"agent": names[j - 1], "phi": v, "phi_std": "" if sh.phi_std is None else sh.phi_std[j]}
            for j, v in sorted(sh.phi.items())
        ]

    def effect_rows(self) -> List[dict]:
        eff = self.effects
        rows = []
        for name in ("tcfe", "tot_ase", "sse", "r_sse"):
            est = getattr(eff, name)
            row = {"effect": name, "mean": est.mean, "std_error": est.std_error, "n_samples": est.n_samples}
            row["oracle"] = "" if self.oracle is None else self.oracle[name]
            rows.append(row)
        return rows

    def csv_series(self) -> Dict[str, str]:
        return {
            "psi": rows_to_csv(self.psi_rows()),
            "phi": rows_to_csv(self.phi_rows()),
            "effects": rows_to_csv(self.effect_rows()),
        }


def rows_to_csv(rows: List[Mapping]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    fields = list(rows[0])
    for r in rows[1:]:
        fields.extend(k for k in r if k not in fields)
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: _cell(r.get(k, "")) for k in fields})
    return buf.getvalue()


def _cell(x):
    return repr(x) if isinstance(x, float) else x


def decompose(
    model: ScmModel,
    query: EffectQuery,
    n_samples: int = 100,
    h1: int = 100,
    h2: int = 20,
    seed: int = 0,
    workers: int = 1,
    shapley: str = "exact",
    permutation_budget: int = 200,
    icc_group: int = 1,
    sparse: bool = False,
    oracle: bool = False,
    oracle_cap: int = DEFAULT_CAP,
    config: Optional[Mapping] = None,
    timestamp: bool = True,
) -> DecompositionReport:
    """Effects, agent Shapley values and state ICC scores for one query, all seeded by ``seed``."""
    if shapley not in ("exact", "sampled"):
        raise InputError("shapley mode must be 'exact' or 'sampled'")
    eff = explanation_formula(model, query, n_samples=n_samples, seed=seed, workers=workers)
    if shapley == "exact":
        sh = shapley_exact(model, query, n_samples=n_samples, seed=seed, workers=workers)
    else:
        sh = shapley_sampled(model, query, permutation_budget, n_samples=n_samples, seed=seed, workers=workers)
    icc = r_sse_icc(
        model,
        query,
        h1=h1,
        h2=h2,
        seed=seed,
        grouping=icc_group,
        r_sse_value=eff.r_sse.mean,
        n_samples=n_samples,
        sparse=sparse,
        workers=workers,
    )
    exact = exact_effects(query, oracle_cap) if oracle else None
    cfg = {
        "model": model.name,
        "n_samples": n_samples,
        "h1": h1,
        "h2": h2,
        "shapley": shapley,
        "permutation_budget": permutation_budget if shapley == "sampled" else None,
        "icc_group": icc_group,
        "sparse": sparse,
        "oracle": oracle,
        **dict(config or {}),
    }
    notes = ["ASE of the empty agent set is taken as exactly 0 (all branches reproduce the factual trajectory)."]
    if icc.clamped:
        notes.append("negative raw ICC terms were clamped to 0 and psi renormalised to keep sum(psi) = r-SSE")
    return DecompositionReport(query, eff, sh, icc, provenance(seed, cfg, timestamp), exact, notes)


def effects_report(
    model: ScmModel,
    query: EffectQuery,
    n_samples: int = 100,
    seed: int = 0,
    workers: int = 1,
    oracle: bool = False,
    oracle_cap: int = DEFAULT_CAP,
    config: Optional[Mapping] = None,
    timestamp: bool = True,
) -> dict:
    eff = explanation_formula(model, query, n_samples=n_samples, seed=seed, workers=workers)
    out = {"kind": "effects", "schema_version": SCHEMA_VERSION, "query": query.describe(), **eff.to_dict()}
    if oracle:
        out["oracle"] = exact_effects(query, oracle_cap)
    cfg = {"model": model.name, "n_samples": n_samples, "oracle": oracle, **dict(config or {})}
    out["provenance"] = provenance(seed, cfg, timestamp)
    return _finite(out)
