"""``cfx`` command line: effects, decompositions, sweeps, oracles, replays and model checks.

Exit codes: 0 success, 1 unexpected failure, 2 bad input or config,
3 model inconsistency (including failed validation and replay audits),
4 oracle infeasible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import modelio
from .attribution import shapley_exact, shapley_sampled
from .effects import explanation_formula
from .environments import gridworld as gw
from .environments import replay as rp
from .environments import sepsis as sp
from .errors import CfxError, ConfigError, InputError, ModelError
from .mmdp import MmdpSpec, PolicySet, chi_square_check, consistency_check
from .oracle import DEFAULT_CAP, exact_conditional_variances, exact_effects
from .query import EffectQuery, ResponseSpec
from .reports import SCHEMA_VERSION, decompose, effects_report, provenance, rows_to_csv, to_json
from .scm import ScmModel, Trajectory, check_measure, check_noise_monotonicity, random_orderings, sample_prior

ENVIRONMENTS = ("gridworld", "sepsis")


# model and query resolution -------------------------------------------------


@dataclass
class Source:
    model: ScmModel
    mmdp: Optional[MmdpSpec]
    policies: Optional[PolicySet]
    default_tau: Optional[Trajectory]
    describe: dict
    bundle: object = None


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CFX_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"CFX_SEED must be an integer, got {env!r}") from None


def _sepsis_bundle(args, trust: Optional[float] = None):
    cfg = sp.SepsisConfig.from_json(args.env_config) if args.env_config else sp.SepsisConfig()
    over = {}
    if trust is not None:
        over["trust"] = trust
    elif args.trust is not None:
        over["trust"] = args.trust
    return sp.build_sepsis(cfg, **over)


def _sepsis_episodes(args, count: int) -> List[Trajectory]:
    # failed episodes are drawn once under full trust, where the clinician always accepts,
    # so they are valid factual trajectories at every trust level
    base = _sepsis_bundle(args, trust=1.0)
    return sp.failed_trajectories(base, count, seed=args.episode_seed)


def load_source(args, trust: Optional[float] = None) -> Source:
    if bool(args.env) == bool(args.model):
        raise InputError("give exactly one of --env or --model")
    if args.model:
        model, mmdp, pi = modelio.load_any(args.model)
        tau = None
        if args.trajectory:
            tau = modelio.load_trajectory(model, args.trajectory)
        src = Source(model, mmdp, pi, tau, {"model_file": str(args.model)})
    elif args.env == "gridworld":
        cfg = gw.GridworldConfig.from_json(args.env_config) if args.env_config else gw.GridworldConfig.preset()
        bundle = gw.build_gridworld(cfg)
        tau = rp.replay(rp.load_fixture(1), bundle).trajectory if not args.env_config else None
        src = Source(bundle.model, bundle.mmdp, bundle.policies, tau, {"env": "gridworld", "config": cfg.name}, bundle)
    elif args.env == "sepsis":
        bundle = _sepsis_bundle(args, trust)
        src = Source(bundle.model, bundle.mmdp, bundle.policies, None, {"env": "sepsis", "trust": bundle.sim.config.trust}, bundle)
    else:
        raise InputError(f"unknown environment {args.env!r}; choose from {', '.join(ENVIRONMENTS)}")
    if args.ordering_seed is not None:
        src.model = src.model.with_orderings(random_orderings(src.model, args.ordering_seed))
        src.describe["ordering_seed"] = args.ordering_seed
        if src.default_tau is not None:
            src.default_tau = Trajectory(src.model, list(src.default_tau.values))
    return src


def _agent(model: ScmModel, text: Optional[str]) -> int:
    if text is None:
        raise InputError("--agent is required")
    if text in model.agent_names:
        return model.agent_names.index(text) + 1
    try:
        agent = int(text)
    except ValueError:
        raise InputError(f"unknown agent {text!r}; agents are {', '.join(model.agent_names)} or 1..{model.n}") from None
    if not 1 <= agent <= model.n:
        raise InputError(f"agent must be in 1..{model.n}")
    return agent


def _action(model: ScmModel, agent: int, time: int, text: str):
    domain = model.action_domain(agent, time)
    for a in domain:
        if a == text or str(a) == text:
            return a
    raise InputError(f"action {text!r} is not available to agent {agent}; options: {', '.join(map(str, domain[:12]))}")


def _response(args, src: Source) -> ResponseSpec:
    model = src.model
    if args.response is None:
        if src.bundle is not None:
            return next(iter(src.bundle.responses.values()))
        return ResponseSpec.state(model.h)
    if src.bundle is not None and args.response in src.bundle.responses:
        return src.bundle.responses[args.response]
    return ResponseSpec.parse(args.response, model.h)


def resolve_queries(args, src: Source) -> List[EffectQuery]:
    """One query normally; sepsis sweeps may expand to several episodes and alternatives."""
    model = src.model
    response = _response(args, src)
    if args.env == "sepsis" and args.trajectory is None:
        taus = [Trajectory(model, list(t.values)) for t in _sepsis_episodes(args, args.episodes)]
        out = []
        for tau in taus:
            base = sp.ai_query(tau, src.bundle)
            if args.time is not None or args.agent is not None:
                agent = _agent(model, args.agent) if args.agent else base.agent
                time = args.time if args.time is not None else base.time
            else:
                agent, time = base.agent, base.time
            if args.action == "all":
                chosen = tau.action(agent, time)
                alts = [a for a in model.action_domain(agent, time) if a not in (chosen, sp.NULL)]
            elif args.action:
                alts = [_action(model, agent, time, args.action)]
            else:
                alts = [base.action]
            out.extend(EffectQuery(tau, agent, time, a, response) for a in alts)
        return out
    tau = src.default_tau
    if args.trajectory and args.env:
        tau = modelio.load_trajectory(model, args.trajectory)
    if tau is None:
        _, tau = sample_prior(model, args.tau_seed, index=0)
    if args.query:
        if args.env != "gridworld":
            raise InputError("--query names are only defined for the gridworld")
        named = gw.standard_queries(src.bundle, tau, response)
        if args.query not in named:
            raise InputError(f"unknown query {args.query!r}; choose from {', '.join(named)}")
        return [named[args.query]]
    if args.agent is None and args.time is None and args.action is None and args.env == "gridworld":
        q = gw.standard_queries(src.bundle, tau, response)["a2_pickup_green"]
        return [q]
    agent = _agent(model, args.agent)
    if args.time is None or args.action is None:
        raise InputError("--time and --action are required for this model")
    return [EffectQuery(tau, agent, args.time, _action(model, agent, args.time, args.action), response)]


def _one(queries: List[EffectQuery]) -> EffectQuery:
    if len(queries) != 1:
        raise InputError(f"this command takes a single query, got {len(queries)} (use --episodes 1 and a single --action)")
    return queries[0]


# output ---------------------------------------------------------------------


def _emit(args, report: dict, csv_series: Optional[Dict[str, str]] = None) -> None:
    text = to_json(report)
    if not args.out:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    if out.suffix.lower() != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "report.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    for name, body in (csv_series or {}).items():
        if body:
            out.with_name(f"{out.stem}.{name}.csv").write_text(body)
    print(f"wrote {out}", file=sys.stderr)


def _config(args, src: Source, extra: Optional[dict] = None) -> dict:
    cfg = dict(src.describe)
    cfg.update(extra or {})
    return cfg


# commands -------------------------------------------------------------------


def cmd_decompose(args) -> int:
    src = load_source(args)
    q = _one(resolve_queries(args, src))
    rep = decompose(
        src.model,
        q,
        n_samples=args.samples,
        h1=args.h1,
        h2=args.h2,
        seed=_seed(args),
        workers=args.workers,
        shapley=args.shapley,
        permutation_budget=args.budget,
        icc_group=args.icc_group,
        sparse=args.sparse,
        oracle=args.oracle,
        oracle_cap=args.cap,
        config=_config(args, src),
        timestamp=not args.no_timestamp,
    )
    _emit(args, rep.to_dict(), rep.csv_series())
    return 0


def cmd_effects(args) -> int:
    src = load_source(args)
    q = _one(resolve_queries(args, src))
    rep = effects_report(
        src.model,
        q,
        n_samples=args.samples,
        seed=_seed(args),
        workers=args.workers,
        oracle=args.oracle,
        oracle_cap=args.cap,
        config=_config(args, src),
        timestamp=not args.no_timestamp,
    )
    rows = [{"effect": k, "mean": rep[k]["mean"], "std_error": rep[k]["std_error"]} for k in ("tcfe", "tot_ase", "sse", "r_sse")]
    _emit(args, rep, {"effects": rows_to_csv(rows)})
    return 0


def cmd_oracle(args) -> int:
    src = load_source(args)
    q = _one(resolve_queries(args, src))
    exact = exact_effects(q, args.cap, subsets=[[j] for j in range(1, src.model.n + 1)])
    out = {"kind": "oracle", "schema_version": SCHEMA_VERSION, "query": q.describe(), "oracle": exact}
    if args.variances:
        cv = exact_conditional_variances(q, args.cap)
        out["conditional_variances"] = {str(k): v for k, v in cv["unc"].items()}
    out["provenance"] = provenance(_seed(args), _config(args, src, {"cap": args.cap}), not args.no_timestamp)
    _emit(args, out)
    return 0


def _parse_values(text: str, parameter: str) -> list:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if not vals:
        raise InputError("the sweep grid is empty")
    try:
        return [float(v) if parameter == "trust" else int(v) for v in vals]
    except ValueError:
        raise InputError(f"cannot parse sweep values {text!r}") from None


def cmd_sweep(args) -> int:
    values = _parse_values(args.values, args.param)
    if args.param == "trust" and args.env != "sepsis":
        raise InputError("the trust sweep needs --env sepsis")
    rows, csv_rows = [], []
    seed = _seed(args)
    for value in values:
        run_seed = value if args.param == "seed" else seed
        if args.param == "ordering-seed":
            args.ordering_seed = value
        src = load_source(args, trust=value if args.param == "trust" else None)
        queries = resolve_queries(args, src)
        sums: Dict[str, float] = {"tcfe": 0.0, "tot_ase": 0.0, "sse": 0.0, "r_sse": 0.0}
        phi_sum = {name: 0.0 for name in src.model.agent_names}
        reports = []
        for q in queries:
            if args.full:
                rep = decompose(
                    src.model,
                    q,
                    n_samples=args.samples,
                    h1=args.h1,
                    h2=args.h2,
                    seed=run_seed,
                    workers=args.workers,
                    shapley=args.shapley,
                    permutation_budget=args.budget,
                    icc_group=args.icc_group,
                    sparse=args.sparse,
                    config=_config(args, src),
                    timestamp=False,
                )
                eff, sh = rep.effects, rep.shapley
                reports.append(rep.to_dict())
            else:
                eff = explanation_formula(src.model, q, args.samples, run_seed, args.workers)
                if args.shapley == "exact":
                    sh = shapley_exact(src.model, q, args.samples, run_seed, args.workers)
                else:
                    sh = shapley_sampled(src.model, q, args.budget, args.samples, run_seed, args.workers)
            for k in sums:
                sums[k] += getattr(eff, k).mean
            for j, v in sh.phi.items():
                phi_sum[src.model.agent_names[j - 1]] += v
        total_phi = sum(phi_sum.values())
        shares = {name: (v / total_phi if total_phi else None) for name, v in phi_sum.items()}
        row = {
            "value": value,
            "n_queries": len(queries),
            "sum": dict(sums),
            "phi_sum": phi_sum,
            "phi_share": shares,
        }
        if args.full:
            row["reports"] = reports
        rows.append(row)
        flat = {"value": value, "n_queries": len(queries)}
        flat.update({f"sum_{k}": v for k, v in sums.items()})
        flat.update({f"phi_{n}": v for n, v in phi_sum.items()})
        flat.update({f"share_{n}": ("" if v is None else v) for n, v in shares.items()})
        csv_rows.append(flat)
    cfg = {
        "parameter": args.param,
        "values": values,
        "samples": args.samples,
        "shapley": args.shapley,
        "env": args.env,
        "model": args.model,
        "episodes": args.episodes if args.env == "sepsis" else None,
        "action": args.action,
    }
    out = {
        "kind": "sweep",
        "schema_version": SCHEMA_VERSION,
        "parameter": args.param,
        "rows": rows,
        "provenance": provenance(seed, cfg, not args.no_timestamp),
    }
    _emit(args, out, {"sweep": rows_to_csv(csv_rows)})
    return 0


def cmd_replay(args) -> int:
    if args.fixture is not None:
        text = rp.load_fixture(args.fixture)
        origin = f"shipped transcript {args.fixture}"
    elif args.path:
        try:
            text = Path(args.path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.path}: {exc}") from None
        origin = str(args.path)
    else:
        raise InputError("give a transcript path or --fixture N")
    res = rp.replay(text)
    out = {"kind": "replay", "schema_version": SCHEMA_VERSION, "source": origin, **res.to_dict()}
    out["round_trip"] = rp.replay_parse(rp.serialize(res.record)) == res.record
    out["provenance"] = provenance(0, {"source": origin}, not args.no_timestamp)
    _emit(args, out)
    return 0


def cmd_validate(args) -> int:
    src = load_source(args)
    model = src.model
    checks = {}
    if src.mmdp is not None:
        checks["consistency"] = consistency_check(model, src.mmdp, src.policies).to_dict()
    checks["monotonicity"] = check_noise_monotonicity(model, args.grid).to_dict()
    m = check_measure(model)
    checks["measure"] = {"passed": m.passed, "max_deviation": m.max_deviation, "worst": None if m.worst is None else repr(m.worst)}
    if args.chi_square:
        cs = chi_square_check(model, n_samples=args.chi_square, seed=_seed(args), alpha=args.alpha)
        checks["chi_square"] = {
            "passed": cs.passed,
            "rows_tested": cs.rows_tested,
            "min_p_value": cs.min_p_value,
            "threshold": cs.threshold,
            "failures": [repr(f) for f in cs.failures[:20]],
        }
    passed = all(c["passed"] for c in checks.values())
    out = {
        "kind": "validate",
        "schema_version": SCHEMA_VERSION,
        "passed": passed,
        "checks": checks,
        "provenance": provenance(_seed(args), _config(args, src), not args.no_timestamp),
    }
    _emit(args, out)
    return 0 if passed else ModelError.exit_code


# parser ---------------------------------------------------------------------


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--env", choices=ENVIRONMENTS, help="built-in environment")
    g.add_argument("--model", help="JSON model or MMDP file")
    g.add_argument("--env-config", help="JSON config overriding the environment preset")
    g.add_argument("--trust", type=float, help="sepsis: clinician trust in the AI (0..1)")
    g.add_argument("--trajectory", help="JSON trajectory file (factual episode)")
    g.add_argument("--tau-seed", type=int, default=0, help="prior draw used as factual episode when none is given")
    g.add_argument("--episodes", type=int, default=1, help="sepsis: number of failed episodes to query")
    g.add_argument("--episode-seed", type=int, default=0, help="sepsis: seed for drawing failed episodes")
    g.add_argument("--ordering-seed", type=int, help="randomly permute every categorical domain order")


def _add_query(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("query")
    g.add_argument("--query", help="named gridworld query (a2_pickup_green, planner_pickup_green)")
    g.add_argument("--agent", help="agent name or 1-based index")
    g.add_argument("--time", type=int)
    g.add_argument("--action", help="alternative action label ('all' in sepsis sweeps)")
    g.add_argument("--response", help="S<k>, final, return[:gamma[:start:stop]] or an environment response name")


def _add_sampling(p: argparse.ArgumentParser, nested: bool = True) -> None:
    g = p.add_argument_group("sampling")
    g.add_argument("--samples", type=int, default=100, help="posterior draws per effect (default 100)")
    if nested:
        g.add_argument("--h1", type=int, default=100, help="outer nested-MC draws (default 100)")
        g.add_argument("--h2", type=int, default=20, help="inner nested-MC draws (default 20)")
        g.add_argument("--shapley", choices=("exact", "sampled"), default="exact")
        g.add_argument("--budget", type=int, default=200, help="permutations for sampled Shapley")
        g.add_argument("--icc-group", type=int, default=1, help="consecutive states per ICC group")
        g.add_argument("--sparse", action="store_true", help="binary-search ICC for sparse profiles")
    g.add_argument("--seed", type=int, help="base seed (falls back to $CFX_SEED, then 0)")
    g.add_argument("--workers", type=int, default=1, help="worker processes; never changes results")


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="report path (.json) or directory; CSV series are written alongside")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp for byte-identical reruns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfx", description="Counterfactual effect decomposition for multi-agent MDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="effects, agent Shapley values and state ICC scores")
    _add_source(p), _add_query(p), _add_sampling(p), _add_output(p)
    p.add_argument("--oracle", action="store_true", help="add exact oracle values")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="oracle support cap")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("effects", help="TCFE, tot-ASE, SSE and r-SSE on shared draws")
    _add_source(p), _add_query(p), _add_sampling(p, nested=False), _add_output(p)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.set_defaults(func=cmd_effects)

    p = sub.add_parser("sweep", help="aggregate effects and Shapley shares over a parameter grid")
    _add_source(p), _add_query(p), _add_sampling(p), _add_output(p)
    p.add_argument("--param", choices=("trust", "seed", "ordering-seed"), required=True)
    p.add_argument("--values", required=True, help="comma-separated grid, e.g. 0,0.25,0.5,0.75,1")
    p.add_argument("--full", action="store_true", help="include a full decomposition report per query")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact effects (and conditional variances) for small models")
    _add_source(p), _add_query(p), _add_output(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--variances", action="store_true", help="also compute exact conditional variances")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("replay", help="audit and rebuild a gridworld transcript")
    p.add_argument("path", nargs="?", help="transcript text file")
    p.add_argument("--fixture", type=int, choices=(1, 2, 3), help="use a shipped transcript")
    _add_output(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("validate", help="consistency, monotonicity, measure and chi-square checks")
    _add_source(p), _add_output(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int, default=32, help="noise grid resolution for the monotonicity check")
    p.add_argument("--chi-square", type=int, default=0, help="prior samples for the chi-square check (0 skips)")
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CfxError as exc:
        print(f"cfx: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cfx: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
