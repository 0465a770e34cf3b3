"""Command-line entry point ``agency-bridge``.

Exit status: 0 when every check passes, 1 when a reproduction check or
identity fails, 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import agents
from .bridge import DEFAULT_TOLERANCES, REPRODUCTIONS, IdentityReport, Reproduction, run_identity_suite, witness_model
from .envs import InstanceSpec, load_model, random_instance, save_model
from .errors import AgencyError
from .mathcore import CategoricalDist
from .models import (
    Affine,
    Linear,
    Log,
    POMDPModel,
    Power,
    observation_preference,
    preference_from_rewards,
)

CSV_COLUMNS = ["identity_name", "seed", "residual", "tolerance", "pass"]


class ConfigError(Exception):
    pass


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return "" if x is None else str(x)


def parse_seeds(text: str) -> range:
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigError(f"bad seed range {text!r}; expected A..B or N") from None
    if hi < lo:
        raise ConfigError(f"empty seed range {text!r}")
    return range(lo, hi + 1)


def parse_tolerances(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        name, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"bad tolerance {item!r}; expected NAME=VAL")
        if name not in DEFAULT_TOLERANCES:
            raise ConfigError(f"unknown identity {name!r}; choose from {sorted(DEFAULT_TOLERANCES)}")
        try:
            out[name] = float(val)
        except ValueError:
            raise ConfigError(f"bad tolerance value {val!r}") from None
    return out


def parse_objective_text(text: str) -> tuple[str, dict]:
    name, _, rest = text.partition(":")
    params = {}
    for kv in filter(None, rest.split(",")):
        k, sep, v = kv.partition("=")
        if not sep:
            raise ConfigError(f"bad objective parameter {kv!r}; expected KEY=VAL")
        params[k.strip()] = v.strip()
    return name.strip(), params


def _utility(params: dict):
    kind = params.get("u", "linear")
    try:
        if kind == "linear":
            return Linear()
        if kind == "power":
            return Power(float(params.get("c", 1.0)))
        if kind == "log":
            return Log()
        if kind == "affine":
            return Affine(float(params.get("a", 1.0)), float(params.get("b", 0.0)))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    raise ConfigError(f"unknown utility {kind!r}; choose linear, power, log or affine")


OBJECTIVES = (
    "reward-max", "eu", "efe-mdp", "efe-pomdp", "efe-pomdp-ra", "itbr-mdp", "itbr-pomdp", "divergence-mdp", "feef",
)


def build_objective(text: str, m) -> agents.Objective:
    name, params = parse_objective_text(text)
    u = _utility(params)
    try:
        beta = float(params.get("beta", 1.0))
    except ValueError:
        raise ConfigError(f"bad beta {params['beta']!r}") from None
    pomdp_only = name in ("efe-pomdp", "efe-pomdp-ra", "itbr-pomdp", "feef")
    if pomdp_only and not isinstance(m, POMDPModel):
        raise ConfigError(f"objective {name!r} needs a POMDP model")
    if name == "reward-max":
        return agents.RewardMax()
    if name == "eu":
        return agents.ExpectedUtility(u)
    if name == "efe-mdp":
        return agents.EfeMdp(preference_from_rewards(m, u, beta), unnormalized=params.get("unnormalized") == "1")
    if name == "divergence-mdp":
        return agents.DivergenceMdp(preference_from_rewards(m, u, beta))
    if name == "efe-pomdp":
        return agents.EfePomdpValue(observation_preference(m, u, beta))
    if name == "efe-pomdp-ra":
        return agents.EfePomdpRiskAmbiguity(preference_from_rewards(m, u, beta), observation_preference(m, u, beta))
    if name == "feef":
        return agents.Feef(observation_preference(m, u, beta))
    if name in ("itbr-mdp", "itbr-pomdp"):
        if not beta > 0:
            raise ConfigError("ITBR objectives need beta > 0")
        return (agents.ItbrMdp if name == "itbr-mdp" else agents.ItbrPomdp)(beta, u)
    raise ConfigError(f"unknown objective {name!r}; choose from {', '.join(OBJECTIVES)}")


# --------------------------------------------------------------------------
# output


def _aligned(headers: list, rows: list) -> str:
    cells = [[fmt(h) for h in headers]] + [[fmt(x) for x in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv(headers: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def emit_report(reports: list[IdentityReport], format: str = "table", path: Optional[Path] = None) -> str:
    """Render identity reports; CSV and table use 12 significant digits, JSON is lossless."""
    if not reports:
        raise ValueError("no reports to emit")
    rows = [[r.identity_name, r.seed, r.residual, r.tolerance, r.passed] for r in reports]
    if format == "csv":
        text = _csv(CSV_COLUMNS, rows)
    elif format == "json":
        text = json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True) + "\n"
    elif format == "table":
        n_fail = sum(not r.passed for r in reports)
        text = _aligned(CSV_COLUMNS, rows) + f"\n{len(reports) - n_fail}/{len(reports)} identities passed\n"
    else:
        raise ValueError(f"unknown format {format!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def load_reports(path: Path) -> list[IdentityReport]:
    return [IdentityReport.from_dict(d) for d in json.loads(Path(path).read_text())]


def render_reproduction(rep: Reproduction, format: str) -> str:
    check_rows = [[c.name, c.value, c.expected, c.tolerance, c.passed] for c in rep.checks]
    check_headers = ["check", "value", "expected", "tolerance", "pass"]
    if format == "json":
        doc = {
            "name": rep.name,
            "pass": rep.passed,
            "tables": [{"title": t.title, "headers": t.headers, "rows": t.rows} for t in rep.tables],
            "checks": [dict(zip(check_headers, r)) for r in check_rows],
        }
        return json.dumps(doc, indent=1, sort_keys=True, default=float) + "\n"
    if format == "csv":
        return _csv(check_headers, check_rows)
    parts = [f"== {rep.name} ==\n"]
    for t in rep.tables:
        parts.append(f"\n{t.title}\n" + _aligned(t.headers, t.rows))
    parts.append("\nchecks\n" + _aligned(check_headers, check_rows))
    parts.append(f"\n{rep.name}: {'PASS' if rep.passed else 'FAIL'}\n")
    return "".join(parts)


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# commands


def cmd_reproduce(args) -> int:
    if args.target not in REPRODUCTIONS:
        raise ConfigError(f"unknown reproduction {args.target!r}; choose from {', '.join(REPRODUCTIONS)}")
    rep = REPRODUCTIONS[args.target]()
    _write(render_reproduction(rep, args.format), args.out)
    return 0 if rep.passed else 1


def cmd_verify(args) -> int:
    if args.target != "all":
        raise ConfigError(f"unknown verification target {args.target!r}; only 'all' is supported")
    tolerances = parse_tolerances(args.tol)
    reports = run_identity_suite(parse_seeds(args.seeds), tolerances, args.candidates)
    if args.witness_dir:
        wdir = Path(args.witness_dir)
        wdir.mkdir(parents=True, exist_ok=True)
        for r in reports:
            if not r.passed:
                path = wdir / f"{r.identity_name}-seed{r.seed}.json"
                save_model(witness_model(r), path)
                r.witness["path"] = str(path)
    text = emit_report(reports, args.format)
    _write(text, args.out)
    return 0 if all(r.passed for r in reports) else 1


def _initial(args, m):
    if args.belief:
        try:
            return CategoricalDist([float(x) for x in args.belief.split(",")])
        except (ValueError, AgencyError) as e:
            raise ConfigError(f"bad belief {args.belief!r}: {e}") from None
    if isinstance(m, POMDPModel):
        return CategoricalDist.uniform(m.n_states)
    if not 0 <= args.state < m.n_states:
        raise ConfigError(f"state index {args.state} out of range")
    return args.state


def cmd_evaluate(args) -> int:
    if not args.model or not args.objective:
        raise ConfigError("evaluate needs --model and --objective")
    m = load_model(args.model)
    spec = build_objective(args.objective, m)
    ev = agents.select_action(m, _initial(args, m), spec, args.tie_tol)
    best = [m.actions[i] for i in sorted(ev.optimal_set)]
    if args.format == "json":
        text = json.dumps(
            {"objective": args.objective, "sense": ev.sense, "values": dict(zip(m.actions, ev.values.tolist())),
             "optimal_set": best, "tie": ev.tie},
            indent=1,
        ) + "\n"
    else:
        rows = [[a, v, a in best] for a, v in zip(m.actions, ev.values)]
        render = _csv if args.format == "csv" else _aligned
        text = render(["action", "value", "optimal"], rows)
        if args.format == "table":
            text += f"\n{ev.sense} {args.objective}: optimal set {{{', '.join(best)}}}{' (tie)' if ev.tie else ''}\n"
    _write(text, args.out)
    return 0


def cmd_generate(args) -> int:
    if not args.out:
        raise ConfigError("generate needs --out")
    seeds = parse_seeds(args.seeds)
    if len(seeds) != 1:
        raise ConfigError("generate takes a single seed")
    try:
        spec = InstanceSpec(args.kind, args.states, args.actions, args.obs, seeds[0])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    save_model(random_instance(spec), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agency-bridge", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("table", "csv", "json"), default="table")
        p.add_argument("--out", help="write output here instead of stdout")

    p = sub.add_parser("reproduce", help="rerun a worked example")
    p.add_argument("target", help=", ".join(REPRODUCTIONS))
    common(p)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("verify", help="certify the identities on seeded random instances")
    p.add_argument("target", help="all")
    p.add_argument("--seeds", default="1..100")
    p.add_argument("--tol", action="append", default=[], metavar="NAME=VAL")
    p.add_argument("--candidates", type=int, default=10_000, help="simplex samples for the optimality check")
    p.add_argument("--witness-dir", help="save the model of every failing report here")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate", help="score every action of a model file")
    p.add_argument("--model")
    p.add_argument("--objective", help="NAME[:PARAM=VAL,...]; names: " + ", ".join(OBJECTIVES))
    p.add_argument("--state", type=int, default=0, help="current state (MDP)")
    p.add_argument("--belief", help="comma-separated belief over states")
    p.add_argument("--tie-tol", type=float, default=1e-9)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="write a seeded random model")
    p.add_argument("--kind", choices=("mdp", "pomdp"), default="mdp")
    p.add_argument("--seeds", default="0")
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--obs", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AgencyError, OSError) as e:
        print(f"agency-bridge: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
