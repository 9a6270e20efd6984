"""Command-line front end: ``shadowlab <command> [options]``.

Exit codes: 0 when the claim is reproduced, 1 on usage or validation errors, 2 when the
claim is not reproduced.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_NOT_REPRODUCED = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "csv")}


def _envelope(args, result) -> dict:
    return {
        "tool": "shadowlab",
        "version": __version__,
        "command": args.command,
        "config": _config(args),
        "seed": getattr(args, "seed", None),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "result": result,
    }


def _write(args, result) -> None:
    text = json.dumps(_jsonable(_envelope(args, result)), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_system(spec: str):
    from .hetero import FixtureError, fixture_path, system_from_json

    path = Path(spec)
    if not path.exists():
        path = fixture_path(spec)
        if not path.exists():
            raise UsageError(f"no such fixture file or bundled fixture: {spec}")
    try:
        return system_from_json(path)
    except (FixtureError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid fixture {spec}: {exc}") from exc


def _workers(args) -> int:
    from .shadow import default_workers

    return args.workers if args.workers else default_workers()


# -- commands -------------------------------------------------------------


def cmd_spiral_cert(args) -> int:
    from .spiral import CertificationFailed, cert_search

    b = args.b if args.b is not None else (0.0 if args.kind == "line1d" else None)
    if b is None:
        raise UsageError("--b is required for spiral2d")
    try:
        cert = cert_search(args.kind, args.a, b, args.eps, args.L, args.trials, args.seed)
    except CertificationFailed as exc:
        _write(args, {"passed": False, "error": str(exc), "worst": exc.worst.to_json() if exc.worst else None})
        return EXIT_NOT_REPRODUCED
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write(args, {"passed": True, "certificate": cert.to_json()})
    return EXIT_OK


def _csv_with_header(args, body: str) -> str:
    head = f"# shadowlab {__version__} {args.command} seed={args.seed} config={json.dumps(_jsonable(_config(args)), sort_keys=True)}\n"
    return head + body


def cmd_counterexample(args) -> int:
    from .hetero import transversality
    from .shadow import lipschitz_sweep

    system = _load_system(args.system)
    trans = transversality(system)
    table = lipschitz_sweep(
        system, args.L, args.d, args.starts, args.budget, args.seed, workers=_workers(args), measure_defect=True
    )
    if args.expect == "lipfail":
        ok = trans["verdict"] == "nontransversal" and all(
            r.verdict == "LipFail" and r.obstruction_verdict in ("BackViolated", "FwdViolated") for r in table.rows
        )
    else:
        L_top = max(args.L)
        ok = all(r.verdict == "LipOK" for r in table.rows if r.L == L_top)
    csv_path = args.csv or (str(Path(args.out).with_suffix(".csv")) if args.out else None)
    if csv_path:
        Path(csv_path).write_text(_csv_with_header(args, table.to_csv()))
    _write(args, {"reproduced": ok, "expect": args.expect, "transversality": trans, "rows": table.to_json()})
    return EXIT_OK if ok else EXIT_NOT_REPRODUCED


def cmd_nosubset(args) -> int:
    from .pseudo import pseudo_jump
    from .shadow import InvalidEpsilon, nosubset_feasibility

    system = _load_system(args.system)
    jump = dict(system.meta.get("jump", {}))
    for key in ("tau0", "tau1"):
        if getattr(args, key) is not None:
            jump[key] = getattr(args, key)
    missing = [k for k in ("r", "alpha", "tau0", "tau1") if k not in jump]
    if missing:
        raise UsageError(f"fixture has no jump data for {missing}")
    eps = args.eps if args.eps == "auto" else float(args.eps)
    try:
        g = pseudo_jump(system, jump["r"], jump["alpha"], float(jump["tau0"]), float(jump["tau1"]), system.meta.get("dt", 0.25))
        cert = nosubset_feasibility(system, g, eps, args.xgrid, args.hsamples, seed=args.seed)
    except InvalidEpsilon as exc:
        raise UsageError(str(exc)) from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = cert.to_json()
    res["reproduced"] = (not cert.feasible) and cert.all_match
    _write(args, res)
    return EXIT_OK if res["reproduced"] else EXIT_NOT_REPRODUCED


def _read_pseudo(path: str, system):
    """Pseudotrajectory file: {t0, dt, nodes} and, without --system, a block field."""
    from .flow import BlockLinearField, LinearFlow
    from .glued import GluedFlow
    from .pseudo import SampledPseudotrajectory

    try:
        obj = json.loads(Path(path).read_text())
        if system is not None:
            flow = GluedFlow(system)
        elif "field" in obj:
            flow = LinearFlow(BlockLinearField.from_json(obj["field"]))
        else:
            raise UsageError("pseudotrajectory file needs a 'field' entry or --system")
        return SampledPseudotrajectory.from_json(obj, flow)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot read pseudotrajectory {path}: {exc}") from exc


def _pseudo_from_args(args):
    from .glued import GluedFlow
    from .pseudo import pseudo_from_orbit, pseudo_glued

    system = _load_system(args.system) if args.system else None
    if args.pseudo:
        return system, _read_pseudo(args.pseudo, system)
    if system is None:
        raise UsageError("give --system or --pseudo")
    if args.exact:
        flow = GluedFlow(system)
        from .glued import ChartPoint, Q

        back, fwd = system.meta.get("t_back", 4.0), system.meta.get("t_fwd", 4.0)
        dt = system.meta.get("dt", 0.5)
        return system, pseudo_from_orbit(flow, ChartPoint(Q, system.a_q), (-back, system.tau + fwd), dt)
    if args.d is None:
        raise UsageError("give --d, --exact or --pseudo")
    return system, pseudo_glued(system, args.d)


def cmd_defect(args) -> int:
    from .pseudo import pseudo_defect

    _, g = _pseudo_from_args(args)
    est = pseudo_defect(g.flow, g, args.refine)
    _write(args, {"d_hat": est.d_hat, "resolution": est.resolution, "nodes": len(g.nodes)})
    return EXIT_OK


def cmd_shadow_search(args) -> int:
    from .shadow import shadow_search

    _, g = _pseudo_from_args(args)
    if args.class_a is not None:
        a = args.class_a
    elif args.L is not None and args.d is not None:
        a = args.L * args.d
    else:
        a = 0.0
    res = shadow_search(g.flow, g, None, a, args.starts, args.budget, args.seed, workers=_workers(args))
    out = res.to_json()
    if args.target is not None:
        out["target"] = args.target
        out["met"] = res.best_eps <= args.target
    _write(args, out)
    if args.target is not None and res.best_eps > args.target:
        return EXIT_NOT_REPRODUCED
    return EXIT_OK


def cmd_transversality(args) -> int:
    from .hetero import transversality, transversality_oracle

    system = _load_system(args.system)
    t = transversality(system)
    o = transversality_oracle(system)
    agree = t == o
    expect = system.meta.get("expect")
    res = {"classifier": t, "oracle": o, "agree": agree}
    ok = agree
    if expect:
        match = all(t.get(k) == v for k, v in expect.items())
        res["expect"] = expect
        res["matches_expect"] = match
        ok = ok and match
    _write(args, res)
    return EXIT_OK if ok else EXIT_NOT_REPRODUCED


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shadowlab", description="Shadowing experiments near heteroclinic connections.")
    p.add_argument("--version", action="version", version=f"shadowlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", help="output JSON path (default: stdout)")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=0, help="worker processes (default: SHADOWLAB_WORKERS or 1)")

    sp = sub.add_parser("spiral-cert", help="certify (T, d0) for an expanding spiral or line")
    sp.add_argument("--kind", choices=["spiral2d", "line1d"], required=True)
    sp.add_argument("--a", type=float, required=True)
    sp.add_argument("--b", type=float)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--L", type=float, required=True)
    sp.add_argument("--trials", type=int, default=100_000)
    common(sp)
    sp.set_defaults(func=cmd_spiral_cert)

    sp = sub.add_parser("counterexample", help="Lipschitz sweep on a glued fixture")
    sp.add_argument("--system", required=True, help="fixture JSON path or bundled fixture name")
    sp.add_argument("--L", type=_floats, default=[1.0, 2.0, 5.0])
    sp.add_argument("--d", type=_floats, default=[1e-2, 1e-3])
    sp.add_argument("--starts", type=int, default=64)
    sp.add_argument("--budget", type=int, default=20000)
    sp.add_argument("--expect", choices=["lipfail", "lipok"], default="lipfail")
    sp.add_argument("--csv", help="SweepTable CSV path (default: next to --out)")
    common(sp)
    sp.set_defaults(func=cmd_counterexample)

    sp = sub.add_parser("nosubset", help="brute-force check of the saddle-connection configuration")
    sp.add_argument("--system", default="sconn2d")
    sp.add_argument("--tau0", type=float)
    sp.add_argument("--tau1", type=float)
    sp.add_argument("--eps", default="auto")
    sp.add_argument("--xgrid", type=int, default=200)
    sp.add_argument("--hsamples", type=int, default=1000)
    common(sp)
    sp.set_defaults(func=cmd_nosubset)

    for name, func, helptext in (
        ("defect", cmd_defect, "grid defect of a pseudotrajectory"),
        ("shadow-search", cmd_shadow_search, "multi-start shadowing search"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--system", help="fixture JSON path or bundled fixture name")
        sp.add_argument("--pseudo", help="pseudotrajectory JSON ({t0, dt, nodes[, field]})")
        sp.add_argument("--d", type=float, help="build the glued pseudotrajectory with this d")
        sp.add_argument("--exact", action="store_true", help="use the exact heteroclinic orbit")
        if name == "defect":
            sp.add_argument("--refine", type=int, default=8)
            common(sp, seed=False)
        else:
            sp.add_argument("--L", type=float)
            sp.add_argument("--class-a", dest="class_a", type=float)
            sp.add_argument("--starts", type=int, default=16)
            sp.add_argument("--budget", type=int, default=2000)
            sp.add_argument("--target", type=float, help="exit 2 unless best_eps <= target")
            common(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("transversality", help="classify a glued fixture and cross-check with the rank oracle")
    sp.add_argument("--system", required=True)
    common(sp, seed=False)
    sp.set_defaults(func=cmd_transversality)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"shadowlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"shadowlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
