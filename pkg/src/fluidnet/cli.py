"""``fnet`` command line.  Exit codes: 0 pass, 2 violation, 3 input error."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, divergence, fdp, fixtures, fluid, ld, sim, tracker
from .network import DistSpec, NetworkSpec, SpecError, validate_network

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 2, 3


class InputError(Exception):
    pass


def _vec(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"bad vector {text!r}") from exc


def _load_net(path: str) -> NetworkSpec:
    net = NetworkSpec.load(path)
    rep = validate_network(net)
    if not rep.ok:
        raise InputError("invalid network:\n" + "\n".join(rep.violations))
    return net


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, default=float)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _policy(net: NetworkSpec, spec: str) -> sim.Policy:
    """``fifo``, ``lifo``, ``gfifo`` or ``priority:k,k|k,k`` (class indices per station)."""
    if spec.startswith("priority"):
        _, _, body = spec.partition(":")
        order = [[int(x) for x in part.split(",") if x.strip()] for part in body.split("|")] if body else None
        order = order or [list(m) for m in net.stations]
        return sim.builtin_policy("static_priority", order)
    return sim.builtin_policy(spec)


# -- sim ---------------------------------------------------------------------
def cmd_sim_run(a) -> int:
    net = _load_net(a.net)
    q = _vec(a.q)
    state = sim.SimState([int(x) for x in q]) if q else sim.SimState.empty(net)
    tr = sim.simulate(net, _policy(net, a.policy), state, a.horizon, a.seed, a.sample_dt, record_events=bool(a.events))
    if a.out:
        tr.write_csv(a.out)
    if a.events:
        tr.write_events(a.events)
    rep = sim.verify_trace(net, tr)
    _emit(
        {
            "events": tr.event_count,
            "final_q": tr.q[-1].tolist(),
            "divergence_estimate": analysis.divergence_estimate(tr) if tr.horizon > 0 else 0.0,
            "violations": rep.violations,
        }
    )
    return EXIT_OK if rep.ok else EXIT_VIOLATION


def cmd_sim_verify(a) -> int:
    net = _load_net(a.net)
    rep = sim.verify_trace(net, sim.SimTrace.read_csv(a.trace))
    _emit({"ok": rep.ok, "violations": rep.violations})
    return EXIT_OK if rep.ok else EXIT_VIOLATION


# -- fluid -------------------------------------------------------------------
def cmd_fluid_validate(a) -> int:
    net = _load_net(a.net)
    sol = fluid.FluidSolution.load(a.sol)
    rep = fluid.check_all(net, sol, a.tol)
    _emit({"ok": rep.ok, "max_violation": rep.max_violation, "summary": rep.summary()})
    return EXIT_OK if rep.ok else EXIT_VIOLATION


def cmd_fluid_simulate(a) -> int:
    net = _load_net(a.net)
    order = [[int(x) for x in part.split(",")] for part in a.priority.split("|")] if a.priority else None
    sol = fluid.simulate_priority_fluid(net, order, _vec(a.q0), a.horizon)
    sol.dump(a.out, net)
    return EXIT_OK


# -- fdp ---------------------------------------------------------------------
def cmd_fdp_decompose(a) -> int:
    net = _load_net(a.net)
    sol = fluid.FluidSolution.load(a.sol)
    dec = fdp.fdp_decompose(net, sol)
    rep = fdp.fdp_bound_check(net, sol, dec)
    if a.out:
        _emit(dec.to_json(), a.out)
    _emit({"M": dec.M, "M_bound": rep.M_bound, "cut_times": dec.cut_times, "violations": rep.violations})
    return EXIT_OK if rep.ok else EXIT_VIOLATION


# -- divergent ---------------------------------------------------------------
def _witness(net, path: str) -> divergence.Witness:
    return divergence.make_witness(net, fluid.FluidSolution.load(path))


def cmd_div_build(a) -> int:
    net = _load_net(a.net)
    w = _witness(net, a.witness)
    q = _vec(a.q) or [0.0] * net.d
    sol = divergence.build_divergent(net, w, q, a.horizon)
    sol.dump(a.out, net)
    rep = fluid.check_all(net, sol)
    return EXIT_OK if rep.ok else EXIT_VIOLATION


def cmd_div_gamma(a) -> int:
    net = _load_net(a.net)
    cert = divergence.gamma_of_witness(net, _witness(net, a.witness))
    _emit(cert.to_json())
    return EXIT_OK


# -- attack ------------------------------------------------------------------
def cmd_attack_run(a) -> int:
    net = _load_net(a.net)
    w = _witness(net, a.witness)
    per = a.n // net.d
    q = [per] * net.d
    q[0] += a.n - per * net.d
    cfg = tracker.SupervisorConfig(
        n0=a.n0, max_epochs=a.max_epochs, paper_strict_delta=a.mode == "strict", practical_cap=a.cap
    )
    out = Path(a.out_dir) if a.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rows, logs = [], []
    for seed in range(a.seed, a.seed + a.seeds):
        tr, log = tracker.supervisor_run(net, w, sim.SimState(q), cfg, a.horizon, seed, a.sample_dt)
        logs.append(log.to_json() | {"seed": seed})
        rows.append(
            {
                "seed": seed,
                "epochs": len(log.epochs),
                "first_doubled": log.first_epoch_doubled(),
                "induction_ok": log.induction_check(),
                "divergence_estimate": analysis.divergence_estimate(tr),
                "final_mass": int(tr.norms()[-1]),
            }
        )
        if out:
            (out / f"epochs_{seed}.csv").write_text(log.to_csv())
    if out:
        _emit(logs, str(out / "epoch_logs.json"))
    _emit(
        {
            "seeds": a.seeds,
            "first_epoch_doubling_rate": float(np.mean([r["first_doubled"] for r in rows])),
            "divergence_q05": float(np.quantile([r["divergence_estimate"] for r in rows], 0.05)),
            "induction_ok": all(r["induction_ok"] for r in rows),
            "runs": rows,
        }
    )
    return EXIT_OK if all(r["induction_ok"] for r in rows) else EXIT_VIOLATION


# -- ld ----------------------------------------------------------------------
def cmd_ld_rate(a) -> int:
    dist = DistSpec.parse(a.dist)
    L, th, V = ld.ld_constants(dist, a.eps, a.direction)
    _emit({"L": L, "theta_star": th, "V": V, "direction": a.direction})
    return EXIT_OK


def cmd_ld_verify(a) -> int:
    dist = DistSpec.parse(a.dist)
    bound = ld.ld_time_bound(dist, a.eps, a.n)
    freq = ld.empirical_ld_time(dist, a.eps, a.n, a.z, a.trials, a.seed)
    margin = 3 * ld.binomial_sigma(bound, a.trials)
    ok = freq <= bound + margin
    _emit({"bound": bound, "margin": margin, "frequency": freq, "verdict": "pass" if ok else "fail"})
    return EXIT_OK if ok else EXIT_VIOLATION


# -- report ------------------------------------------------------------------
def cmd_report_stability(a) -> int:
    net = _load_net(a.net)
    traces = [sim.SimTrace.read_csv(p) for p in a.traces]
    rep = analysis.rate_stability_estimate(traces, net, a.tol)
    _emit(rep.to_json())
    return EXIT_OK


def cmd_report_divergence(a) -> int:
    tr = sim.SimTrace.read_csv(a.trace)
    _emit({"divergence_estimate": analysis.divergence_estimate(tr, a.window)})
    return EXIT_OK


def cmd_fixture(a) -> int:
    net = fixtures.rybko_stolyar() if a.name == "rs" else fixtures.single_queue()
    net.dump(a.out)
    if a.witness:
        if a.name != "rs":
            raise InputError("only the rs fixture ships a witness")
        fixtures.rs_witness().dump(a.witness, net)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fnet", description=__doc__)
    top = p.add_subparsers(dest="cmd", required=True)

    s = top.add_parser("sim").add_subparsers(dest="sub", required=True)
    r = s.add_parser("run")
    r.add_argument("net")
    r.add_argument("--policy", default="fifo")
    r.add_argument("--horizon", type=float, required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--sample-dt", type=float, default=None)
    r.add_argument("--q", default=None, help="initial queue vector, comma separated")
    r.add_argument("-o", "--out", default=None)
    r.add_argument("--events", default=None, help="JSON-lines event log path")
    r.set_defaults(fn=cmd_sim_run)
    r = s.add_parser("verify")
    r.add_argument("net")
    r.add_argument("trace")
    r.set_defaults(fn=cmd_sim_verify)

    f = top.add_parser("fluid").add_subparsers(dest="sub", required=True)
    r = f.add_parser("validate")
    r.add_argument("net")
    r.add_argument("sol")
    r.add_argument("--tol", type=float, default=fluid.DEFAULT_TOL)
    r.set_defaults(fn=cmd_fluid_validate)
    r = f.add_parser("simulate")
    r.add_argument("net")
    r.add_argument("--q0", required=True)
    r.add_argument("--horizon", type=float, required=True)
    r.add_argument("--priority", default=None, help="class order per station, e.g. 3,0|1,2")
    r.add_argument("-o", "--out", required=True)
    r.set_defaults(fn=cmd_fluid_simulate)

    d = top.add_parser("fdp").add_subparsers(dest="sub", required=True)
    r = d.add_parser("decompose")
    r.add_argument("net")
    r.add_argument("sol")
    r.add_argument("-o", "--out", default=None)
    r.set_defaults(fn=cmd_fdp_decompose)

    v = top.add_parser("divergent").add_subparsers(dest="sub", required=True)
    r = v.add_parser("build")
    r.add_argument("net")
    r.add_argument("witness")
    r.add_argument("--q", default=None)
    r.add_argument("--horizon", type=float, required=True)
    r.add_argument("-o", "--out", required=True)
    r.set_defaults(fn=cmd_div_build)
    r = v.add_parser("gamma")
    r.add_argument("net")
    r.add_argument("witness")
    r.set_defaults(fn=cmd_div_gamma)

    t = top.add_parser("attack").add_subparsers(dest="sub", required=True)
    r = t.add_parser("run")
    r.add_argument("net")
    r.add_argument("witness")
    r.add_argument("--n", type=int, default=200)
    r.add_argument("--seeds", type=int, default=10)
    r.add_argument("--seed", type=int, default=0, help="first seed")
    r.add_argument("--mode", choices=["strict", "practical"], default="practical")
    r.add_argument("--horizon", type=float, default=1e6)
    r.add_argument("--max-epochs", type=int, default=3)
    r.add_argument("--n0", type=int, default=50)
    r.add_argument("--cap", type=int, default=1000, help="maximum grid intervals per epoch")
    r.add_argument("--sample-dt", type=float, default=50.0)
    r.add_argument("--out-dir", default=None)
    r.set_defaults(fn=cmd_attack_run)

    l = top.add_parser("ld").add_subparsers(dest="sub", required=True)
    r = l.add_parser("rate")
    r.add_argument("dist", help="e.g. exponential:1 or erlang:3,3")
    r.add_argument("--eps", type=float, required=True)
    r.add_argument("--direction", choices=["upper", "lower"], default="upper")
    r.set_defaults(fn=cmd_ld_rate)
    r = l.add_parser("verify")
    r.add_argument("dist")
    r.add_argument("--eps", type=float, required=True)
    r.add_argument("--n", type=int, required=True)
    r.add_argument("--trials", type=int, default=100_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--z", type=float, default=0.0)
    r.set_defaults(fn=cmd_ld_verify)

    rp = top.add_parser("report").add_subparsers(dest="sub", required=True)
    r = rp.add_parser("stability")
    r.add_argument("net")
    r.add_argument("traces", nargs="+")
    r.add_argument("--tol", type=float, default=None)
    r.set_defaults(fn=cmd_report_stability)
    r = rp.add_parser("divergence")
    r.add_argument("trace")
    r.add_argument("--window", type=float, default=0.5)
    r.set_defaults(fn=cmd_report_divergence)

    r = top.add_parser("fixture", help="write a bundled network (and the RS witness)")
    r.add_argument("name", choices=["sq", "rs"])
    r.add_argument("-o", "--out", required=True)
    r.add_argument("--witness", default=None)
    r.set_defaults(fn=cmd_fixture)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except (InputError, SpecError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (fluid.FluidError, sim.SimError, ld.LdError, tracker.PlanError, analysis.AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
