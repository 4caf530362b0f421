"""
Command-line front end.

Every command reads a scenario (YAML, optional: defaults are used when
omitted), computes its result deterministically and writes CSV. Each file
written is accompanied by ``<file>.manifest.json`` holding the command,
its options, the fully resolved scenario and the SHA-256 of every output,
so ``mprvlc replay <manifest>`` can re-run it and check the bytes.

Exit codes: 0 success, 1 error, 2 usage, 3 no feasible access vector,
4 gradient check failed, 5 replay mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import (ChannelDomainError, received_optical_power, shot_noise_variance,
                      thermal_noise_variance)
from .optimizer import AccessProblem, OptimizerParams, optimize
from .qos import (constraint_violation, evaluate_qos, mean_service_rates, saturation_throughput,
                  throughput_gradient)
from .scenario import (Scenario, ScenarioError, apply_split_qos, resolve_path, scenario_from_dict,
                       scenario_to_dict)
from .sic import SingularChannelError
from .simulator import DEFAULT_SLOTS, SimConfig, run_slots
from .states import CapacityError, state_label

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_GRADIENT, EXIT_MISMATCH = range(6)
GRADIENT_TOL = 1e-6
MANIFEST_SUFFIX = ".manifest.json"

# options that name output files; never part of the replayed computation
OUTPUT_OPTIONS = {"output": "main", "trace": "trace", "result": "result", "noise": "noise"}
# options that only shape the scenario and are already folded into it
SCENARIO_OPTIONS = {"scenario", "devices", "pds", "placement_seed", "filter", "theta",
                    "arrival_rate", "beta", "split_qos"}


def fmt(x) -> str:
    return f"{float(x):.5e}"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return buf.getvalue()


def parse_access_vector(text: str | None, n: int) -> np.ndarray:
    """``uniform`` (1/N each), one number, N comma-separated numbers, or a file of numbers."""
    if text is None or text == "uniform":
        return np.full(n, 1.0 / n)
    path = Path(text)
    if path.is_file():
        text = path.read_text()
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ScenarioError(f"--p: cannot read {text!r} as numbers") from None
    if len(values) == 1:
        values *= n
    if len(values) != n:
        raise ScenarioError(f"--p: expected {n} values, got {len(values)}")
    return np.array(values)


def load_scenario(args) -> Scenario:
    data = {}
    if args.scenario is not None:
        path = resolve_path(args.scenario)
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ScenarioError(f"{path}: expected a mapping of sections")
    for opt, section, key in (("devices", "devices", "count"), ("placement_seed", "devices", "seed"),
                              ("pds", "receiver", "count"), ("filter", "detector", "filter"),
                              ("theta", "traffic", "qos_exponent"),
                              ("arrival_rate", "traffic", "arrival_rate"),
                              ("beta", "traffic", "unblocked_probability")):
        value = getattr(args, opt, None)
        if value is not None:
            sec = data.setdefault(section, {}) or {}
            data[section] = sec
            if key == "count":
                sec.pop("positions", None)
            sec[key] = value
    sc = scenario_from_dict(data)
    if getattr(args, "split_qos", None):
        sc = apply_split_qos(sc, args.split_qos)
    return sc


# ---------------------------------------------------------------- commands


def cmd_channel(args, sc: Scenario) -> dict[str, str]:
    H = sc.channel()
    header = ["pd"] + [f"device_{j}" for j in range(sc.num_devices)]
    out = {"main": _csv(header, [[str(i), *H[i]] for i in range(sc.num_pds)])}
    table = sc.rate_table(args.workers)
    thermal = thermal_noise_variance(sc.optics, sc.noise)
    rows = []
    for k, active in enumerate(table.active):
        pr = received_optical_power(H, active, sc.optics.tx_power)
        rows.append([state_label(int(table.masks[k]), sc.num_devices), pr,
                     shot_noise_variance(pr, sc.optics, sc.noise), thermal, table.noise_var[k]])
    out["noise"] = _csv(["state_bits", "received_power_w", "shot_var_a2", "thermal_var_a2",
                         "noise_var_a2"], rows)
    return out


def cmd_states(args, sc: Scenario) -> dict[str, str]:
    table = sc.rate_table(args.workers)
    p = parse_access_vector(args.p, sc.num_devices)
    pi = table.probabilities(p, sc.traffic.beta)
    header = ["state_bits", "tau", *(f"rate_{j}" for j in range(sc.num_devices)), "probability"]
    rows = [[state_label(int(m), sc.num_devices), str(int(table.counts[k])), *table.rates[k], pi[k]]
            for k, m in enumerate(table.masks)]
    return {"main": _csv(header, rows)}


def _qos_rows(sc: Scenario, table, p):
    t = sc.traffic
    qos = evaluate_qos(table, np.clip(p, 0.0, 1.0), t.beta, t.theta, t.arrival_rate,
                       t.packet_length, sc.slot_duration)
    viol = constraint_violation(p, qos)
    return qos, viol


def cmd_analyze(args, sc: Scenario) -> dict[str, str]:
    table = sc.rate_table(args.workers)
    p = parse_access_vector(args.p, sc.num_devices)
    t = sc.traffic
    qos, viol = _qos_rows(sc, table, p)
    mean = mean_service_rates(table, np.clip(p, 0.0, 1.0), t.beta)
    header = ["device", "p", "beta", "theta", "ec_bps", "eb_bps", "slack", "omega_qos",
              "omega_p0", "omega_p1", "mean_rate_bps"]
    rows = [[str(j), p[j], t.beta[j], t.theta[j], qos.effective_capacity[j],
             qos.effective_bandwidth[j], qos.slack[j], viol.qos[j], viol.below_zero[j],
             viol.above_one[j], mean[j]] for j in range(sc.num_devices)]
    eta = saturation_throughput(table, np.clip(p, 0.0, 1.0), t.beta)
    rows.append(["total", "", "", "", "", "", "", math.fsum(viol.qos), math.fsum(viol.below_zero),
                 math.fsum(viol.above_one), eta])
    return {"main": _csv(header, rows)}


def _optimizer_params(args) -> OptimizerParams:
    return OptimizerParams(
        initial_population=args.initial_population, max_population=args.max_population,
        max_offspring=args.max_offspring, min_offspring=args.min_offspring,
        modulation_index=args.modulation_index, sigma_initial=args.sigma_initial,
        sigma_final=args.sigma_final, max_generations=args.generations,
        scaling_factor=args.scaling_factor, crossover_prob=args.crossover_prob,
        rng_seed=args.seed)


def cmd_optimize(args, sc: Scenario) -> dict[str, str]:
    table = sc.rate_table(args.workers)
    problem = AccessProblem(table, sc.traffic, sc.slot_duration)
    res = optimize(problem, _optimizer_params(args))
    p = res.best.p
    qos, viol = _qos_rows(sc, table, p)
    eta = saturation_throughput(table, np.clip(p, 0.0, 1.0), sc.traffic.beta)
    result = _csv(["device", "p", "ec_bps", "eb_bps", "slack", "omega"],
                  [[str(j), p[j], qos.effective_capacity[j], qos.effective_bandwidth[j],
                    qos.slack[j], viol.per_device[j]] for j in range(sc.num_devices)]
                  + [["total", "", "", "", "", viol.total]])
    result += f"# eta_bps,{fmt(eta)}\n# feasible,{int(res.feasible)}\n"
    trace = _csv(["generation", "best_eta", "best_fitness", "feasible_fraction"],
                 [[str(r.generation), r.best_eta, r.best_fitness, r.feasible_fraction]
                  for r in res.trace])
    first = "none" if res.first_all_feasible is None else str(res.first_all_feasible)
    summary = (f"feasible: {'yes' if res.feasible else 'no'}\n"
               f"eta_bps: {fmt(eta)}\n"
               f"omega: {fmt(res.best.violation)}\n"
               f"p: {' '.join(fmt(v) for v in p)}\n"
               f"first_all_feasible_generation: {first}\n"
               f"evaluations: {res.evaluations}\n")
    return {"main": summary, "result": result, "trace": trace,
            "_exit": EXIT_OK if res.feasible else EXIT_INFEASIBLE}


def cmd_simulate(args, sc: Scenario) -> dict[str, str]:
    table = sc.rate_table(args.workers)
    p = parse_access_vector(args.p, sc.num_devices)
    t = sc.traffic
    cfg = SimConfig(n_slots=args.slots, rng_seed=args.seed, slot_duration=sc.slot_duration,
                    workers=args.workers)
    sim = run_slots(table, p, t.beta, t.theta, cfg)
    qos = evaluate_qos(table, p, t.beta, t.theta, t.arrival_rate, t.packet_length, sc.slot_duration)
    mean = mean_service_rates(table, p, t.beta)
    ec = qos.effective_capacity
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(ec > 0, np.abs(sim.empirical_ec - ec) / ec, 0.0)
    header = ["device", "p", "theta", "analytic_ec_bps", "empirical_ec_bps", "ec_rel_diff",
              "analytic_mean_rate_bps", "empirical_mean_rate_bps"]
    rows = [[str(j), p[j], t.theta[j], ec[j], sim.empirical_ec[j], rel[j], mean[j],
             sim.mean_rate[j]] for j in range(sc.num_devices)]
    rows.append(["total", "", "", "", "", "", saturation_throughput(table, p, t.beta),
                 sim.throughput])
    return {"main": _csv(header, rows)}


def gradient_deviation(table, p, beta, step: float = 1e-6) -> float:
    """Largest relative gap between the analytic gradient and central differences."""
    g = throughput_gradient(table, p, beta)
    fd = np.empty_like(g)
    for n in range(len(p)):
        e = np.zeros_like(p)
        e[n] = step
        fd[n] = (saturation_throughput(table, p + e, beta)
                 - saturation_throughput(table, p - e, beta)) / (2 * step)
    floor = 1e-12 * max(np.abs(fd).max(), np.abs(g).max(), 1e-300)
    return float(np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)))


def cmd_gradient_check(args, sc: Scenario) -> dict[str, str]:
    table = sc.rate_table(args.workers)
    rng = np.random.default_rng(args.seed)
    rows, worst = [], 0.0
    for k in range(args.points):
        p = 1.0 - rng.random(sc.num_devices)
        dev = gradient_deviation(table, p, sc.traffic.beta, args.step)
        worst = max(worst, dev)
        rows.append([str(k), dev])
    text = _csv(["point", "max_rel_deviation"], rows)
    text += f"# max_rel_deviation,{fmt(worst)}\n# tolerance,{fmt(args.tol)}\n"
    return {"main": text, "_exit": EXIT_OK if worst <= args.tol else EXIT_GRADIENT,
            "_stderr": f"max relative deviation {worst:.3e} (tolerance {args.tol:.1e})\n"}


COMMANDS = {
    "channel": cmd_channel,
    "states": cmd_states,
    "analyze": cmd_analyze,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "gradient-check": cmd_gradient_check,
}


# ---------------------------------------------------------------- manifests


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _replay_options(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())
            if k not in OUTPUT_OPTIONS and k not in SCENARIO_OPTIONS and k != "command"}


def build_manifest(args, sc: Scenario, outputs: dict[str, str]) -> dict:
    return {
        "command": args.command,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "options": _replay_options(args),
        "scenario": scenario_to_dict(sc),
        "outputs": {role: {"file": getattr(args, opt, None), "sha256": _digest(outputs[role])}
                    for opt, role in OUTPUT_OPTIONS.items() if role in outputs},
    }


def _write_outputs(args, sc: Scenario, outputs: dict[str, str]) -> None:
    manifest = None
    for opt, role in OUTPUT_OPTIONS.items():
        target = getattr(args, opt, None)
        if role not in outputs:
            continue
        if target is None:
            if role == "main":
                sys.stdout.write(outputs[role])
            continue
        Path(target).write_text(outputs[role])
        manifest = manifest or build_manifest(args, sc, outputs)
        Path(str(target) + MANIFEST_SUFFIX).write_text(json.dumps(manifest, indent=2) + "\n")


def replay(manifest_path: str) -> int:
    """Re-run a manifest's command and compare output digests."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read manifest {manifest_path}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    func = COMMANDS.get(manifest.get("command"))
    if func is None:
        print(f"error: manifest names unknown command {manifest.get('command')!r}", file=sys.stderr)
        return EXIT_ERROR
    if manifest.get("version") != __version__:
        print(f"warning: manifest written by version {manifest.get('version')}, "
              f"replaying with {__version__}", file=sys.stderr)
    args = argparse.Namespace(command=manifest["command"], **manifest["options"])
    outputs = func(args, scenario_from_dict(manifest["scenario"]))
    status = EXIT_OK
    for role, entry in manifest["outputs"].items():
        got = _digest(outputs.get(role, ""))
        ok = got == entry["sha256"]
        print(f"{role}: {'match' if ok else 'MISMATCH'} {entry.get('file') or '-'}")
        if not ok:
            status = EXIT_MISMATCH
    return status


# ---------------------------------------------------------------- parser


def _scenario_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("scenario", nargs="?", help="scenario YAML (defaults when omitted)")
    sp.add_argument("--devices", type=int, help="override device count (random placement)")
    sp.add_argument("--pds", type=int, help="override PD count (default layout)")
    sp.add_argument("--placement-seed", type=int, help="seed of the random device placement")
    sp.add_argument("--filter", choices=["zf", "mmse"], help="SIC filter")
    sp.add_argument("--theta", type=float, help="QoS exponent for every device, 1/bit")
    sp.add_argument("--arrival-rate", type=float, help="Poisson arrivals per slot, every device")
    sp.add_argument("--beta", type=float, help="unblocked probability, every device")
    sp.add_argument("--split-qos", metavar="SPEC",
                    help="per-group QoS exponents, e.g. 'M/2:1e-7,rest:1e-10'")
    sp.add_argument("--workers", type=int, default=1, help="threads for table building/simulation")
    sp.add_argument("-o", "--output", help="write the main CSV here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mprvlc", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    sp = sub.add_parser("channel", help="channel matrix and per-state noise variances")
    _scenario_args(sp)
    sp.add_argument("--noise", metavar="CSV", help="write per-state noise components here")

    sp = sub.add_parser("states", help="feasible states, per-device rates and probabilities")
    _scenario_args(sp)
    sp.add_argument("--p", help="access vector: 'uniform', a number, 'p1,p2,...' or a file")

    sp = sub.add_parser("analyze", help="EC, EB, slack, violations and throughput for one p")
    _scenario_args(sp)
    sp.add_argument("--p", help="access vector: 'uniform', a number, 'p1,p2,...' or a file")

    sp = sub.add_parser("optimize", help="IWO-DE search for the best access vector")
    _scenario_args(sp)
    d = OptimizerParams()
    sp.add_argument("--initial-population", type=int, default=d.initial_population)
    sp.add_argument("--max-population", type=int, default=d.max_population)
    sp.add_argument("--max-offspring", type=int, default=d.max_offspring)
    sp.add_argument("--min-offspring", type=int, default=d.min_offspring)
    sp.add_argument("--modulation-index", type=float, default=d.modulation_index)
    sp.add_argument("--sigma-initial", type=float, default=d.sigma_initial)
    sp.add_argument("--sigma-final", type=float, default=d.sigma_final)
    sp.add_argument("--generations", type=int, default=d.max_generations)
    sp.add_argument("--scaling-factor", type=float, default=d.scaling_factor)
    sp.add_argument("--crossover-prob", type=float, default=d.crossover_prob)
    sp.add_argument("--seed", type=int, default=d.rng_seed)
    sp.add_argument("--trace", metavar="CSV", help="per-generation trace")
    sp.add_argument("--result", metavar="CSV", help="optimal p with per-device EC/EB/slack")

    sp = sub.add_parser("simulate", help="slot-level Monte Carlo against the analytic EC")
    _scenario_args(sp)
    sp.add_argument("--slots", type=int, default=DEFAULT_SLOTS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--p", help="access vector: 'uniform', a number, 'p1,p2,...' or a file")

    sp = sub.add_parser("gradient-check", help="analytic throughput gradient vs central differences")
    _scenario_args(sp)
    sp.add_argument("--points", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--step", type=float, default=1e-6)
    sp.add_argument("--tol", type=float, default=GRADIENT_TOL)

    sp = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    sp.add_argument("manifest")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "replay":
        return replay(args.manifest)
    try:
        sc = load_scenario(args)
        outputs = COMMANDS[args.command](args, sc)
    except (ScenarioError, ChannelDomainError, CapacityError, SingularChannelError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    status = outputs.pop("_exit", EXIT_OK)
    if "_stderr" in outputs:
        sys.stderr.write(outputs.pop("_stderr"))
    _write_outputs(args, sc, outputs)
    if status == EXIT_INFEASIBLE:
        print("no feasible access vector found", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
