"""Command-line front end.

::

    stochfsi run       [--config FILE] [--seed S] [--paths K] [--steps N] [--threads K] [--out DIR]
    stochfsi verify    [...]
    stochfsi converge  [...] [--levels L]
    stochfsi path-dump [...] [--path-id I]

Exit codes: 0 success, 1 failed verification, 2 configuration error.
"""

import argparse
import json
import os
import sys

from .energetics import SCHEMA_VERSION
from .montecarlo import ConfigError, RunConfig, convergence_study, run_ensemble
from .noise import sample_path
from .splitting import Problem

OVERRIDES = {"seed": "seed", "paths": "n_paths", "steps": "N", "threads": "threads",
             "out": "out_dir"}


def parse_config(path=None, overrides=None):
    """Read a JSON config file (``None`` -> defaults) and apply overrides.

    Raises
    ------
    ConfigError
        Missing file, malformed JSON, unknown keys or invalid values; the
        message names the offending field.
    """
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
    overrides = dict(overrides or {})
    bad = sorted(set(overrides) - set(OVERRIDES.values()))
    if bad:
        raise ConfigError(bad[0], f"not an overridable field: {bad}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None


def _header(config):
    return (f"schema_version: {SCHEMA_VERSION}\n"
            f"config: {json.dumps(config.numerical_dict(), sort_keys=True)}")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(config, out, args):
    problem = Problem(config)
    report = run_ensemble(config, problem)
    report.to_json(os.path.join(out, "report.json"))
    if config.trajectory_csv:
        path = sample_path(config.seed, 0, config.N, config.T)
        traj = problem.run_path(path)
        traj.ledger.to_csv(os.path.join(out, "ledger.csv"), header_comment=_header(config))
    q = report.quantities
    print(f"paths: {config.n_paths}  N: {config.N}  mesh: {config.nz}x{config.nr}")
    for name in ("max_energy", "dissipation_sum", "stochastic_dissipation_sum"):
        se = q[name]["stderr"]
        print(f"  E[{name}] = {q[name]['mean']:.6g}" + (f" +- {se:.2g}" if se is not None else ""))
    print(f"  max identity residual: {max(report.residuals.values()):.3e}")
    if report.flags["trivially_zero_trajectory"]:
        print("  trivially zero trajectory")
    print(f"wrote {os.path.join(out, 'report.json')}")
    return 0


def cmd_verify(config, out, args):
    from .verify import Suite, format_table

    results = Suite(config).run()
    print(format_table(results))
    ok = all(r.passed for r in results)
    _write_json(os.path.join(out, "verify.json"), {
        "schema_version": SCHEMA_VERSION,
        "config": config.numerical_dict(),
        "passed": ok,
        "checks": [r.to_dict() for r in results],
    })
    return 0 if ok else 1


def cmd_converge(config, out, args):
    rep = convergence_study(config, args.levels)
    rep.to_csv(os.path.join(out, "convergence.csv"))
    print(f"{'N':>5} {'E|u_N-u_2N|^2':>14} {'E|v_N-v_2N|^2':>14} {'E|eta_N-eta_2N|^2':>18} "
          f"{'vstar(N)':>11} {'ratio':>7}")
    for r in rep.rows:
        print(f"{r['N']:5d} {r['u_diff_mean']:14.4e} {r['v_diff_mean']:14.4e} "
              f"{r['eta_diff_mean']:18.4e} {r['vstar_mean']:11.4e} {r['vstar_ratio']:7.3f}")
    return 0


def cmd_path_dump(config, out, args):
    path = sample_path(config.seed, args.path_id, config.N, config.T)
    target = os.path.join(out, "path.csv")
    path.to_csv(target)
    print(f"wrote {target}")
    return 0


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "converge": cmd_converge,
            "path-dump": cmd_path_dump}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    common.add_argument("--steps", type=int, help="number of time steps N")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--out", help="output directory")
    p = argparse.ArgumentParser(prog="stochfsi", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run an ensemble, write report.json")
    sub.add_parser("verify", parents=[common], help="run the invariant suite")
    c = sub.add_parser("converge", parents=[common], help="coupled convergence study")
    c.add_argument("--levels", type=int, default=3)
    d = sub.add_parser("path-dump", parents=[common], help="write one Brownian path as CSV")
    d.add_argument("--path-id", type=int, default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {OVERRIDES[k]: getattr(args, k) for k in OVERRIDES}
    try:
        config = parse_config(args.config, overrides)
        if args.command == "converge" and args.levels < 2:
            raise ConfigError("levels", f"must be >= 2, got {args.levels}")
        if args.command == "path-dump" and args.path_id < 0:
            raise ConfigError("path_id", f"must be >= 0, got {args.path_id}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = config.out_dir or "."
    os.makedirs(out, exist_ok=True)
    return COMMANDS[args.command](config, out, args)


if __name__ == "__main__":
    sys.exit(main())
