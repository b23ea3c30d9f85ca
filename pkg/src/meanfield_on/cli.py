"""Command-line entry point: ``meanfield-on <command> [flags]``.

A JSON config file (``--config``) supplies defaults; any flag given on the
command line overrides the corresponding key.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError
from .runner import COMMANDS, EXIT_CONFIG, ExperimentConfig, run


def parse_int_list(text: str) -> list[int]:
    """Parse ``"16,32,64"``, ``"2..10"`` or a mix such as ``"2..4,8"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = part.split("..")
                lo, hi = int(lo), int(hi)
                if hi < lo:
                    raise ConfigError(f"empty range {part!r}")
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError as exc:
            raise ConfigError(f"cannot parse integer list {text!r}") from exc
    if not out:
        raise ConfigError(f"empty integer list {text!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meanfield-on", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with ExperimentConfig keys")
    p.add_argument("--N", dest="N", help="spin dimension; verify-lemmas accepts lists and ranges like 2..10")
    p.add_argument("--beta", type=float)
    p.add_argument("--n", dest="n_values", help="comma-separated system sizes")
    p.add_argument("--sweeps", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--init", choices=("ordered", "uniform"))
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--oracle", action="store_true", default=None, help="rate: add exact-oracle distances")
    p.add_argument("--no-simulate", dest="simulate", action="store_false", default=None,
                   help="rate: skip the Markov chain part")
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--binned", action="store_true", default=None,
                   help="stein-terms: also report the W-binned ratio term")
    p.add_argument("--workers", type=int)
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config!r}: {exc}") from exc
    data["command"] = args.command
    for key in ("beta", "sweeps", "burn_in", "thin", "chains", "master_seed", "init",
                "output_dir", "format", "oracle", "simulate", "grid_points", "binned", "workers"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.n_values is not None:
        data["n_values"] = parse_int_list(args.n_values)
    if args.N is not None:
        Ns = parse_int_list(args.N)
        if len(Ns) == 1:
            data["N"] = Ns[0]
            data.pop("N_values", None)
        elif args.command == "verify-lemmas":
            data["N_values"] = Ns
        else:
            raise ConfigError(f"{args.command} takes a single N, got {Ns}")
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    raise SystemExit(main())
