"""Experiment orchestration: configuration, seeding, chains and output artifacts.

Every artifact starts with ``#`` comment lines (CSV) or a ``meta`` object
(JSON) holding the config echo, derived constants, package version and the
per-chain seeds.  The wall-clock timestamp sits alone on the first comment
line (or under ``meta.generated``) so reruns can be compared byte for byte
once it is dropped.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import traceback
import warnings
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import RECORD_COLUMNS, run_chain
from .errors import ConfigError, ConsistencyError, DomainError, EstimationError, NumericalError
from .model import ModelParams, derive_constants
from .oracle import exact_kolmogorov_to_normal, gibbs_radial_law
from .special_functions import BOUND_SLACK_TOL, LEMMA_INEQUALITIES, verify_lemma_bounds
from .stein import RateTable, empirical_kolmogorov, empirical_wasserstein, stein_terms

COMMANDS = ("simulate", "rate", "stein-terms", "oracle", "verify-lemmas")
OUTPUT_ENV = "MEANFIELD_ON_OUTPUT_DIR"
SEED_ALGORITHM = "numpy Philox4x64-10 keyed by SeedSequence(entropy=master_seed, spawn_key=(chain_id,))"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

RATE_COLUMNS = (
    "n", "d_k_empirical", "d_w_empirical", "d_k_oracle", "ratio_term", "third_moment_term",
    "remainder_term", "wasserstein_bound", "kolmogorov_bound", "b", "B2", "lambda", "seed",
)


def _default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "results")


@dataclass
class ExperimentConfig:
    command: str = "simulate"
    N: int = 3
    beta: float = 5.0
    n_values: list = field(default_factory=lambda: [64])
    sweeps: int = 10_000
    burn_in: int = 1_000
    thin: int = 1
    chains: int = 1
    master_seed: int = 0
    init: str = "ordered"
    output_dir: str = field(default_factory=_default_output_dir)
    format: str = "csv"
    oracle: bool = False
    simulate: bool = True
    N_values: list | None = None
    grid_points: int = 100_000
    binned: bool = False
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}, got {self.command!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be 'csv' or 'json', got {self.format!r}")
        if self.init not in ("ordered", "uniform"):
            raise ConfigError(f"init must be 'ordered' or 'uniform', got {self.init!r}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.command == "verify-lemmas":
            Ns = self.N_values or [self.N]
            if any(int(v) < 2 for v in Ns):
                raise ConfigError("every N must be >= 2")
            if self.grid_points < 2:
                raise ConfigError("grid_points must be >= 2")
            return self
        if int(self.N) != self.N or self.N < 2:
            raise ConfigError(f"N must be an integer >= 2, got {self.N!r}")
        if not self.beta > self.N:
            raise ConfigError(f"beta={self.beta} must exceed N={self.N} (supercritical phase)")
        ns = list(self.n_values)
        if not ns:
            raise ConfigError("n_values must be nonempty")
        if len(set(ns)) != len(ns):
            raise ConfigError(f"n_values must be distinct, got {ns}")
        if any(int(v) != v or v < 2 for v in ns):
            raise ConfigError("every n must be an integer >= 2")
        if self.sweeps < 0 or self.burn_in < 0 or self.thin < 1 or self.chains < 1:
            raise ConfigError("need sweeps >= 0, burn_in >= 0, thin >= 1, chains >= 1")
        if self.command == "rate" and not (self.simulate or self.oracle):
            raise ConfigError("rate needs simulation, the oracle, or both")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


def seed_stream(master_seed: int, chain_id: int) -> np.random.Generator:
    """Independent generator for one chain: Philox keyed by a spawned SeedSequence."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(chain_id),))
    return np.random.Generator(np.random.Philox(ss))


def _constants(N, beta, n) -> dict:
    d = derive_constants(ModelParams(N, beta, n))
    return {"b": d.b, "B2": d.B2, "lambda": d.lam, "delta_cap": d.delta_cap}, d


def _chain_task(args):
    N, beta, n, sweeps, burn_in, thin, init, seed, chain_id = args
    params = ModelParams(N, beta, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        derived = derive_constants(params)
    rng = seed_stream(seed, chain_id)
    run = run_chain(params, derived, sweeps, burn_in, thin, rng, init=init, chain_id=chain_id)
    return run.records


def run_chains(config: ExperimentConfig, n: int, base_id: int) -> tuple[np.ndarray, list[int]]:
    """Run ``config.chains`` chains for one ``n``; records are stacked in chain-id order."""
    ids = [base_id + c for c in range(config.chains)]
    tasks = [(config.N, config.beta, n, config.sweeps, config.burn_in, config.thin, config.init,
              config.master_seed, cid) for cid in ids]
    if config.workers > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(config.workers) as pool:
            parts = list(pool.map(_chain_task, tasks))
    else:
        parts = [_chain_task(t) for t in tasks]
    rows = [np.column_stack([np.full(len(p), cid), p]) for cid, p in zip(ids, parts)]
    return np.vstack(rows), ids


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            raise NumericalError(f"non-finite value {v} in output")
        return repr(float(v))
    return str(v)


class ArtifactWriter:
    """Writes CSV or JSON artifacts with a reproducibility header."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.dir = Path(config.output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def _meta(self, constants, seeds, extra) -> dict:
        meta = {
            "version": f"meanfield_on {__version__}",
            "config": self.config.to_dict(),
            "constants": constants,
            "rng": SEED_ALGORITHM,
            "seeds": seeds,
        }
        meta.update(extra or {})
        return meta

    def write(self, stem: str, columns, rows, constants=None, seeds=None, extra=None) -> Path:
        meta = self._meta(constants, seeds, extra)
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        if self.config.format == "json":
            path = self.dir / f"{stem}.json"
            body = {"meta": {"generated": stamp, **meta}, "columns": list(columns),
                    "rows": [[_json_val(v) for v in row] for row in rows]}
            text = json.dumps(body, indent=1, sort_keys=False) + "\n"
        else:
            path = self.dir / f"{stem}.csv"
            buf = io.StringIO()
            buf.write(f"# generated: {stamp}\n")
            for key, val in meta.items():
                buf.write(f"# {key}: {json.dumps(val, sort_keys=True)}\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
            text = buf.getvalue()
        path.write_text(text)
        self.written.append(path)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.written.append(path)
        return path


def _json_val(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            raise NumericalError(f"non-finite value {v} in output")
        return float(v)
    return v


def _seed_labels(config, ids):
    return [f"{config.master_seed}:{cid}" for cid in ids]


def _simulate(config: ExperimentConfig, out: ArtifactWriter) -> list[dict]:
    summary = []
    for k, n in enumerate(config.n_values):
        consts, derived = _constants(config.N, config.beta, n)
        rec, ids = run_chains(config, n, base_id=k * config.chains)
        out.write(f"simulate_n{n}", ("chain",) + RECORD_COLUMNS,
                  [[int(r[0]), int(r[1])] + list(r[2:8]) + [int(r[8])] for r in rec],
                  constants=consts, seeds=_seed_labels(config, ids))
        wB = rec[:, 3] / derived.B
        summary.append({"n": n, "records": len(rec), "mean_W": float(rec[:, 3].mean()),
                        "var_W": float(rec[:, 3].var()),
                        "d_k_empirical": empirical_kolmogorov(wB),
                        "d_w_empirical": empirical_wasserstein(wB),
                        **consts, "seed": _seed_labels(config, ids)[0], "_rec": rec,
                        "_derived": derived})
    cols = ("n", "records", "mean_W", "var_W", "d_k_empirical", "d_w_empirical", "b", "B2", "lambda")
    out.write("simulate_summary", cols, [[s[c] for c in cols] for s in summary],
              seeds=[s["seed"] for s in summary])
    return summary


def _stein_rows(config, sims) -> list[dict]:
    rows = []
    for s in sims:
        rec, derived = s["_rec"], s["_derived"]
        params = ModelParams(config.N, config.beta, s["n"])
        terms = stein_terms(rec[:, 3], rec[:, 5], rec[:, 6], rec[:, 7], params, derived,
                            binned=config.binned)
        rows.append({**terms.as_dict(), "b": s["b"], "B2": s["B2"], "lambda": s["lambda"],
                     "seed": s["seed"]})
    return rows


def _oracle(config: ExperimentConfig, out: ArtifactWriter) -> dict[int, dict]:
    res = {}
    for n in config.n_values:
        consts, derived = _constants(config.N, config.beta, n)
        law = gibbs_radial_law(n, config.N, config.beta, workers=config.workers)
        kd = exact_kolmogorov_to_normal(n, config.N, config.beta, derived, law=law)
        out.write(f"oracle_law_n{n}", ("r", "density", "cdf"),
                  zip(law.grid, law.density, law.cdf), constants=consts, seeds=[])
        res[n] = {"n": n, "d_k_oracle": kd.distance, "d_k_oracle_z_grid": kd.distance_z_grid,
                  "argmax_r": kd.argmax_r, **consts}
    return res


def run(config: ExperimentConfig) -> int:
    """Execute one command; returns the process exit status."""
    try:
        config.validate()
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = ArtifactWriter(config)
        out.write_text("config.json", json.dumps(config.to_dict(), indent=1) + "\n")
        _dispatch(config, out)
    except (NumericalError, ConsistencyError, EstimationError, DomainError) as exc:
        print(f"numerical error in {_failing_module(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _failing_module(exc: BaseException) -> str:
    name = "meanfield_on"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("meanfield_on."):
            name = mod
    return name


def _dispatch(config: ExperimentConfig, out: ArtifactWriter) -> None:
    cmd = config.command
    if cmd == "verify-lemmas":
        _verify(config, out)
    elif cmd == "simulate":
        _simulate(config, out)
    elif cmd == "stein-terms":
        rows = _stein_rows(config, _simulate(config, out))
        cols = list(rows[0].keys())
        if not config.binned:
            cols.remove("ratio_term_binned")
        out.write("stein_terms", cols, [[r[c] for c in cols] for r in rows],
                  seeds=[r["seed"] for r in rows])
    elif cmd == "oracle":
        res = _oracle(config, out)
        cols = ("n", "d_k_oracle", "d_k_oracle_z_grid", "argmax_r", "b", "B2", "lambda")
        out.write("oracle", cols, [[res[n][c] for c in cols] for n in config.n_values])
    elif cmd == "rate":
        _rate(config, out)


def _verify(config, out):
    Ns = config.N_values or [config.N]
    grid = np.logspace(-6, math.log10(200.0), config.grid_points)
    rows, failed = [], []
    for N in Ns:
        rep = verify_lemma_bounds(int(N), grid)
        for name in LEMMA_INEQUALITIES:
            rows.append([rep.N, name, rep.grid_size, rep.min_slack[name], rep.worst_x[name],
                         rep.passed[name]])
        if not rep.pass_:
            failed.append(N)
    out.write("lemmas", ("N", "inequality", "grid_size", "min_slack", "worst_x", "pass"), rows,
              extra={"grid": f"logspace(1e-6, 200, {config.grid_points})", "slack_tol": BOUND_SLACK_TOL})
    if failed:
        raise NumericalError(f"bound inequalities violated for N in {failed}")


def _rate(config, out):
    sims = _simulate(config, out) if config.simulate else []
    stein = {r["n"]: r for r in _stein_rows(config, sims)} if sims else {}
    sim_by_n = {s["n"]: s for s in sims}
    orc = _oracle(config, out) if config.oracle else {}
    rows, seeds = [], []
    for n in config.n_values:
        consts, _ = _constants(config.N, config.beta, n)
        s, st, o = sim_by_n.get(n, {}), stein.get(n, {}), orc.get(n, {})
        row = {"n": n, "d_k_empirical": s.get("d_k_empirical"), "d_w_empirical": s.get("d_w_empirical"),
               "d_k_oracle": o.get("d_k_oracle"), "b": consts["b"], "B2": consts["B2"],
               "lambda": consts["lambda"], "seed": s.get("seed", "")}
        for key in ("ratio_term", "third_moment_term", "remainder_term", "wasserstein_bound",
                    "kolmogorov_bound"):
            row[key] = st.get(key)
        rows.append(row)
        seeds.append(row["seed"])
    key = "d_k_oracle" if config.oracle else "d_k_empirical"
    table = RateTable.build(rows, key)
    fit = None if table.fit is None else asdict(table.fit)
    out.write("rate", RATE_COLUMNS, [[r[c] for c in RATE_COLUMNS] for r in table.rows],
              seeds=seeds, extra={"fit": {"distance": key, **(fit or {})}})
    lines = [f"rate fit of {key} against n (log-log least squares)"]
    if fit:
        lines.append(f"slope {fit['slope']:.4f}  intercept {fit['intercept']:.4f}  "
                     f"max log residual {fit['residual']:.3g}")
    else:
        lines.append("fewer than 4 usable points; no fit")
    for r in table.rows:
        lines.append(f"n={r['n']:>6}  {key}={_fmt(r[key])}")
    out.write_text("rate_report.txt", "\n".join(lines) + "\n")
