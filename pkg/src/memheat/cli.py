"""Command-line front end: configs, runs, sweeps, checkpoints.

Artifacts are deterministic: one config yields byte-identical
trajectory.csv and summary.json across repeats and across
checkpoint/resume splits. Wall-clock timing is quarantined in
manifest.json so the comparable files stay comparable.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .domain import DiscreteDomain, StateField, build_domain
from .memory import (HistoryField, build_history_grid, exponential_kernel,
                     validate_kernel)
from .physics import (NonlinearitySpec, check_smallness,
                      estimate_embedding_constant, make_nonlinearity)
from .solver import ProblemConfig, SystemState, TrajectoryRecord, build_problem, evolve, lift
from .experiments import (GateError, energy_decay_experiment, fit_decay,
                          robustness_sweep, smooth_profile)

CHECKPOINT_FORMAT = "memheat-checkpoint-1"

EXIT_PASS = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    """A configuration file is malformed, unknown, or inconsistent."""


# -- config schema -----------------------------------------------------------

_SCHEMA = {
    "experiment": str,
    "domain": {"kind": str, "n": int},
    "kernel": {"omega": float, "rate": float, "delta": float},
    "nonlinearity": {"f": list, "g": list},
    "alpha": float,
    "beta": float,
    "eps": float,
    "dt": float,
    "t_final": float,
    "record_stride": int,
    "history": {"n_s": int, "spacing": str, "s_max_factor": float,
                "s_max": float},
    "initial": {"kind": str, "value": float, "offset": float,
                "amplitude": float},
    "radius": float,
    "tol_frac": float,
    "seed": int,
    "checkpoint_step": int,
}

_DEFAULTS = {
    "experiment": "trajectory",
    "domain": {"kind": "interval", "n": 65},
    "kernel": {"omega": 0.5, "rate": 1.0, "delta": None},
    "nonlinearity": {"f": [0.0, 0.0, 0.0, 1.0], "g": [0.0, 0.0, 0.0, 1.0]},
    "alpha": 0.0,
    "beta": 1.0,
    "eps": 0.1,
    "dt": 0.005,
    "t_final": 1.0,
    "record_stride": 1,
    "history": {"n_s": 128, "spacing": "geometric", "s_max_factor": 30.0,
                "s_max": None},
    "initial": {"kind": "constant", "value": 0.5, "offset": 0.0,
                "amplitude": 1.0},
    "radius": 10.0,
    "tol_frac": 0.05,
    "seed": 0,
    "checkpoint_step": None,
}


def _check_keys(user: dict, schema: dict, prefix: str = "") -> None:
    for key, val in user.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key {path!r}")
        want = schema[key]
        if isinstance(want, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            _check_keys(val, want, path + ".")
        elif val is not None:
            if want is float and isinstance(val, (int, float)) \
                    and not isinstance(val, bool):
                continue
            if want is int and isinstance(val, bool):
                raise ConfigError(f"config key {path!r} must be {want.__name__}")
            if not isinstance(val, want):
                raise ConfigError(f"config key {path!r} must be {want.__name__}")


def _merge(defaults: dict, user: dict) -> dict:
    out = {}
    for key, val in defaults.items():
        if isinstance(val, dict):
            out[key] = _merge(val, user.get(key, {}))
        elif key in user:
            out[key] = user[key]
        else:
            out[key] = val
    return out


def canonical_text(canon: dict) -> str:
    """Key-sorted minimal JSON; the hashing and embedding form."""
    return json.dumps(canon, sort_keys=True, separators=(",", ":"))


def config_hash(canon: dict) -> str:
    return hashlib.sha256(canonical_text(canon).encode()).hexdigest()


@dataclass
class LoadedConfig:
    """A validated configuration with its assembled problem."""

    canon: dict
    sha256: str
    experiment: str
    problem: ProblemConfig
    initial: StateField
    kernel_report: object
    gate: object
    seed: int


def _build_initial(canon: dict, d: DiscreteDomain) -> StateField:
    spec = canon["initial"]
    if spec["kind"] == "constant":
        return d.constant_field(spec["value"])
    if spec["kind"] == "smooth":
        return (d.constant_field(spec["offset"])
                + smooth_profile(d) * spec["amplitude"])
    raise ConfigError(f"unknown initial kind {spec['kind']!r}")


def build_from_canonical(canon: dict) -> LoadedConfig:
    """Assemble and validate the full problem from a canonical config."""
    exp = canon["experiment"]
    if exp not in ("trajectory", "energy_decay"):
        raise ConfigError(f"unknown experiment {exp!r}")

    try:
        d = build_domain(canon["domain"]["kind"], canon["domain"]["n"])
        kernel = exponential_kernel(canon["kernel"]["omega"],
                                    canon["kernel"]["rate"],
                                    delta=canon["kernel"]["delta"])
    except ValueError as e:
        raise ConfigError(str(e)) from e

    report = validate_kernel(kernel)
    if not report.passed:
        failed = [name for name, c in report.checks.items() if not c["passed"]]
        raise ConfigError(
            "kernel validation failed: " + ", ".join(
                f"{name} (slack {report.checks[name]['slack']:.3e})"
                for name in failed))

    try:
        nl = make_nonlinearity(canon["nonlinearity"]["f"],
                               canon["nonlinearity"]["g"])
        hist = canon["history"]
        grid = None
        if canon["eps"] > 0.0:
            grid = build_history_grid(kernel, canon["eps"], n_s=hist["n_s"],
                                      s_max_factor=hist["s_max_factor"],
                                      spacing=hist["spacing"],
                                      s_max=hist["s_max"])
        problem = build_problem(d, kernel, nl, alpha=canon["alpha"],
                                beta=canon["beta"], eps=canon["eps"],
                                dt=canon["dt"], t_final=canon["t_final"],
                                record_stride=canon["record_stride"],
                                grid=grid)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    ck = canon["checkpoint_step"]
    if ck is not None:
        if exp != "trajectory":
            raise ConfigError("checkpoint_step only applies to the "
                              "trajectory experiment")
        n_total = round(canon["t_final"] / canon["dt"])
        if not 0 < ck < n_total:
            raise ConfigError(f"checkpoint_step must lie in (0, {n_total})")
        if ck % canon["record_stride"] != 0:
            raise ConfigError("checkpoint_step must be a multiple of "
                              "record_stride so split runs record the "
                              "same samples")

    gate = check_smallness(nl, kernel.omega, canon["beta"],
                           estimate_embedding_constant(d, 1.0, 1.0),
                           delta=kernel.delta)
    initial = _build_initial(canon, d)
    return LoadedConfig(canon=canon, sha256=config_hash(canon),
                        experiment=exp, problem=problem, initial=initial,
                        kernel_report=report, gate=gate, seed=canon["seed"])


def load_config(path, seed: Optional[int] = None) -> LoadedConfig:
    """Parse, key-check, default-fill, and assemble a config file."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        user = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"config parse error at line {e.lineno} column {e.colno}: {e.msg}"
        ) from e
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(user, _SCHEMA)
    canon = _merge(_DEFAULTS, user)
    if canon["kernel"]["delta"] is None:
        canon["kernel"]["delta"] = canon["kernel"]["rate"]
    if seed is not None:
        canon["seed"] = seed
    return build_from_canonical(canon)


# -- checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    state: SystemState
    loaded: LoadedConfig
    records: Optional[dict]


def _state_arrays(state: SystemState, grid) -> list:
    arrays = [("u_bulk", state.u.bulk), ("u_boundary", state.u.boundary)]
    if state.phi is not None:
        arrays += [("phi_bulk", state.phi.bulk),
                   ("phi_boundary", state.phi.boundary),
                   ("s_nodes", grid.s_nodes)]
    return arrays


def checkpoint_save(state: SystemState, path, canon: dict,
                    records: Optional[dict] = None) -> None:
    """One-line JSON header, then raw little-endian binary64 arrays.

    The header embeds the full canonical config and its hash, so a resume
    needs no external config file and can refuse mismatched ones.
    """
    grid = None if state.phi is None else state.phi.grid
    arrays = _state_arrays(state, grid)
    if records is not None:
        arrays += [(f"rec_{name}", np.asarray(col))
                   for name, col in records.items()]
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": canon,
        "config_sha256": config_hash(canon),
        "step": state.step,
        "t": state.t,
        "eps": canon["eps"],
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True,
                            separators=(",", ":")).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def checkpoint_load(path, expect_canon: Optional[dict] = None) -> Checkpoint:
    """Load a checkpoint, rebuilding the problem from the embedded config.

    Refuses on any inconsistency: corrupted header hash, a caller config
    that differs from the stored one, or a rebuilt history grid whose
    nodes do not match the stored ones bit for bit.
    """
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a checkpoint file: {path}")
    canon = header["config"]
    if config_hash(canon) != header["config_sha256"]:
        raise ConfigError("checkpoint refused: embedded config does not "
                          "match its stored hash (file corrupted?)")
    if expect_canon is not None and config_hash(expect_canon) != header["config_sha256"]:
        raise ConfigError("checkpoint refused: it was written under a "
                          f"different config (stored hash {header['config_sha256'][:12]}..., "
                          f"current {config_hash(expect_canon)[:12]}...)")

    loaded = build_from_canonical(canon)
    counts = [int(np.prod(shape, dtype=np.int64)) if shape else 1
              for _, shape in header["arrays"]]
    if 8 * sum(counts) != len(blob):
        raise ConfigError("checkpoint refused: binary payload size does not "
                          "match the declared shapes")
    arrays = {}
    offset = 0
    for (name, shape), count in zip(header["arrays"], counts):
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[name] = arr.reshape(shape).copy()
        offset += count * 8

    u = StateField(arrays["u_bulk"], arrays["u_boundary"])
    phi = None
    if loaded.problem.eps > 0.0:
        grid = loaded.problem.grid
        if not np.array_equal(arrays["s_nodes"], grid.s_nodes):
            raise ConfigError("checkpoint refused: stored history grid "
                              "differs from the one the config rebuilds")
        phi = HistoryField(grid, arrays["phi_bulk"], arrays["phi_boundary"])
    state = SystemState(u, phi, int(header["step"]), float(header["t"]))

    records = {name[4:]: arrays[name] for name in arrays
               if name.startswith("rec_")} or None
    return Checkpoint(state=state, loaded=loaded, records=records)


# -- artifact writers --------------------------------------------------------


def _write_csv(path: Path, columns) -> None:
    lines = [",".join(name for name, _ in columns)]
    n = len(columns[0][1])
    for i in range(n):
        lines.append(",".join(repr(float(arr[i])) for _, arr in columns))
    path.write_text("\n".join(lines) + "\n")


def _manifest(loaded: LoadedConfig, outputs) -> dict:
    return {
        "config_sha256": loaded.sha256,
        "tool_version": __version__,
        "experiment": loaded.experiment,
        "seed": loaded.seed,
        "outputs": sorted(outputs),
    }


def _write_summary(out: Path, summary: dict, manifest: dict,
                   wall_clock: float) -> None:
    summary = dict(summary, manifest=manifest)
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    stamped = dict(manifest, wall_clock_seconds=wall_clock,
                   written_at=time.strftime("%Y-%m-%dT%H:%M:%S%z"))
    (out / "manifest.json").write_text(
        json.dumps(stamped, sort_keys=True, indent=2) + "\n")


def _fit_summary(times, energy) -> dict:
    if len(times) < 10 or np.any(np.asarray(energy) < 0.0):
        return {}
    fit = fit_decay(np.asarray(times), np.asarray(energy))
    return {"energy": {"amplitude": fit.amplitude, "rate": fit.rate,
                       "offset": fit.offset, "residual": fit.residual}}


def _record_columns(rec_dict: dict) -> list:
    return [(name, rec_dict[name]) for name in TrajectoryRecord.COLUMNS]


# -- experiment drivers ------------------------------------------------------


def _merge_records(head: dict, tail: TrajectoryRecord) -> dict:
    """Concatenate stored rows with a continuation record, dropping the
    duplicated seam sample (the continuation re-records its start state)."""
    out = {}
    for name, col in tail.columns():
        out[name] = np.concatenate([head[name], col[1:]])
    return out


def _run_trajectory(loaded: LoadedConfig, out: Path,
                    start: Optional[Checkpoint] = None) -> tuple:
    cfg = loaded.problem
    if start is None:
        state = lift(loaded.initial, cfg)
        head = None
        ck = loaded.canon["checkpoint_step"]
        if ck is not None:
            part = dataclasses.replace(cfg, t_final=ck * cfg.dt)
            rec1 = evolve(state, part)
            head = dict(rec1.columns())
            checkpoint_save(rec1.final_state, out / "checkpoint.bin",
                            loaded.canon, records=head)
            state = rec1.final_state
    else:
        state = start.state
        head = start.records

    rec = evolve(state, cfg)
    rows = dict(rec.columns()) if head is None else _merge_records(head, rec)

    d = cfg.domain
    finite = bool(all(np.all(np.isfinite(col)) for col in rows.values()))
    compatible = bool(d.is_trace_compatible(rec.final_state.u, tol=1e-9))
    summary = {
        "experiment": "trajectory",
        "eps": cfg.eps,
        "assertions": {"all_samples_finite": finite,
                       "final_state_trace_compatible": compatible},
        "fits": _fit_summary(rows["t"], rows["energy_h0"]),
        "results": {"t_final": float(rows["t"][-1]),
                    "energy_h0_final": float(rows["energy_h0"][-1]),
                    "energy_v1_final": float(rows["energy_v1"][-1])},
    }
    _write_csv(out / "trajectory.csv", _record_columns(rows))
    ok = finite and compatible
    return (EXIT_PASS if ok else EXIT_ASSERTION), summary, ["trajectory.csv"]


def _run_energy_decay(loaded: LoadedConfig, out: Path) -> tuple:
    cfg = loaded.problem
    rep = energy_decay_experiment(cfg, loaded.canon["radius"],
                                  tol_frac=loaded.canon["tol_frac"])
    rows = dict(rep.record.columns())
    summary = {
        "experiment": "energy_decay",
        "eps": cfg.eps,
        "assertions": {"decay_bound_every_sample": rep.violations == 0,
                       "absorbed_by_t0": rep.t_absorb <= rep.t0},
        "fits": _fit_summary(rep.times, rep.energy),
        "results": {"m0": rep.gate.m0, "p0": rep.gate.p0,
                    "c_f": rep.gate.c_f, "gate_threshold": rep.gate.threshold,
                    "violations": rep.violations,
                    "max_excess": rep.max_excess,
                    "t_absorb": rep.t_absorb, "t0": rep.t0},
    }
    _write_csv(out / "trajectory.csv", _record_columns(rows))
    code = EXIT_PASS if rep.passed else EXIT_ASSERTION
    return code, summary, ["trajectory.csv"]


def run_experiment(loaded: LoadedConfig, out_dir,
                   start: Optional[Checkpoint] = None) -> int:
    """Execute the configured experiment, writing all artifacts."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output dir {out}: {e}") from e
    t0 = time.perf_counter()
    # the manifest lists the comparable artifacts only, so a resumed run
    # and its uninterrupted twin write identical summaries
    if loaded.experiment == "trajectory":
        code, summary, outputs = _run_trajectory(loaded, out, start)
    else:
        code, summary, outputs = _run_energy_decay(loaded, out)
    outputs = outputs + ["summary.json"]
    _write_summary(out, summary, _manifest(loaded, outputs),
                   time.perf_counter() - t0)
    return code


def run_sweep(loaded: LoadedConfig, eps_list, out_dir) -> int:
    """Robustness sweep against the instantaneous limit problem."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sw = robustness_sweep(loaded.problem, eps_list, loaded.initial)
    summary = {
        "experiment": "sweep_eps",
        "assertions": {"sqrt_envelope_holds": sw.bound_ok,
                       "errors_monotone": sw.monotone},
        "fits": {"loglog": {"slope": sw.slope, "intercept": sw.intercept}},
        "results": {"eps": [float(e) for e in sw.eps],
                    "errors": [float(e) for e in sw.errors],
                    "c_calibrated": sw.c_calibrated},
    }
    _write_csv(out / "sweep.csv", [("eps", sw.eps), ("err", sw.errors)])
    _write_summary(out, summary, _manifest(loaded, ["sweep.csv", "summary.json"]),
                   time.perf_counter() - t0)
    return EXIT_PASS if (sw.bound_ok and sw.monotone) else EXIT_ASSERTION


PLOT_TEMPLATE = """\
#!/usr/bin/env python3
# Generic plotting template for memheat artifacts. Requires matplotlib.
import csv
import json
import sys
from pathlib import Path

import matplotlib.pyplot as plt

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(".")
summary = json.loads((out / "summary.json").read_text())
print(json.dumps(summary.get("results", {}), indent=2))

for name in ("trajectory.csv", "sweep.csv"):
    path = out / name
    if not path.exists():
        continue
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    cols = {k: [float(r[k]) for r in rows] for k in rows[0]}
    x_key = "t" if "t" in cols else "eps"
    fig, ax = plt.subplots()
    for key, vals in cols.items():
        if key != x_key:
            ax.plot(cols[x_key], vals, label=key)
    if x_key == "eps":
        ax.set_xscale("log"); ax.set_yscale("log")
    ax.set_xlabel(x_key); ax.legend(); ax.set_title(name)
    fig.savefig(out / name.replace(".csv", ".png"), dpi=150)
    print("wrote", out / name.replace(".csv", ".png"))
"""


def _print_gate(loaded: LoadedConfig) -> None:
    g = loaded.gate
    if g.passes:
        print(f"gate: C_F={g.c_f:.6g} < {g.threshold:.6g} -> pass "
              f"(m0={g.m0:.6g}, p0={g.p0:.6g})")
    else:
        print(f"gate: C_F={g.c_f:.6g} >= {g.threshold:.6g} -> FAIL "
              "(decay estimate not guaranteed)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="memheat",
        description="heat flow with fading memory: runs, sweeps, checks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)

    p_sweep = sub.add_parser("sweep-eps", help="robustness sweep over eps")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--eps", required=True,
                         help="comma-separated eps values, e.g. 0.2,0.1,0.05")
    p_sweep.add_argument("--out", required=True)

    p_val = sub.add_parser("validate", help="validate a config and report")
    p_val.add_argument("--config", required=True)

    p_res = sub.add_parser("resume", help="continue a checkpointed run")
    p_res.add_argument("--checkpoint", required=True)
    p_res.add_argument("--out", required=True)

    p_plot = sub.add_parser("plot-script",
                            help="emit a generic plotting script template")
    p_plot.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            loaded = load_config(args.config, seed=args.seed)
            _print_gate(loaded)
            return run_experiment(loaded, args.out)
        if args.command == "sweep-eps":
            loaded = load_config(args.config)
            try:
                eps_list = [float(tok) for tok in args.eps.split(",") if tok]
            except ValueError as e:
                raise ConfigError(f"bad --eps list {args.eps!r}") from e
            return run_sweep(loaded, eps_list, args.out)
        if args.command == "validate":
            loaded = load_config(args.config)
            print(f"config ok: sha256 {loaded.sha256}")
            print(f"experiment: {loaded.experiment}")
            for name, chk in loaded.kernel_report.checks.items():
                print(f"kernel {name}: {'pass' if chk['passed'] else 'FAIL'} "
                      f"(slack {chk['slack']:.3e})")
            _print_gate(loaded)
            return EXIT_PASS
        if args.command == "resume":
            ck = checkpoint_load(args.checkpoint)
            return run_experiment(ck.loaded, args.out, start=ck)
        if args.command == "plot-script":
            if args.out is None:
                sys.stdout.write(PLOT_TEMPLATE)
            else:
                Path(args.out).write_text(PLOT_TEMPLATE)
            return EXIT_PASS
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, GateError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
