"""Command line entry point: ``rdbpf generate | filter | compare | steady-state``.

Exit status is 0 on success, 1 on usage errors (bad config, missing or
mismatched files) and 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig
from .dynamics import NumericalInstabilityError, iter_simulate
from .filter import THREADS_ENV, run_filter
from .metrics import MetricTrace, read_metric_totals
from .reaction import OregonatorParams, steady_state

log = logging.getLogger("rdbpf")

EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class UsageError(Exception):
    pass


# flag -> dotted config key
FLAG_KEYS = {
    "side": "lattice.side",
    "spacing": "lattice.spacing",
    "dt": "dynamics.dt",
    "horizon": "dynamics.horizon",
    "sigma_x": "dynamics.sigma_x",
    "integrator": "dynamics.integrator",
    "noise_var": "observation.noise_var",
    "stride": "observation.stride",
    "particles": "filter.n_particles",
    "block_side": "filter.block_side",
    "proposal": "filter.proposal",
    "resampling": "filter.resampling",
    "sim_seed": "seeds.simulation",
    "filter_seed": "seeds.filter",
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg = cfg.override(key.strip(), value.strip())
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg = cfg.override(key, v)
    return cfg


def _prepare_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise UsageError(f"output directory {p} is not writable: {e}") from None
    return p


def _snapshot_steps(times, dt, steps):
    wanted = {}
    steps = np.asarray(steps)
    for t in times:
        k = int(round(t / dt))
        if k in set(steps.tolist()):
            wanted[k] = t
    return wanted


def _write_snapshots(directory: Path, prefix, x, t):
    directory.mkdir(exist_ok=True)
    for s in range(x.shape[0]):
        io.write_pgm(directory / f"{prefix}_species{s + 1}_t{t:g}.pgm", x[s])


def _manifest(cfg: RunConfig, extra: dict) -> str:
    return json.dumps({"config": cfg.to_dict(), **extra}, indent=2) + "\n"


def generate(cfg: RunConfig, out) -> Path:
    """Simulate ground truth and observations into ``out``."""
    out = _prepare_dir(out)
    model = cfg.build_model()
    side = cfg.lattice.side
    stride = cfg.observation.stride
    n_steps = cfg.n_steps
    snaps = _snapshot_steps(cfg.output.snapshot_times, cfg.dynamics.dt, range(1, n_steps + 1))
    ns, nl = model.n_species, model.observation.n_wavelengths
    t0 = time.time()
    with io.RecordWriter(out / io.STATES, ns * side * side) as sw, \
            io.RecordWriter(out / io.OBSERVATIONS, nl * side * side) as ow:
        for k, x, y in iter_simulate(model, cfg.initial_state(), n_steps, cfg.seeds.simulation, stride):
            sw.write(x)
            if y is not None:
                ow.write(y)
            if k in snaps:
                _write_snapshots(out / "snapshots", "truth", x, snaps[k])
    header = {
        "kind": "trajectory",
        "side": side,
        "spacing": cfg.lattice.spacing,
        "n_species": ns,
        "n_wavelengths": nl,
        "n_steps": n_steps,
        "n_observations": n_steps // stride,
        "stride": stride,
        "dt": cfg.dynamics.dt,
        "seed": cfg.seeds.simulation,
        "wavelengths": model.observation.wavelengths.tolist(),
        "params": cfg.dynamics.oregonator.__dict__,
        "sigma_x": cfg.dynamics.sigma_x,
        "noise_var": cfg.observation.noise_var,
        "integrator": cfg.dynamics.integrator,
        "substeps": cfg.dynamics.substeps,
        "initial": cfg.dynamics.initial.kind,
    }
    io.write_header(out / io.HEADER, header)
    io.atomic_write_text(out / "manifest.json", _manifest(cfg, {"command": "generate"}))
    log.info("generated %d steps on a %dx%d lattice in %.1fs", n_steps, side, side, time.time() - t0)
    return out


def _check_dataset(cfg: RunConfig, header: dict):
    model = cfg.build_model()
    expected = {
        "side": cfg.lattice.side,
        "n_species": model.n_species,
        "n_wavelengths": model.observation.n_wavelengths,
        "dt": cfg.dynamics.dt,
        "stride": cfg.observation.stride,
    }
    for key, want in expected.items():
        found = header.get(key)
        if found != want:
            raise UsageError(f"dataset {key} mismatch: config expects {want!r}, dataset has {found!r}")


def filter_cmd(cfg: RunConfig, data, out, threads=None, max_steps=None) -> Path:
    """Run the block particle filter on a generated dataset."""
    data = Path(data)
    if not (data / io.HEADER).exists():
        raise UsageError(f"no dataset at {data} (missing {io.HEADER})")
    header = io.read_header(data / io.HEADER)
    _check_dataset(cfg, header)
    side, nl, ns = header["side"], header["n_wavelengths"], header["n_species"]
    obs = np.memmap(data / io.OBSERVATIONS, dtype=io.F64, mode="r")
    if obs.size % (nl * side * side):
        raise UsageError(f"{data / io.OBSERVATIONS} is truncated")
    obs = obs.reshape(-1, nl, side, side)
    n_obs = obs.shape[0] if max_steps is None else min(obs.shape[0], int(max_steps))
    obs_steps = (np.arange(1, n_obs + 1) * header["stride"]).astype(int)
    out = _prepare_dir(out)
    model = cfg.build_model()
    fcfg = cfg.filter_config(threads)
    snaps = _snapshot_steps(cfg.output.snapshot_times, cfg.dynamics.dt, obs_steps)

    est_writer = io.RecordWriter(out / io.STATES, ns * side * side)
    blocks_fh = open(out / "blocks.csv", "w", newline="")
    blocks = csv.writer(blocks_fh)
    blocks.writerow(["step", "block", "log_increment", "ess"])

    def on_step(rec, ens):
        est_writer.write(rec.estimate)
        for b in range(len(rec.ess)):
            blocks.writerow([rec.k, b, repr(float(rec.log_increment[b])), repr(float(rec.ess[b]))])
        if rec.k in snaps:
            _write_snapshots(out / "snapshots", f"estimate_{fcfg.proposal.value}", rec.estimate, snaps[rec.k])

    t0 = time.time()
    try:
        result = run_filter(obs[:n_obs], model, fcfg, initial=cfg.initial_state(), obs_steps=obs_steps,
                            keep_estimates=False, callback=on_step, checkpoint=out / "checkpoint.npz")
    except BaseException:
        est_writer.abort()
        blocks_fh.close()
        raise
    est_writer.close()
    blocks_fh.close()
    io.write_header(out / io.HEADER, {
        "kind": "estimate",
        "side": side,
        "n_species": ns,
        "n_wavelengths": nl,
        "n_steps": int(obs_steps[-1]) if n_obs else 0,
        "n_observations": n_obs,
        "stride": header["stride"],
        "dt": cfg.dynamics.dt,
        "seed": cfg.seeds.filter,
        "proposal": fcfg.proposal.value,
        "n_particles": fcfg.n_particles,
        "block_side": fcfg.block_side,
        "resampling": fcfg.resampling.value,
        "dataset": str(data),
    })
    MetricTrace.from_output(result).to_csv(out / "metrics.csv")
    io.atomic_write_text(out / "manifest.json", _manifest(cfg, {
        "command": "filter", "dataset": str(data), "dataset_header": header,
        "degenerate_blocks": len(result.warnings)}))
    log.info("filtered %d observations in %.1fs (%s proposal)", n_obs, time.time() - t0, fcfg.proposal.value)
    return out


def compare(a, b, out=None) -> str:
    """Align the total RMSE and log-evidence series of two filter outputs."""
    a, b = Path(a), Path(b)
    series = []
    for d in (a, b):
        f = d / "metrics.csv"
        if not f.exists():
            raise UsageError(f"no filter output in {d} (missing metrics.csv)")
        s = read_metric_totals(f)
        if "rmse" not in s or "log_evidence" not in s or len(s["rmse"][0]) == 0:
            raise UsageError(f"{f} holds no rmse/log_evidence series")
        series.append(s)
    sa, sb = series
    if not np.array_equal(sa["rmse"][0], sb["rmse"][0]):
        raise UsageError(f"step series differ: {len(sa['rmse'][0])} vs {len(sb['rmse'][0])} steps")
    steps, times = sa["rmse"][0], sa["rmse"][1]
    ra, rb = sa["rmse"][2], sb["rmse"][2]
    la, lb = sa["log_evidence"][2], sb["log_evidence"][2]
    lines = [["step", "time", "rmse_a", "rmse_b", "rmse_diff", "log_evidence_a", "log_evidence_b",
              "log_evidence_diff"]]
    for i in range(len(steps)):
        vals = (times[i], ra[i], rb[i], ra[i] - rb[i], la[i], lb[i], la[i] - lb[i])
        lines.append([int(steps[i]), *(repr(float(v)) for v in vals)])

    def winner(x, y, higher_better):
        if x == y:
            return "tie"
        return "a" if (x > y) == higher_better else "b"

    summary = (
        f"a: {a}\nb: {b}\n"
        f"steps: {len(steps)} (final t = {times[-1]:g})\n"
        f"final rmse: a = {ra[-1]:.6g}, b = {rb[-1]:.6g}; lower is better -> {winner(ra[-1], rb[-1], False)}\n"
        f"final log-evidence: a = {la[-1]:.6g}, b = {lb[-1]:.6g}; higher is better -> "
        f"{winner(la[-1], lb[-1], True)}\n"
    )
    if out is not None:
        out = _prepare_dir(out)
        text = "".join(",".join(map(str, row)) + "\n" for row in lines)
        io.atomic_write_text(out / "comparison.csv", text)
        io.atomic_write_text(out / "summary.txt", summary)
    return summary


def _add_config_flags(p):
    p.add_argument("--config", help="JSON run configuration (defaults reproduce the 100x100 benchmark)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")
    p.add_argument("--side", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--sigma-x", dest="sigma_x", type=float)
    p.add_argument("--integrator", choices=["euler", "rk4"])
    p.add_argument("--noise-var", dest="noise_var", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--sim-seed", dest="sim_seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdbpf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate ground truth and spectral observations")
    _add_config_flags(g)
    g.add_argument("--out", required=True)
    g.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    f = sub.add_parser("filter", help="run the block particle filter on a dataset")
    _add_config_flags(f)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--particles", type=int)
    f.add_argument("--block-side", dest="block_side", type=int)
    f.add_argument("--proposal", choices=["optimal", "bootstrap", "standard"])
    f.add_argument("--resampling", choices=["multinomial", "systematic"])
    f.add_argument("--filter-seed", dest="filter_seed", type=int)
    f.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    f.add_argument("--max-steps", dest="max_steps", type=int)

    c = sub.add_parser("compare", help="compare two filter output directories")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out")

    s = sub.add_parser("steady-state", help="print the homogeneous fixed point")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "steady-state":
            cfg = resolve_config(args)
            z = steady_state(OregonatorParams(**cfg.dynamics.oregonator.__dict__))
            print(f"z1* = {z[0]:.15g}\nz2* = {z[1]:.15g}")
        elif args.command == "generate":
            cfg = resolve_config(args)
            if args.dump_config:
                print(cfg.dumps(), end="")
                return 0
            generate(cfg, args.out)
        elif args.command == "filter":
            cfg = resolve_config(args)
            filter_cmd(cfg, args.data, args.out, args.threads, args.max_steps)
        elif args.command == "compare":
            print(compare(args.a, args.b, args.out), end="")
    except (ConfigError, UsageError, FileNotFoundError) as e:
        print(f"rdbpf: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalInstabilityError, FloatingPointError) as e:
        print(f"rdbpf: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
