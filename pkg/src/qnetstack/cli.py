"""Command-line entry point: ``python -m qnetstack <verb>``.

Verbs: ``run``, ``analyze``, ``report``, ``gen-schedule``, ``validate-config``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import analysis as A
from .apps import run_program
from .config import OUTPUT_ROOT_ENV, ConfigError, RunConfig, load_config
from .link import BUCKETS, TdmaSchedule
from .netsim import write_trace
from .units import MS

log = logging.getLogger("qnetstack")

RESULT_SCHEMA = 1


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    # flags win over the file
    for name in ("seed", "experiment", "program", "shots_per_setting", "min_fidelity",
                 "n_requests", "output_dir"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "fidelities", None):
        cfg.fidelities = tuple(args.fidelities)
    if getattr(args, "no_trace", False):
        cfg.trace = False
    flags = dict(cfg.flags)
    if getattr(args, "no_mismatch_check", False):
        flags["mismatch_check"] = False
    if getattr(args, "no_hardware_z", False):
        flags["hardware_z"] = False
    if getattr(args, "protected_decay", None) is not None:
        flags["protected_decay_rate"] = args.protected_decay
    cfg.flags = flags
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _config_from_args(args)
        cfg.validate()
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"schema": RESULT_SCHEMA, "version": __version__, "seed": cfg.seed,
                "config": cfg.to_dict(), "status": "running"}
    net = cfg.build_network()
    try:
        rows = run_program(net, cfg.program_obj())
    except Exception as exc:  # simulation logic error: keep what we have, flag it
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        if cfg.trace:
            write_trace(out / "trace.jsonl", net.sim.trace)
        _dump_json(out / "manifest.json", manifest)
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    with open(out / "outcomes.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps({"schema": RESULT_SCHEMA, **r}, sort_keys=True))
            fh.write("\n")
    files = ["outcomes.jsonl"]
    if cfg.trace:
        write_trace(out / "trace.jsonl", net.sim.trace)
        files.append("trace.jsonl")
    manifest.update(status="ok", n_rows=len(rows), sim_end_ns=net.sim.now, files=files)
    _dump_json(out / "manifest.json", manifest)
    print(f"{len(rows)} rows written to {out}")
    return 0


def load_run(run_dir):
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    rows = []
    with open(run_dir / "outcomes.jsonl") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return manifest, rows


def _readout(manifest):
    noise = RunConfig.from_dict(manifest["config"]).noise_params()
    return noise.readout_client, noise.readout_server


def _filter_dict(rep):
    return None if rep is None else {"total": rep.total, "client": rep.client,
                                     "server": rep.server, "combined": rep.combined,
                                     "both": rep.both}


def analyze_run(manifest, rows, corrections="full", n_boot=1000, out_dir=None) -> dict:
    """Run the analysis for one experiment; write CSVs to ``out_dir`` if given."""
    exp = manifest["config"]["experiment"]
    ro = _readout(manifest)
    seed = manifest["seed"]
    result = {"schema": RESULT_SCHEMA, "experiment": exp, "corrections": corrections,
              "n_rows": len(rows)}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    has = set(rows[0]) if rows else set()
    if exp == "tomography" or (exp == "custom" and "server_bit" in has and "client_bit" in has
                               and rows[0].get("type") == "K"):
        t = A.tomography(rows, ro, corrections, n_boot=n_boot, seed=seed)
        st = t.state
        result.update(fidelity=st.fidelity, fidelity_std=st.fidelity_std,
                      charge_filter=_filter_dict(t.filter_report),
                      correlators={a + b: {"value": c.value, "std_err": c.std_err,
                                           "partial": c.partial}
                                   for (a, b), c in t.correlators.items()},
                      rho_real=st.rho.real.tolist(), rho_imag=st.rho.imag.tolist())
        if out_dir is not None:
            unc = st.element_uncertainties
            A.write_csv(out_dir / "tomography_rho.csv", ["row", "col", "re", "im", "uncertainty"],
                        [(i, j, st.rho[i, j].real, st.rho[i, j].imag,
                          "" if unc is None else unc[i, j]) for i in range(4) for j in range(4)])
    if exp == "fidelity_sweep":
        points, rep = A.fidelity_sweep(rows, ro, corrections)
        result.update(charge_filter=_filter_dict(rep),
                      fidelity_vs_requested=[p.__dict__ for p in points])
        if out_dir is not None:
            A.write_csv(out_dir / "fidelity_vs_requested.csv",
                        ["requested", "measured", "std_err", "n", "meets_request"],
                        [(p.requested, p.measured, p.std_err, p.n, p.meets_request) for p in points])
    if exp == "rsp":
        states, avg, rep = A.rsp_bloch(rows, ro, corrections, n_boot=n_boot, seed=seed)
        result.update(charge_filter=_filter_dict(rep), average_fidelity=avg,
                      states=[{"state": b.state, "bloch": list(b.bloch), "bloch_std": list(b.bloch_std),
                               "fidelity": b.fidelity, "fidelity_std": b.fidelity_std, "n": b.n}
                              for b in states])
        if out_dir is not None:
            A.write_csv(out_dir / "rsp_bloch.csv",
                        ["state", "x", "y", "z", "x_std", "y_std", "z_std", "fidelity",
                         "fidelity_std", "n"],
                        [(b.state, *b.bloch, *b.bloch_std, b.fidelity, b.fidelity_std, b.n)
                         for b in states])
    if rows and "latency_breakdown" in rows[0]:
        lat = A.latency_table(rows)
        result["latency_ms"] = lat
        if out_dir is not None:
            cols = ["requested", "n", "excluded", *BUCKETS, "total"]
            A.write_csv(out_dir / "latency_breakdown.csv", cols, [[e[c] for c in cols] for e in lat])
    if out_dir is not None:
        _dump_json(out_dir / "results.json", result)
    return result


def cmd_analyze(args) -> int:
    try:
        manifest, rows = load_run(args.run_dir)
        if manifest.get("status") != "ok":
            raise ValueError(f"run status is {manifest.get('status')!r}")
        out = Path(args.out) if args.out else Path(args.run_dir) / f"analysis-{args.corrections}"
        res = analyze_run(manifest, rows, args.corrections, args.n_boot, out)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"cannot analyze {args.run_dir}: {exc}", file=sys.stderr)
        return 2
    summary = {k: res[k] for k in ("fidelity", "average_fidelity") if k in res}
    print(json.dumps({"out": str(out), **summary}, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series, fid_rows, lat_rows, rsp_rows = [], [], [], []
    configs = set()
    try:
        for run_dir in args.run_dirs:
            manifest, rows = load_run(run_dir)
            cfg = dict(manifest["config"])
            for k in ("seed", "output_dir", "experiment", "shots_per_setting", "n_requests"):
                cfg.pop(k, None)
            configs.add(json.dumps(cfg, sort_keys=True))
            name = Path(run_dir).name
            t, n = A.delivered_series(rows)
            series += [(name, ti, ni) for ti, ni in zip(t, n)]
            res = analyze_run(manifest, rows, args.corrections, n_boot=args.n_boot)
            for p in res.get("fidelity_vs_requested", []):
                fid_rows.append((name, p["requested"], p["measured"], p["std_err"], p["n"],
                                 p["meets_request"]))
            if "fidelity" in res:
                fid_rows.append((name, rows[0]["fid"], res["fidelity"], res["fidelity_std"],
                                 res["n_rows"], res["fidelity"] >= rows[0]["fid"]))
            for e in res.get("latency_ms", []):
                lat_rows.append((name, *[e[c] for c in ["requested", "n", "excluded", *BUCKETS, "total"]]))
            for s in res.get("states", []):
                rsp_rows.append((name, s["state"], *s["bloch"], s["fidelity"], s["fidelity_std"]))
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"cannot build report: {exc}", file=sys.stderr)
        return 2
    if len(configs) > 1:
        warnings.warn("aggregating runs with different configurations")
        print("warning: runs have heterogeneous configurations", file=sys.stderr)
    A.write_csv(out / "delivered_vs_time.csv", ["run", "t_s", "delivered"], series)
    A.write_csv(out / "fidelity_vs_requested.csv",
                ["run", "requested", "measured", "std_err", "n", "meets_request"], fid_rows)
    A.write_csv(out / "latency_breakdown.csv",
                ["run", "requested", "n", "excluded", *BUCKETS, "total"], lat_rows)
    A.write_csv(out / "rsp_bloch.csv", ["run", "state", "x", "y", "z", "fidelity", "fidelity_std"],
                rsp_rows)
    print(f"report written to {out}")
    return 0


def cmd_gen_schedule(args) -> int:
    classes = []
    for c in args.classes or []:
        if c in ("any", "*"):
            classes.append(None)
        elif ":" in c:
            app, fid = c.rsplit(":", 1)
            classes.append([app, float(fid)])
        else:
            classes.append(c)
    assignment = (classes or [None]) * args.repeat
    sched = TdmaSchedule(int(round(args.bin_ms * MS)), assignment)
    text = yaml.safe_dump({"schedule": sched.to_dict()}, sort_keys=False)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate_config(args) -> int:
    try:
        cfg = load_config(args.config)
        cfg.validate()
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {cfg.experiment}, seed {cfg.seed}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qnetstack", description="Two-node entanglement network simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config")
    r.add_argument("--experiment", choices=["tomography", "fidelity_sweep", "rsp", "latency", "custom"])
    r.add_argument("--program", help="program file for custom experiments")
    r.add_argument("--seed", type=int)
    r.add_argument("--shots-per-setting", dest="shots_per_setting", type=int)
    r.add_argument("--min-fidelity", dest="min_fidelity", type=float)
    r.add_argument("--fidelities", type=float, nargs="+")
    r.add_argument("--n-requests", dest="n_requests", type=int)
    r.add_argument("--output-dir", dest="output_dir",
                   help=f"defaults to ${OUTPUT_ROOT_ENV}/<experiment>-seed<seed>")
    r.add_argument("--no-trace", action="store_true")
    r.add_argument("--no-mismatch-check", action="store_true")
    r.add_argument("--no-hardware-z", action="store_true")
    r.add_argument("--protected-decay", type=float, help="storage depolarizing rate (1/s)")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="analyze one run directory")
    a.add_argument("run_dir")
    a.add_argument("--corrections", choices=A.CORRECTIONS, default="full")
    a.add_argument("--n-boot", type=int, default=1000)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    rp = sub.add_parser("report", help="aggregate tables over runs")
    rp.add_argument("run_dirs", nargs="+")
    rp.add_argument("--out", default="report")
    rp.add_argument("--corrections", choices=A.CORRECTIONS, default="full")
    rp.add_argument("--n-boot", type=int, default=200)
    rp.set_defaults(func=cmd_report)

    g = sub.add_parser("gen-schedule", help="write a TDMA schedule snippet")
    g.add_argument("--class", dest="classes", action="append",
                   help="'any', an app id, or app:min_fidelity; repeat for several bins")
    g.add_argument("--bin-ms", type=float, default=20.0)
    g.add_argument("--repeat", type=int, default=1)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_schedule)

    v = sub.add_parser("validate-config", help="check a config file")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="raise")
    return args.func(args)
