"""Command-line pipeline: compile-spec, certify, abstract, synthesize, simulate, validate.

Every command takes a JSON configuration (see ``config``) and writes its
artifacts under the configured output directory, together with a manifest.
Outputs are reproducible byte for byte for a fixed configuration and seed,
independently of the thread count.

Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys

import numpy as np

from . import certificates as certs
from ._backend import backend_name
from .abstraction import abstract_linear, abstract_nonlinear
from .config import ConfigError, RunConfig, load_config
from .refinement import refine, simulate_closed_loop, validate_bound
from .scltl import compile_to_dfa, export_dfa
from .synthesis import Policy, export_value_map, value_iterate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class NumericFailure(RuntimeError):
    pass


def _write_text(outdir: str, name: str, text: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _write_json(outdir: str, name: str, payload) -> str:
    return _write_text(outdir, name, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _update_manifest(outdir: str, names: list):
    path = os.path.join(outdir, "manifest.json")
    manifest = {"outputs": {}}
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    for name in names:
        full = os.path.join(outdir, name)
        with open(full, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        manifest["outputs"][name] = digest
    _write_json(outdir, "manifest.json", manifest)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


def _model_certificate(cfg: RunConfig):
    if cfg.is_linear:
        return certs.delta_linear(cfg.model, cfg.theta_box)
    return certs.nonlinear_model_certificate(
        cfg.model, cfg.theta_box, cfg.grid.centers, cfg.inputs
    )


def _abstraction(cfg: RunConfig):
    if cfg.is_linear:
        return abstract_linear(cfg.model, cfg.grid, cfg.inputs)
    return abstract_nonlinear(cfg.model, cfg.grid, cfg.inputs)


def cmd_compile_spec(args) -> int:
    cfg = load_config(args.config)
    dfa = compile_to_dfa(cfg.formula, cfg.ap)
    outdir = cfg.output_dir
    _write_text(outdir, "dfa.json", export_dfa(dfa, "json") + "\n")
    _write_text(outdir, "dfa.dot", export_dfa(dfa, "dot"))
    _update_manifest(outdir, ["dfa.json", "dfa.dot"])
    print(f"compiled {cfg.formula_text!r}: {dfa.n} locations, accepting {sorted(dfa.accepting)}")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = load_config(args.config)
    cert = _model_certificate(cfg)
    outdir = cfg.output_dir
    _write_json(
        outdir,
        "certificate.json",
        {
            "epsilon": cert.epsilon,
            "delta_global": cert.delta_global(),
            "provenance": list(cert.provenance),
            "relation": cert.relation,
        },
    )
    table = cert.delta_table(cfg.grid.num_cells, cfg.inputs.shape[0])
    centers = cfg.grid.centers
    rows = []
    for s in range(cfg.grid.num_cells):
        for j in range(cfg.inputs.shape[0]):
            rows.append([_fmt(c) for c in centers[s]] + [str(j), _fmt(table[s, j])])
    header = [f"x{d + 1}" for d in range(cfg.grid.n)] + ["u_index", "delta"]
    _write_text(outdir, "delta_map.csv", _csv_text(header, rows))
    _update_manifest(outdir, ["certificate.json", "delta_map.csv"])
    print(f"certified: epsilon={cert.epsilon:.6g} delta_global={cert.delta_global():.6g}")
    return EXIT_OK


def cmd_abstract(args) -> int:
    cfg = load_config(args.config)
    mdp, cert = _abstraction(cfg)
    stats = {
        "states": mdp.ns,
        "inputs": mdp.nu,
        "nnz": mdp.nnz,
        "epsilon2": cert.epsilon,
        "delta2_min": float(np.min(cert.delta)) if cert.delta_is_table else float(cert.delta),
        "delta2_max": cert.delta_global(),
        "certificate_valid": cert.valid,
    }
    outdir = cfg.output_dir
    _write_json(outdir, "abstraction_stats.json", stats)
    names = ["abstraction_stats.json"]
    if args.dump:
        path = os.path.join(outdir, "abstraction.bin")
        with open(path, "wb") as fh:
            fh.write(np.asarray([mdp.nu * mdp.n_total, mdp.nnz], dtype="<i8").tobytes())
            fh.write(mdp.indptr.astype("<i8").tobytes())
            fh.write(mdp.indices.astype("<i4").tobytes())
            fh.write(mdp.data.astype("<f8").tobytes())
        names.append("abstraction.bin")
    _update_manifest(outdir, names)
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = load_config(args.config)
    dfa = compile_to_dfa(cfg.formula, cfg.ap)
    mdp, abs_cert = _abstraction(cfg)
    if not abs_cert.valid and not args.force:
        raise ConfigError(
            "$.model", "abstraction certificate is invalid (|A| >= 1); pass --force to synthesize anyway"
        )
    model_cert = _model_certificate(cfg)
    composed = certs.compose_transitive(abs_cert, model_cert)

    table, policy = value_iterate(
        mdp,
        dfa,
        composed,
        cfg.labeling,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        threads=args.threads,
        allow_invalid=args.force,
    )
    if not np.all(np.isfinite(table.values)):
        raise NumericFailure("value iteration produced non-finite values")

    outdir = cfg.output_dir
    _write_text(outdir, "dfa.json", export_dfa(dfa, "json") + "\n")
    _write_text(
        outdir,
        "valuemap.csv",
        export_value_map(table, cfg.grid, dfa, composed.epsilon, mdp, cfg.labeling),
    )
    _write_json(outdir, "policy.json", policy.to_json_dict())
    _write_json(
        outdir,
        "synthesis.json",
        {
            "epsilon": composed.epsilon,
            "delta_global": composed.delta_global(),
            "provenance": list(composed.provenance),
            "iterations": table.iterations,
            "residual": table.residual,
            "converged": table.converged,
            "backend": backend_name(),
        },
    )
    log_lines = [
        f"certificate: epsilon={composed.epsilon:.12g} delta_global={composed.delta_global():.12g}",
        "provenance: " + " | ".join(composed.provenance),
        f"converged: {table.converged} after {table.iterations} sweeps (residual {table.residual:.3e})",
    ]
    log_lines += [f"sweep {i + 1}: residual {r:.12e}" for i, r in enumerate(table.residuals)]
    _write_text(outdir, "synthesis_log.txt", "\n".join(log_lines) + "\n")
    _update_manifest(
        outdir, ["dfa.json", "valuemap.csv", "policy.json", "synthesis.json", "synthesis_log.txt"]
    )
    if not table.converged:
        print(
            f"warning: stopped at the iteration cap with residual {table.residual:.3e}; "
            "values remain a sound lower bound",
            file=sys.stderr,
        )
    print(
        f"synthesized: {table.iterations} sweeps, residual {table.residual:.3e}, "
        f"epsilon={composed.epsilon:.6g}, delta_global={composed.delta_global():.6g}"
    )
    return EXIT_OK


def _load_policy(cfg: RunConfig, path: str | None, dfa) -> Policy:
    policy_path = path or os.path.join(cfg.output_dir, "policy.json")
    with open(policy_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    policy = Policy.from_json_dict(payload, dfa.n)
    if policy.mu.shape[0] != cfg.grid.num_cells:
        raise ConfigError("$.grid", "policy table does not match the configured grid")
    return policy


def _auto_horizon(cfg: RunConfig) -> int:
    if cfg.horizon is not None:
        return cfg.horizon
    stats_path = os.path.join(cfg.output_dir, "synthesis.json")
    if os.path.exists(stats_path):
        with open(stats_path, "r", encoding="utf-8") as fh:
            sweeps = int(json.load(fh).get("iterations", 1))
        return max(4, 4 * sweeps)
    return 100


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    dfa = compile_to_dfa(cfg.formula, cfg.ap)
    policy = _load_policy(cfg, args.policy, dfa)
    ctrl = refine(policy, dfa, cfg.model, cfg.grid, cfg.labeling)

    theta = np.asarray([float(v) for v in args.theta.split(",")], dtype=float)
    if not cfg.theta_box.contains(theta):
        raise ConfigError("$.uncertainty", f"theta {theta.tolist()} outside the uncertainty box")
    x0 = np.asarray([float(v) for v in args.x0.split(",")], dtype=float)
    runs = args.runs if args.runs is not None else cfg.runs
    horizon = args.horizon if args.horizon is not None else _auto_horizon(cfg)
    seed = args.seed if args.seed is not None else cfg.seed

    report = simulate_closed_loop(ctrl, cfg.model, theta, x0, horizon, runs, seed)
    rows = [
        [_fmt(v) for v in report.x0]
        + ["0", _fmt(report.frequency), _fmt(report.ci_radius), "", ""]
    ]
    header = [f"x{d + 1}" for d in range(cfg.grid.n)] + ["theta_id", "freq", "ci", "sstar", "pass"]
    _write_text(cfg.output_dir, "simulate_report.csv", _csv_text(header, rows))
    _update_manifest(cfg.output_dir, ["simulate_report.csv"])
    print(
        f"simulated theta={theta.tolist()} x0={x0.tolist()}: "
        f"frequency {report.frequency:.4f} +- {report.ci_radius:.4f} ({runs} runs, horizon {horizon})"
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    dfa = compile_to_dfa(cfg.formula, cfg.ap)
    policy = _load_policy(cfg, args.policy, dfa)
    ctrl = refine(policy, dfa, cfg.model, cfg.grid, cfg.labeling)

    valuemap_path = os.path.join(cfg.output_dir, "valuemap.csv")
    if not os.path.exists(valuemap_path):
        raise ConfigError("$.output_dir", "valuemap.csv not found; run synthesize first")
    sstar = np.loadtxt(valuemap_path, delimiter=",", skiprows=1, usecols=cfg.grid.n)

    runs = args.runs if args.runs is not None else cfg.runs
    horizon = args.horizon if args.horizon is not None else _auto_horizon(cfg)
    seed = args.seed if args.seed is not None else cfg.seed
    x0_indices = cfg.grid.lattice_indices(cfg.initial_lattice)

    reports, fraction = validate_bound(
        ctrl,
        cfg.model,
        cfg.theta_box,
        x0_indices=x0_indices,
        runs=runs,
        horizon=horizon,
        seed=seed,
        nominal_theta=cfg.nominal_theta,
        interior_samples=cfg.interior_samples,
        sstar_values={int(i): float(sstar[int(i)]) for i in x0_indices},
        grid=cfg.grid,
    )
    rows = []
    theta_ids: dict = {}
    for rep in reports:
        tid = theta_ids.setdefault(rep.theta, len(theta_ids))
        rows.append(
            [_fmt(v) for v in rep.x0]
            + [str(tid), _fmt(rep.frequency), _fmt(rep.ci_radius), _fmt(rep.sstar), str(int(rep.passes))]
        )
    header = [f"x{d + 1}" for d in range(cfg.grid.n)] + ["theta_id", "freq", "ci", "sstar", "pass"]
    _write_text(cfg.output_dir, "validation_report.csv", _csv_text(header, rows))
    _update_manifest(cfg.output_dir, ["validation_report.csv"])
    print(
        f"validated over {len(x0_indices)} initial centers x {len(theta_ids)} parameters: "
        f"bound held for {fraction:.1%} of pairs"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustsynth",
        description="Controller synthesis with certified robust satisfaction bounds.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="thread pool size (default: ROBUST_SYNTH_THREADS or hardware parallelism)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile-spec", help="compile the formula to dfa.json / dfa.dot")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_compile_spec)

    p = sub.add_parser("certify", help="model-uncertainty certificate and delta map")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("abstract", help="grid abstraction statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--dump", action="store_true", help="also write sparse rows to abstraction.bin")
    p.set_defaults(func=cmd_abstract)

    p = sub.add_parser("synthesize", help="value iteration, value map, policy")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true", help="proceed despite an invalid certificate")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="closed-loop Monte Carlo at one (theta, x0)")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--theta", required=True, help='comma-separated, e.g. "0.09,0.09"')
    p.add_argument("--x0", required=True, help='comma-separated, e.g. "0,-5"')
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="check the certified bound by simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        os.environ["ROBUST_SYNTH_THREADS"] = str(max(1, args.threads))
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
