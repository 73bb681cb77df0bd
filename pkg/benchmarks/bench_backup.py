#!/usr/bin/env python3
"""Benchmark the value-iteration sweep: compiled kernel vs numpy fallback.

Builds the linear case-study abstraction at a configurable resolution and
times full Bellman sweeps through both backends (identical inputs, identical
outputs; the difference is purely the kernel).

    python3 benchmarks/bench_backup.py --cells 61 --sweeps 20 --threads 4
"""

import argparse
import time

import numpy as np

import robustsynth as rs
from robustsynth._backend import CompiledSweeper, NumpySweeper
from robustsynth.synthesis import SuccessorCache, _delta_rows


def build_problem(cells: int):
    model = rs.LinearModel(A=0.9 * np.eye(2), B=0.7 * np.eye(2), C=np.eye(2), R=np.eye(2))
    labeling = rs.LabelingMap.from_regions(
        ["p1", "p2"], {"p1": [[4, 10], [-4, 0]], "p2": [[4, 10], [0, 4]]}
    )
    dfa = rs.compile_to_dfa(rs.parse_formula("(!p2) U p1", ["p1", "p2"]), ["p1", "p2"])
    grid = rs.build_grid([[-10, 10], [-10, 10]], [cells, cells])
    inputs = rs.input_sampling([[-1, 1], [-1, 1]], [5, 1])
    mdp, _ = rs.abstract_linear(model, grid, inputs)
    cache = SuccessorCache.from_outputs(dfa, mdp.outputs, labeling, eps=0.5)
    delta = _delta_rows(np.full((mdp.ns, mdp.nu), 0.05), mdp)
    return mdp, dfa, cache, delta


def run_backend(sweeper, cache, nq, mdp, sweeps: int):
    values = np.zeros((mdp.n_total, nq))
    out_v = np.empty_like(values)
    out_a = np.zeros(values.shape, dtype=np.int32)
    start = time.perf_counter()
    for _ in range(sweeps):
        worst = cache.worst_table(values)
        sweeper.sweep(np.ascontiguousarray(worst), out_v, out_a)
        values, out_v = out_v, values
    elapsed = time.perf_counter() - start
    return elapsed / sweeps, values


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cells", type=int, default=61)
    parser.add_argument("--sweeps", type=int, default=20)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    threads = args.threads or rs.default_threads()
    print(f"building {args.cells}x{args.cells} abstraction ...")
    mdp, dfa, cache, delta = build_problem(args.cells)
    print(f"product: {mdp.ns} states x {dfa.n} locations x {mdp.nu} inputs, nnz={mdp.nnz}")

    results = {}
    backends = [("python", NumpySweeper(mdp, delta, threads))]
    if rs.HAVE_COMPILED:
        backends.append(("compiled", CompiledSweeper(mdp, delta, threads)))
    else:
        print("compiled kernel not built; benchmarking the fallback only")

    reference = None
    for name, sweeper in backends:
        per_sweep, values = run_backend(sweeper, cache, dfa.n, mdp, args.sweeps)
        results[name] = per_sweep
        if reference is None:
            reference = values
        else:
            gap = float(np.max(np.abs(values - reference)))
            assert gap == 0.0, f"backends disagree by {gap}"
        print(f"{name:>9}: {per_sweep * 1e3:8.2f} ms/sweep  ({threads} threads)")

    if len(results) == 2:
        print(f"speedup: {results['python'] / results['compiled']:.2f}x (compiled over python)")


if __name__ == "__main__":
    main()
