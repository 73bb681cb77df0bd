"""Selection between the compiled sweep kernel and the numpy fallback.

The compiled extension is preferred when importable; ``ROBUST_SYNTH_BACKEND``
forces ``compiled`` or ``python``.  Both backends produce bitwise-identical
results for any thread count (threads only split disjoint state ranges).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

try:  # pragma: no cover - depends on the build
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

HAVE_COMPILED = _compiled is not None


def default_threads() -> int:
    env = os.environ.get("ROBUST_SYNTH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def backend_name(requested: str | None = None) -> str:
    choice = requested or os.environ.get("ROBUST_SYNTH_BACKEND", "auto")
    if choice not in ("auto", "compiled", "python"):
        raise ValueError(f"unknown backend {choice!r}")
    if choice == "compiled" and not HAVE_COMPILED:
        raise RuntimeError("compiled kernel requested but not built")
    if choice == "auto":
        return "compiled" if HAVE_COMPILED else "python"
    return choice


class NumpySweeper:
    name = "python"

    def __init__(self, mdp, delta, threads: int = 1):
        self._csr = [mdp.csr_for_input(u) for u in range(mdp.nu)]
        self._delta = delta

    def sweep(self, worst, out_values, out_argmax):
        return _kernels_py.backup_sweep(self._csr, worst, self._delta, out_values, out_argmax)


class CompiledSweeper:
    name = "compiled"

    def __init__(self, mdp, delta, threads: int = 1):
        self._mdp = mdp
        self._delta = np.ascontiguousarray(delta)
        self._threads = max(1, int(threads))
        self._pool = None
        if self._threads > 1:
            self._pool = ThreadPoolExecutor(max_workers=self._threads)

    def sweep(self, worst, out_values, out_argmax):
        mdp = self._mdp
        nq = worst.shape[1]
        worst = np.ascontiguousarray(worst)
        if self._pool is None:
            scratch = np.empty(nq)
            _compiled.backup_range(
                mdp.data, mdp.indices, mdp.indptr, worst, self._delta,
                mdp.n_total, mdp.nu, nq, 0, mdp.n_total,
                out_values, out_argmax, scratch,
            )
            return out_values, out_argmax
        bounds = np.linspace(0, mdp.n_total, self._threads + 1).astype(int)
        futures = []
        for t in range(self._threads):
            if bounds[t] == bounds[t + 1]:
                continue
            scratch = np.empty(nq)
            futures.append(
                self._pool.submit(
                    _compiled.backup_range,
                    mdp.data, mdp.indices, mdp.indptr, worst, self._delta,
                    mdp.n_total, mdp.nu, nq, int(bounds[t]), int(bounds[t + 1]),
                    out_values, out_argmax, scratch,
                )
            )
        for f in futures:
            f.result()
        return out_values, out_argmax

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=False)


def make_sweeper(mdp, delta, threads: int | None = None, backend: str | None = None):
    """Instantiate the sweep engine for one synthesis run.

    ``delta`` is the (nu, n_total) per-row deficiency table.
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    name = backend_name(backend)
    if name == "compiled":
        return CompiledSweeper(mdp, delta, threads)
    return NumpySweeper(mdp, delta, threads)
