"""Pure-Python (numpy/scipy) implementation of the value-iteration sweep kernel.

Mirrors the compiled extension ``robustsynth._kernels``: one Bellman sweep
computes, for every state s and automaton location q,

    max over inputs u of clamp( sum_s' t(s'|s,u) * worst[s', q] - delta[u, s] )

together with the argmax input (first maximal index wins).
"""

from __future__ import annotations

import numpy as np


def backup_sweep(csr_per_input, worst, delta, out_values, out_argmax):
    """One full sweep; ``csr_per_input`` are the per-input (n_total, n_total) rows.

    worst: (n_total, nq) float64; delta: (nu, n_total) float64.
    Writes into out_values (n_total, nq) and out_argmax (n_total, nq) int32.
    """
    nu = len(csr_per_input)
    stacked = np.empty((nu,) + worst.shape)
    for u, mat in enumerate(csr_per_input):
        stacked[u] = mat.dot(worst) - delta[u][:, None]
    np.clip(stacked, 0.0, 1.0, out=stacked)
    np.max(stacked, axis=0, out=out_values)
    out_argmax[...] = np.argmax(stacked, axis=0)
    return out_values, out_argmax
