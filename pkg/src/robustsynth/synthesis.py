"""Robust dynamic programming on the implicit product of the finite MDP and a DFA.

The worst-case backup for value tables V: (state, location) -> [0, 1] is

    T(V)(s, q) = max_u clamp( sum_s' [ min_{q' in tau_bar(q, s')}
                              max(1_F(q'), V(s', q')) ] t(s'|s, u) - delta(s, u) )

where tau_bar(q, s') collects the automaton moves under every letter
realizable within distance epsilon of the successor's output, and
clamp(x) = min(1, max(0, x)).  Iterating from V = 0 the table grows
monotonically, so every iterate is a sound lower bound; the sink state is
paired with a dead non-accepting location and contributes value 0.

The robust satisfaction probability of an initial cell x0 is
min over the epsilon-ball letters of x0 of max(acceptance, V(x0, .)), i.e.
exactly the worst table evaluated at the initial location.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._backend import default_threads, make_sweeper
from .abstraction import AbstractMdp
from .certificates import SsrCertificate
from .models import LabelingMap, expand_ambiguous
from .scltl import Dfa


@dataclass(frozen=True)
class ValueTable:
    """Converged (or capped) value table over (state incl. sink) x location."""

    values: np.ndarray  # (ns+1, |Q|)
    iterations: int
    residual: float
    converged: bool
    residuals: tuple = ()


@dataclass(frozen=True)
class Policy:
    """Deterministic stationary policy on the product, total on non-sink pairs."""

    mu: np.ndarray  # (ns, |Q|) input indices
    inputs: np.ndarray  # (nu, m)

    def input_index(self, s: int, q: int) -> int:
        return int(self.mu[s, q])

    def to_json_dict(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "mu": self.mu.reshape(-1).tolist(),
        }

    @classmethod
    def from_json_dict(cls, payload: dict, num_locations: int) -> "Policy":
        inputs = np.atleast_2d(np.asarray(payload["inputs"], dtype=float))
        flat = np.asarray(payload["mu"], dtype=np.int32)
        if flat.size % num_locations != 0:
            raise ValueError("policy table length does not match the location count")
        return cls(mu=flat.reshape(-1, num_locations), inputs=inputs)


class SuccessorCache:
    """Per-state letter sets and the induced worst-case location moves.

    States with equal letter sets share one class; for each (class, location)
    the distinct successor locations are precomputed, so a sweep reduces to
    grouped min-gathers.
    """

    def __init__(self, dfa: Dfa, letter_sets: Sequence[tuple]):
        self.dfa = dfa
        class_of: dict = {}
        state_class = np.empty(len(letter_sets), dtype=np.int64)
        for s, letters in enumerate(letter_sets):
            key = tuple(letters)
            if not key:
                raise ValueError("letter sets must be nonempty")
            state_class[s] = class_of.setdefault(key, len(class_of))
        self.classes = list(class_of)
        self.state_class = state_class
        self.groups = [np.flatnonzero(state_class == c) for c in range(len(self.classes))]
        self.targets = [
            [
                np.unique(dfa.delta[q, list(letters)]).astype(np.int64)
                for q in range(dfa.n)
            ]
            for letters in self.classes
        ]

    @classmethod
    def from_outputs(
        cls, dfa: Dfa, outputs: np.ndarray, labeling: LabelingMap, eps: float
    ) -> "SuccessorCache":
        base, amb = labeling.ball_classify(outputs, eps)
        letter_sets = [expand_ambiguous(int(b), int(a)) for b, a in zip(base, amb)]
        return cls(dfa, letter_sets)

    def worst_table(self, values: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        """min over q' in tau_bar of max(1_F(q'), V(s', q')), sink pinned at 0."""
        n_total, nq = values.shape
        lifted = values.copy()
        acc = list(self.dfa.accepting)
        if acc:
            lifted[:, acc] = 1.0
        if out is None:
            out = np.empty_like(values)
        for c, idx in enumerate(self.groups):
            if idx.size == 0:
                continue
            for q in range(nq):
                tg = self.targets[c][q]
                if tg.size == 1:
                    out[idx, q] = lifted[idx, tg[0]]
                else:
                    out[idx, q] = lifted[np.ix_(idx, tg)].min(axis=1)
        out[n_total - 1, :] = 0.0  # sink pairs with a dead location
        return out


def _delta_rows(delta_table: np.ndarray, mdp: AbstractMdp) -> np.ndarray:
    """(nu, ns+1) per-row deficiency with zero at the sink column."""
    rows = np.zeros((mdp.nu, mdp.n_total))
    rows[:, : mdp.ns] = delta_table.T
    return rows


def _normalize_delta(delta, ns: int, nu: int) -> np.ndarray:
    if np.ndim(delta) == 0:
        return np.full((ns, nu), float(delta))
    table = np.asarray(delta, dtype=float)
    if table.shape != (ns, nu):
        raise ValueError(f"delta table has shape {table.shape}, expected {(ns, nu)}")
    return table


def robust_bellman_backup(
    values: np.ndarray,
    mdp: AbstractMdp,
    dfa: Dfa,
    eps: float,
    delta,
    labeling: Optional[LabelingMap] = None,
    letter_sets: Optional[Sequence[tuple]] = None,
    cache: Optional[SuccessorCache] = None,
) -> np.ndarray:
    """One application of the worst-case backup; returns the new value table."""
    if cache is None:
        if letter_sets is not None:
            cache = SuccessorCache(dfa, letter_sets)
        elif labeling is not None:
            cache = SuccessorCache.from_outputs(dfa, mdp.outputs, labeling, eps)
        else:
            raise ValueError("need a labeling map or explicit letter sets")
    delta_table = _normalize_delta(delta, mdp.ns, mdp.nu)
    sweeper = make_sweeper(mdp, _delta_rows(delta_table, mdp), threads=1)
    worst = cache.worst_table(np.asarray(values, dtype=float))
    out_v = np.empty_like(worst)
    out_a = np.empty(worst.shape, dtype=np.int32)
    sweeper.sweep(np.ascontiguousarray(worst), out_v, out_a)
    return out_v


def value_iterate(
    mdp: AbstractMdp,
    dfa: Dfa,
    cert: SsrCertificate,
    labeling: Optional[LabelingMap] = None,
    *,
    letter_sets: Optional[Sequence[tuple]] = None,
    tol: float = 1e-6,
    max_iter: int = 5000,
    threads: Optional[int] = None,
    backend: Optional[str] = None,
    allow_invalid: bool = False,
):
    """Iterate the backup from V = 0 until the sup-norm change drops below tol.

    Jacobi sweeps (fresh table per sweep) keep the result independent of the
    thread count.  Non-convergence within ``max_iter`` is reported on the
    returned table, which is still a sound lower bound (iterates are
    nondecreasing from 0).  Returns (ValueTable, Policy).
    """
    if not cert.valid and not allow_invalid:
        raise ValueError("refusing to synthesize against an invalid certificate")
    if letter_sets is not None:
        cache = SuccessorCache(dfa, letter_sets)
    elif labeling is not None:
        cache = SuccessorCache.from_outputs(dfa, mdp.outputs, labeling, cert.epsilon)
    else:
        raise ValueError("need a labeling map or explicit letter sets")

    delta_rows = _delta_rows(cert.delta_table(mdp.ns, mdp.nu), mdp)
    threads = default_threads() if threads is None else threads
    sweeper = make_sweeper(mdp, delta_rows, threads=threads, backend=backend)

    nq = dfa.n
    values = np.zeros((mdp.n_total, nq))
    worst = np.empty_like(values)
    new_values = np.empty_like(values)
    argmax = np.zeros(values.shape, dtype=np.int32)
    residuals = []
    converged = False
    for _ in range(max_iter):
        cache.worst_table(values, out=worst)
        sweeper.sweep(np.ascontiguousarray(worst), new_values, argmax)
        residual = float(np.max(np.abs(new_values - values)))
        residuals.append(residual)
        values, new_values = new_values, values
        if residual < tol:
            converged = True
            break
    if hasattr(sweeper, "close"):
        sweeper.close()

    table = ValueTable(
        values=values.copy(),
        iterations=len(residuals),
        residual=residuals[-1] if residuals else 0.0,
        converged=converged,
        residuals=tuple(residuals),
    )
    policy = Policy(mu=argmax[: mdp.ns].copy(), inputs=mdp.inputs)
    return table, policy


def robust_sat(
    table: ValueTable,
    dfa: Dfa,
    mdp: AbstractMdp,
    x0_index: int,
    eps: float,
    labeling: LabelingMap,
) -> float:
    """Certified lower bound for starting in cell ``x0_index``.

    min over the letters realizable within eps of the cell's output of
    max(acceptance of the first location move, V at that location).
    """
    if not 0 <= x0_index < mdp.ns:
        raise ValueError("initial state index outside the grid")
    letters = labeling.ball_letters(mdp.outputs[x0_index], eps)
    best = 1.0
    for letter in letters:
        q = dfa.step(dfa.q0, letter)
        branch = 1.0 if q in dfa.accepting else float(table.values[x0_index, q])
        best = min(best, branch)
    return best


def sat_map(
    table: ValueTable, dfa: Dfa, mdp: AbstractMdp, eps: float, labeling: LabelingMap
) -> np.ndarray:
    """Robust satisfaction probability of every grid cell (vectorized)."""
    cache = SuccessorCache.from_outputs(dfa, mdp.outputs, labeling, eps)
    worst = cache.worst_table(table.values)
    return worst[: mdp.ns, dfa.q0].copy()


def export_value_map(
    table: ValueTable,
    grid,
    dfa: Dfa,
    eps: float,
    mdp: AbstractMdp,
    labeling: LabelingMap,
) -> str:
    """CSV of the certified satisfaction probability per grid center."""
    probs = sat_map(table, dfa, mdp, eps, labeling)
    centers = grid.centers
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{d + 1}" for d in range(grid.n)] + ["satprob"])
    for s in range(mdp.ns):
        row = [f"{c:.12g}" for c in centers[s]] + [f"{probs[s]:.12g}"]
        writer.writerow(row)
    return buf.getvalue()
