"""Shared fixtures and independent test oracles.

The oracles here are deliberately primitive (quadrature, dense loops,
brute-force sampling) and independent of the library code paths they check.
"""

from __future__ import annotations

import math
import random

import numpy as np
import pytest

import robustsynth as rs
from robustsynth.scltl import FALSE, TRUE, Atom, NotAtom, f_and, f_next, f_or, f_until


# ---------------------------------------------------------------------------
# Numeric oracles


def phi_oracle(z: float) -> float:
    """Standard normal CDF by adaptive quadrature of the density (independent
    of the erf-based implementation under test)."""
    from scipy.integrate import quad

    if z < -9.0:
        lo = z - 9.0
    else:
        lo = -12.0
    value, _ = quad(lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi), lo, z,
                    epsabs=1e-14, limit=300)
    return float(value)


def reachability_oracle(rows, letters, dfa, sweeps):
    """Plain (non-robust) DFA-product reachability value iteration.

    Dense nested loops, exact per-state letters, no epsilon/delta: the
    reduction target for the robust engine.  ``rows`` is (nu, N, N) with the
    sink at index N-1; ``letters`` gives each non-sink state's letter.
    """
    nu, n_total, _ = rows.shape
    nq = dfa.n
    acc = dfa.indicator()
    values = np.zeros((n_total, nq))
    for _ in range(sweeps):
        new = np.zeros_like(values)
        for s in range(n_total):
            for q in range(nq):
                best = 0.0
                for u in range(nu):
                    total = 0.0
                    for s2 in range(n_total):
                        p = rows[u, s, s2]
                        if p == 0.0:
                            continue
                        if s2 == n_total - 1:
                            contrib = 0.0  # sink
                        else:
                            q2 = int(dfa.delta[q, letters[s2]])
                            contrib = 1.0 if acc[q2] else values[s2, q2]
                        total += p * contrib
                    best = max(best, min(1.0, max(0.0, total)))
                new[s, q] = best
        values = new
    return values


# ---------------------------------------------------------------------------
# Random generators


def random_formula(rng: random.Random, num_atoms: int, depth: int):
    if depth == 0 or rng.random() < 0.3:
        r = rng.random()
        if r < 0.40:
            k = rng.randrange(num_atoms)
            return Atom(k, f"p{k + 1}")
        if r < 0.70:
            k = rng.randrange(num_atoms)
            return NotAtom(k, f"p{k + 1}")
        if r < 0.85:
            return TRUE
        return FALSE
    op = rng.randrange(4)
    a = random_formula(rng, num_atoms, depth - 1)
    b = random_formula(rng, num_atoms, depth - 1)
    if op == 0:
        return f_and([a, b])
    if op == 1:
        return f_or([a, b])
    if op == 2:
        return f_until(a, b)
    return f_next(a)


def random_mdp(rng: np.random.Generator, ns: int, nu: int, density: float = 0.4):
    """Random dense stochastic rows over ns states plus an absorbing sink."""
    n_total = ns + 1
    rows = np.zeros((nu, n_total, n_total))
    for u in range(nu):
        for s in range(ns):
            mask = rng.random(ns) < density
            mask[rng.integers(ns)] = True
            weights = rng.random(ns) * mask
            sink_mass = rng.random() * 0.2
            weights = weights / weights.sum() * (1.0 - sink_mass)
            rows[u, s, :ns] = weights
            rows[u, s, ns] = sink_mass
        rows[u, ns, ns] = 1.0
    return rows


# ---------------------------------------------------------------------------
# Case-study fixtures


@pytest.fixture(scope="session")
def linear_case():
    model = rs.LinearModel(A=0.9 * np.eye(2), B=0.7 * np.eye(2), C=np.eye(2), R=np.eye(2))
    theta_box = rs.UncertaintyBox.from_intervals([[-0.09, 0.09], [-0.09, 0.09]])
    labeling = rs.LabelingMap.from_regions(
        ["p1", "p2"], {"p1": [[4.0, 10.0], [-4.0, 0.0]], "p2": [[4.0, 10.0], [0.0, 4.0]]}
    )
    formula = rs.parse_formula("(!p2) U p1", ["p1", "p2"])
    dfa = rs.compile_to_dfa(formula, ["p1", "p2"])
    return model, theta_box, labeling, formula, dfa


@pytest.fixture(scope="session")
def vdp_case():
    model = rs.make_vanderpol(tau=0.1, R=np.eye(2), theta0=1.0)
    theta_box = rs.UncertaintyBox.from_intervals([[0.7, 1.3]])
    labeling = rs.LabelingMap.from_regions(
        ["p1", "p2"], {"p1": [[-3.0, 3.0], [-3.0, 3.0]], "p2": [[2.0, 3.0], [-1.0, 1.0]]}
    )
    formula = rs.parse_formula("p1 U p2", ["p1", "p2"])
    dfa = rs.compile_to_dfa(formula, ["p1", "p2"])
    return model, theta_box, labeling, formula, dfa


@pytest.fixture(scope="session")
def chain_mdp():
    """Two-state chain: t(s1|s0) = 0.5, self-loop 0.5; s1 absorbing and labeled."""
    rows = np.zeros((1, 3, 3))
    rows[0, 0, 0] = 0.5
    rows[0, 0, 1] = 0.5
    rows[0, 1, 1] = 1.0
    rows[0, 2, 2] = 1.0
    outputs = np.array([[0.0], [1.0]])
    mdp = rs.AbstractMdp.from_dense(rows, inputs=[[0.0]], outputs=outputs)
    labeling = rs.LabelingMap.from_regions(["p1"], {"p1": [[0.5, 1.5]]})
    dfa = rs.compile_to_dfa(rs.parse_formula("F p1", ["p1"]), ["p1"])
    return mdp, labeling, dfa
