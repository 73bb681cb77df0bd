"""Refinement of the abstract policy to a parameter-free controller, plus
closed-loop Monte-Carlo validation of the certified bound.

The refined controller carries the DFA as memory and never reads the unknown
parameter: the concrete state is mapped to its grid cell (the identity
relation makes nearest-center the state-mapping convention), the abstract
policy supplies the input, and the interface is the identity u = u_hat.  The
DFA memory advances on the exact letter of the observed concrete output;
epsilon-inflation belongs to the synthesis side only.

Noise streams are counter-based (Philox): step k of a simulation draws one
(runs x n) normal block under counter k * 2^64 and key = seed, so every draw
is keyed by (seed, run, step), results are independent of thread count, and
prefixes are stable under growing either the horizon or the run count.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .abstraction import AbstractMdp, Grid
from .certificates import SsrCertificate
from .models import LabelingMap, LinearModel, NonlinearModel, UncertaintyBox
from .scltl import Dfa
from .synthesis import Policy, ValueTable, robust_sat


@dataclass(frozen=True)
class RefinedController:
    """Abstract policy + DFA memory wrapped as a controller for the concrete model."""

    policy: Policy
    dfa: Dfa
    grid: Grid
    labeling: LabelingMap
    safe_input_index: int = 0

    @property
    def inputs(self) -> np.ndarray:
        return self.policy.inputs

    def initial_memory(self, y) -> np.ndarray:
        """Memory after consuming the initial output's letter."""
        letters = self.labeling.letters(np.atleast_2d(y))
        return self.dfa.delta[self.dfa.q0, letters]

    def advance_memory(self, q, y) -> np.ndarray:
        letters = self.labeling.letters(np.atleast_2d(y))
        return self.dfa.delta[np.asarray(q), letters]

    def act(self, x, q):
        """Input indices for concrete states x with memory q.

        Returns (input indices, excursion mask).  States outside the gridded
        box get the designated safe input and are flagged; accepting memory
        also emits the safe input (any input is fine once accepted).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        q = np.atleast_1d(np.asarray(q))
        cells = self.grid.point_to_index(x)
        excursion = cells < 0
        safe_cells = np.where(excursion, 0, cells)
        idx = self.policy.mu[safe_cells, q].astype(np.int64)
        accepting = np.isin(q, list(self.dfa.accepting)) if self.dfa.accepting else np.zeros(q.shape, bool)
        idx = np.where(excursion | accepting, self.safe_input_index, idx)
        return idx, excursion


def refine(policy: Policy, dfa: Dfa, model, grid: Grid, labeling: LabelingMap) -> RefinedController:
    """Close the abstract policy over the DFA memory and the grid state mapping."""
    if policy.mu.shape != (grid.num_cells, dfa.n):
        raise ValueError("policy table does not match the grid/automaton sizes")
    return RefinedController(policy=policy, dfa=dfa, grid=grid, labeling=labeling)


@dataclass(frozen=True)
class SimulationReport:
    """Empirical satisfaction frequency of one (initial state, parameter) pair."""

    x0: tuple
    theta: tuple
    runs: int
    horizon: int
    successes: int
    frequency: float
    ci_radius: float
    confidence: float
    seed: int
    sstar: Optional[float] = None

    @property
    def passes(self) -> Optional[bool]:
        if self.sstar is None:
            return None
        return self.frequency + self.ci_radius >= self.sstar - 1e-12


def _step_normals(seed: int, step: int, runs: int, dim: int) -> np.ndarray:
    bitgen = np.random.Philox(key=np.uint64(seed), counter=int(step) << 64)
    return np.random.Generator(bitgen).standard_normal((runs, dim))


def simulate_closed_loop(
    ctrl: RefinedController,
    model,
    theta,
    x0,
    horizon: int,
    runs: int,
    seed: int,
    confidence: float = 0.99,
) -> SimulationReport:
    """Estimate the closed-loop satisfaction frequency under a fixed parameter.

    A run satisfies the specification iff the DFA accepts the concrete output
    word within the horizon (a good prefix); runs that leave the gridded box
    before acceptance count as failures.  Bounded horizon keeps the estimate
    itself a lower estimate of the true satisfaction probability.
    """
    x0 = np.asarray(x0, dtype=float)
    theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
    n = ctrl.grid.n
    if runs <= 0:
        return SimulationReport(
            x0=tuple(x0.tolist()), theta=tuple(theta_arr.tolist()), runs=0,
            horizon=horizon, successes=0, frequency=0.0, ci_radius=0.0,
            confidence=confidence, seed=seed,
        )

    x = np.broadcast_to(x0, (runs, n)).copy()
    q = ctrl.initial_memory(model.output(x))
    indicator = ctrl.dfa.indicator()
    accepted = indicator[q] > 0
    failed = np.zeros(runs, dtype=bool)
    theta_step = theta_arr if isinstance(model, LinearModel) else theta

    for k in range(horizon):
        active = ~(accepted | failed)
        if not np.any(active):
            break
        u_idx, excursion = ctrl.act(x, q)
        failed |= excursion & ~accepted
        active &= ~failed
        u = ctrl.inputs[u_idx]
        w = _step_normals(seed, k, runs, n)  # full block: stream keyed by (seed, run, k)
        x_next = model.dynamics(x, u, theta_step) + w @ model.R.T
        x = np.where(active[:, None], x_next, x)  # finished runs stay frozen
        q_next = ctrl.advance_memory(q, model.output(x))
        q = np.where(active, q_next, q)
        accepted |= (indicator[q] > 0) & ~failed

    successes = int(np.count_nonzero(accepted))
    freq = successes / runs
    z = float(ndtri(0.5 + confidence / 2.0))
    ci = z * math.sqrt(max(freq * (1.0 - freq), 0.0) / runs)
    return SimulationReport(
        x0=tuple(x0.tolist()), theta=tuple(theta_arr.tolist()), runs=runs,
        horizon=horizon, successes=successes, frequency=freq, ci_radius=ci,
        confidence=confidence, seed=seed,
    )


def validate_bound(
    ctrl: RefinedController,
    model,
    theta_set: UncertaintyBox,
    *,
    x0_indices: Sequence[int],
    runs: int,
    horizon: int,
    seed: int,
    mdp: Optional[AbstractMdp] = None,
    table: Optional[ValueTable] = None,
    eps: float = 0.0,
    labeling: Optional[LabelingMap] = None,
    sstar_values: Optional[dict] = None,
    grid: Optional[Grid] = None,
    nominal_theta=None,
    interior_samples: int = 8,
    confidence: float = 0.99,
):
    """Check the certified bound at the box vertices, the nominal parameter,
    and interior samples, over a set of initial grid centers.

    The certified value per initial cell comes either from ``sstar_values``
    (index -> bound, e.g. read back from an exported value map) or is
    computed from ``table``/``mdp``/``eps``/``labeling``.  Returns (reports,
    fraction of (x0, theta) pairs with frequency + confidence radius >=
    bound).  All simulations share the seed, so parameters are compared under
    common random numbers.
    """
    if sstar_values is None and (table is None or mdp is None or labeling is None):
        raise ValueError("need either sstar_values or (table, mdp, labeling)")
    grid = grid if grid is not None else (mdp.grid if mdp is not None else ctrl.grid)

    thetas = [v for v in theta_set.vertices()]
    if nominal_theta is not None:
        thetas.append(np.atleast_1d(np.asarray(nominal_theta, dtype=float)))
    rng = np.random.default_rng(seed)
    thetas.extend(theta_set.sample(rng, interior_samples))

    reports = []
    passed = 0
    for x0_index in x0_indices:
        x0_index = int(x0_index)
        if sstar_values is not None:
            sstar = float(sstar_values[x0_index])
        else:
            sstar = robust_sat(table, ctrl.dfa, mdp, x0_index, eps, labeling)
        x0 = grid.index_to_center(x0_index)
        for theta in thetas:
            report = simulate_closed_loop(
                ctrl, model, theta, x0, horizon, runs, seed, confidence=confidence
            )
            report = dataclasses.replace(report, sstar=sstar)
            reports.append(report)
            passed += bool(report.passes)
    fraction = passed / len(reports) if reports else 1.0
    return reports, fraction


def check_refinement_validity(
    model,
    cert: Optional[SsrCertificate],
    theta,
    samples: int,
    seed: int = 0,
    x=None,
    u=None,
) -> float:
    """Empirical mass of the min-Gaussian coupling event for one step.

    From an in-relation start (x = x_hat, u = u_hat) the coupling shifts the
    nominal noise by the whitened offset m = R^-1 gamma; a sample w lands in
    the coupled (diagonal) event iff a rejection test accepts it with
    probability min(1, N(w; -m, I)/N(w; 0, I)).  The empirical acceptance
    frequency estimates 2 Phi(-|m|/2), the certified coupling mass.
    """
    if cert is not None and "identity" not in cert.relation:
        raise ValueError("refinement check assumes the identity relation")
    theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if isinstance(model, LinearModel):
        gamma = theta_arr
        m = model.whiten(gamma)
    elif isinstance(model, NonlinearModel):
        x = np.zeros(model.n) if x is None else np.asarray(x, dtype=float)
        u = np.zeros(model.m) if u is None else np.asarray(u, dtype=float)
        gamma = model.dynamics(x, u, theta_arr) - model.dynamics(x, u, model.theta0)
        m = np.linalg.solve(model.R, gamma)
    else:
        raise TypeError(f"unsupported model type {type(model)}")

    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    w = gen.standard_normal((samples, m.shape[0]))
    log_ratio = -w @ m - 0.5 * float(m @ m)
    uniforms = gen.random(samples)
    accept = uniforms < np.minimum(1.0, np.exp(log_ratio))
    return float(np.count_nonzero(accept) / samples)
