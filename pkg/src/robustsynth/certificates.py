"""(ε, δ) sub-simulation certificates and the Gaussian coupling bounds behind them.

The per-step coupling of two unit-covariance Gaussians whose means differ by a
vector m keeps mass 2·Φ(−‖m‖/2) (the integral of the pointwise minimum of the
two densities); the per-step deficiency is δ = 1 − mass.  General noise
factors R are handled by whitening the mean offset with R⁻¹ first.

Certificates compose transitively: chaining M̃ ⪯ M̂ ⪯ M adds both the output
errors ε and the deficiencies δ (pointwise for tabulated δ, clipped to [0,1]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import quad

from .models import LinearModel, NonlinearModel, UncertaintyBox, std_normal_cdf


DeltaLike = Union[float, np.ndarray]


def coupling_mass(m) -> float:
    """Mass of min{N(0, I), N(m, I)}: 2·Φ(−‖m‖₂ / 2).

    Equals 1 exactly for m = 0 and decreases strictly in ‖m‖.
    """
    norm = float(np.linalg.norm(np.atleast_1d(np.asarray(m, dtype=float))))
    return float(2.0 * std_normal_cdf(-0.5 * norm))


def numeric_coupling_oracle(m, tol: float = 1e-8) -> float:
    """Quadrature of ∫ min(N(t; 0, 1), N(t; ‖m‖, 1)) dt, the coupling-mass oracle.

    Valid in any dimension by rotational reduction: only the offset norm
    matters.  The integrand has a kink at ‖m‖/2, passed to the adaptive rule
    as a breakpoint.
    """
    d = float(np.linalg.norm(np.atleast_1d(np.asarray(m, dtype=float))))
    if d > 8.0 + 1e-12:
        raise ValueError("oracle supports offsets with norm <= 8")

    def integrand(t):
        return min(
            math.exp(-0.5 * t * t), math.exp(-0.5 * (t - d) * (t - d))
        ) / math.sqrt(2.0 * math.pi)

    lo, hi = -9.0, d + 9.0
    value, _ = quad(integrand, lo, hi, points=[0.5 * d], epsabs=tol, limit=200)
    return float(value)


@dataclass(frozen=True)
class CouplingSpec:
    """Whitened mean offset m = R⁻¹γ of a min-Gaussian coupling."""

    offset: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.atleast_1d(np.asarray(self.offset, dtype=float)))

    @property
    def mass(self) -> float:
        return coupling_mass(self.offset)

    @property
    def delta(self) -> float:
        return 1.0 - self.mass


@dataclass(frozen=True)
class SsrCertificate:
    """An (ε, δ) certificate relating a more abstract model to a more concrete one.

    ``delta`` is either a global scalar or a table indexed (abstract state,
    input).  ``source``/``target`` tag the two related models so composition
    can check the chain; ``provenance`` records how the certificate was built.
    """

    epsilon: float
    delta: DeltaLike
    relation: str
    source: str
    target: str
    provenance: tuple = ()
    valid: bool = True

    def __post_init__(self):
        eps = float(self.epsilon)
        if eps < 0:
            raise ValueError("epsilon must be nonnegative")
        delta = self.delta
        if np.ndim(delta) == 0:
            delta = float(delta)
            bad = not (0.0 <= delta <= 1.0)
        else:
            delta = np.asarray(delta, dtype=float)
            bad = bool(np.any(delta < 0.0) or np.any(delta > 1.0))
        if bad:
            raise ValueError("delta must lie in [0, 1]")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def delta_is_table(self) -> bool:
        return np.ndim(self.delta) != 0

    def delta_global(self) -> float:
        """Supremum of δ (flagged as the more conservative choice for tables)."""
        if self.delta_is_table:
            return float(np.max(self.delta))
        return float(self.delta)

    def delta_table(self, n_states: int, n_inputs: int) -> np.ndarray:
        """δ as an (n_states, n_inputs) table, broadcasting a scalar."""
        if not self.delta_is_table:
            return np.full((n_states, n_inputs), float(self.delta))
        table = np.asarray(self.delta, dtype=float)
        if table.shape != (n_states, n_inputs):
            raise ValueError(
                f"delta table has shape {table.shape}, expected {(n_states, n_inputs)}"
            )
        return table


def delta_linear(model: LinearModel, theta_set: UncertaintyBox) -> SsrCertificate:
    """Certificate for nominal-vs-parametric linear models under the identity relation.

    ε = 0 and δ = max over the box vertices of 1 − 2Φ(−‖R⁻¹θ‖/2); the
    whitened offset norm is convex in θ, so the box supremum sits at a vertex.
    """
    if theta_set.dim != model.n:
        raise ValueError("additive uncertainty must match the state dimension")
    worst = 0.0
    for vertex in theta_set.vertices():
        worst = max(worst, 1.0 - coupling_mass(model.whiten(vertex)))
    return SsrCertificate(
        epsilon=0.0,
        delta=worst,
        relation="identity (x_hat = x)",
        source="nominal",
        target="concrete",
        provenance=("linear additive-offset coupling",),
    )


def delta_nonlinear(
    model: NonlinearModel,
    theta_set: UncertaintyBox,
    x,
    u,
) -> float:
    """State/input-dependent δ(x̂, û) = 1 − 2Φ(−d̃(x̂, û)/2).

    d̃ is the parametric offset bound whitened by R⁻¹: exact per-coordinate
    whitening when the offset axis is known (Van der Pol: axis 2), otherwise
    the conservative ‖R⁻¹‖₂ scaling.
    """
    d = np.asarray(model.disturbance_bound(x, u, theta_set), dtype=float)
    scaled = _whiten_norm_bound(model, d)
    return 1.0 - 2.0 * std_normal_cdf(-0.5 * float(scaled))


def _whiten_norm_bound(model: NonlinearModel, d):
    diag = np.diag(model.R)
    diagonal = bool(np.all(model.R == np.diag(diag)))
    if model.offset_axis is not None and diagonal:
        return d / float(diag[model.offset_axis])
    return d * model.whiten_scale()


def nonlinear_delta_table(
    model: NonlinearModel,
    theta_set: UncertaintyBox,
    states: np.ndarray,
    inputs: np.ndarray,
) -> np.ndarray:
    """δ(x̂, û) tabulated over given representative states × inputs."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    table = np.empty((states.shape[0], inputs.shape[0]), dtype=float)
    for j, u in enumerate(inputs):
        d = np.asarray(model.disturbance_bound(states, u, theta_set), dtype=float)
        scaled = _whiten_norm_bound(model, d)
        table[:, j] = 1.0 - 2.0 * std_normal_cdf(-0.5 * scaled)
    return table


def nonlinear_model_certificate(
    model: NonlinearModel,
    theta_set: UncertaintyBox,
    states: np.ndarray,
    inputs: np.ndarray,
) -> SsrCertificate:
    """Certificate with the tabulated δ of ``nonlinear_delta_table`` and ε = 0."""
    table = nonlinear_delta_table(model, theta_set, states, inputs)
    return SsrCertificate(
        epsilon=0.0,
        delta=table,
        relation="identity (x_hat = x)",
        source="nominal",
        target="concrete",
        provenance=("nonlinear state-dependent offset coupling",),
    )


def vdp_disturbance_bound(x, theta_set: UncertaintyBox, tau: float, theta0: float = 1.0):
    """τ · max(|θ₀−lo|, |θ₀−hi|) · |(1−x̂₁²) x̂₂| for the Van der Pol oscillator."""
    from .models import vdp_offset_bound

    return vdp_offset_bound(x, theta_set, tau, theta0)


def compose_transitive(c1: SsrCertificate, c2: SsrCertificate) -> SsrCertificate:
    """Chain c1: M̃ ⪯ M̂ with c2: M̂ ⪯ M into M̃ ⪯ M.

    ε adds exactly; δ adds pointwise (scalar broadcasting against tables) and
    is clipped to [0, 1].
    """
    if c1.target != c2.source:
        raise ValueError(
            f"certificates do not chain: {c1.source}->{c1.target} then {c2.source}->{c2.target}"
        )
    if c1.delta_is_table and c2.delta_is_table:
        t1 = np.asarray(c1.delta)
        t2 = np.asarray(c2.delta)
        if t1.shape != t2.shape:
            raise ValueError(f"incompatible delta tables: {t1.shape} vs {t2.shape}")
        delta = np.clip(t1 + t2, 0.0, 1.0)
    elif c1.delta_is_table or c2.delta_is_table:
        table = np.asarray(c1.delta if c1.delta_is_table else c2.delta)
        scalar = float(c2.delta if c1.delta_is_table else c1.delta)
        delta = np.clip(table + scalar, 0.0, 1.0)
    else:
        delta = min(1.0, float(c1.delta) + float(c2.delta))
    return SsrCertificate(
        epsilon=c1.epsilon + c2.epsilon,
        delta=delta,
        relation=f"{c1.relation} ; {c2.relation}",
        source=c1.source,
        target=c2.target,
        provenance=c1.provenance + c2.provenance + ("transitive composition",),
        valid=c1.valid and c2.valid,
    )
