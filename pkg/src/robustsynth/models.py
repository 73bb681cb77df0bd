"""System models, output labeling, and the Gaussian numerics shared by all stages.

Two model families are supported, both driven by additive Gaussian noise
``R w_k`` with ``w_k ~ N(0, I)`` (so the noise covariance is ``R Rᵀ``):

* ``LinearModel``:   x⁺ = A x + B u + θ + R w,   y = C x,
  with the unknown parameter θ entering additively and ranging over a box.
* ``NonlinearModel``: x⁺ = f(x, u; θ) + R w,      y = h(x),
  with a nominal parameter θ₀ and a bound d(x, u) ≥ sup_θ ‖f(x,u;θ) − f(x,u;θ₀)‖.

Outputs are labeled through axis-aligned box regions, one per atomic
proposition; ``ball_letters`` computes the set of letters realizable within a
Euclidean ball around an output point (used to inflate labels by ε during
synthesis).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr


def std_normal_cdf(z):
    """Standard normal CDF Φ(z), accurate to well below 1e-12 absolute error.

    Accepts scalars or arrays.
    """
    return ndtr(z)


def spectral_norm(mat: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(mat, dtype=float), 2))


def _as_matrix(name: str, value, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True)
class LinearModel:
    """Linear system x⁺ = A x + B u + θ + R w, y = C x with θ in a box."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError("A must be square")
        B = _as_matrix("B", self.B, rows=n)
        C = _as_matrix("C", self.C, cols=n)
        R = _as_matrix("R", self.R, rows=n, cols=n)
        cond = float(np.linalg.cond(R))
        if not math.isfinite(cond) or cond > 1e12:
            raise ValueError(f"noise factor R must be invertible (cond={cond:.3g})")
        for field_name, value in (("A", A), ("B", B), ("C", C), ("R", R)):
            object.__setattr__(self, field_name, value)
        object.__setattr__(self, "cond_R", cond)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def norm_A(self) -> float:
        return spectral_norm(self.A)

    def dynamics(self, x, u, theta):
        """Noise-free update A x + B u + θ; broadcasts over leading axes."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return x @ self.A.T + u @ self.B.T + theta

    def output(self, x):
        return np.asarray(x, dtype=float) @ self.C.T

    def whiten(self, v):
        """R⁻¹ v, the offset expressed in units of the noise factor."""
        return np.linalg.solve(self.R, np.asarray(v, dtype=float))


@dataclass(frozen=True)
class NonlinearModel:
    """Nonlinear system x⁺ = f(x, u; θ) + R w, y = h(x).

    ``dynamics(x, u, theta)`` and ``output_map(x)`` must broadcast over
    leading axes of ``x`` (and ``u``).  ``disturbance_bound(x, u, theta_box)``
    returns d(x, u) ≥ sup over the box of ‖f(x,u;θ) − f(x,u;θ₀)‖.
    ``cell_deviation_bound(center, half, u)`` bounds
    sup_{|x−center| ≤ half} ‖f(x,u;θ₀) − f(center,u;θ₀)‖ and is required for
    grid abstraction.  ``offset_axis`` names the axis carrying the parametric
    offset when it is known to be one-dimensional (exact whitening).
    """

    name: str
    n: int
    m: int
    dynamics: Callable
    output_map: Optional[Callable]
    theta0: np.ndarray
    R: np.ndarray
    disturbance_bound: Callable
    cell_deviation_bound: Optional[Callable] = None
    offset_axis: Optional[int] = None
    output_lipschitz: float = 1.0

    def __post_init__(self):
        R = _as_matrix("R", self.R, rows=self.n, cols=self.n)
        theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "theta0", theta0)

    @property
    def p(self) -> int:
        return self.n if self.output_map is None else np.atleast_1d(self.output(np.zeros(self.n))).shape[-1]

    def output(self, x):
        x = np.asarray(x, dtype=float)
        if self.output_map is None:
            return x
        return self.output_map(x)

    def whiten_scale(self) -> float:
        """‖R⁻¹‖₂, the conservative per-norm whitening factor."""
        return spectral_norm(np.linalg.inv(self.R))


def step(model, x, u, theta, w):
    """One concrete transition f(x, u; θ) + R w."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    return model.dynamics(x, u, theta) + w @ model.R.T


@dataclass(frozen=True)
class UncertaintyBox:
    """Axis-aligned parameter box Θ = ∏ᵢ [lo_i, hi_i]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ValueError("need lo <= hi per coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_intervals(cls, intervals) -> "UncertaintyBox":
        arr = np.asarray(intervals, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("intervals must be a list of [lo, hi] pairs")
        return cls(arr[:, 0], arr[:, 1])

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, theta) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return bool(np.all(theta >= self.lo) and np.all(theta <= self.hi))

    def vertices(self) -> np.ndarray:
        if self.dim > 16:
            raise ValueError("vertex enumeration capped at 16 dimensions")
        corners = itertools.product(*[(lo, hi) for lo, hi in zip(self.lo, self.hi)])
        return np.array(list(corners), dtype=float)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(count, self.dim))


@dataclass(frozen=True)
class LabelingMap:
    """Ordered (proposition, closed box region) pairs over the output space.

    The letter of an output y is the bitset of propositions whose region
    contains y; bit i corresponds to ``props[i]``.
    """

    props: tuple
    boxes: np.ndarray  # (L, d, 2)

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=float)
        if boxes.ndim != 3 or boxes.shape[2] != 2:
            raise ValueError("boxes must have shape (L, d, 2)")
        if boxes.shape[0] != len(self.props):
            raise ValueError("one region per proposition required")
        if np.any(boxes[:, :, 0] > boxes[:, :, 1]):
            raise ValueError("region boxes need lo <= hi per axis")
        object.__setattr__(self, "props", tuple(self.props))
        object.__setattr__(self, "boxes", boxes)

    @classmethod
    def from_regions(cls, ap, regions: dict) -> "LabelingMap":
        missing = [p for p in ap if p not in regions]
        if missing:
            raise ValueError(f"no region for proposition(s): {missing}")
        extra = [p for p in regions if p not in ap]
        if extra:
            raise ValueError(f"region(s) for unknown proposition(s): {extra}")
        boxes = np.asarray([regions[p] for p in ap], dtype=float)
        return cls(tuple(ap), boxes)

    @property
    def num_props(self) -> int:
        return len(self.props)

    def letters(self, y: np.ndarray) -> np.ndarray:
        """Letters of a batch of outputs, shape (N, d) -> (N,) int bitsets."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.zeros(y.shape[0], dtype=np.int64)
        for i in range(self.num_props):
            lo, hi = self.boxes[i, :, 0], self.boxes[i, :, 1]
            inside = np.all((y >= lo) & (y <= hi), axis=1)
            out |= inside.astype(np.int64) << i
        return out

    def letter(self, y) -> int:
        return int(self.letters(np.atleast_2d(y))[0])

    def ball_classify(self, y: np.ndarray, eps: float):
        """Per-proposition three-way test for Euclidean balls B_eps(y).

        Returns (base, ambiguous) bitmask arrays: base bits are propositions
        certainly holding everywhere on the ball, ambiguous bits are
        propositions holding on part of the ball only.  Exact for closed
        axis-aligned boxes: the ball misses the box iff the clamp distance
        exceeds eps, and lies inside iff every per-axis projection does.
        """
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        y = np.atleast_2d(np.asarray(y, dtype=float))
        base = np.zeros(y.shape[0], dtype=np.int64)
        amb = np.zeros(y.shape[0], dtype=np.int64)
        for i in range(self.num_props):
            lo, hi = self.boxes[i, :, 0], self.boxes[i, :, 1]
            gap = np.maximum(lo - y, 0.0) + np.maximum(y - hi, 0.0)
            dist = np.sqrt(np.sum(gap * gap, axis=1))
            certainly_out = dist > eps
            certainly_in = np.all((y - eps >= lo) & (y + eps <= hi), axis=1)
            base |= certainly_in.astype(np.int64) << i
            amb |= (~certainly_in & ~certainly_out).astype(np.int64) << i
        return base, amb

    def ball_letters(self, y, eps: float) -> tuple:
        """Sorted tuple of letters realizable within distance eps of y.

        May over-approximate (Cartesian expansion of the ambiguous bits),
        which is sound for the worst-case synthesis operator.
        """
        base, amb = self.ball_classify(np.atleast_2d(y), eps)
        return expand_ambiguous(int(base[0]), int(amb[0]))


def expand_ambiguous(base: int, amb: int) -> tuple:
    """All letters base | s for submasks s of amb, sorted ascending."""
    letters = []
    sub = amb
    while True:
        letters.append(base | sub)
        if sub == 0:
            break
        sub = (sub - 1) & amb
    return tuple(sorted(letters))


@dataclass(frozen=True)
class GaussianKernel:
    """Gaussian measure N(mean, R Rᵀ) given through its factor R."""

    mean: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        R = _as_matrix("R", self.R, rows=mean.shape[0], cols=mean.shape[0])
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "R", R)

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.R == np.diag(np.diag(self.R))))


def rect_probability(kernel: GaussianKernel, rect) -> float:
    """Probability mass of the kernel on an axis-aligned box.

    Requires a diagonal factor R so the mass factorizes per axis:
    ∏ᵢ (Φ((bᵢ−μᵢ)/rᵢ) − Φ((aᵢ−μᵢ)/rᵢ)).
    """
    if not kernel.is_diagonal:
        raise ValueError("rect_probability requires a diagonal noise factor")
    rect = np.asarray(rect, dtype=float)
    a, b = rect[:, 0], rect[:, 1]
    if np.any(a > b):
        raise ValueError("degenerate rectangle: need a <= b per axis")
    r = np.diag(kernel.R)
    hi = ndtr((b - kernel.mean) / r)
    lo = ndtr((a - kernel.mean) / r)
    return float(np.prod(hi - lo))


def label(labeling: LabelingMap, y) -> int:
    """Letter (bitset over the proposition list) of an output point."""
    return labeling.letter(y)


def ball_letters(labeling: LabelingMap, y, eps: float) -> tuple:
    return labeling.ball_letters(y, eps)


# ---------------------------------------------------------------------------
# Registered nonlinear models

def make_vanderpol(tau: float = 0.1, R=None, theta0: float = 1.0) -> NonlinearModel:
    """Discrete-time Van der Pol oscillator with scalar input and parameter.

        x₁⁺ = x₁ + τ x₂
        x₂⁺ = x₂ + τ (−x₁ + θ (1 − x₁²) x₂) + u

    The parametric offset f(x,u;θ) − f(x,u;θ₀) = (0, τ (θ−θ₀)(1−x₁²) x₂) is
    confined to the second axis, so whitening is exact for diagonal R.
    """
    if R is None:
        R = np.eye(2)
    R = _as_matrix("R", R, rows=2, cols=2)
    tau = float(tau)

    def dynamics(x, u, theta):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        th = float(np.atleast_1d(np.asarray(theta, dtype=float))[-1]) if np.ndim(theta) else float(theta)
        x1 = x[..., 0]
        x2 = x[..., 1]
        uu = u[..., 0] if u.ndim else u
        out = np.empty(np.broadcast(x1, uu).shape + (2,), dtype=float)
        out[..., 0] = x1 + tau * x2
        out[..., 1] = x2 + tau * (-x1 + th * (1.0 - x1 * x1) * x2) + uu
        return out

    def disturbance_bound(x, u, theta_box: UncertaintyBox):
        return vdp_offset_bound(x, theta_box, tau, theta0)

    def cell_deviation_bound(center, half, u):
        return vdp_cell_deviation(center, half, tau, theta0)

    return NonlinearModel(
        name="vanderpol",
        n=2,
        m=1,
        dynamics=dynamics,
        output_map=None,
        theta0=np.array([theta0]),
        R=R,
        disturbance_bound=disturbance_bound,
        cell_deviation_bound=cell_deviation_bound,
        offset_axis=1,
        output_lipschitz=1.0,
    )


def vdp_offset_bound(x, theta_box: UncertaintyBox, tau: float, theta0: float = 1.0):
    """τ · sup_θ |θ₀−θ| · |(1−x₁²) x₂|, the Van der Pol parametric offset bound."""
    x = np.asarray(x, dtype=float)
    spread = float(max(abs(theta0 - theta_box.lo[0]), abs(theta0 - theta_box.hi[0])))
    return tau * spread * np.abs((1.0 - x[..., 0] ** 2) * x[..., 1])


def vdp_cell_deviation(center, half, tau: float, theta0: float = 1.0):
    """Closed-form bound on sup_{|x−c|≤half} ‖f(x,u;θ₀) − f(c,u;θ₀)‖ for Van der Pol.

    Mean value theorem over the (convex) cell with the interval bound
    ‖J‖₂ ≤ ‖J‖_F; the Jacobian entries are bounded entrywise over the cell:
    |J₂₁|/τ = |1 + 2 θ₀ x₁ x₂| attains its extreme at a cell corner (bilinear)
    and |J₂₂| = |1 + θ₀ τ (1 − x₁²)| at an endpoint of the x₁² range.
    """
    center = np.atleast_2d(np.asarray(center, dtype=float))
    half = np.asarray(half, dtype=float)
    if half.ndim == 1:
        half = np.broadcast_to(half, center.shape)
    a = half[..., 0]
    b = half[..., 1]
    c1 = center[..., 0]
    c2 = center[..., 1]

    corners = np.stack(
        [(c1 + s1 * a) * (c2 + s2 * b) for s1 in (-1.0, 1.0) for s2 in (-1.0, 1.0)],
        axis=-1,
    )
    j21 = tau * np.max(np.abs(1.0 + 2.0 * theta0 * corners), axis=-1)

    x1_abs_hi = np.maximum(np.abs(c1 - a), np.abs(c1 + a))
    contains_zero = (c1 - a <= 0.0) & (c1 + a >= 0.0)
    x1_abs_lo = np.where(contains_zero, 0.0, np.minimum(np.abs(c1 - a), np.abs(c1 + a)))
    lo_term = 1.0 + theta0 * tau * (1.0 - x1_abs_hi**2)
    hi_term = 1.0 + theta0 * tau * (1.0 - x1_abs_lo**2)
    j22 = np.maximum(np.abs(lo_term), np.abs(hi_term))

    fro = np.sqrt(1.0 + tau * tau + j21 * j21 + j22 * j22)
    radius = np.sqrt(a * a + b * b)
    out = fro * radius
    return out if out.shape else float(out)


_REGISTRY = {"vanderpol": make_vanderpol}


def make_nonlinear(name: str, **kwargs) -> NonlinearModel:
    """Instantiate a registered nonlinear model by name."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown nonlinear model {name!r}; registered: {sorted(_REGISTRY)}") from None
    return factory(**kwargs)
