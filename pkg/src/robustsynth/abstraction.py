"""Finite abstraction of the nominal model by uniform gridding.

A bounded box of the state space is tiled by a uniform grid; cell centers are
the abstract states and a finite input sample set the abstract inputs.  Each
transition row integrates the nominal Gaussian kernel over the cells
(per-axis CDF differences, so a diagonal noise factor is required); all mass
falling outside the grid, plus entries pruned below a threshold, goes to an
absorbing non-accepting sink, keeping every row a probability row.

The discretization step carries its own certificate:

* linear dynamics with ‖A‖₂ < 1: coupling the nominal and abstract noise
  identically leaves the gap recursion e⁺ = A e + rounding, giving the
  invariant output bound ε₂ = ‖C‖₂ β / (1 − ‖A‖₂) with δ₂ = 0 (β is the cell
  half-diagonal);
* nonlinear dynamics: per-cell mean deviation ℓ(s, u) bounded through the
  Jacobian over the cell, coupled by the min-Gaussian construction, giving
  a per-(state, input) table δ₂ = 1 − 2Φ(−ℓ̃/2) with ε₂ = β · Lip(h).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr

from .certificates import SsrCertificate
from .models import LinearModel, NonlinearModel, spectral_norm

PRUNE_DEFAULT = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform cell partition of a bounded box, indexed in C order."""

    lo: np.ndarray
    hi: np.ndarray
    cells: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        cells = tuple(int(c) for c in self.cells)
        if lo.shape != hi.shape or len(cells) != lo.shape[0]:
            raise ValueError("bounds and cell counts must agree in dimension")
        if np.any(lo >= hi):
            raise ValueError("need lo < hi per axis")
        if any(c <= 0 for c in cells):
            raise ValueError("cell counts must be positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "cells", cells)

    @property
    def n(self) -> int:
        return self.lo.shape[0]

    @property
    def h(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.cells, dtype=float)

    @property
    def beta(self) -> float:
        """Cell half-diagonal: max distance from a point to its cell center."""
        return float(0.5 * np.linalg.norm(self.h))

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.cells))

    @cached_property
    def axis_edges(self) -> tuple:
        return tuple(
            np.linspace(self.lo[d], self.hi[d], self.cells[d] + 1) for d in range(self.n)
        )

    @cached_property
    def axis_centers(self) -> tuple:
        return tuple(0.5 * (e[:-1] + e[1:]) for e in self.axis_edges)

    @cached_property
    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axis_centers, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def point_to_index(self, x) -> np.ndarray:
        """Flat cell index of each point; -1 outside the box (or non-finite)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        safe = np.where(inside[:, None], x, self.lo)
        idx = np.floor((safe - self.lo) / self.h).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.cells) - 1)
        flat = np.ravel_multi_index(idx.T, self.cells)
        return np.where(inside, flat, -1)

    def index_to_center(self, flat) -> np.ndarray:
        return self.centers[np.asarray(flat, dtype=np.int64)]

    def lattice_indices(self, per_dim: Sequence[int]) -> np.ndarray:
        """Evenly spread cell indices, ``per_dim[d]`` picks along axis d."""
        picks = []
        for d, k in enumerate(per_dim):
            k = int(k)
            if not 1 <= k <= self.cells[d]:
                raise ValueError("lattice counts must lie in [1, cells]")
            picks.append(np.linspace(0, self.cells[d] - 1, k).round().astype(np.int64))
        mesh = np.meshgrid(*picks, indexing="ij")
        return np.ravel_multi_index([m.reshape(-1) for m in mesh], self.cells)


def build_grid(bounds, cells_per_dim) -> Grid:
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise ValueError("bounds must be a list of [lo, hi] pairs")
    return Grid(bounds[:, 0], bounds[:, 1], tuple(int(c) for c in cells_per_dim))


def input_sampling(bounds, counts) -> np.ndarray:
    """Uniform input sample grid including interval endpoints (midpoint if count is 1)."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    counts = [int(c) for c in np.atleast_1d(counts)]
    if len(counts) == 1 and bounds.shape[0] > 1:
        counts = counts * bounds.shape[0]
    if len(counts) != bounds.shape[0]:
        raise ValueError("one sample count per input dimension required")
    axes = []
    for (lo, hi), k in zip(bounds, counts):
        if k < 1:
            raise ValueError("sample counts must be >= 1")
        axes.append(np.array([0.5 * (lo + hi)]) if k == 1 else np.linspace(lo, hi, k))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass(frozen=True)
class AbstractMdp:
    """Finite MDP with sparse rows and a terminal sink state (index ``ns``).

    Transition rows are stored as one CSR structure over row index
    u · (ns + 1) + s; columns run over the ns cells plus the sink.
    """

    ns: int
    inputs: np.ndarray
    data: np.ndarray
    indices: np.ndarray
    indptr: np.ndarray
    outputs: np.ndarray
    grid: Optional[Grid] = None

    @property
    def nu(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_total(self) -> int:
        return self.ns + 1

    @property
    def sink(self) -> int:
        return self.ns

    @property
    def nnz(self) -> int:
        return int(self.data.shape[0])

    def row(self, s: int, u: int):
        r = u * self.n_total + s
        lo, hi = self.indptr[r], self.indptr[r + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    @cached_property
    def _csr_per_input(self) -> tuple:
        full = sp.csr_matrix(
            (self.data, self.indices, self.indptr),
            shape=(self.nu * self.n_total, self.n_total),
        )
        return tuple(
            full[u * self.n_total : (u + 1) * self.n_total] for u in range(self.nu)
        )

    def csr_for_input(self, u: int) -> sp.csr_matrix:
        return self._csr_per_input[u]

    def row_sums(self) -> np.ndarray:
        sums = np.add.reduceat(self.data, self.indptr[:-1])
        sums[self.indptr[:-1] == self.indptr[1:]] = 0.0
        return sums.reshape(self.nu, self.n_total)

    @classmethod
    def from_dense(cls, dense, inputs, outputs, grid: Optional[Grid] = None) -> "AbstractMdp":
        """Build from a dense (nu, ns+1, ns+1) array of probability rows (tests)."""
        dense = np.asarray(dense, dtype=float)
        nu, n_total, _ = dense.shape
        rows = dense.reshape(nu * n_total, n_total)
        csr = sp.csr_matrix(rows)
        return cls(
            ns=n_total - 1,
            inputs=np.atleast_2d(np.asarray(inputs, dtype=float)),
            data=csr.data.astype(np.float64),
            indices=csr.indices.astype(np.int32),
            indptr=csr.indptr.astype(np.int64),
            outputs=np.atleast_2d(np.asarray(outputs, dtype=float)),
            grid=grid,
        )


def _require_diagonal(R: np.ndarray) -> np.ndarray:
    diag = np.diag(R)
    if not np.all(R == np.diag(diag)) or np.any(diag <= 0):
        raise ValueError(
            "grid abstraction requires a diagonal noise factor with positive entries"
        )
    return diag


def _build_rows(means_per_input, grid: Grid, r_diag, prune: float):
    """CSR rows (u-major) of per-cell Gaussian masses with sink assignment."""
    ns = grid.num_cells
    n_total = ns + 1
    chunks_idx = []
    chunks_val = []
    lengths = []
    for means in means_per_input:
        axis_probs = []
        for d in range(grid.n):
            z = (grid.axis_edges[d][None, :] - means[:, d : d + 1]) / r_diag[d]
            cdf = ndtr(z)
            axis_probs.append(np.diff(cdf, axis=1))
        for s in range(ns):
            cell_mass = reduce(np.multiply.outer, (axis_probs[d][s] for d in range(grid.n)))
            flat = cell_mass.reshape(-1)
            keep = np.flatnonzero(flat >= prune)
            vals = flat[keep]
            kept = float(vals.sum())
            cols = np.append(keep.astype(np.int32), np.int32(ns))
            vals = np.append(vals, max(0.0, 1.0 - kept))
            chunks_idx.append(cols)
            chunks_val.append(vals)
            lengths.append(len(cols))
        # absorbing sink row
        chunks_idx.append(np.array([ns], dtype=np.int32))
        chunks_val.append(np.array([1.0]))
        lengths.append(1)

    indptr = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    return (
        np.concatenate(chunks_val).astype(np.float64),
        np.concatenate(chunks_idx).astype(np.int32),
        indptr,
        n_total,
    )


def linear_abstraction_certificate(model: LinearModel, grid: Grid) -> SsrCertificate:
    """(ε₂, δ₂) for gridding a contractive linear nominal model.

    Identical noise coupling gives the gap recursion e⁺ = A e + rounding with
    ‖rounding‖ ≤ β, so ‖x̂ − center‖ ≤ β/(1 − ‖A‖₂) is invariant; δ₂ = 0.
    For ‖A‖₂ ≥ 1 the certificate is returned marked invalid.
    """
    norm_a = model.norm_A
    beta = grid.beta
    if norm_a < 1.0:
        bound = beta / (1.0 - norm_a)
        return SsrCertificate(
            epsilon=spectral_norm(model.C) * bound,
            delta=0.0,
            relation=f"grid cell tracking: |x_hat - center| <= {bound:.6g}",
            source="abstraction",
            target="nominal",
            provenance=("linear grid contraction",),
        )
    return SsrCertificate(
        epsilon=math.inf,
        delta=0.0,
        relation="grid cell tracking (unavailable: |A| >= 1)",
        source="abstraction",
        target="nominal",
        provenance=("linear grid contraction",),
        valid=False,
    )


def abstract_linear(
    model: LinearModel,
    grid: Grid,
    inputs,
    prune: float = PRUNE_DEFAULT,
):
    """Grid the linear nominal model; returns (AbstractMdp, SsrCertificate)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != model.m:
        raise ValueError("input samples do not match the model input dimension")
    if grid.n != model.n:
        raise ValueError("grid dimension does not match the model state dimension")
    r_diag = _require_diagonal(model.R)
    centers = grid.centers
    means_per_input = [centers @ model.A.T + model.B @ u for u in inputs]
    data, indices, indptr, _ = _build_rows(means_per_input, grid, r_diag, prune)
    mdp = AbstractMdp(
        ns=grid.num_cells,
        inputs=inputs,
        data=data,
        indices=indices,
        indptr=indptr,
        outputs=centers @ model.C.T,
        grid=grid,
    )
    return mdp, linear_abstraction_certificate(model, grid)


def abstract_nonlinear(
    model: NonlinearModel,
    grid: Grid,
    inputs,
    prune: float = PRUNE_DEFAULT,
):
    """Grid a nonlinear nominal model; returns (AbstractMdp, SsrCertificate).

    δ₂(s, u) couples N(f(x, u; θ₀), RRᵀ) for x in cell(s) against the cell
    center through the min-Gaussian construction, with the mean gap bounded by
    the model's per-cell Jacobian bound.
    """
    if model.cell_deviation_bound is None:
        raise ValueError(f"model {model.name!r} provides no per-cell deviation bound")
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != model.m:
        raise ValueError("input samples do not match the model input dimension")
    r_diag = _require_diagonal(model.R)
    centers = grid.centers
    means_per_input = [model.dynamics(centers, u, model.theta0) for u in inputs]
    data, indices, indptr, _ = _build_rows(means_per_input, grid, r_diag, prune)

    half = 0.5 * grid.h
    scale = model.whiten_scale()
    delta = np.empty((grid.num_cells, inputs.shape[0]))
    for j, u in enumerate(inputs):
        dev = np.asarray(model.cell_deviation_bound(centers, half, u), dtype=float)
        delta[:, j] = 1.0 - 2.0 * ndtr(-0.5 * dev * scale)

    cert = SsrCertificate(
        epsilon=grid.beta * model.output_lipschitz,
        delta=delta,
        relation="grid cell membership: x_hat in cell(s)",
        source="abstraction",
        target="nominal",
        provenance=("nonlinear per-cell deviation coupling",),
    )
    mdp = AbstractMdp(
        ns=grid.num_cells,
        inputs=inputs,
        data=data,
        indices=indices,
        indptr=indptr,
        outputs=np.atleast_2d(model.output(centers)),
        grid=grid,
    )
    return mdp, cert
