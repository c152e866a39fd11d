"""Ordered spectra, eigenvalue counts and Weyl reference counts.

Iterative solves use ARPACK's implicitly restarted Lanczos in shift-invert
mode.  Every returned eigenvalue carries its residual; solves that miss the
residual contract raise SolverError with the partial spectrum attached.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .geometry import Cube, TwoParticleBox
from .operator import DiscreteHamiltonian

DENSE_LIMIT = 64


class SolverError(RuntimeError):
    def __init__(self, message: str, partial: "Spectrum | None" = None):
        super().__init__(message)
        self.partial = partial


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    count_requested: int
    tol: float
    converged: np.ndarray
    residuals: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.eigenvalues, kind="stable")
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)[order]
        self.converged = np.asarray(self.converged, dtype=bool)[order]
        self.residuals = np.asarray(self.residuals, dtype=float)[order]

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged)) and len(self.eigenvalues) == self.count_requested

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "eigenvalue", "residual", "converged"])
            for k, (lam, res, ok) in enumerate(zip(self.eigenvalues, self.residuals, self.converged)):
                w.writerow([k, repr(float(lam)), repr(float(res)), int(ok)])


@dataclass
class CountReport:
    threshold: float
    count: int
    weyl_reference: float | None = None


@dataclass
class IntervalCount:
    count: int
    near_boundary: bool


def dense_eigenvalues(op: DiscreteHamiltonian) -> np.ndarray:
    """All eigenvalues from a dense symmetric solve; the small-instance oracle."""
    return np.linalg.eigvalsh(op.matrix.toarray())


def banded_eigenvalues(op: DiscreteHamiltonian, lo: float, hi: float) -> np.ndarray:
    """Eigenvalues in (lo, hi] from LAPACK's banded symmetric solver."""
    return sla.eig_banded(op.to_banded(), lower=True, eigvals_only=True,
                          select="v", select_range=(lo, hi))


def _residuals(op: DiscreteHamiltonian, vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    r = op.matrix @ vecs - vecs * vals[None, :]
    return np.linalg.norm(r, axis=0) / np.linalg.norm(vecs, axis=0)


def _dense_spectrum(op, k, tol) -> Spectrum:
    vals, vecs = np.linalg.eigh(op.matrix.toarray())
    vals, vecs = vals[:k], vecs[:, :k]
    res = _residuals(op, vals, vecs)
    return Spectrum(vals, k, tol, res <= tol * np.maximum(1.0, np.abs(vals)), res)


def _shift_invert(op, k, sigma, tol, maxiter):
    """Returns (eigenvalues, eigenvectors, shift actually used)."""
    A = op.matrix.tocsc()
    # ARPACK's default start vector comes from global state; fix it so a
    # result never depends on what ran before it
    v0 = np.random.default_rng(A.shape[0]).standard_normal(A.shape[0])
    for attempt in range(4):
        try:
            vals, vecs = eigsh(A, k=k, sigma=sigma, which="LM", v0=v0, tol=tol * 1e-3, maxiter=maxiter)
        except ArpackNoConvergence as exc:
            vals, vecs = exc.eigenvalues, exc.eigenvectors
        except RuntimeError:
            # shift landed on an eigenvalue: the factorization is singular
            sigma += 1e-8 * (1.0 + abs(sigma)) * (attempt + 1)
            continue
        return np.asarray(vals), np.asarray(vecs), sigma
    raise SolverError(f"could not factor H - sigma I near sigma={sigma}")


def lowest_eigenvalues(op: DiscreteHamiltonian, k: int, tol: float = 1e-10,
                       method: str = "auto", maxiter: int | None = None) -> Spectrum:
    """The k smallest eigenvalues, each with ||Hv - lv|| <= tol * max(1, |l|)."""
    n = op.n
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if method not in ("auto", "lanczos", "dense"):
        raise ValueError(f"unknown method {method!r}")
    if method == "dense" or (method == "auto" and n <= DENSE_LIMIT) or k >= n - 1:
        spec = _dense_spectrum(op, k, tol)
    else:
        # below the Gershgorin bound, the k eigenvalues nearest sigma are the lowest
        sigma = op.lower_bound() - 1.0
        vals, vecs, _ = _shift_invert(op, k, sigma, tol, maxiter)
        res = _residuals(op, vals, vecs) if len(vals) else np.zeros(0)
        ok = res <= tol * np.maximum(1.0, np.abs(vals))
        spec = Spectrum(vals, k, tol, ok, res)
    if not spec.all_converged:
        raise SolverError(
            f"{int(np.sum(spec.converged))} of {k} eigenvalues converged", spec)
    return spec


def eigenvalues_in_window(op: DiscreteHamiltonian, lo: float, hi: float,
                          tol: float = 1e-10, k0: int = 6) -> np.ndarray:
    """All eigenvalues in the closed window [lo, hi], sorted.

    Shift-invert Lanczos about the window centre; k grows until the
    farthest returned eigenvalue lies outside the window, which certifies
    that nothing inside was skipped.
    """
    if hi < lo:
        raise ValueError("empty window")
    n = op.n
    sigma = 0.5 * (lo + hi)
    k = k0
    while True:
        if n <= DENSE_LIMIT or k >= n // 3:
            vals = dense_eigenvalues(op)
            break
        vals, vecs, used = _shift_invert(op, k, sigma, tol, None)
        if len(vals) < k:
            raise SolverError(f"shift-invert returned {len(vals)} of {k} eigenvalues")
        res = _residuals(op, vals, vecs)
        if np.any(res > tol * np.maximum(1.0, np.abs(vals))):
            raise SolverError("window eigenvalues failed the residual check")
        if np.max(np.abs(vals - used)) > max(hi - used, used - lo):
            break
        k *= 2
    vals = np.sort(vals)
    return vals[(vals >= lo) & (vals <= hi)]


def count_below(op: DiscreteHamiltonian, E: float, tol: float = 1e-10, box=None,
                masses=(1.0, 1.0)) -> CountReport:
    """Number of eigenvalues <= E, with the Weyl reference when a box is given."""
    floor = op.lower_bound() - 1.0
    count = 0 if E < floor else len(eigenvalues_in_window(op, floor, E, tol))
    ref = weyl_reference(E, box, masses) if box is not None else None
    return CountReport(E, count, ref)


def count_in_interval(op: DiscreteHamiltonian, a: float, b: float, tol: float = 1e-10) -> IntervalCount:
    """Eigenvalues in the closed interval [a, b] as N(b) - N(a-)."""
    if a > b:
        raise ValueError("interval must satisfy a <= b")
    floor = op.lower_bound() - 1.0
    if b < floor:
        return IntervalCount(0, False)
    lo = min(floor, a - tol)
    vals = eigenvalues_in_window(op, lo, b + tol, tol)
    below_b = int(np.sum(vals <= b))
    below_a = int(np.sum(vals < a))
    near = bool(np.any(np.abs(vals - a) <= tol) or np.any(np.abs(vals - b) <= tol))
    return IntervalCount(below_b - below_a, near)


def unit_ball_volume(D: int) -> float:
    return math.pi ** (D / 2) / math.gamma(D / 2 + 1)


def weyl_reference(E: float, box: Cube | TwoParticleBox, masses=(1.0, 1.0)) -> float:
    """Leading Weyl term for -sum_j (1/(2 m_j)) Delta_j with Dirichlet walls."""
    if E <= 0:
        return 0.0
    cubes = (box.factor1, box.factor2) if isinstance(box, TwoParticleBox) else (box,)
    d = cubes[0].dimension
    D = d * len(cubes)
    volume = float(np.prod([c.volume for c in cubes]))
    mass_factor = float(np.prod([masses[j] ** (d / 2) for j in range(len(cubes))]))
    return unit_ball_volume(D) * (2.0 * E) ** (D / 2) * mass_factor * volume / (2.0 * math.pi) ** D


def fit_count_exponent(energies, counts) -> float:
    """Log-log slope of N(E) against E (the Weyl exponent D/2 when asymptotic)."""
    e = np.log(np.asarray(energies, dtype=float))
    c = np.log(np.asarray(counts, dtype=float))
    return float(np.polyfit(e, c, 1)[0])
