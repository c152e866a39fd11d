"""Finite-difference Dirichlet Hamiltonians on one- and two-particle boxes.

The kinetic term -sum_j (1/(2 m_j)) Delta_j uses the standard second-order
stencil on the interior nodes of a uniform grid; boundary nodes are dropped
(Dirichlet).  Nodes are ordered C-style with particle 1's axes first, so a
two-particle grid is the tensor product of the two one-particle grids.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .geometry import Cube, TwoParticleBox, enlarge_cube, lattice_sites
from .random_field import AmplitudeEnsemble, BumpProfile, FieldRealization, bump_matrix

INTERACTION_KINDS = ("zero", "square_well", "smoothed_core")


@dataclass(frozen=True)
class Grid:
    box: Cube | TwoParticleBox
    spacing: float
    axes: tuple[np.ndarray, ...] = field(compare=False, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def particles(self) -> int:
        return 2 if isinstance(self.box, TwoParticleBox) else 1

    @property
    def dimension(self) -> int:
        """Dimension d of one particle's space."""
        return len(self.axes) // self.particles

    def particle_points(self, j: int = 1) -> np.ndarray:
        """Grid points of particle j as an (n_j, d) array in C order."""
        d = self.dimension
        ax = self.axes[(j - 1) * d: j * d]
        mesh = np.meshgrid(*ax, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_coordinates(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def _cubes(box) -> tuple[Cube, ...]:
    return (box.factor1, box.factor2) if isinstance(box, TwoParticleBox) else (box,)


def build_grid(box: Cube | TwoParticleBox, h: float) -> Grid:
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    axes = []
    for cube in _cubes(box):
        edge = 2.0 * cube.half_width
        ratio = edge / h
        m = int(round(ratio))
        if abs(ratio - m) > 1e-12 * max(1.0, ratio):
            raise ValueError(f"spacing {h} does not divide edge length {edge}")
        if m < 2:
            raise ValueError(f"spacing {h} too coarse for edge length {edge}")
        for c in cube.center:
            axes.append(c - cube.half_width + h * np.arange(1, m))
    return Grid(box, float(h), tuple(axes))


@dataclass(frozen=True)
class InteractionSpec:
    kind: str = "zero"
    strength: float = 0.0
    range: float = 1.0

    def __post_init__(self):
        if self.kind not in INTERACTION_KINDS:
            raise ValueError(f"unknown interaction kind {self.kind!r}")
        if not self.range > 0:
            raise ValueError("interaction range must be positive")

    def to_json(self) -> dict:
        return {"kind": self.kind, "strength": self.strength, "range": self.range}


def eval_interaction(spec: InteractionSpec, x1, x2) -> np.ndarray | float:
    """Bounded pair interaction as a function of the Euclidean separation."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.ndim == 0:
        x1 = x1[None]
    if x2.ndim == 0:
        x2 = x2[None]
    r = np.linalg.norm(x1 - x2, axis=-1)
    if spec.kind == "zero":
        out = np.zeros_like(r)
    elif spec.kind == "square_well":
        out = np.where(r <= spec.range, spec.strength, 0.0)
    else:
        out = spec.strength * np.exp(-(r / spec.range) ** 2)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class HamiltonianSpec:
    box: Cube | TwoParticleBox
    spacing: float
    profile: BumpProfile = BumpProfile()
    ensemble: AmplitudeEnsemble = AmplitudeEnsemble()
    interaction: InteractionSpec = InteractionSpec()
    masses: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if any(m <= 0 for m in self.masses):
            raise ValueError("masses must be positive")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def particles(self) -> int:
        return 2 if isinstance(self.box, TwoParticleBox) else 1

    def required_sites(self) -> list[tuple[int, ...]]:
        """Lattice sites whose bumps can reach the box's projections."""
        sites = set()
        for cube in _cubes(self.box):
            sites.update(lattice_sites(enlarge_cube(cube, self.profile.range)))
        return sorted(sites)


@dataclass(frozen=True)
class DiscreteHamiltonian:
    matrix: sp.csr_matrix
    potential: np.ndarray
    grid: Grid | None = None
    provenance: tuple | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def bandwidth(self) -> int:
        coo = self.matrix.tocoo()
        return int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0

    def lower_bound(self) -> float:
        """Gershgorin lower bound on the spectrum."""
        m = self.matrix
        diag = m.diagonal()
        off = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(diag)
        return float(np.min(diag - off))

    def to_banded(self) -> np.ndarray:
        """Lower banded storage as expected by scipy.linalg.eig_banded."""
        b = self.bandwidth
        ab = np.zeros((b + 1, self.n))
        for i in range(b + 1):
            ab[i, : self.n - i] = self.matrix.diagonal(-i)
        return ab

    def to_coo_csv(self, path) -> None:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "value"])
            for k in order:
                w.writerow([int(coo.row[k]), int(coo.col[k]), repr(float(coo.data[k]))])

    @classmethod
    def from_matrix(cls, matrix) -> "DiscreteHamiltonian":
        m = sp.csr_matrix(matrix, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ValueError("matrix must be square")
        asym = m - m.T
        if asym.nnz and abs(asym).max() > 0:
            raise ValueError("matrix must be symmetric")
        return cls(m, m.diagonal().copy())


def _laplacian_1d(n: int, coeff: float) -> sp.csr_matrix:
    off = -coeff * np.ones(n - 1)
    return sp.diags([off, 2.0 * coeff * np.ones(n), off], [-1, 0, 1], format="csr")


def kinetic_matrix(grid: Grid, masses=(1.0, 1.0)) -> sp.csr_matrix:
    """-sum_j (1/(2 m_j)) Delta_j on the interior nodes (Kronecker sum)."""
    shape = grid.shape
    d = grid.dimension
    total = sp.csr_matrix((grid.size, grid.size))
    for ax, n in enumerate(shape):
        mass = masses[ax // d]
        coeff = 1.0 / (2.0 * mass * grid.spacing ** 2)
        left = int(np.prod(shape[:ax]))
        right = int(np.prod(shape[ax + 1:]))
        term = sp.kron(sp.kron(sp.identity(left), _laplacian_1d(n, coeff)), sp.identity(right))
        total = total + term
    return total.tocsr()


class _Stencil:
    """Per-(spec, sites) cache of everything that does not depend on amplitudes."""

    def __init__(self, spec: HamiltonianSpec, sites: tuple):
        self.grid = build_grid(spec.box, spec.spacing)
        self.kinetic = kinetic_matrix(self.grid, spec.masses)
        site_arr = np.asarray(sites, dtype=float)
        self.bumps = [bump_matrix(spec.profile, self.grid.particle_points(j), site_arr)
                      for j in range(1, self.grid.particles + 1)]
        if self.grid.particles == 2:
            p1 = self.grid.particle_points(1)
            p2 = self.grid.particle_points(2)
            self.interaction = eval_interaction(
                spec.interaction, p1[:, None, :], p2[None, :, :]).ravel()
        else:
            self.interaction = np.zeros(self.grid.size)

    def potential(self, amplitudes: np.ndarray) -> np.ndarray:
        v = [b @ amplitudes for b in self.bumps]
        if len(v) == 1:
            return v[0] + self.interaction
        return (v[0][:, None] + v[1][None, :]).ravel() + self.interaction


@functools.lru_cache(maxsize=32)
def _stencil(spec: HamiltonianSpec, sites: tuple) -> _Stencil:
    return _Stencil(spec, sites)


def assemble(spec: HamiltonianSpec, realization: FieldRealization) -> DiscreteHamiltonian:
    missing = set(spec.required_sites()) - set(realization.sites)
    if missing:
        example = sorted(missing)[:3]
        raise ValueError(
            f"realization does not cover {len(missing)} required sites, e.g. {example}")
    st = _stencil(spec, realization.sites)
    pot = st.potential(realization.amplitudes)
    matrix = (st.kinetic + sp.diags(pot, format="csr")).tocsr()
    return DiscreteHamiltonian(matrix, pot, st.grid, realization.provenance)


def apply(op: DiscreteHamiltonian, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (op.n,):
        raise ValueError(f"vector of length {op.n} expected, got shape {v.shape}")
    return op.matrix @ v
