"""Cubes, two-particle boxes and the box-separation classifier.

All cubes are closed and axis-parallel; distances between centres use the
sup-norm.  Intersection tests treat boundary contact as a nonempty
intersection.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

CASES = ("A", "B", "C", "D", "E")
SWAP_CASES = {"A": "C", "B": "D", "C": "A", "D": "B", "E": "E"}

# multiplier in the sufficiently-distant predicate
DEFAULT_DISTANCE_FACTOR = 8.0


class PreconditionError(ValueError):
    """Raised when an operation is called outside the regime it is valid in."""


def _as_point(p) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"point must be one-dimensional, got shape {arr.shape}")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True)
class Cube:
    center: tuple[float, ...]
    half_width: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + self.half_width

    @property
    def volume(self) -> float:
        return (2.0 * self.half_width) ** self.dimension

    def bounds(self) -> list[tuple[float, float]]:
        return [(c - self.half_width, c + self.half_width) for c in self.center]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.abs(x - np.asarray(self.center)) <= self.half_width))

    def intersects(self, other: "Cube") -> bool:
        if other.dimension != self.dimension:
            raise ValueError("dimension mismatch")
        gap = np.abs(np.asarray(self.center) - np.asarray(other.center))
        return bool(np.all(gap <= self.half_width + other.half_width))

    def to_json(self) -> dict:
        return {"center": list(self.center), "half_width": self.half_width}

    @classmethod
    def from_json(cls, obj: dict) -> "Cube":
        return cls(tuple(obj["center"]), obj["half_width"])


def make_cube(center, half_width: float) -> Cube:
    return Cube(_as_point(center), half_width)


def lattice_sites(cube: Cube) -> list[tuple[int, ...]]:
    """Integer points of the closed cube, lexicographically ordered."""
    axes = []
    for lo, hi in cube.bounds():
        # tolerate round-off right at integer endpoints
        a = math.ceil(lo - 1e-12)
        b = math.floor(hi + 1e-12)
        axes.append(range(a, b + 1))
    return [tuple(p) for p in itertools.product(*axes)]


@dataclass(frozen=True)
class TwoParticleBox:
    factor1: Cube
    factor2: Cube

    def __post_init__(self):
        if self.factor1.dimension != self.factor2.dimension:
            raise ValueError("both factors must share the same dimension")

    @classmethod
    def from_centers(cls, center1, center2, half_width1, half_width2) -> "TwoParticleBox":
        return cls(make_cube(center1, half_width1), make_cube(center2, half_width2))

    @property
    def dimension(self) -> int:
        return self.factor1.dimension

    @property
    def center(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        return (self.factor1.center, self.factor2.center)

    @property
    def half_widths(self) -> tuple[float, float]:
        return (self.factor1.half_width, self.factor2.half_width)

    @property
    def volume(self) -> float:
        return self.factor1.volume * self.factor2.volume

    def lattice_cardinality(self) -> int:
        return len(lattice_sites(self.factor1)) * len(lattice_sites(self.factor2))

    def to_json(self) -> dict:
        return {
            "center1": list(self.factor1.center),
            "center2": list(self.factor2.center),
            "half_width1": self.factor1.half_width,
            "half_width2": self.factor2.half_width,
            "dimension": self.dimension,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TwoParticleBox":
        box = cls.from_centers(obj["center1"], obj["center2"], obj["half_width1"], obj["half_width2"])
        if "dimension" in obj and int(obj["dimension"]) != box.dimension:
            raise ValueError(
                f"dimension field {obj['dimension']} does not match centres of dimension {box.dimension}"
            )
        return box


@dataclass(frozen=True)
class IntervalUnion:
    """Finite union of closed axis-parallel cubes."""

    members: tuple[Cube, ...] = field(default_factory=tuple)

    def contains(self, x) -> bool:
        return any(c.contains(x) for c in self.members)

    def intersects(self, other: "IntervalUnion | Cube") -> bool:
        others = other.members if isinstance(other, IntervalUnion) else (other,)
        return any(a.intersects(b) for a in self.members for b in others)

    def lattice_sites(self) -> list[tuple[int, ...]]:
        sites = set()
        for c in self.members:
            sites.update(lattice_sites(c))
        return sorted(sites)

    def __or__(self, other: "IntervalUnion") -> "IntervalUnion":
        return IntervalUnion(self.members + other.members)


def projection(box: TwoParticleBox, axis: int) -> Cube:
    if axis == 1:
        return box.factor1
    if axis == 2:
        return box.factor2
    raise ValueError(f"axis must be 1 or 2, got {axis}")


def shadow(box: TwoParticleBox) -> IntervalUnion:
    return IntervalUnion((box.factor1, box.factor2))


def enlarge(box: TwoParticleBox, R: float) -> TwoParticleBox:
    if R < 0:
        raise ValueError(f"enlargement must be nonnegative, got {R}")
    return TwoParticleBox(
        Cube(box.factor1.center, box.factor1.half_width + R),
        Cube(box.factor2.center, box.factor2.half_width + R),
    )


def enlarge_cube(cube: Cube, R: float) -> Cube:
    if R < 0:
        raise ValueError(f"enlargement must be nonnegative, got {R}")
    return Cube(cube.center, cube.half_width + R)


def reflect(u):
    """Swap the two particle coordinates of a configuration-space point."""
    u1, u2 = u
    return (u2, u1)


def _sup_distance(u, v) -> float:
    a = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)) for x in u])
    b = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)) for x in v])
    return float(np.max(np.abs(a - b)))


def separation_margin(box: TwoParticleBox, other: TwoParticleBox, R: float,
                      factor: float = DEFAULT_DISTANCE_FACTOR) -> tuple[float, float]:
    """Return (centre distance, threshold) of the sufficiently-distant test."""
    if box.dimension != other.dimension:
        raise ValueError(
            f"dimension mismatch: {box.dimension} vs {other.dimension}")
    dist = min(_sup_distance(box.center, other.center),
               _sup_distance(reflect(box.center), other.center))
    widths = box.half_widths + other.half_widths
    return dist, factor * max(w + R for w in widths)


def is_sufficiently_distant(box: TwoParticleBox, other: TwoParticleBox, R: float,
                            factor: float = DEFAULT_DISTANCE_FACTOR) -> bool:
    dist, threshold = separation_margin(box, other, R, factor)
    return dist > threshold


@dataclass(frozen=True)
class SeparationVerdict:
    cases: frozenset[str]

    @property
    def kind(self) -> str:
        return "completely_separated" if "E" in self.cases else "partially_separated_only"

    def to_json(self) -> dict:
        return {"cases": sorted(self.cases), "kind": self.kind}


def separation_cases(box: TwoParticleBox, other: TwoParticleBox, R: float) -> frozenset[str]:
    """Evaluate the five emptiness conditions on the R-enlarged boxes.

    No distance precondition is checked here; see classify_separation.
    """
    a = enlarge(box, R)
    b = enlarge(other, R)
    p1, p2 = a.factor1, a.factor2
    q1, q2 = b.factor1, b.factor2

    def clear(c: Cube, *rest: Cube) -> bool:
        return not any(c.intersects(r) for r in rest)

    cases = set()
    if clear(p1, p2, q1, q2):
        cases.add("A")
    if clear(p2, p1, q1, q2):
        cases.add("B")
    if clear(q1, p1, p2, q2):
        cases.add("C")
    if clear(q2, p1, p2, q1):
        cases.add("D")
    if not shadow(a).intersects(shadow(b)):
        cases.add("E")
    return frozenset(cases)


def classify_separation(box: TwoParticleBox, other: TwoParticleBox, R: float,
                        factor: float = DEFAULT_DISTANCE_FACTOR) -> SeparationVerdict:
    if not is_sufficiently_distant(box, other, R, factor):
        dist, threshold = separation_margin(box, other, R, factor)
        raise PreconditionError(
            f"boxes are not sufficiently distant: {dist:g} <= {threshold:g}")
    return SeparationVerdict(separation_cases(box, other, R))
