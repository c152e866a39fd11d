"""Alloy-type random potentials on Z^d.

A potential is V(x) = sum_s V_s * phi(x - s): random amplitudes V_s attached
to lattice sites, spread out by a single nonnegative, compactly supported
bump profile phi.  Two-particle potentials add the one-particle potential at
each particle position.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .geometry import Cube, lattice_sites

BUMP_KINDS = ("indicator", "tent", "smooth_compact")
ENSEMBLE_KINDS = ("iid_uniform", "iid_bounded_density", "markov_clipped")

COVERING_TOL = 1e-12


def trial_rng(master_seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one trial; depends only on its arguments."""
    return np.random.default_rng([int(master_seed), int(stream), int(trial)])


# -- bump profiles ---------------------------------------------------------

@dataclass(frozen=True)
class BumpProfile:
    kind: str = "tent"
    range: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in BUMP_KINDS:
            raise ValueError(f"unknown bump kind {self.kind!r}; expected one of {BUMP_KINDS}")
        if not self.range > 0:
            raise ValueError("bump range must be positive")
        if not self.scale > 0:
            raise ValueError("bump scale must be positive")

    @property
    def sup(self) -> float:
        return self.scale

    def to_json(self) -> dict:
        return {"kind": self.kind, "range": self.range, "scale": self.scale}


def eval_bump(profile: BumpProfile, y) -> np.ndarray | float:
    """Evaluate the profile at displacement(s) y of shape (..., d).

    A scalar or 1-d input of length d is treated as a single point.
    """
    y = np.asarray(y, dtype=float)
    scalar = y.ndim <= 1
    if y.ndim == 0:
        y = y.reshape(1, 1)
    elif y.ndim == 1:
        y = y.reshape(1, -1)
    R = profile.range
    a = np.abs(y) / R
    if profile.kind == "indicator":
        val = np.all(a <= 1.0, axis=-1).astype(float)
    elif profile.kind == "tent":
        val = np.prod(np.clip(1.0 - a, 0.0, None), axis=-1)
    else:
        inside = a < 1.0
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            factor = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - np.where(inside, a, 0.0) ** 2)), 0.0)
        val = np.prod(factor, axis=-1)
    val = profile.scale * val
    return float(val[0]) if scalar else val


def bump_matrix(profile: BumpProfile, points, sites) -> np.ndarray:
    """Matrix B[i, k] = phi(points[i] - sites[k])."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    out = np.empty((points.shape[0], sites.shape[0]))
    chunk = max(1, 2_000_000 // max(1, sites.size))
    for i in range(0, points.shape[0], chunk):
        diff = points[i:i + chunk, None, :] - sites[None, :, :]
        out[i:i + chunk] = eval_bump(profile, diff)
    return out


@dataclass
class CoveringReport:
    min_sum: float
    max_sum: float
    covering_holds: bool
    certified: bool
    samples: int


def _sample_axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(np.floor((hi - lo) / step + 1e-9))
    pts = [lo + step * np.arange(n + 1), [hi]]
    ints = np.arange(np.ceil(lo), np.floor(hi) + 1)
    halves = np.arange(np.ceil(lo - 0.5), np.floor(hi - 0.5) + 1) + 0.5
    pts += [ints, halves]
    pts = np.concatenate(pts)
    return np.unique(pts[(pts >= lo) & (pts <= hi)])


def verify_covering(profile: BumpProfile, cube: Cube, grid_step: float = 0.1) -> CoveringReport:
    """Sample the in-box bump sum over points of the cube.

    The lower bound (covering) is judged against 1; the maximum is reported
    for the boundedness condition.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    axes = [_sample_axis(lo, hi, grid_step) for lo, hi in cube.bounds()]
    points = np.array(list(itertools.product(*axes)), dtype=float)
    sites = np.array(lattice_sites(cube), dtype=float).reshape(-1, cube.dimension)
    if sites.size == 0:
        sums = np.zeros(len(points))
    else:
        sums = bump_matrix(profile, points, sites).sum(axis=1)
    min_sum = float(sums.min())
    integer_box = all(float(lo).is_integer() and float(hi).is_integer() for lo, hi in cube.bounds())
    certified = integer_box and profile.scale >= 1.0 and (
        (profile.kind == "tent" and profile.range == 1.0)
        or (profile.kind == "indicator" and profile.range >= 0.5)
    )
    return CoveringReport(
        min_sum=min_sum,
        max_sum=float(sums.max()),
        covering_holds=min_sum >= 1.0 - COVERING_TOL,
        certified=bool(certified),
        samples=len(points),
    )


# -- amplitude ensembles ---------------------------------------------------

@dataclass(frozen=True)
class AmplitudeEnsemble:
    """Law of the site amplitudes.

    Amplitudes live on [0, M] (or [-M, M] when ``signed``).  For
    ``markov_clipped`` the sites are visited in lexicographic order and each
    amplitude is the previous one times ``coupling`` plus an innovation,
    wrapped back onto the amplitude range.  The innovation density is
    piecewise constant with relative tilt ``tilt`` between the two halves
    of the range, which keeps every two-sided conditional density bounded.
    """

    kind: str = "iid_uniform"
    bound: float = 1.0
    signed: bool = False
    shape: float = 2.0
    coupling: float = 0.0
    tilt: float = 0.5

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}; expected one of {ENSEMBLE_KINDS}")
        if self.bound < 0 or (self.bound == 0 and self.kind != "iid_uniform"):
            raise ValueError("amplitude bound must be positive")
        if self.kind == "iid_bounded_density" and self.shape < 1:
            raise ValueError("beta shape must be >= 1 for a bounded density")
        if not 0 <= self.coupling < 1:
            raise ValueError("coupling must lie in [0, 1)")
        if not 0 <= self.tilt < 1:
            raise ValueError("tilt must lie in [0, 1)")

    @property
    def low(self) -> float:
        return -self.bound if self.signed else 0.0

    @property
    def width(self) -> float:
        return 2.0 * self.bound if self.signed else self.bound

    @property
    def innovation_density_max(self) -> float:
        return (1.0 + self.tilt) / self.width

    @property
    def density_bound(self) -> float:
        """Uniform bound on the conditional single-site densities."""
        if self.width == 0:
            return float("inf")
        if self.kind == "iid_uniform":
            return 1.0 / self.width
        if self.kind == "iid_bounded_density":
            return float(stats.beta.pdf(0.5, self.shape, self.shape)) / self.width
        if self.coupling == 0:
            return self.innovation_density_max
        # both neighbours condition: g_max^2 / (g_min^2 * width)
        return ((1.0 + self.tilt) / (1.0 - self.tilt)) ** 2 / self.width

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "bound": self.bound, "signed": self.signed,
            "shape": self.shape, "coupling": self.coupling, "tilt": self.tilt,
        }


def _innovation_from_uniform(u: np.ndarray, ens: AmplitudeEnsemble) -> np.ndarray:
    """Inverse CDF of the tilted piecewise-constant innovation on [0, width)."""
    k, w = ens.tilt, ens.width
    split = 0.5 * (1.0 + k)
    lower = u / (1.0 + k) * w
    upper = 0.5 * w + (u - split) / (1.0 - k) * w
    return np.where(u < split, lower, upper)


def _innovation_density(x: np.ndarray, ens: AmplitudeEnsemble) -> np.ndarray:
    w = ens.width
    x = np.mod(x, w)
    return np.where(x < 0.5 * w, (1.0 + ens.tilt) / w, (1.0 - ens.tilt) / w)


def sample_innovations(ens: AmplitudeEnsemble, n: int, rng: np.random.Generator) -> np.ndarray:
    return _innovation_from_uniform(rng.random(n), ens)


def _draw(ens: AmplitudeEnsemble, n: int, rng: np.random.Generator) -> np.ndarray:
    if ens.kind == "iid_uniform":
        return ens.low + ens.width * rng.random(n)
    if ens.kind == "iid_bounded_density":
        return ens.low + ens.width * rng.beta(ens.shape, ens.shape, size=n)
    xi = sample_innovations(ens, n, rng)
    if ens.coupling == 0:
        w = xi
    else:
        w = np.empty(n)
        prev = 0.0
        for i in range(n):
            prev = (ens.coupling * prev + xi[i]) % ens.width
            w[i] = prev
    return np.clip(ens.low + w, -ens.bound, ens.bound)


@dataclass
class FieldRealization:
    sites: tuple[tuple[int, ...], ...]
    amplitudes: np.ndarray
    master_seed: int | None = None
    trial: int | None = None
    stream: int = 0
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.sites = tuple(tuple(int(c) for c in s) for s in self.sites)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.amplitudes.shape != (len(self.sites),):
            raise ValueError("one amplitude per site required")

    @property
    def provenance(self) -> tuple:
        return (self.master_seed, self.stream, self.trial)

    @property
    def dimension(self) -> int:
        return len(self.sites[0])

    def index(self) -> dict:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.sites)}
        return self._index

    def amplitude_map(self) -> dict:
        return dict(zip(self.sites, self.amplitudes.tolist()))

    def shifted(self, t: float, subset=None) -> "FieldRealization":
        """Copy with t added to the amplitudes on ``subset`` (all sites if None)."""
        amps = self.amplitudes.copy()
        if subset is None:
            amps += t
        else:
            idx = self.index()
            for s in subset:
                s = tuple(int(c) for c in s)
                if s in idx:
                    amps[idx[s]] += t
        return FieldRealization(self.sites, amps, self.master_seed, self.trial, self.stream)

    def to_csv(self, path) -> None:
        path = Path(path)
        d = self.dimension
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"s{i + 1}" for i in range(d)] + ["amplitude"])
            for s, a in zip(self.sites, self.amplitudes):
                w.writerow(list(s) + [repr(float(a))])


def sample_amplitudes(ens: AmplitudeEnsemble, sites, master_seed: int, trial: int,
                      stream: int = 0) -> FieldRealization:
    sites = sorted(tuple(int(c) for c in s) for s in sites)
    if not sites:
        raise ValueError("at least one site is required")
    rng = trial_rng(master_seed, trial, stream)
    amps = _draw(ens, len(sites), rng)
    return FieldRealization(tuple(sites), amps, master_seed, trial, stream)


def eval_potential_1p(realization: FieldRealization, profile: BumpProfile, x) -> np.ndarray | float:
    """V(x) = sum over sites of amplitude * bump(x - s).

    Only sites carried by the realization contribute; callers must ensure
    every site within the bump range of x is present.
    """
    x = np.asarray(x, dtype=float)
    d = realization.dimension
    # a scalar or a length-d vector is one point; otherwise (..., d)
    scalar = x.ndim <= 1
    pts = x.reshape(-1, d)
    sites = np.asarray(realization.sites, dtype=float)
    vals = bump_matrix(profile, pts, sites) @ realization.amplitudes
    return float(vals[0]) if scalar else vals.reshape(x.shape[:-1])


def eval_potential_2p(realization: FieldRealization, profile: BumpProfile, x1, x2):
    return eval_potential_1p(realization, profile, x1) + eval_potential_1p(realization, profile, x2)


# -- modulus of continuity -------------------------------------------------

@dataclass
class NuEstimate:
    epsilon: float
    value: float
    method: str
    ci: tuple[float, float] | None = None
    note: str = ""


def _check_epsilon(epsilon: float) -> None:
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")


def nu_value(ens: AmplitudeEnsemble, epsilon: float) -> float:
    """Analytic bound on the modulus of continuity, without range checks."""
    if ens.width == 0:
        return 1.0 if epsilon >= 0 else 0.0
    if ens.kind == "iid_uniform":
        return min(epsilon / ens.width, 1.0)
    return min(ens.density_bound * epsilon, 1.0)


def nu_bound(ens: AmplitudeEnsemble, epsilon: float) -> NuEstimate:
    _check_epsilon(epsilon)
    return NuEstimate(epsilon, nu_value(ens, epsilon), "analytic")


def clopper_pearson(hits: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    ci = stats.binomtest(int(hits), int(trials)).proportion_ci(confidence_level=level, method="exact")
    return (float(ci.low), float(ci.high))


def _window_counts(samples: np.ndarray, starts: np.ndarray, epsilon: float) -> np.ndarray:
    s = np.sort(samples)
    return np.searchsorted(s, starts + epsilon, side="right") - np.searchsorted(s, starts, side="left")


def _conditional_samples(ens, left, right, n, rng):
    """Rejection sampler for a middle chain site given both neighbours."""
    out = []
    gmax = ens.innovation_density_max
    while sum(len(o) for o in out) < n:
        m = 2 * n
        prop = (ens.coupling * left + sample_innovations(ens, m, rng)) % ens.width
        accept = rng.random(m) * gmax <= _innovation_density(right - ens.coupling * prop, ens)
        out.append(prop[accept])
    return ens.low + np.concatenate(out)[:n]


def estimate_nu(ens: AmplitudeEnsemble, epsilon: float, trials: int = 100_000, seed: int = 0,
                grid_points: int = 200, configurations: int = 20) -> NuEstimate:
    """Monte Carlo estimate of the largest conditional mass of a width-epsilon window.

    Half of the samples select the worst window, the other half estimate its
    mass, so the reported interval is not biased by the selection.  For the
    Markov ensemble only sampled neighbour configurations are probed, so the
    result is a lower estimate of the essential supremum.
    """
    _check_epsilon(epsilon)
    if trials < 100:
        raise ValueError("at least 100 trials are required")
    rng = np.random.default_rng([int(seed), 0xA11])
    starts = np.linspace(ens.low - epsilon, ens.low + ens.width, grid_points)
    half = trials // 2

    if ens.kind != "markov_clipped" or ens.coupling == 0:
        groups = [_draw(ens, trials, rng)]
        note = "unconditional law"
    else:
        per = max(100, trials // configurations)
        groups = []
        for _ in range(configurations):
            left, right = (_draw(ens, 3, rng) - ens.low)[[0, 2]]
            groups.append(_conditional_samples(ens, left, right, per, rng))
        half = per // 2
        note = f"sup over {configurations} sampled neighbour configurations (lower estimate)"

    best = None
    for g in groups:
        sel, est = g[:half], g[half:]
        counts = _window_counts(sel, starts, epsilon)
        j = int(np.argmax(counts))
        score = counts[j] / len(sel)
        if best is None or score > best[0]:
            best = (score, starts[j], est)
    _, y, est = best
    hits = int(_window_counts(est, np.array([y]), epsilon)[0])
    n = len(est)
    return NuEstimate(epsilon, hits / n, "empirical", clopper_pearson(hits, n), note)
