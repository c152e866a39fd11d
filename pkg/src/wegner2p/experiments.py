"""Monte Carlo estimates of eigenvalue-concentration probabilities.

Every trial draws its field from ``trial_rng(master_seed, trial)``, so the
per-trial outcome does not depend on scheduling; aggregation is by trial
index.  Probability estimates carry exact (Clopper-Pearson) 95% intervals.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .geometry import PreconditionError, TwoParticleBox, enlarge_cube, is_sufficiently_distant, lattice_sites
from .operator import HamiltonianSpec, assemble
from .random_field import (
    FieldRealization,
    clopper_pearson,
    nu_value,
    sample_amplitudes,
    trial_rng,
    verify_covering,
)
from .spectral import SolverError, eigenvalues_in_window, lowest_eigenvalues

MAX_EXCLUDED_FRACTION = 0.01
PILOT_STREAM = 1


def map_trials(fn, trials, threads: int = 1) -> list:
    """Apply fn to every trial index; results come back in trial order."""
    trials = list(trials)
    if threads <= 1 or len(trials) < 2:
        return [fn(t) for t in trials]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, trials, chunksize=max(1, len(trials) // (8 * threads))))


def _box_cubes(box):
    return (box.factor1, box.factor2) if isinstance(box, TwoParticleBox) else (box,)


def _lattice_volume(box) -> int:
    return int(np.prod([len(lattice_sites(c)) for c in _box_cubes(box)]))


# -- results ---------------------------------------------------------------

@dataclass
class ProbabilityEstimate:
    epsilon: float
    hits: int
    trials: int
    excluded: int
    bound_unit: float
    constant: float | None = None

    @property
    def estimate(self) -> float:
        return self.hits / self.trials if self.trials else float("nan")

    @property
    def ci(self) -> tuple[float, float]:
        return clopper_pearson(self.hits, self.trials)

    @property
    def valid(self) -> bool:
        total = self.trials + self.excluded
        return total > 0 and self.excluded <= MAX_EXCLUDED_FRACTION * total

    @property
    def bound_rhs(self) -> float | None:
        return None if self.constant is None else self.constant * self.bound_unit

    @property
    def verdict(self) -> str:
        rhs = self.bound_rhs
        if rhs is None:
            return "unfitted"
        lo, hi = self.ci
        if hi <= rhs:
            return "dominated"
        if lo <= rhs:
            return "consistent"
        return "violated"

    def row(self) -> dict:
        lo, hi = self.ci
        return {
            "epsilon": self.epsilon, "hits": self.hits, "trials": self.trials,
            "excluded": self.excluded, "estimate": self.estimate, "ci_low": lo,
            "ci_high": hi, "bound_unit": self.bound_unit, "fitted_C": self.constant,
            "bound_rhs": self.bound_rhs, "verdict": self.verdict, "valid": self.valid,
        }


# -- one volume ------------------------------------------------------------

@dataclass
class WegnerOneConfig:
    spec: HamiltonianSpec
    energy: float
    epsilon: float
    trials: int
    master_seed: int = 0
    exponent: float | None = None
    constant: float | None = None
    threads: int = 1
    tol: float = 1e-10

    def __post_init__(self):
        # zero width is accepted as a degenerate window; validation flags it
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.trials < 1:
            raise ValueError("trials must be positive")

    @property
    def power(self) -> float:
        if self.exponent is not None:
            return self.exponent
        return _box_cubes(self.spec.box)[0].dimension / 2


def one_volume_bound_unit(cfg: WegnerOneConfig, epsilon: float) -> float:
    """Right-hand side of the one-volume bound with C = 1, lattice cardinalities."""
    box = cfg.spec.box
    smallest = min(len(lattice_sites(c)) for c in _box_cubes(box))
    return ((1.0 + max(cfg.energy, 0.0)) ** cfg.power * _lattice_volume(box) * smallest
            * nu_value(cfg.spec.ensemble, epsilon))


def _one_volume_outcomes(cfg: WegnerOneConfig, epsilons) -> list:
    spec = cfg.spec
    sites = spec.required_sites()
    E = cfg.energy
    top = E + max(epsilons)

    def one(trial):
        r = sample_amplitudes(spec.ensemble, sites, cfg.master_seed, trial)
        try:
            vals = eigenvalues_in_window(assemble(spec, r), E, top, cfg.tol)
        except (SolverError, np.linalg.LinAlgError):
            return None
        return [bool(np.any(vals <= E + eps)) for eps in epsilons]

    return map_trials(one, range(cfg.trials), cfg.threads)


def _tally(outcomes, epsilons, bound_units, constant) -> list[ProbabilityEstimate]:
    good = [o for o in outcomes if o is not None]
    excluded = len(outcomes) - len(good)
    rows = []
    for i, eps in enumerate(epsilons):
        hits = sum(o[i] for o in good)
        rows.append(ProbabilityEstimate(eps, hits, len(good), excluded, bound_units[i], constant))
    return rows


def one_volume_probability(cfg: WegnerOneConfig) -> ProbabilityEstimate:
    """P([E, E+eps] meets the spectrum), estimated over cfg.trials fields."""
    outcomes = _one_volume_outcomes(cfg, [cfg.epsilon])
    return _tally(outcomes, [cfg.epsilon], [one_volume_bound_unit(cfg, cfg.epsilon)], cfg.constant)[0]


# -- two volumes -----------------------------------------------------------

@dataclass
class WegnerTwoConfig:
    spec: HamiltonianSpec
    spec_prime: HamiltonianSpec
    interval: tuple[float, float]
    epsilon: float
    trials: int
    master_seed: int = 0
    constant: float | None = None
    threads: int = 1
    tol: float = 1e-10
    distance_factor: float = 8.0

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        a, b = self.interval
        if a > b:
            raise ValueError("interval must satisfy a <= b")
        if (self.spec.ensemble, self.spec.profile) != (self.spec_prime.ensemble, self.spec_prime.profile):
            raise ValueError("both boxes must share one field ensemble and bump profile")
        if not (isinstance(self.spec.box, TwoParticleBox) and isinstance(self.spec_prime.box, TwoParticleBox)):
            raise ValueError("two-volume experiments need two-particle boxes")

    def field_sites(self) -> list[tuple[int, ...]]:
        return sorted(set(self.spec.required_sites()) | set(self.spec_prime.required_sites()))


def two_volume_bound_unit(cfg: WegnerTwoConfig, epsilon: float) -> float:
    """Right-hand side of the two-volume bound with C = 1, lattice cardinalities."""
    b, bp = cfg.spec.box, cfg.spec_prime.box
    geometric = max(
        max(len(lattice_sites(getattr(b, f))), len(lattice_sites(getattr(bp, f))))
        for f in ("factor1", "factor2")
    )
    return _lattice_volume(b) * _lattice_volume(bp) * geometric * nu_value(cfg.spec.ensemble, 2 * epsilon)


def _check_distance(cfg: WegnerTwoConfig) -> None:
    R = cfg.spec.profile.range
    if not is_sufficiently_distant(cfg.spec.box, cfg.spec_prime.box, R, cfg.distance_factor):
        raise PreconditionError("boxes are not sufficiently distant")


def set_distance(xs, ys) -> float:
    """min |x - y| over pairs; +inf when either set is empty."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.size == 0 or ys.size == 0:
        return math.inf
    return float(np.min(np.abs(xs[:, None] - ys[None, :])))


def two_volume_trial(cfg: WegnerTwoConfig, trial: int):
    """The shared realization and both operators for one trial."""
    r = sample_amplitudes(cfg.spec.ensemble, cfg.field_sites(), cfg.master_seed, trial)
    return r, assemble(cfg.spec, r), assemble(cfg.spec_prime, r)


def _two_volume_outcomes(cfg: WegnerTwoConfig, epsilons) -> list:
    _check_distance(cfg)
    a, b = cfg.interval

    def one(trial):
        _, op, op_prime = two_volume_trial(cfg, trial)
        try:
            v = eigenvalues_in_window(op, a, b, cfg.tol)
            vp = eigenvalues_in_window(op_prime, a, b, cfg.tol)
        except (SolverError, np.linalg.LinAlgError):
            return None
        dist = set_distance(v, vp)
        return [dist <= eps for eps in epsilons]

    return map_trials(one, range(cfg.trials), cfg.threads)


def two_volume_probability(cfg: WegnerTwoConfig) -> ProbabilityEstimate:
    """P(dist[spec(H) in I, spec(H') in I] <= eps) with one shared field per trial."""
    outcomes = _two_volume_outcomes(cfg, [cfg.epsilon])
    return _tally(outcomes, [cfg.epsilon], [two_volume_bound_unit(cfg, cfg.epsilon)], cfg.constant)[0]


# -- pilot runs ------------------------------------------------------------

def ground_state_sample(spec: HamiltonianSpec, trials: int, master_seed: int,
                        threads: int = 1, tol: float = 1e-10) -> np.ndarray:
    """Ground-state energies on an independent random stream (for choosing E and I)."""
    sites = spec.required_sites()

    def one(trial):
        r = sample_amplitudes(spec.ensemble, sites, master_seed, trial, stream=PILOT_STREAM)
        try:
            return float(lowest_eigenvalues(assemble(spec, r), 1, tol).eigenvalues[0])
        except SolverError:
            return math.nan

    vals = np.asarray(map_trials(one, range(trials), threads))
    return vals[np.isfinite(vals)]


# -- epsilon sweeps --------------------------------------------------------

@dataclass
class SweepResult:
    rows: list[ProbabilityEstimate]
    slope: float | None
    implied_constant: float | None
    fitted_constant: float | None
    note: str = ""
    ratios: list[float] = field(default_factory=list)

    @property
    def dominance(self) -> bool | None:
        """Does the bound fitted on the coarsest epsilon cover every finer upper CI?"""
        if self.fitted_constant is None:
            return None
        return all(r.ci[1] <= r.bound_rhs for r in self.rows)

    @property
    def valid(self) -> bool:
        return all(r.valid for r in self.rows)


def _check_dyadic(epsilons) -> None:
    for e in epsilons:
        if not 0 < e < 1:
            raise ValueError(f"epsilon {e} outside (0, 1)")
    lo = min(epsilons)
    for e in epsilons:
        p = math.log2(e / lo)
        if abs(p - round(p)) > 1e-9:
            raise ValueError(f"epsilons must be dyadic multiples of one another, got {epsilons}")


def epsilon_sweep(cfg, epsilons) -> SweepResult:
    """Run the probability estimator for every epsilon on common trials.

    The constant C is fitted so that the bound equals the upper confidence
    limit at the coarsest epsilon, and then applied unchanged to the rest.
    """
    epsilons = sorted({float(e) for e in epsilons}, reverse=True)
    _check_dyadic(epsilons)
    if isinstance(cfg, WegnerTwoConfig):
        outcomes = _two_volume_outcomes(cfg, epsilons)
        units = [two_volume_bound_unit(cfg, e) for e in epsilons]
    else:
        outcomes = _one_volume_outcomes(cfg, epsilons)
        units = [one_volume_bound_unit(cfg, e) for e in epsilons]
    rows = _tally(outcomes, epsilons, units, None)

    ratios = [a.estimate / b.estimate if b.hits else math.nan for a, b in zip(rows, rows[1:])]
    estimates = np.array([r.estimate for r in rows])
    if len(rows) == 1:
        return SweepResult(rows, None, None, None, "single epsilon: no fit")
    if np.all(estimates == estimates[0]) and estimates[0] in (0.0, 1.0):
        return SweepResult(rows, None, None, None, "degenerate column: slope undefined", ratios)

    eps = np.array(epsilons)
    slope = float(eps @ estimates / (eps @ eps))
    coarse = rows[0]
    implied = slope * coarse.epsilon / coarse.bound_unit if coarse.bound_unit > 0 else None
    fitted = coarse.ci[1] / coarse.bound_unit if coarse.bound_unit > 0 else None
    for r in rows:
        r.constant = fitted
    return SweepResult(rows, slope, implied, fitted, "", ratios)


# -- proof machinery -------------------------------------------------------

@dataclass
class DMCheckReport:
    t: float
    subset: str
    subset_size: int
    deltas: np.ndarray

    @property
    def min_delta(self) -> float:
        return float(np.min(self.deltas))

    @property
    def max_delta(self) -> float:
        return float(np.max(self.deltas))


def shift_sites(spec: HamiltonianSpec, which: str = "full") -> list[tuple[int, ...]]:
    """Lattice sites of the R-enlarged shadow ('full') or of one projection."""
    cubes = _box_cubes(spec.box)
    R = spec.profile.range
    if which == "full":
        chosen = cubes
    elif which in ("projection1", "projection2"):
        j = int(which[-1])
        if j > len(cubes):
            raise ValueError(f"{which} needs a two-particle box")
        chosen = (cubes[j - 1],)
    else:
        raise ValueError(f"unknown site subset {which!r}")
    sites = set()
    for c in chosen:
        sites.update(lattice_sites(enlarge_cube(c, R)))
    return sorted(sites)


def _lowest(spec, realization, k, tol):
    op = assemble(spec, realization)
    return lowest_eigenvalues(op, min(k, op.n), tol).eigenvalues


def dm_shift_check(spec: HamiltonianSpec, realization: FieldRealization, J="full",
                   t: float = 0.5, k: int = 10, tol: float = 1e-10,
                   check_covering: bool = True) -> DMCheckReport:
    """Raise the amplitudes on J by t and report how far each low eigenvalue moves."""
    if t < 0:
        raise ValueError("shift t must be nonnegative")
    if check_covering:
        for c in _box_cubes(spec.box):
            if not verify_covering(spec.profile, c).covering_holds:
                raise PreconditionError("bump profile fails the covering check on the box")
    if isinstance(J, str):
        label, sites = J, shift_sites(spec, J)
    else:
        sites = [tuple(s) for s in J]
        label = "explicit"
    base = _lowest(spec, realization, k, tol)
    moved = _lowest(spec, realization.shifted(t, sites), k, tol)
    return DMCheckReport(t, label, len(sites), moved - base)


def monotonicity_deltas(spec: HamiltonianSpec, realization: FieldRealization,
                        increments, k: int = 10, tol: float = 1e-10) -> np.ndarray:
    """Eigenvalue changes when nonnegative increments are added site by site."""
    inc = np.asarray(increments, dtype=float)
    if inc.shape != realization.amplitudes.shape or np.any(inc < 0):
        raise ValueError("one nonnegative increment per site is required")
    bumped = FieldRealization(realization.sites, realization.amplitudes + inc,
                              realization.master_seed, realization.trial, realization.stream)
    return _lowest(spec, bumped, k, tol) - _lowest(spec, realization, k, tol)


# -- concentration of DM functions ----------------------------------------

PHI_KINDS = ("max", "sum", "min_plus_mean")


@dataclass
class ConcentrationReport:
    phi: str
    n: int
    density_bound: float
    a: float
    epsilon: float
    exact: float | None
    empirical: float | None
    ci: tuple[float, float] | None
    trials: int

    @property
    def bound(self) -> float:
        return self.n * self.density_bound * self.epsilon


def _phi(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "max":
        return x.max(axis=1)
    if kind == "sum":
        return x.sum(axis=1)
    return x.min(axis=1) + x.mean(axis=1)


def _irwin_hall_cdf(x: float, n: int) -> float:
    if x <= 0:
        return 0.0
    if x >= n:
        return 1.0
    k = np.arange(0, int(math.floor(x)) + 1)
    terms = (-1.0) ** k * special.comb(n, k) * (x - k) ** n
    return float(terms.sum() / math.factorial(n))


def exact_concentration(phi: str, n: int, c: float, a: float, epsilon: float) -> float | None:
    """Closed-form P(phi(X) in [a, a+eps]) for X uniform on [0, 1/c]^n, where known."""
    w = 1.0 / c
    if phi == "max":
        F = lambda x: min(max(x / w, 0.0), 1.0) ** n  # noqa: E731
    elif phi == "sum":
        F = lambda x: _irwin_hall_cdf(x / w, n)  # noqa: E731
    else:
        return None
    return F(a + epsilon) - F(a)


def concentration_check(phi: str, n: int, density_bound: float, a: float, epsilon: float,
                        trials: int = 100_000, seed: int = 0) -> ConcentrationReport:
    if phi not in PHI_KINDS:
        raise ValueError(f"unknown DM test function {phi!r}; expected one of {PHI_KINDS}")
    if n < 1 or not density_bound > 0 or epsilon < 0:
        raise ValueError("need n >= 1, density_bound > 0 and epsilon >= 0")
    exact = exact_concentration(phi, n, density_bound, a, epsilon)
    empirical = ci = None
    if trials > 0:
        x = trial_rng(seed, 0, stream=7).random((trials, n)) / density_bound
        v = _phi(phi, x)
        hits = int(np.sum((v >= a) & (v <= a + epsilon)))
        empirical, ci = hits / trials, clopper_pearson(hits, trials)
    return ConcentrationReport(phi, n, density_bound, a, epsilon, exact, empirical, ci, trials)
