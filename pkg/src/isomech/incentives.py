"""Utilities, exchangeable noise, expected payoffs and exhaustive best-response audits."""
from __future__ import annotations

import itertools
import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, DimensionError, IsomechError
from .isotonic import as_scores, isotonic_fit
from .mechanisms import MechanismSpec, Reports, credentials, truthful_reports
from .ownership import OwnershipGraph

EXACT_MAX_ITEMS = 8
BEST_RESPONSE_MAX_ITEMS = 7
PROFILE_BUDGET = 5_000_000
DEFAULT_TRIALS = 10_000


@dataclass(frozen=True)
class UtilityModel:
    """Nondecreasing convex per-item utility, applied elementwise and summed.

    Build with :meth:`hinge`, :meth:`power`, :meth:`piecewise_linear` or
    :meth:`linear`.  Piecewise-linear utilities are stored as a base slope
    plus hinge increments: ``u(x) = s0 * x + sum_k d_k * max(x - b_k, 0)``.
    """

    kind: str
    threshold: float = 0.0
    exponent: float = 1.0
    breakpoints: tuple[float, ...] = ()
    slopes: tuple[float, ...] = ()

    @classmethod
    def hinge(cls, threshold: float) -> "UtilityModel":
        return cls("hinge", threshold=float(threshold))

    @classmethod
    def power(cls, exponent: float) -> "UtilityModel":
        if exponent < 1:
            raise IsomechError("power utility needs exponent >= 1")
        return cls("power", exponent=float(exponent))

    @classmethod
    def piecewise_linear(cls, breakpoints: Sequence[float], slopes: Sequence[float]) -> "UtilityModel":
        """``slopes[k]`` applies between ``breakpoints[k-1]`` and ``breakpoints[k]``."""
        b = tuple(float(x) for x in breakpoints)
        s = tuple(float(x) for x in slopes)
        if len(s) != len(b) + 1:
            raise IsomechError("need exactly one more slope than breakpoints")
        if any(x2 <= x1 for x1, x2 in zip(b, b[1:])):
            raise IsomechError("breakpoints must increase strictly")
        if s[0] < 0 or any(s2 < s1 for s1, s2 in zip(s, s[1:])):
            raise IsomechError("slopes must be nonnegative and nondecreasing")
        return cls("piecewise", breakpoints=b, slopes=s)

    @classmethod
    def linear(cls) -> "UtilityModel":
        return cls.piecewise_linear((), (1.0,))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "hinge":
            return np.maximum(x - self.threshold, 0.0)
        if self.kind == "power":
            return np.maximum(x, 0.0) ** self.exponent
        if self.kind == "piecewise":
            out = self.slopes[0] * x
            for b, s_prev, s in zip(self.breakpoints, self.slopes, self.slopes[1:]):
                out = out + (s - s_prev) * np.maximum(x - b, 0.0)
            return out
        raise IsomechError(f"unknown utility kind {self.kind!r}")

    def total(self, values) -> np.ndarray:
        """Sum of utilities over the last axis."""
        return self(values).sum(axis=-1)

    def check_shape(self, lo: float, hi: float, samples: int = 201, tol: float = 1e-12) -> bool:
        """Sampled monotonicity and convexity on ``[lo, hi]``."""
        v = self(np.linspace(lo, hi, samples))
        return bool(np.all(np.diff(v) >= -tol) and np.all(np.diff(v, 2) >= -tol))


@dataclass(frozen=True)
class NoiseModel:
    """Exchangeable review noise.

    ``gaussian`` draws i.i.d. normals with standard deviation ``sigma``;
    ``exchangeable`` uniformly permutes the fixed vector ``base``;
    ``empirical`` picks a row of ``samples`` and permutes it uniformly.
    """

    kind: str
    sigma: float = 0.0
    base: tuple[float, ...] = ()
    samples: tuple[tuple[float, ...], ...] = ()

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseModel":
        if sigma < 0:
            raise IsomechError("sigma must be nonnegative")
        return cls("gaussian", sigma=float(sigma))

    @classmethod
    def exchangeable(cls, base) -> "NoiseModel":
        return cls("exchangeable", base=tuple(float(v) for v in as_scores(base)))

    @classmethod
    def empirical(cls, samples) -> "NoiseModel":
        arr = np.asarray(samples, dtype=float)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise DimensionError("empirical noise needs a nonempty 2-D sample array")
        return cls("empirical", samples=tuple(map(tuple, arr.tolist())))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, size=n)
        if self.kind == "exchangeable":
            self._check_length(len(self.base), n)
            return rng.permutation(np.asarray(self.base))
        if self.kind == "empirical":
            row = np.asarray(self.samples[int(rng.integers(len(self.samples)))])
            self._check_length(row.size, n)
            return rng.permutation(row)
        raise IsomechError(f"unknown noise kind {self.kind!r}")

    def support(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Distinct arrangements of ``base`` and their probabilities."""
        if self.kind != "exchangeable":
            raise IsomechError("exact expectation needs exchangeable base-vector noise")
        self._check_length(len(self.base), n)
        if n > EXACT_MAX_ITEMS:
            raise BudgetExceededError(f"exact expectation supports at most {EXACT_MAX_ITEMS} items, got {n}",
                                      required=n, limit=EXACT_MAX_ITEMS)
        counts = Counter(itertools.permutations(self.base))
        arrangements = sorted(counts)
        total = math.factorial(n)
        return np.array(arrangements, dtype=float).reshape(len(arrangements), n), \
            np.array([counts[a] / total for a in arrangements])

    @staticmethod
    def _check_length(have: int, n: int) -> None:
        if have != n:
            raise DimensionError(f"noise vector has {have} entries for {n} items")


def _owner_utility(u: UtilityModel, out: np.ndarray, items: Sequence[int]) -> float:
    return float(u.total(out[list(items)]))


@dataclass(frozen=True)
class Expectation:
    value: float
    stderr: float = 0.0


def expected_utility(mech: MechanismSpec, R, noise: NoiseModel, profile: Reports, owner: int,
                     u: UtilityModel, mode: str = "exact", trials: int = DEFAULT_TRIALS,
                     seed: int = 0) -> Expectation:
    """Expected utility of ``owner`` when reports are ``profile`` and ``y = R + z``.

    ``mode="exact"`` averages over every distinct arrangement of the noise base
    vector with its multiplicity; ``mode="montecarlo"`` averages ``trials``
    seeded draws and reports the standard error.
    """
    R = as_scores(R)
    items = mech.graph.items_of(owner)
    if mode == "exact":
        zs, probs = noise.support(R.size)
        vals = np.array([_owner_utility(u, mech(R + z, profile), items) for z in zs])
        return Expectation(float(np.dot(probs, vals)), 0.0)
    if mode == "montecarlo":
        rng = np.random.default_rng(seed)
        vals = np.array([_owner_utility(u, mech(R + noise.sample(R.size, rng), profile), items)
                         for _ in range(trials)])
        err = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
        return Expectation(float(vals.mean()), err)
    raise IsomechError(f"unknown expectation mode {mode!r}")


def is_consistent_ranking(ranking: Sequence[int], R) -> bool:
    """True when ``ranking`` lists items in nonincreasing ``R`` (ties in any order)."""
    R = np.asarray(R, dtype=float)
    return all(R[a] >= R[b] for a, b in zip(ranking, ranking[1:]))


@dataclass
class AuditResult:
    owner: int
    truthful_is_best: bool
    gap: float
    best_utility: float
    truthful_utility: float
    best_reports: list[tuple[int, ...]]
    utility_table: dict[tuple[int, ...], float] = field(default_factory=dict)

    def to_json(self, full_table: bool = False) -> dict:
        out = {"owner_id": self.owner, "truthful_is_best": self.truthful_is_best, "gap": self.gap,
               "best_utility": self.best_utility, "truthful_utility": self.truthful_utility,
               "best_reports": [list(r) for r in self.best_reports]}
        if full_table:
            out["utility_table"] = [{"ranking": list(r), "utility": v} for r, v in self.utility_table.items()]
        return out


def best_response(mech: MechanismSpec, R, noise: NoiseModel, others: Reports, owner: int,
                  u: UtilityModel, tolerance: float = 1e-9, mode: str = "exact",
                  trials: int = DEFAULT_TRIALS, seed: int = 0) -> AuditResult:
    """Try every ranking of the owner's items against fixed reports of the others."""
    R = as_scores(R)
    items = mech.graph.items_of(owner)
    if not items:
        raise IsomechError(f"owner {owner} owns no items")
    if len(items) > BEST_RESPONSE_MAX_ITEMS:
        raise BudgetExceededError(
            f"owner {owner} has {len(items)} items; exhaustive search allows {BEST_RESPONSE_MAX_ITEMS}",
            required=math.factorial(len(items)), limit=math.factorial(BEST_RESPONSE_MAX_ITEMS))
    base = {j: tuple(r) for j, r in others.items() if j != owner}
    table: dict[tuple[int, ...], float] = {}
    for ranking in itertools.permutations(items):
        profile = dict(base)
        profile[owner] = ranking
        table[ranking] = expected_utility(mech, R, noise, profile, owner, u, mode, trials, seed).value
    best = max(table.values())
    truthful = max(v for r, v in table.items() if is_consistent_ranking(r, R))
    gap = best - truthful
    return AuditResult(owner=owner, truthful_is_best=gap <= tolerance, gap=gap, best_utility=best,
                       truthful_utility=truthful,
                       best_reports=[r for r, v in table.items() if v >= best - tolerance],
                       utility_table=table)


def equilibrium_audit(mech: MechanismSpec, R, noise: NoiseModel, utilities, tolerance: float = 1e-9,
                      profile: Reports | None = None, owners: Sequence[int] | None = None,
                      **kwargs) -> list[AuditResult]:
    """Best response of each owner against the others' reports (truthful by default).

    ``utilities`` is one :class:`UtilityModel` for everybody or one per owner.
    ``profile`` overrides the reports the others are held to.
    """
    g = mech.graph
    base = truthful_reports(g, R)
    if profile:
        base.update({int(j): tuple(r) for j, r in profile.items()})
    owners = [j for j in range(g.num_owners) if g.items_of(j)] if owners is None else list(owners)
    results = []
    for j in owners:
        u = utilities if isinstance(utilities, UtilityModel) else utilities[j]
        results.append(best_response(mech, R, noise, base, j, u, tolerance, **kwargs))
    return results


def payoff_dominance_check(R, noise: NoiseModel, utilities: Sequence[UtilityModel], cred=None,
                           tol: float = 1e-9) -> list[tuple[tuple[int, ...], int, float, float]]:
    """Compare every pure report profile with the truthful one under complete overlap.

    All owners rank all ``n`` items and the complete-overlap rule averages
    their isotonic fits.  Fits are tabulated once per (ranking, noise
    arrangement) and profiles are evaluated by broadcasting, so the cost is
    ``(n!)**m`` times the support size.  Returns ``(profile indices, owner,
    utility, truthful utility)`` for every owner doing strictly better than
    under truth-telling.
    """
    R = as_scores(R)
    n, m = R.size, len(utilities)
    rankings = list(itertools.permutations(range(n)))
    zs, probs = noise.support(n)
    size = len(rankings) ** m * len(zs) * n
    if size > PROFILE_BUDGET:
        raise BudgetExceededError(f"profile enumeration needs {size} cells, budget {PROFILE_BUDGET}",
                                  required=size, limit=PROFILE_BUDGET)
    alpha = credentials(cred, m)
    if alpha.sum() == 0:
        raise IsomechError("credentials sum to zero")
    fits = np.array([[isotonic_fit(R + z, r) for z in zs] for r in rankings])  # (P, Z, n)
    out = np.zeros((len(rankings),) * m + (len(zs), n))
    for j in range(m):
        shape = [1] * m + [len(zs), n]
        shape[j] = len(rankings)
        out = out + alpha[j] * fits.reshape(shape)
    out /= alpha.sum()
    truthful_idx = rankings.index(tuple(sorted(range(n), key=lambda i: (-R[i], i))))
    violations = []
    for j, u in enumerate(utilities):
        eu = u.total(out) @ probs
        ref = eu[(truthful_idx,) * m]
        for idx in zip(*np.nonzero(eu > ref + tol)):
            violations.append((tuple(int(k) for k in idx), j, float(eu[idx]), float(ref)))
    return violations


def check_majorization(a, b, tol: float = 1e-9) -> bool:
    """True when ``a`` majorizes ``b``: sorted prefix sums dominate, totals agree."""
    a = np.sort(np.asarray(a, dtype=float))[::-1]
    b = np.sort(np.asarray(b, dtype=float))[::-1]
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"majorization needs equal-length vectors, got {a.shape} and {b.shape}")
    ca, cb = np.cumsum(a), np.cumsum(b)
    return bool(abs(ca[-1] - cb[-1]) <= tol and np.all(ca >= cb - tol))


def perceived_ranking(R, scope: Sequence[int], variance: float, rng) -> tuple[int, ...]:
    """Rank ``scope`` by ``R + zeta`` with ``zeta ~ N(0, variance)``; ties broken by a seeded draw.

    ``rng`` may be a seed or a :class:`numpy.random.Generator`.
    """
    rng = np.random.default_rng(rng)
    R = np.asarray(R, dtype=float)
    scope = np.asarray(list(scope), dtype=np.int64)
    noisy = R[scope] + (rng.normal(0.0, math.sqrt(variance), size=scope.size) if variance > 0 else 0.0)
    order = np.lexsort((rng.random(scope.size), -noisy))
    return tuple(int(i) for i in scope[order])


def owner_utilities(values: Mapping[int, UtilityModel] | Sequence[UtilityModel], m: int) -> list[UtilityModel]:
    if isinstance(values, Mapping):
        return [values[j] for j in range(m)]
    if len(values) != m:
        raise IsomechError(f"need {m} utilities, got {len(values)}")
    return list(values)
