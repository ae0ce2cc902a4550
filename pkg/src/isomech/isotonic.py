"""Isotonic regression of review scores onto a reported ranking.

All fits here are least-squares projections onto the cone
``{r : r[order[0]] >= r[order[1]] >= ... >= r[order[-1]]}``.  The fast path is
pool-adjacent-violators; :func:`brute_force_projection` is an independent
exhaustive oracle kept for tests.
"""
from __future__ import annotations

import itertools
from collections.abc import Iterable, Sequence

import numpy as np

from .errors import BudgetExceededError, DimensionError, RankingError

BRUTE_FORCE_MAX_ITEMS = 8


def as_scores(y) -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"scores must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError("scores must contain at least one item")
    if not np.all(np.isfinite(arr)):
        raise DimensionError("scores must be finite")
    return arr


def check_ranking(order: Iterable[int], scope: Iterable[int]) -> tuple[int, ...]:
    """Return ``order`` as a tuple after checking it permutes ``scope`` exactly."""
    order = tuple(int(i) for i in order)
    scope = set(int(i) for i in scope)
    if len(order) != len(scope) or set(order) != scope:
        missing = sorted(scope - set(order))
        extra = sorted(set(order) - scope)
        dup = len(order) != len(set(order))
        raise RankingError(
            f"ranking {list(order)} is not a permutation of its scope "
            f"(missing={missing}, unknown={extra}, duplicates={dup})"
        )
    return order


def pava_descending(values: Sequence[float]) -> list[float]:
    """Least-squares nonincreasing fit of ``values`` (in the given order).

    Blocks live on a stack as ``[sum, count]`` pairs; a new block is pooled
    with its predecessor while the predecessor's mean is strictly below it.
    """
    stack: list[list[float]] = []
    for v in values:
        s, c = float(v), 1
        while stack and stack[-1][0] * c < s * stack[-1][1]:
            ps, pc = stack.pop()
            s += ps
            c += pc
        stack.append([s, c])
    out: list[float] = []
    for s, c in stack:
        out.extend([s / c] * int(c))
    return out


def isotonic_fit(y, ranking: Sequence[int]) -> np.ndarray:
    """Project ``y`` onto the scores consistent with ``ranking`` (best first).

    Parameters
    ----------
    y : array_like
        Raw scores, one per item ``0..n-1``.
    ranking : sequence of int
        A permutation of ``range(n)``; ``ranking[0]`` is claimed best.

    Returns
    -------
    numpy.ndarray
        The unique minimiser of ``||y - r||^2`` subject to
        ``r[ranking[0]] >= r[ranking[1]] >= ...``.
    """
    y = as_scores(y)
    order = check_ranking(ranking, range(y.size))
    if y.size != len(order):
        raise DimensionError(f"ranking has {len(order)} items, scores have {y.size}")
    fitted = pava_descending(y[list(order)])
    out = np.empty_like(y)
    out[list(order)] = fitted
    return out


def project_descending_cone(a) -> np.ndarray:
    """Euclidean projection onto ``{a_1 >= a_2 >= ... >= a_n}``."""
    a = as_scores(a)
    return np.asarray(pava_descending(a), dtype=float)


def fit_subset(y, items: Sequence[int], ranking: Sequence[int]) -> np.ndarray:
    """Fit only ``y[items]`` under ``ranking`` (a permutation of ``items``).

    Returns the fitted values aligned with ``items``.
    """
    items = list(items)
    order = check_ranking(ranking, items)
    pos = {item: k for k, item in enumerate(items)}
    local = [pos[i] for i in order]
    sub = np.asarray(y, dtype=float)[items]
    return isotonic_fit(sub, local)


def brute_force_projection(y, ranking: Sequence[int], resolution: float = 1e-9) -> np.ndarray:
    """Exhaustive oracle for :func:`isotonic_fit`.

    Every contiguous pooling of the ranked sequence is tried; a pooling is
    feasible when its block means are nonincreasing (within ``resolution``),
    and the feasible pooling with the smallest squared error wins.  The
    projection is always one of these poolings, so the search is exact.
    """
    y = as_scores(y)
    n = y.size
    if n > BRUTE_FORCE_MAX_ITEMS:
        raise BudgetExceededError(
            f"brute-force projection supports at most {BRUTE_FORCE_MAX_ITEMS} items, got {n}",
            required=n,
            limit=BRUTE_FORCE_MAX_ITEMS,
        )
    order = list(check_ranking(ranking, range(n)))
    seq = y[order]
    best = None
    best_err = np.inf
    for cuts in itertools.product((False, True), repeat=n - 1):
        bounds = [0] + [k + 1 for k, c in enumerate(cuts) if c] + [n]
        means = [seq[a:b].mean() for a, b in zip(bounds, bounds[1:])]
        if any(m2 > m1 + resolution for m1, m2 in zip(means, means[1:])):
            continue
        fitted = np.concatenate([np.full(b - a, m) for (a, b), m in zip(zip(bounds, bounds[1:]), means)])
        err = float(np.sum((seq - fitted) ** 2))
        if err < best_err:
            best_err = err
            best = fitted
    out = np.empty(n)
    out[order] = best
    return out
