"""Partition objectives, the greedy 1-strong partition and its baselines."""
from __future__ import annotations

import heapq
import math
from collections.abc import Callable, Iterator
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError, GraphError, IsomechError
from .ownership import OwnershipGraph, Partition, reduce_L_to_1

BRUTE_FORCE_MAX_ITEMS = 12
_NUMERIC_STEP = 1e-6


@dataclass(frozen=True)
class WellnessFunction:
    """Convex nondecreasing score of a block size, with ``evaluate(0) == 0``.

    ``left_derivative`` is optional; when absent a backward difference is used.
    """

    name: str
    evaluate: Callable[[float], float]
    left_derivative: Callable[[float], float] | None = None

    def __call__(self, x: float) -> float:
        return self.evaluate(x)

    def derivative_left(self, x: float) -> float:
        if self.left_derivative is not None:
            return self.left_derivative(x)
        return (self.evaluate(x) - self.evaluate(x - _NUMERIC_STEP)) / _NUMERIC_STEP

    def validate(self, n: int, tol: float = 1e-12) -> None:
        """Check ``w(0) = 0``, monotonicity and convexity on ``0..n``."""
        vals = np.array([self.evaluate(x) for x in range(max(n, 2) + 1)], dtype=float)
        if abs(vals[0]) > tol:
            raise GraphError(f"wellness {self.name!r} has w(0) = {vals[0]} != 0")
        if np.any(np.diff(vals) < -tol):
            raise GraphError(f"wellness {self.name!r} is not nondecreasing on 0..{n}")
        if np.any(np.diff(vals, 2) < -tol):
            raise GraphError(f"wellness {self.name!r} is not convex on 0..{n}")


def power_wellness(alpha: float) -> WellnessFunction:
    """``w(x) = x**alpha`` for ``alpha >= 1``."""
    if alpha < 1:
        raise GraphError("power wellness needs alpha >= 1 to be convex")
    return WellnessFunction(
        name=f"x^{alpha:g}",
        evaluate=lambda x: float(x) ** alpha,
        left_derivative=lambda x: alpha * float(x) ** (alpha - 1),
    )


def _excess(x: float) -> float:
    return max(float(x) - 1.0, 0.0)


def _excess_left(x: float) -> float:
    return 1.0 if x > 1 else 0.0


COMPARISON_FOCUSED = power_wellness(2.0)
SIZE_FOCUSED = WellnessFunction(name="max(x-1,0)", evaluate=_excess, left_derivative=_excess_left)
CUBIC = power_wellness(3.0)
BUILTIN_WELLNESS = {"comparison": COMPARISON_FOCUSED, "size": SIZE_FOCUSED, "cubic": CUBIC}


@dataclass(frozen=True)
class PartitionObjectiveReport:
    objective_value: float
    block_sizes: list[int]
    strongness: int
    method: str
    wellness: str = ""

    def recomputed(self, w: WellnessFunction) -> float:
        return float(sum(w(s) for s in self.block_sizes))


def objective(p: Partition, w: WellnessFunction) -> float:
    """Sum of ``w`` over block sizes."""
    return float(sum(w(len(b)) for b in p.blocks))


def strongness(g: OwnershipGraph, p: Partition) -> int:
    """Largest ``L`` for which ``p`` is L-strong (``num_owners`` if vacuous)."""
    counts = [len(t) for b, t in zip(p.blocks, p.common_owners) if len(b) > 1]
    return min(counts) if counts else g.num_owners


def objective_report(g: OwnershipGraph, p: Partition, w: WellnessFunction,
                     method: str) -> PartitionObjectiveReport:
    return PartitionObjectiveReport(objective(p, w), p.sizes, strongness(g, p), method, w.name)


def _cover(owners_of, items, covered, residual, commons=None) -> list[int]:
    """Claim the uncovered ``items`` as one block and charge their owners.

    When ``commons`` is a list, the owners shared by every claimed item are
    appended to it, reusing the owner lists the charging loop already reads.
    """
    block = []
    shared = None
    for i in items:
        if not covered[i]:
            covered[i] = 1
            block.append(i)
            owners = owners_of[i]
            for j in owners:
                residual[j] -= 1
            if shared is None:
                shared = set(owners)
            elif shared:
                shared.intersection_update(owners)
    if commons is not None:
        commons.append(frozenset(shared or ()))
    return block


def _finish(g: OwnershipGraph, blocks: list[list[int]], commons: list, covered) -> Partition:
    """Append ownerless singletons and build the partition without revalidating.

    Every item was claimed at most once and each block lists its items in
    ascending order, so the checks in :meth:`Partition.from_blocks` would be
    redundant here.
    """
    for i in range(g.num_items):
        if not covered[i]:
            blocks.append([i])
            commons.append(frozenset())
    return Partition(tuple(map(tuple, blocks)), tuple(commons))


def greedy_partition(g: OwnershipGraph) -> Partition:
    """Repeatedly take the owner with the most uncovered items as the next block.

    Ties go to the smallest owner id.  Items nobody owns end up as singletons.
    Runs in time linear in the number of edges apart from small heaps of
    demoted owners; see :func:`_greedy_run`.
    """
    blocks, commons, covered = _greedy_run(g, track_owners=True)
    return _finish(g, blocks, commons, covered)


def _greedy_run(g: OwnershipGraph, track_owners: bool = False):
    """Bucket queue over residual sizes.

    Residuals are small integers that only decrease, so owners sit in the
    bucket of the residual they had when last filed.  Each bucket is the
    id-ordered list of owners filed at start plus a heap of owners demoted
    into it later; popping the smaller head of the two gives the lowest id.
    A popped owner whose residual has dropped is refiled lower and skipped.
    Returns the blocks, their common owners (if tracked) and the cover flags.
    """
    items_of, owners_of = g._items_of, g._owners_of
    residual = [len(s) for s in items_of]
    top = max(residual, default=0)
    fresh: list[list[int]] = [[] for _ in range(top + 1)]
    for j, r in enumerate(residual):
        if r:
            fresh[r].append(j)
    heads = [0] * (top + 1)
    demoted: list[list[int]] = [[] for _ in range(top + 1)]
    covered = bytearray(g.num_items)
    blocks: list[list[int]] = []
    commons: list | None = [] if track_owners else None
    pop, push = heapq.heappop, heapq.heappush
    r = top
    while r > 0:
        queue, h, late = fresh[r], heads[r], demoted[r]
        if h < len(queue) and (not late or queue[h] < late[0]):
            j = queue[h]
            heads[r] = h + 1
        elif late:
            j = pop(late)
        else:
            r -= 1
            continue
        current = residual[j]
        if current != r:
            if current > 0:
                push(demoted[current], j)
            continue
        blocks.append(_cover(owners_of, items_of[j], covered, residual, commons))
    return blocks, commons, covered


def greedy_partition_L(g: OwnershipGraph, L: int, budget: int | None = None) -> Partition:
    """Greedy on the L-to-1 reduced graph, expressed back on ``g``."""
    reduced = reduce_L_to_1(g, L) if budget is None else reduce_L_to_1(g, L, budget=budget)
    blocks, _, covered = _greedy_run(reduced)
    blocks += [[i] for i in range(reduced.num_items) if not covered[i]]
    return Partition.from_blocks(g, blocks)


def random_partition(g: OwnershipGraph, seed: int) -> Partition:
    """Like greedy, but the next owner is uniform among those with uncovered items."""
    rng = np.random.default_rng(seed)
    residual = [len(s) for s in g._items_of]
    active = [j for j in range(g.num_owners) if residual[j] > 0]
    covered = bytearray(g.num_items)
    blocks: list[list[int]] = []
    commons: list = []
    while active:
        k = int(rng.integers(len(active)))
        j = active[k]
        if residual[j] <= 0:
            active[k] = active[-1]
            active.pop()
            continue
        blocks.append(_cover(g._owners_of, g._items_of[j], covered, residual, commons))
    return _finish(g, blocks, commons, covered)


def iter_strong_partitions(g: OwnershipGraph, L: int) -> Iterator[list[list[int]]]:
    """Yield every L-strong set partition of the items, in restricted-growth order.

    Each block carries the bitmask of owners common to its items; a block of
    two or more items is abandoned as soon as fewer than ``L`` owners remain,
    which is safe because adding items can only shrink the mask.
    """
    if L < 1:
        raise GraphError("L must be at least 1")
    n = g.num_items
    if n > BRUTE_FORCE_MAX_ITEMS:
        raise BudgetExceededError(
            f"exhaustive partition search supports at most {BRUTE_FORCE_MAX_ITEMS} items, got {n}",
            required=n, limit=BRUTE_FORCE_MAX_ITEMS)
    masks = [sum(1 << j for j in g.owners_of(i)) for i in range(n)]
    blocks: list[list[int]] = []
    block_masks: list[int] = []

    def rec(i: int):
        if i == n:
            yield [list(b) for b in blocks]
            return
        for k in range(len(blocks)):
            prev = block_masks[k]
            mask = prev & masks[i]
            if mask.bit_count() < L:
                continue
            blocks[k].append(i)
            block_masks[k] = mask
            yield from rec(i + 1)
            blocks[k].pop()
            block_masks[k] = prev
        blocks.append([i])
        block_masks.append(masks[i])
        yield from rec(i + 1)
        blocks.pop()
        block_masks.pop()

    if n == 0:
        yield []
        return
    yield from rec(0)


def brute_force_optimal(g: OwnershipGraph, w: WellnessFunction, L: int = 1) -> Partition:
    """Exact maximiser of the objective over L-strong partitions (first found wins ties)."""
    table = [w(s) for s in range(g.num_items + 1)]
    best, best_val = None, -math.inf
    for blocks in iter_strong_partitions(g, L):
        val = sum(table[len(b)] for b in blocks)
        if val > best_val:
            best, best_val = blocks, val
    return Partition.from_blocks(g, best)


def approximation_ratio_bound(w: WellnessFunction, x_max: int) -> float:
    """Infimum of ``w(x) / (w'_-(x) x)`` over integers ``2 <= x <= x_max`` with ``w'_-(x) > 0``."""
    if x_max < 2:
        raise IsomechError("x_max must be at least 2")
    ratios = []
    for x in range(2, int(x_max) + 1):
        d = w.derivative_left(x)
        if d > 0:
            ratios.append(w(x) / (d * x))
    if not ratios:
        raise IsomechError(f"bound undefined: left derivative of {w.name!r} is never positive on [2, {x_max}]")
    return float(min(ratios))
