"""Owner-item ownership graphs, partitions, strongness and instance generators."""
from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import BudgetExceededError, GraphError

REDUCTION_BUDGET = 20_000_000
MAX_TREE_DEPTH = 10


class OwnershipGraph:
    """Immutable bipartite relation between ``num_owners`` owners and ``num_items`` items.

    Edges are stored as two parallel integer arrays sorted by (owner, item).
    Optional ``owner_labels`` / ``item_labels`` keep external identifiers
    (CSV ids, reduction provenance) alongside the dense indices.
    """

    def __init__(self, num_owners: int, num_items: int, edges: Iterable[tuple[int, int]],
                 owner_labels: Sequence | None = None, item_labels: Sequence | None = None):
        if num_owners < 0 or num_items < 0:
            raise GraphError("owner and item counts must be nonnegative")
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise GraphError("edges must be (owner, item) pairs")
        owners, items = arr[:, 0], arr[:, 1]
        if arr.shape[0]:
            if owners.min() < 0 or owners.max() >= num_owners:
                raise GraphError(f"owner id out of range [0, {num_owners})")
            if items.min() < 0 or items.max() >= num_items:
                raise GraphError(f"item id out of range [0, {num_items})")
        key = owners * max(num_items, 1) + items
        order = np.argsort(key, kind="stable")
        key = key[order]
        if key.size > 1 and np.any(key[1:] == key[:-1]):
            k = int(key[1:][key[1:] == key[:-1]][0])
            raise GraphError(f"duplicate edge (owner={k // max(num_items, 1)}, item={k % max(num_items, 1)})")
        self.num_owners = int(num_owners)
        self.num_items = int(num_items)
        self._owners = owners[order]
        self._items = items[order]
        self._owners.setflags(write=False)
        self._items.setflags(write=False)
        if owner_labels is not None and len(owner_labels) != num_owners:
            raise GraphError("owner_labels must have one entry per owner")
        if item_labels is not None and len(item_labels) != num_items:
            raise GraphError("item_labels must have one entry per item")
        self.owner_labels = tuple(owner_labels) if owner_labels is not None else None
        self.item_labels = tuple(item_labels) if item_labels is not None else None

    @classmethod
    def from_item_sets(cls, item_sets: Sequence[Iterable[int]], num_items: int | None = None,
                       owner_labels: Sequence | None = None) -> "OwnershipGraph":
        """Build from a list whose ``j``-th entry is the item set of owner ``j``."""
        sets = [sorted(set(int(i) for i in s)) for s in item_sets]
        if num_items is None:
            num_items = 1 + max((s[-1] for s in sets if s), default=-1)
        edges = [(j, i) for j, s in enumerate(sets) for i in s]
        return cls(len(sets), num_items, edges, owner_labels=owner_labels)

    # -- views -------------------------------------------------------------

    @property
    def num_edges(self) -> int:
        return int(self._owners.size)

    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self._owners.tolist(), self._items.tolist()))

    @cached_property
    def _items_of(self) -> tuple[tuple[int, ...], ...]:
        bounds = np.searchsorted(self._owners, np.arange(self.num_owners + 1))
        items = self._items.tolist()
        return tuple(tuple(items[a:b]) for a, b in zip(bounds[:-1].tolist(), bounds[1:].tolist()))

    @cached_property
    def _owners_of(self) -> tuple[tuple[int, ...], ...]:
        order = np.argsort(self._items, kind="stable")
        items_sorted = self._items[order]
        owners_sorted = self._owners[order].tolist()
        bounds = np.searchsorted(items_sorted, np.arange(self.num_items + 1)).tolist()
        return tuple(tuple(owners_sorted[a:b]) for a, b in zip(bounds[:-1], bounds[1:]))

    def items_of(self, owner: int) -> tuple[int, ...]:
        return self._items_of[owner]

    def owners_of(self, item: int) -> tuple[int, ...]:
        return self._owners_of[item]

    @cached_property
    def item_sets(self) -> tuple[frozenset[int], ...]:
        return tuple(frozenset(s) for s in self._items_of)

    @cached_property
    def owner_sets(self) -> tuple[frozenset[int], ...]:
        return tuple(frozenset(s) for s in self._owners_of)

    def is_complete_overlap(self) -> bool:
        """True when every owner owns every item."""
        return self.num_edges == self.num_owners * self.num_items

    def __eq__(self, other):
        if not isinstance(other, OwnershipGraph):
            return NotImplemented
        return (self.num_owners == other.num_owners and self.num_items == other.num_items
                and np.array_equal(self._owners, other._owners)
                and np.array_equal(self._items, other._items))

    def __hash__(self):
        return hash((self.num_owners, self.num_items, self._owners.tobytes(), self._items.tobytes()))

    def __repr__(self):
        return f"OwnershipGraph(owners={self.num_owners}, items={self.num_items}, edges={self.num_edges})"


def _check_items(g: OwnershipGraph, items: Iterable[int]) -> list[int]:
    items = [int(i) for i in items]
    bad = [i for i in items if not 0 <= i < g.num_items]
    if bad:
        raise GraphError(f"item ids {bad} outside [0, {g.num_items})")
    return items


def common_owner_set(g: OwnershipGraph, block: Iterable[int]) -> frozenset[int]:
    """Owners who own every item of ``block``."""
    items = _check_items(g, block)
    if not items:
        raise GraphError("block must be nonempty")
    common = set(g.owners_of(items[0]))
    for i in items[1:]:
        common.intersection_update(g.owners_of(i))
        if not common:
            break
    return frozenset(common)


@dataclass(frozen=True)
class Partition:
    """Disjoint item blocks covering ``0..n-1`` with their common-owner sets."""

    blocks: tuple[tuple[int, ...], ...]
    common_owners: tuple[frozenset[int], ...] = field(compare=True)

    @classmethod
    def from_blocks(cls, g: OwnershipGraph, blocks: Iterable[Iterable[int]]) -> "Partition":
        canon = tuple(tuple(sorted(int(i) for i in b)) for b in blocks)
        covered = bytearray(g.num_items)
        for b in canon:
            if not b:
                raise GraphError("partition blocks must be nonempty")
            if b[0] < 0 or b[-1] >= g.num_items:
                raise GraphError(f"block {list(b)[:10]} has item ids outside [0, {g.num_items})")
            for i in b:
                if covered[i]:
                    raise GraphError(f"item {i} appears in more than one block")
                covered[i] = 1
        if not all(covered):
            missing = [i for i in range(g.num_items) if not covered[i]]
            raise GraphError(f"partition does not cover items {missing[:10]}")
        owners_of = g._owners_of
        common = []
        for b in canon:
            t = set(owners_of[b[0]])
            for i in b[1:]:
                if not t:
                    break
                t.intersection_update(owners_of[i])
            common.append(frozenset(t))
        return cls(canon, tuple(common))

    @classmethod
    def singletons(cls, g: OwnershipGraph) -> "Partition":
        return cls.from_blocks(g, [[i] for i in range(g.num_items)])

    @property
    def sizes(self) -> list[int]:
        return [len(b) for b in self.blocks]

    def block_of(self) -> dict[int, int]:
        return {i: k for k, b in enumerate(self.blocks) for i in b}

    def canonical(self) -> frozenset[frozenset[int]]:
        """Order-free view, for comparing partitions as set families."""
        return frozenset(frozenset(b) for b in self.blocks)

    def check(self, g: OwnershipGraph) -> None:
        """Raise unless the stored owner sets match the graph."""
        fresh = Partition.from_blocks(g, self.blocks)
        if fresh.common_owners != self.common_owners:
            raise GraphError("stored common-owner sets disagree with the graph")

    def __len__(self):
        return len(self.blocks)


def is_L_strong(g: OwnershipGraph, p: Partition, L: int) -> bool:
    """Every block with more than one item has at least ``L`` common owners."""
    if L < 1:
        raise GraphError("L must be at least 1")
    return all(len(b) <= 1 or len(common_owner_set(g, b)) >= L for b in p.blocks)


def reduce_L_to_1(g: OwnershipGraph, L: int, budget: int = REDUCTION_BUDGET) -> OwnershipGraph:
    """Graph whose 1-strong partitions are exactly the L-strong partitions of ``g``.

    Each derived owner stands for a set of ``L`` original owners and owns their
    common items.  Subsets with no common item are omitted and subsets with
    identical common items share one derived owner; ``owner_labels`` of the
    result lists, per derived owner, the original ``L``-subsets it represents
    (first one lexicographically smallest).

    The work is driven by items: an ``L``-subset matters only if it co-owns
    some item, so the cost is ``sum_i C(deg(i), L)`` rather than ``C(m, L) n``.
    That count is checked against ``budget`` before anything is built.
    """
    if L < 1:
        raise GraphError("L must be at least 1")
    if L == 1:
        return OwnershipGraph(g.num_owners, g.num_items, g.edges(),
                              owner_labels=[[(j,)] for j in range(g.num_owners)],
                              item_labels=g.item_labels)
    work = sum(math.comb(len(g.owners_of(i)), L) for i in range(g.num_items))
    if work > budget:
        raise BudgetExceededError(
            f"L={L} reduction needs {work} subset-item visits, budget is {budget}",
            required=work, limit=budget)
    common: dict[tuple[int, ...], list[int]] = {}
    for i in range(g.num_items):
        for u in itertools.combinations(g.owners_of(i), L):
            common.setdefault(u, []).append(i)
    by_items: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
    for u in sorted(common):
        by_items.setdefault(tuple(common[u]), []).append(u)
    derived = sorted(by_items.items(), key=lambda kv: kv[1][0])
    edges = [(k, i) for k, (items, _) in enumerate(derived) for i in items]
    return OwnershipGraph(len(derived), g.num_items, edges,
                          owner_labels=[subs for _, subs in derived], item_labels=g.item_labels)


# -- generators ------------------------------------------------------------

def gen_ternary_tree(depth: int) -> OwnershipGraph:
    """Complete ternary tree: leaves are items, internal nodes are owners.

    Owner ids follow breadth-first order (root is 0); the owner at depth ``d``
    and position ``k`` owns leaves ``k*3**(depth-d) .. (k+1)*3**(depth-d)-1``.
    """
    if depth < 1:
        raise GraphError("depth must be at least 1")
    if depth > MAX_TREE_DEPTH:
        raise BudgetExceededError(f"tree depth {depth} exceeds guard {MAX_TREE_DEPTH}",
                                  required=depth, limit=MAX_TREE_DEPTH)
    n = 3 ** depth
    owners, items, labels = [], [], []
    j = 0
    for d in range(depth):
        span = 3 ** (depth - d)
        for k in range(3 ** d):
            owners.append(np.full(span, j))
            items.append(np.arange(k * span, (k + 1) * span))
            labels.append((d, k))
            j += 1
    edges = np.column_stack([np.concatenate(owners), np.concatenate(items)])
    return OwnershipGraph(j, n, edges, owner_labels=labels)


def tree_block_partition(depth: int, L: int) -> list[list[int]]:
    """Leaf sets under the depth-``L-1`` nodes: the canonical L-strong tree partition."""
    if not 1 <= L <= depth:
        raise GraphError(f"L must lie in [1, {depth}]")
    span = 3 ** (depth - L + 1)
    return [list(range(k * span, (k + 1) * span)) for k in range(3 ** (L - 1))]


def gen_tightness_family(M: int, L: int, N: int) -> OwnershipGraph:
    """Lower-bound instance on which greedy approaches its worst ratio.

    Owners ``0..M-1`` own disjoint runs of ``N`` items.  Extra owner ``M+l-1``
    (``l = 1..L``) takes a fresh chunk of ``N (M-1)**(l-1) / M**l`` items from
    every run plus one more item from run ``(l-1) mod M``, so it owns
    ``(1-1/M)**(l-1) N + 1`` items and is the greedy's ``l``-th pick.
    """
    if M < 2 or L < 1 or N < 1:
        raise GraphError("need M >= 2, L >= 1, N >= 1")
    if N % (M ** L):
        raise GraphError(f"divisibility M^L | N fails: {M}^{L} = {M ** L} does not divide N = {N}")
    if N * (M - 1) ** L < L * M ** L:
        raise GraphError(f"size condition N (1-1/M)^L >= L fails for M={M}, L={L}, N={N}")
    next_free = [r * N for r in range(M)]
    edges = [(r, r * N + t) for r in range(M) for t in range(N)]
    for ell in range(1, L + 1):
        chunk = N * (M - 1) ** (ell - 1) // M ** ell
        owner = M + ell - 1
        for r in range(M):
            take = chunk + (1 if r == (ell - 1) % M else 0)
            start = next_free[r]
            edges.extend((owner, start + t) for t in range(take))
            next_free[r] += take
    return OwnershipGraph(M + L, M * N, edges)


@dataclass(frozen=True)
class DegreeLaw:
    """Synthetic authorship law.

    Owner activity weights are Pareto with tail ``exponent`` (density
    ``~ x**-exponent``); each item draws ``1 + Poisson(mean_team_size - 1)``
    distinct owners with probability proportional to activity.
    """

    exponent: float = 2.5
    mean_team_size: float = 3.0


def gen_random_conference(n: int, m: int, degree_law: DegreeLaw | None = None,
                          seed: int = 0) -> OwnershipGraph:
    """Random conference-like ownership graph; every item gets at least one owner."""
    law = degree_law or DegreeLaw()
    if n < 1 or m < 1:
        raise GraphError("need at least one item and one owner")
    if law.exponent <= 1.0 or law.mean_team_size < 1.0:
        raise GraphError(f"infeasible degree law {law}: need exponent > 1 and mean team size >= 1")
    rng = np.random.default_rng(seed)
    weights = rng.pareto(law.exponent - 1.0, size=m) + 1.0
    p = weights / weights.sum()
    team = np.minimum(1 + rng.poisson(law.mean_team_size - 1.0, size=n), m)
    item_of_slot = np.repeat(np.arange(n), team)
    owner_of_slot = rng.choice(m, size=item_of_slot.size, p=p)
    for _ in range(64):
        key = item_of_slot * m + owner_of_slot
        order = np.argsort(key, kind="stable")
        dup = np.zeros(key.size, dtype=bool)
        dup[order[1:]] = key[order[1:]] == key[order[:-1]]
        if not dup.any():
            break
        owner_of_slot[dup] = rng.choice(m, size=int(dup.sum()), p=p)
    keep = np.ones(key.size, dtype=bool)
    key = item_of_slot * m + owner_of_slot
    _, first = np.unique(key, return_index=True)
    keep[:] = False
    keep[first] = True
    edges = np.column_stack([owner_of_slot[keep], item_of_slot[keep]])
    return OwnershipGraph(m, n, edges)
