"""Calibration rules that turn raw scores plus owner rankings into adjusted scores.

Reports are dictionaries ``{owner: ranking}`` with rankings listed best-first.
An owner absent from the dictionary simply contributes nothing; use
:func:`fill_missing_reports` to apply the random-ranking policy instead.
"""
from __future__ import annotations

import itertools
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError, IsomechError, RankingError
from .isotonic import as_scores, check_ranking, fit_subset, isotonic_fit, pava_descending
from .ownership import OwnershipGraph, Partition

Reports = Mapping[int, Sequence[int]]
WEIGHT_TOL = 1e-12


def restrict(ranking: Sequence[int], scope) -> tuple[int, ...]:
    """Items of ``scope`` in the order ``ranking`` lists them."""
    scope = set(scope)
    return tuple(i for i in ranking if i in scope)


def credentials(cred, num_owners: int) -> np.ndarray:
    """Normalise credentials to a length-``num_owners`` array (default all ones)."""
    if cred is None:
        return np.ones(num_owners)
    if isinstance(cred, Mapping):
        out = np.ones(num_owners)
        for j, a in cred.items():
            out[int(j)] = float(a)
    else:
        out = np.asarray(cred, dtype=float)
        if out.shape != (num_owners,):
            raise GraphError(f"expected {num_owners} credentials, got shape {out.shape}")
    if np.any(out < 0) or not np.all(np.isfinite(out)):
        raise GraphError("credentials must be finite and nonnegative")
    return out


def fill_missing_reports(g: OwnershipGraph, reports: Reports, seed: int) -> dict[int, tuple[int, ...]]:
    """Give every silent owner a uniformly random ranking of its items.

    The draw for owner ``j`` depends only on ``(seed, j)``, so the fill is
    reproducible and unaffected by which other owners reported.
    """
    out = {int(j): tuple(r) for j, r in reports.items()}
    for j in range(g.num_owners):
        items = g.items_of(j)
        if j not in out and items:
            rng = np.random.default_rng([seed, j])
            out[j] = tuple(int(i) for i in rng.permutation(np.asarray(items)))
    return out


def truthful_reports(g: OwnershipGraph, R, owners=None) -> dict[int, tuple[int, ...]]:
    """Each owner ranks its items by descending ``R`` (ties by item id)."""
    R = np.asarray(R, dtype=float)
    owners = range(g.num_owners) if owners is None else owners
    return {j: tuple(sorted(g.items_of(j), key=lambda i: (-R[i], i))) for j in owners if g.items_of(j)}


def mechanism1(y, reports: Reports, cred=None) -> np.ndarray:
    """Credential-weighted average of each reporter's isotonic fit of the full vector."""
    y = as_scores(y)
    if not reports:
        raise IsomechError("no reports to aggregate")
    owners = sorted(int(j) for j in reports)
    alpha = _credential_lookup(cred)
    total = 0.0
    acc = np.zeros_like(y)
    for j in owners:
        a = alpha(j)
        if a == 0.0:
            continue
        acc += a * isotonic_fit(y, reports[j])
        total += a
    if total == 0.0:
        raise IsomechError("credentials of the reporting owners sum to zero")
    return acc / total


def _credential_lookup(cred) -> Callable[[int], float]:
    if cred is None:
        return lambda j: 1.0
    if isinstance(cred, Mapping):
        table = {int(j): float(a) for j, a in cred.items()}
    else:
        table = dict(enumerate(np.asarray(cred, dtype=float).tolist()))
    if any(a < 0 or not np.isfinite(a) for a in table.values()):
        raise GraphError("credentials must be finite and nonnegative")
    return lambda j: table.get(j, 1.0)


def naive_average(g: OwnershipGraph, y, reports: Reports) -> np.ndarray:
    """Fit each owner's sub-vector separately, then average fits per item over its owners."""
    y = as_scores(y)
    _check_length(g, y)
    acc = np.zeros_like(y)
    cnt = np.zeros(y.size)
    for j in range(g.num_owners):
        items = g.items_of(j)
        if not items or j not in reports:
            continue
        acc[list(items)] += fit_subset(y, items, reports[j])
        cnt[list(items)] += 1
    out = y.copy()
    mask = cnt > 0
    out[mask] = acc[mask] / cnt[mask]
    return out


@dataclass
class CalibrationResult:
    adjusted: np.ndarray
    elicited_blocks: list[int] = field(default_factory=list)
    fallback_blocks: list[int] = field(default_factory=list)


def calibrate_partition(g: OwnershipGraph, p: Partition, y, reports: Reports, cred=None) -> CalibrationResult:
    """Partition-based calibration with bookkeeping of which blocks were adjusted.

    Blocks with one item or no common owner keep their raw scores.  Otherwise
    every reporting common owner's ranking is sliced to the block and the
    block is calibrated by the credential-weighted average of those fits; if
    no common owner reported with positive credential the block stays raw and
    is listed in ``fallback_blocks``.
    """
    y = as_scores(y)
    _check_length(g, y)
    alpha = credentials(cred, g.num_owners).tolist()
    values = y.tolist()
    out = list(values)
    elicited, fallback = [], []
    position: dict[int, dict[int, int]] = {}
    for k, (block, owners) in enumerate(zip(p.blocks, p.common_owners)):
        if len(block) < 2 or not owners:
            continue
        acc = dict.fromkeys(block, 0.0)
        total = 0.0
        for j in sorted(owners):
            a = alpha[j]
            if j not in reports or a == 0.0:
                continue
            if j not in position:
                position[j] = {item: r for r, item in enumerate(reports[j])}
            try:
                local = sorted(block, key=position[j].__getitem__)
            except KeyError as exc:
                raise RankingError(f"report of owner {j} omits item {exc.args[0]} of block {block}") from None
            # the sorted slice is a permutation of the block, so PAVA applies directly
            for i, v in zip(local, pava_descending([values[i] for i in local])):
                acc[i] += a * v
            total += a
        if total == 0.0:
            fallback.append(k)
            continue
        for i, v in acc.items():
            out[i] = v / total
        elicited.append(k)
    return CalibrationResult(np.asarray(out), elicited, fallback)


def mechanism2(g: OwnershipGraph, p: Partition, y, reports: Reports, cred=None) -> np.ndarray:
    """Partition-based isotonic calibration; see :func:`calibrate_partition`."""
    return calibrate_partition(g, p, y, reports, cred).adjusted


@dataclass(frozen=True)
class Mech3Params:
    """Per-owner item partitions and per-owner item weights.

    ``partitions[j]`` splits exactly the items of owner ``j``;
    ``weights[j, i]`` is owner ``j``'s weight on item ``i`` and must vanish
    off that owner's items.
    """

    graph: OwnershipGraph
    partitions: tuple[tuple[tuple[int, ...], ...], ...]
    weights: np.ndarray

    @classmethod
    def create(cls, g: OwnershipGraph, partitions, weights) -> "Mech3Params":
        parts = []
        if len(partitions) != g.num_owners:
            raise GraphError(f"need one partition per owner ({g.num_owners}), got {len(partitions)}")
        for j, blocks in enumerate(partitions):
            blocks = tuple(tuple(sorted(int(i) for i in b)) for b in blocks if len(b))
            flat = [i for b in blocks for i in b]
            if len(flat) != len(set(flat)) or set(flat) != set(g.items_of(j)):
                raise GraphError(f"blocks of owner {j} do not partition its items {list(g.items_of(j))}")
            parts.append(blocks)
        w = np.array(weights, dtype=float)
        if w.shape != (g.num_owners, g.num_items):
            raise GraphError(f"weights must have shape {(g.num_owners, g.num_items)}, got {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise GraphError("item weights must be finite and nonnegative")
        for j in range(g.num_owners):
            off = np.ones(g.num_items, dtype=bool)
            off[list(g.items_of(j))] = False
            if np.any(w[j, off] != 0):
                raise GraphError(f"owner {j} has nonzero weight on items it does not own")
        w.setflags(write=False)
        return cls(g, tuple(parts), w)

    @classmethod
    def from_partition(cls, g: OwnershipGraph, p: Partition) -> "Mech3Params":
        """Encode a global partition: weight 1 exactly where the owner owns the whole block."""
        block_of = p.block_of()
        parts = []
        w = np.zeros((g.num_owners, g.num_items))
        for j in range(g.num_owners):
            groups: dict[int, list[int]] = {}
            for i in g.items_of(j):
                groups.setdefault(block_of[i], []).append(i)
            parts.append([groups[k] for k in sorted(groups)])
            for k, items in groups.items():
                if j in p.common_owners[k]:
                    w[j, items] = 1.0
        return cls.create(g, parts, w)

    def nonzero_blocks(self, j: int) -> list[tuple[int, ...]]:
        return [b for b in self.partitions[j] if np.any(self.weights[j, list(b)] != 0)]


def mechanism3(g: OwnershipGraph, params: Mech3Params, y, reports: Reports, cred=None) -> np.ndarray:
    """Weighted average of per-owner, per-block isotonic fits.

    Item ``i`` receives ``sum_j a_j b_ji fit_ji / sum_j a_j b_ji`` with
    credentials ``a`` and weights ``b``; a zero denominator leaves the raw score.
    """
    y = as_scores(y)
    _check_length(g, y)
    alpha = credentials(cred, g.num_owners)
    num = np.zeros_like(y)
    den = np.zeros_like(y)
    for j in range(g.num_owners):
        if alpha[j] == 0.0 or j not in reports:
            continue
        for block in params.partitions[j]:
            b = params.weights[j, list(block)]
            if not np.any(b):
                continue
            fit = fit_subset(y, block, restrict(reports[j], block))
            num[list(block)] += alpha[j] * b * fit
            den[list(block)] += alpha[j] * b
    out = y.copy()
    mask = den > 0
    out[mask] = num[mask] / den[mask]
    return out


def influence(g: OwnershipGraph, params: Mech3Params, cred=None) -> np.ndarray:
    """Matrix of each owner's relative influence on each item (zero where undefined)."""
    alpha = credentials(cred, g.num_owners)
    ab = alpha[:, None] * params.weights
    den = ab.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, ab / np.where(den > 0, den, 1.0), 0.0)


def balanced_influence_check(g: OwnershipGraph, params: Mech3Params, cred=None,
                             tol: float = WEIGHT_TOL) -> list[tuple[int, tuple[int, ...], int, int]]:
    """Violations ``(owner, block, i, i2)`` where an owner's influence differs inside its block.

    This certifies balance for the given credentials only; balance for every
    credential vector is what :func:`partition_structure_check` tests.
    """
    omega = influence(g, params, cred)
    out = []
    for j in range(g.num_owners):
        for block in params.partitions[j]:
            for i, i2 in itertools.combinations(block, 2):
                if abs(omega[j, i] - omega[j, i2]) > tol:
                    out.append((j, block, i, i2))
    return out


def _structure_violations(params: Mech3Params, pairs, first_only=False):
    w = params.weights
    out = []
    for (j, S), (j2, S2) in pairs:
        if not set(S) & set(S2):
            continue
        union = sorted(set(S) | set(S2))
        for owner in dict.fromkeys((j, j2)):
            ref = union[0]
            for i in union[1:]:
                if abs(w[owner, i] - w[owner, ref]) > WEIGHT_TOL:
                    out.append((owner, (j, S), (j2, S2), ref, i))
                    if first_only:
                        return out
    return out


def _all_block_pairs(params: Mech3Params):
    tagged = [(j, S) for j, blocks in enumerate(params.partitions) for S in blocks]
    return itertools.combinations_with_replacement(tagged, 2)


def partition_structure_check(params: Mech3Params) -> list[tuple]:
    """Violations of the weight-consistency rule across overlapping blocks.

    Whenever a block ``S`` of owner ``j`` meets a block ``S2`` of owner ``j2``
    (``j == j2`` and ``S == S2`` included), each of the two owners must weigh
    every item of ``S | S2`` equally, counting weight 0 off its own items.
    Each violation is ``(owner, (j, S), (j2, S2), i, i2)`` with
    ``w[owner, i] != w[owner, i2]``.
    """
    return _structure_violations(params, _all_block_pairs(params))


def elicited_pairs(params: Mech3Params) -> set[tuple[int, int]]:
    """Item pairs compared inside some positively weighted block."""
    return {pair for j in range(len(params.partitions)) for b in params.nonzero_blocks(j)
            for pair in itertools.combinations(b, 2)}


def partition_pairs(p: Partition) -> set[tuple[int, int]]:
    """Item pairs compared by the partition mechanism (blocks with a common owner)."""
    return {pair for b, t in zip(p.blocks, p.common_owners) if t for pair in itertools.combinations(b, 2)}


def _mergeable(params: Mech3Params, parts: list[list[tuple[int, ...]]], j: int,
               S: tuple[int, ...], S2: tuple[int, ...]) -> bool:
    g, w = params.graph, params.weights
    union = sorted(S + S2)
    if np.ptp(w[j, union]) > WEIGHT_TOL or not np.any(w[j, union]):
        return False
    union_set = set(union)
    for j2 in range(g.num_owners):
        if j2 == j or not union_set <= g.item_sets[j2]:
            continue
        vals = w[j2, union]
        if np.ptp(vals) > WEIGHT_TOL or vals[0] == 0:
            return False
    merged = tuple(union)
    tagged = [(j2, B) for j2, blocks in enumerate(parts) for B in blocks
              if not (j2 == j and B in (S, S2))]
    pairs = [((j, merged), other) for other in tagged] + [((j, merged), (j, merged))]
    return not _structure_violations(params, pairs, first_only=True)


def merge_blocks(params: Mech3Params) -> Mech3Params:
    """Apply the block merge to a fixpoint and drop zero-weight blocks.

    Two blocks of one owner merge when the owner weighs both equally (and not
    zero), every other owner holding their whole union weighs it equally and
    nonzero, and the merged configuration still passes the structure check.
    Owners are scanned in ascending order and block pairs lexicographically,
    restarting after each merge.
    """
    violations = partition_structure_check(params)
    if violations:
        raise IsomechError(f"parameters lack a valid partition structure; first violation {violations[0]}")
    parts = [sorted(blocks) for blocks in params.partitions]
    changed = True
    while changed:
        changed = False
        for j in range(len(parts)):
            for a, b in itertools.combinations(range(len(parts[j])), 2):
                S, S2 = parts[j][a], parts[j][b]
                if _mergeable(params, parts, j, S, S2):
                    parts[j] = sorted([B for k, B in enumerate(parts[j]) if k not in (a, b)]
                                      + [tuple(sorted(S + S2))])
                    changed = True
                    break
            if changed:
                break
    w = params.weights
    kept = [tuple(B for B in blocks if np.any(w[j, list(B)])) for j, blocks in enumerate(parts)]
    return Mech3Params(params.graph, tuple(tuple(blocks) for blocks in kept), w)


def merge_to_global_partition(params: Mech3Params) -> Partition:
    """Collapse structure-valid personalised parameters into one global partition.

    Distinct merged blocks must be pairwise disjoint; items left uncovered
    become singletons.
    """
    merged = merge_blocks(params)
    distinct = sorted({B for blocks in merged.partitions for B in blocks})
    seen: dict[int, tuple[int, ...]] = {}
    for B in distinct:
        for i in B:
            if i in seen:
                raise IsomechError(f"merged blocks {seen[i]} and {B} overlap without being identical")
            seen[i] = B
    g = params.graph
    blocks = list(distinct) + [(i,) for i in range(g.num_items) if i not in seen]
    return Partition.from_blocks(g, sorted(blocks))


def _check_length(g: OwnershipGraph, y: np.ndarray) -> None:
    if y.size != g.num_items:
        raise IsomechError(f"{y.size} scores given for {g.num_items} items")


# -- mechanism handles used by the auditor and experiments -----------------

@dataclass(frozen=True)
class MechanismSpec:
    """A named calibration rule bound to its graph and parameters.

    ``run(y, reports)`` returns adjusted scores; every owner reports a full
    ranking of its own items and the rule slices what it needs.
    """

    name: str
    graph: OwnershipGraph
    run: Callable[[np.ndarray, Reports], np.ndarray]

    def __call__(self, y, reports: Reports) -> np.ndarray:
        return self.run(y, reports)


def complete_overlap_spec(g: OwnershipGraph, cred=None) -> MechanismSpec:
    if not g.is_complete_overlap():
        raise GraphError("the complete-overlap rule needs every owner to own every item")
    alpha = credentials(cred, g.num_owners)
    return MechanismSpec("isotonic", g, lambda y, rep: mechanism1(y, rep, alpha))


def naive_spec(g: OwnershipGraph) -> MechanismSpec:
    return MechanismSpec("naive", g, lambda y, rep: naive_average(g, y, rep))


def partition_spec(g: OwnershipGraph, p: Partition, cred=None) -> MechanismSpec:
    alpha = credentials(cred, g.num_owners)
    return MechanismSpec("partition", g, lambda y, rep: mechanism2(g, p, y, rep, alpha))


def personalized_spec(g: OwnershipGraph, params: Mech3Params, cred=None) -> MechanismSpec:
    alpha = credentials(cred, g.num_owners)
    return MechanismSpec("personalized", g, lambda y, rep: mechanism3(g, params, y, rep, alpha))


def check_reports(g: OwnershipGraph, reports: Reports) -> None:
    """Raise unless each report ranks exactly its owner's items."""
    for j, r in reports.items():
        if not 0 <= int(j) < g.num_owners:
            raise RankingError(f"report from unknown owner {j}")
        check_ranking(r, g.items_of(int(j)))
