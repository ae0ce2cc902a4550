"""Audit whether owners gain by misreporting under three aggregation rules.

Run with ``python demos/audit_truthfulness.py``.
"""
from fractions import Fraction

from isomech.incentives import NoiseModel, UtilityModel, equilibrium_audit
from isomech.mechanisms import complete_overlap_spec, naive_spec, partition_spec
from isomech.ownership import OwnershipGraph
from isomech.partition import greedy_partition


def report(title, results):
    print(title)
    for r in results:
        gap = Fraction(r.gap).limit_denominator(1000)
        print(f"  owner {r.owner}: truthful best={r.truthful_is_best}  gap={gap}  best={r.best_reports[0]}")


def main():
    # Two owners share every item; owner 0 is held to a fixed, untruthful ranking.
    shared = OwnershipGraph.from_item_sets([[0, 1, 2], [0, 1, 2]], num_items=3)
    R, noise = [7, 4, 3], NoiseModel.exchangeable([2, 2, 4])
    report("shared items, one owner fixed off-truth",
           equilibrium_audit(complete_overlap_spec(shared, [0.5, 0.5]), R, noise, UtilityModel.hinge(6.25),
                             profile={0: (2, 0, 1)}, owners=[1]))

    # Overlapping ownership: averaging per-owner fits invites misreports, a partition does not.
    g = OwnershipGraph.from_item_sets([[0, 1], [0, 1], [1, 2]], num_items=3)
    R, noise, u = [9, 8, 4], NoiseModel.exchangeable([0, 0, 0]), UtilityModel.hinge(5)
    report("overlapping owners, naive average", equilibrium_audit(naive_spec(g), R, noise, u))
    report("overlapping owners, partition rule",
           equilibrium_audit(partition_spec(g, greedy_partition(g)), R, noise, u))


if __name__ == "__main__":
    main()
