"""Partition a synthetic conference by shared ownership and score the result.

Run with ``python demos/partition_items.py``.
"""
from isomech.ownership import gen_random_conference
from isomech.partition import (COMPARISON_FOCUSED, SIZE_FOCUSED, greedy_partition, greedy_partition_L,
                               objective_report, random_partition)


def main():
    g = gen_random_conference(2000, 4000, seed=1)
    candidates = {"greedy": greedy_partition(g), "random": random_partition(g, seed=1),
                  "greedy L=2": greedy_partition_L(g, 2)}
    for w in (COMPARISON_FOCUSED, SIZE_FOCUSED):
        print(f"wellness {w.name}")
        for name, p in candidates.items():
            r = objective_report(g, p, w, name)
            print(f"  {name:11s} objective {r.objective_value:9.1f}  blocks {len(r.block_sizes):5d}  "
                  f"strongness {r.strongness}")


if __name__ == "__main__":
    main()
