"""Simulation pipelines: conference-style calibration, the tree tradeoff and partition benchmarks."""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IsomechError
from .incentives import perceived_ranking
from .mechanisms import calibrate_partition, truthful_reports
from .ownership import (DegreeLaw, OwnershipGraph, Partition, gen_random_conference,
                        gen_ternary_tree, tree_block_partition)
from .partition import (COMPARISON_FOCUSED, SIZE_FOCUSED, PartitionObjectiveReport,
                        WellnessFunction, brute_force_optimal, greedy_partition,
                        greedy_partition_L, objective_report, random_partition)

PRIOR_MEAN = 5.0
PRIOR_SD = 1.5
MAX_TREE_DEPTH = 8


@dataclass
class ExperimentConfig:
    """Settings of one simulation run.

    ``graph_source`` is a generator spec such as ``{"generator": "conference",
    "n": 3000, "m": 6000}`` or ``{"generator": "tree", "depth": 7}``; ingest
    runs pass the graph and scores directly to :func:`run_iclr_style`.
    """

    graph_source: dict = field(default_factory=lambda: {"generator": "conference", "n": 3000, "m": 6000})
    noise_sigma: float = 2.0
    perception_variance: float | None = None
    partition_method: str = "greedy"
    L: int = 1
    trials: int = 30
    seed: int = 0
    metrics: tuple[str, ...] = ("mse", "accept@30")
    prior_mean: float = PRIOR_MEAN
    prior_sd: float = PRIOR_SD

    def __post_init__(self):
        if self.trials < 1:
            raise IsomechError("trials must be at least 1")
        if self.noise_sigma < 0:
            raise IsomechError("noise_sigma must be nonnegative")
        if self.partition_method not in ("greedy", "random", "bruteforce", "fixed"):
            raise IsomechError(f"unknown partition method {self.partition_method!r}")
        self.metrics = tuple(self.metrics)

    def top_percents(self) -> list[float]:
        return [float(m.split("@", 1)[1]) for m in self.metrics if m.startswith("accept@")]


@dataclass
class MetricsReport:
    """Aggregated metrics; ``per_trial`` holds one row per trial, method and metric."""

    config: dict
    mse_per_method: dict[str, float]
    pct_change_vs_baseline: dict[str, float]
    accept_accuracy_at_k: dict[str, dict[str, float]]
    per_trial: list[dict]
    summary: dict[str, dict[str, float]]

    def to_json(self) -> dict:
        return asdict(self)

    def csv_rows(self) -> list[dict]:
        return list(self.per_trial)


def mse(R, R_hat) -> float:
    R, R_hat = np.asarray(R, dtype=float), np.asarray(R_hat, dtype=float)
    return float(np.mean((R - R_hat) ** 2))


def pct_change(model: float, baseline: float) -> float:
    if baseline == 0.0:
        return 0.0 if model == 0.0 else math.nan
    return (model - baseline) / baseline


def _top_k(scores: np.ndarray, k: int) -> set[int]:
    order = np.lexsort((np.arange(scores.size), scores))[::-1]
    return set(order[:k].tolist())


def accept_accuracy(R_true, R_hat, top_percent: float) -> float:
    """Share of the true top ``top_percent``% that is also in the estimated top.

    Ranking is by ``(score, item id)`` descending, so ties favour larger ids.
    """
    R_true, R_hat = np.asarray(R_true, dtype=float), np.asarray(R_hat, dtype=float)
    if not 0 < top_percent <= 100:
        raise IsomechError("top_percent must lie in (0, 100]")
    k = math.floor(R_true.size * top_percent / 100 + 0.5)
    if k == 0:
        raise IsomechError(f"top {top_percent}% of {R_true.size} items is empty")
    return len(_top_k(R_true, k) & _top_k(R_hat, k)) / k


def _summary(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=float)
    err = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "stderr": err, "n": int(arr.size)}


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def build_graph(source: dict) -> OwnershipGraph:
    kind = source.get("generator")
    if kind == "conference":
        law = DegreeLaw(**source.get("degree_law", {}))
        return gen_random_conference(int(source["n"]), int(source["m"]), law, int(source.get("seed", 0)))
    if kind == "tree":
        return gen_ternary_tree(int(source["depth"]))
    raise IsomechError(f"graph_source needs generator 'conference' or 'tree', got {kind!r}")


def choose_partition(g: OwnershipGraph, method: str, L: int = 1, seed: int = 0,
                     fixed: Partition | None = None) -> Partition:
    if method == "fixed":
        if fixed is None:
            raise IsomechError("partition method 'fixed' needs a partition")
        return fixed
    if method == "greedy":
        return greedy_partition(g) if L == 1 else greedy_partition_L(g, L)
    if method == "random":
        if L != 1:
            raise IsomechError("random partitions are 1-strong only")
        return random_partition(g, seed)
    if method == "bruteforce":
        return brute_force_optimal(g, COMPARISON_FOCUSED, L)
    raise IsomechError(f"unknown partition method {method!r}")


def _reports(g: OwnershipGraph, R: np.ndarray, variance: float | None, rng) -> dict:
    if not variance:
        return truthful_reports(g, R)
    return {j: perceived_ranking(R, g.items_of(j), variance, rng) for j in range(g.num_owners) if g.items_of(j)}


def run_iclr_style(cfg: ExperimentConfig, graph: OwnershipGraph | None = None, scores=None,
                   partition: Partition | None = None) -> MetricsReport:
    """Calibrate with the partition mechanism and score against simulated truth.

    Synthetic mode draws ``R ~ N(prior_mean, prior_sd**2)`` and sets
    ``y = R + z``; when ``scores`` are given they are taken as ``y`` and the
    truth is ``R = y - z``.  In both cases ``z ~ N(0, noise_sigma**2)``.
    Owners report truthfully unless ``perception_variance`` is set.
    """
    g = graph if graph is not None else build_graph(cfg.graph_source)
    p = choose_partition(g, cfg.partition_method, cfg.L, cfg.seed, partition)
    y_obs = None if scores is None else np.asarray(scores, dtype=float)
    if y_obs is not None and y_obs.shape != (g.num_items,):
        raise IsomechError(f"need {g.num_items} scores, got shape {y_obs.shape}")
    tops = cfg.top_percents()
    rows: list[dict] = []
    for t in range(cfg.trials):
        rng = trial_rng(cfg.seed, t)
        if y_obs is None:
            R = rng.normal(cfg.prior_mean, cfg.prior_sd, size=g.num_items)
            y = R + rng.normal(0.0, cfg.noise_sigma, size=g.num_items)
        else:
            y = y_obs
            R = y - rng.normal(0.0, cfg.noise_sigma, size=g.num_items)
        reports = _reports(g, R, cfg.perception_variance, rng)
        adjusted = calibrate_partition(g, p, y, reports).adjusted
        base_mse, model_mse = mse(R, y), mse(R, adjusted)
        rows += [{"trial": t, "method": "baseline", "metric": "mse", "value": base_mse},
                 {"trial": t, "method": "partition", "metric": "mse", "value": model_mse},
                 {"trial": t, "method": "partition", "metric": "pct_change", "value": pct_change(model_mse, base_mse)}]
        for q in tops:
            rows += [{"trial": t, "method": "baseline", "metric": f"accept@{q:g}", "value": accept_accuracy(R, y, q)},
                     {"trial": t, "method": "partition", "metric": f"accept@{q:g}",
                      "value": accept_accuracy(R, adjusted, q)}]
    return _aggregate(cfg_dict(cfg), rows, ["baseline", "partition"])


def _aggregate(config: dict, rows: list[dict], methods: Sequence[str], baseline_of=None) -> MetricsReport:
    summary: dict[str, dict[str, float]] = {}
    keys = sorted({(r["method"], r["metric"]) for r in rows}, key=lambda k: (methods.index(k[0]), k[1]))
    for method, metric in keys:
        summary[f"{method}/{metric}"] = _summary([r["value"] for r in rows
                                                  if r["method"] == method and r["metric"] == metric])
    mse_means = {m: summary[f"{m}/mse"]["mean"] for m in methods if f"{m}/mse" in summary}
    baseline_of = baseline_of or (lambda m: "baseline")
    pct = {m: pct_change(v, mse_means[baseline_of(m)]) for m, v in mse_means.items() if m != baseline_of(m)}
    accept = {m: {metric.split("@", 1)[1]: s["mean"] for key, s in summary.items()
                  for meth, metric in [key.split("/", 1)] if meth == m and metric.startswith("accept@")}
              for m in methods}
    return MetricsReport(config, mse_means, pct, {m: v for m, v in accept.items() if v}, rows, summary)


def cfg_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["metrics"] = list(cfg.metrics)
    return out


def tree_method(sigma: float, variance: float, L: int | None) -> str:
    return f"sigma={sigma:g}|zeta={variance:g}|" + ("baseline" if L is None else f"L={L}")


def run_tree_tradeoff(depth: int, sigma_list: Sequence[float], variance_list: Sequence[float],
                      trials: int, seed: int = 0, L_list: Sequence[int] | None = None) -> MetricsReport:
    """MSE of the partition mechanism on the ternary tree for each strongness level.

    For each ``L`` the blocks are the leaf sets under depth ``L-1`` nodes, so
    each block is ranked by its ``L`` ancestors.  Every owner perceives
    ``R_i + zeta_ji`` with ``zeta`` drawn independently per (owner, item) with
    the given variance, and ranks its items accordingly.
    """
    if not 1 <= depth <= MAX_TREE_DEPTH:
        raise IsomechError(f"tree depth must lie in [1, {MAX_TREE_DEPTH}]")
    if trials < 1:
        raise IsomechError("trials must be at least 1")
    g = gen_ternary_tree(depth)
    levels = list(L_list) if L_list is not None else list(range(1, depth + 1))
    partitions = {L: Partition.from_blocks(g, tree_block_partition(depth, L)) for L in levels}
    n = g.num_items
    spans = [(g.items_of(j)[0], len(g.items_of(j))) for j in range(g.num_owners)]
    rows: list[dict] = []
    methods: list[str] = []
    for sigma in sigma_list:
        for var in variance_list:
            methods += [tree_method(sigma, var, None)] + [tree_method(sigma, var, L) for L in levels]
    for t in range(trials):
        rng = trial_rng(seed, t)
        R = rng.normal(PRIOR_MEAN, PRIOR_SD, size=n)
        for sigma in sigma_list:
            y = R + rng.normal(0.0, sigma, size=n)
            base = mse(R, y)
            for var in variance_list:
                zeta = rng.normal(0.0, math.sqrt(var), size=(g.num_owners, n)) if var > 0 else None
                reports = {}
                for j, (start, size) in enumerate(spans):
                    seen = R[start:start + size] + (zeta[j, start:start + size] if zeta is not None else 0.0)
                    reports[j] = (start + np.argsort(-seen, kind="stable")).tolist()
                rows.append({"trial": t, "method": tree_method(sigma, var, None), "metric": "mse", "value": base,
                             "sigma": sigma, "zeta": var, "L": 0})
                for L in levels:
                    adjusted = calibrate_partition(g, partitions[L], y, reports).adjusted
                    rows.append({"trial": t, "method": tree_method(sigma, var, L), "metric": "mse",
                                 "value": mse(R, adjusted), "sigma": sigma, "zeta": var, "L": L})
    config = {"preset": "tree", "depth": depth, "sigma_list": list(sigma_list),
              "variance_list": list(variance_list), "trials": trials, "seed": seed, "levels": levels,
              "prior_mean": PRIOR_MEAN, "prior_sd": PRIOR_SD}
    return _aggregate(config, rows, methods,
                      baseline_of=lambda m: m.rsplit("|", 1)[0] + "|baseline")


def best_level(report: MetricsReport, sigma: float, variance: float) -> int:
    """Strongness level with the smallest mean MSE for one (sigma, variance) cell."""
    prefix = tree_method(sigma, variance, None).rsplit("|", 1)[0] + "|L="
    cells = {int(m[len(prefix):]): v for m, v in report.mse_per_method.items() if m.startswith(prefix)}
    if not cells:
        raise IsomechError(f"no tree results for sigma={sigma}, variance={variance}")
    return min(cells, key=lambda L: (cells[L], L))


def run_partition_benchmark(g: OwnershipGraph, w_list: Sequence[WellnessFunction] = (COMPARISON_FOCUSED, SIZE_FOCUSED),
                            seed: int = 0) -> list[PartitionObjectiveReport]:
    """Objectives of the greedy and a seeded random partition under each wellness function."""
    greedy = greedy_partition(g)
    rand = random_partition(g, seed)
    return [objective_report(g, p, w, name) for name, p in (("greedy", greedy), ("random", rand)) for w in w_list]
