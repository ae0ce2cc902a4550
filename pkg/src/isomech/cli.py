"""Command-line entry point: partition, calibrate, audit, simulate and gen."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BudgetExceededError, IsomechError
from .experiments import ExperimentConfig, MetricsReport, run_iclr_style, run_partition_benchmark, run_tree_tradeoff
from .incentives import NoiseModel, UtilityModel, equilibrium_audit
from .io import (EdgeList, FormatError, RunManifest, load_config, metrics_csv_rows, partition_to_json,
                 read_edges_csv, read_partition_json, read_reports_json, read_scores_csv, write_calibrated_csv,
                 write_csv, write_edges_csv, write_id_sidecar, write_json, write_manifest_sidecar)
from .mechanisms import (calibrate_partition, complete_overlap_spec, credentials, fill_missing_reports,
                         mechanism1, naive_average, naive_spec, partition_spec)
from .ownership import DegreeLaw, OwnershipGraph, Partition, gen_random_conference, gen_tightness_family, gen_ternary_tree
from .partition import COMPARISON_FOCUSED, brute_force_optimal, greedy_partition, greedy_partition_L, random_partition

log = logging.getLogger("isomech")

EXIT_OK, EXIT_UNTRUTHFUL, EXIT_ERROR = 0, 1, 2
SIMULATE_KEYS = {
    "iclr": {"preset", "n", "m", "sigma", "trials", "seed", "partition_method", "L",
             "perception_variance", "metrics", "degree_law"},
    "tree": {"preset", "depth", "sigma", "sigma_list", "variance_list", "trials", "seed", "levels"},
    "benchmark": {"preset", "n", "m", "seed", "degree_law"},
}


def _manifest_only(args, manifest: RunManifest) -> bool:
    if getattr(args, "manifest_only", False):
        print(json.dumps(manifest.finish().to_json(), indent=2))
        return True
    return False


def _emit(args, manifest: RunManifest, path, payload: dict) -> None:
    payload = dict(payload)
    payload["manifest"] = manifest.digest
    if path:
        write_json(path, payload)
        write_manifest_sidecar(path, manifest.finish())
    else:
        print(json.dumps(payload, indent=2))


def _build_partition(g: OwnershipGraph, method: str, strong: int, seed: int) -> Partition:
    if method == "greedy":
        return greedy_partition(g) if strong == 1 else greedy_partition_L(g, strong)
    if method == "random":
        if strong != 1:
            raise IsomechError("random partitions support --strong 1 only")
        return random_partition(g, seed)
    if method == "bruteforce":
        return brute_force_optimal(g, COMPARISON_FOCUSED, strong)
    raise IsomechError(f"unknown method {method!r}")


def _scan_max_item(path) -> int:
    top = -1
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if row and row[0].strip().isdigit():
                top = max(top, int(row[0]))
    return top + 1


# -- commands ----------------------------------------------------------------

def cmd_partition(args) -> int:
    manifest = RunManifest.start("partition", {"method": args.method, "strong": args.strong,
                                               "map_ids": args.map_ids}, {"edges": args.edges}, args.seed)
    if _manifest_only(args, manifest):
        return EXIT_OK
    edges = read_edges_csv(args.edges, map_ids=args.map_ids)
    p = _build_partition(edges.graph, args.method, args.strong, args.seed)
    payload = partition_to_json(p, args.method)
    if edges.item_ids is not None:
        payload["item_ids"] = [[edges.item_label(i) for i in b] for b in p.blocks]
    _emit(args, manifest, args.out, payload)
    if args.out and args.map_ids:
        write_id_sidecar(args.out, edges)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    inputs = {"edges": args.edges, "scores": args.scores, "reports": args.reports, "partition": args.partition}
    config = {"mechanism": args.mechanism, "partition_method": args.partition_method, "strong": args.strong,
              "fill": not args.no_fill, "map_ids": args.map_ids}
    manifest = RunManifest.start("calibrate", config, inputs, args.seed)
    if _manifest_only(args, manifest):
        return EXIT_OK
    n_hint = None if args.map_ids else _scan_max_item(args.scores)
    edges = read_edges_csv(args.edges, map_ids=args.map_ids, num_items=n_hint)
    g = edges.graph
    y = read_scores_csv(args.scores, edges)
    reports = read_reports_json(args.reports, edges) if args.reports else {}
    if not args.no_fill:
        reports = fill_missing_reports(g, reports, args.seed)
    if args.mechanism == "naive":
        adjusted = naive_average(g, y, reports)
    elif args.mechanism == "isotonic":
        adjusted = mechanism1(y, reports) if reports else y.copy()
    else:
        p = read_partition_json(args.partition, g) if args.partition else \
            _build_partition(g, args.partition_method, args.strong, args.seed)
        used = {j for b, t in zip(p.blocks, p.common_owners) if len(b) > 1 for j in t}
        ignored = sorted(set(reports) - used)
        if ignored:
            log.warning("ignoring rankings from %d owners outside every elicited block: %s",
                        len(ignored), [edges.owner_label(j) for j in ignored[:10]])
        result = calibrate_partition(g, p, y, reports)
        if result.fallback_blocks:
            log.warning("%d blocks kept raw scores (no usable ranking)", len(result.fallback_blocks))
        adjusted = result.adjusted
    out = args.out or "calibrated.csv"
    write_calibrated_csv(out, edges, y, adjusted)
    write_manifest_sidecar(out, manifest.finish())
    return EXIT_OK


def _fixture_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    shipped = resources.files("isomech") / "fixtures" / name
    if shipped.is_file():
        return Path(str(shipped))
    raise FormatError(f"audit instance {name!r} not found (shipped fixtures: remark61.json, example32.json)")


def load_audit_instance(data: dict):
    """Turn an audit JSON instance into (graph, R, noise, utilities, credentials, fixed reports, owners, partition)."""
    try:
        owners = data["owners"]
        R = np.asarray(data["true_scores"], dtype=float)
        noise = data.get("noise", {"kind": "exchangeable", "base": [0.0] * len(R)})
    except KeyError as exc:
        raise FormatError(f"audit instance missing key {exc.args[0]!r}") from None
    g = OwnershipGraph.from_item_sets(owners, num_items=len(R))
    if noise.get("kind") == "exchangeable":
        nm = NoiseModel.exchangeable(noise["base"])
    elif noise.get("kind") == "gaussian":
        nm = NoiseModel.gaussian(noise["sigma"])
    else:
        raise FormatError(f"noise.kind must be exchangeable or gaussian, got {noise.get('kind')!r}")
    util = data.get("utilities", {"kind": "hinge", "threshold": 0.0})
    specs = util if isinstance(util, list) else [util] * g.num_owners
    utils = [_utility(u) for u in specs]
    fixed = {int(r["owner_id"]): tuple(r["ranking"]) for r in data.get("fixed_reports", [])}
    audit_owners = data.get("audit_owners")
    partition = data.get("partition")
    return g, R, nm, utils, data.get("credentials"), fixed, audit_owners, partition


def _utility(spec: dict) -> UtilityModel:
    kind = spec.get("kind")
    if kind == "hinge":
        return UtilityModel.hinge(spec["threshold"])
    if kind == "power":
        return UtilityModel.power(spec["exponent"])
    if kind == "piecewise":
        return UtilityModel.piecewise_linear(spec["breakpoints"], spec["slopes"])
    if kind == "linear":
        return UtilityModel.linear()
    raise FormatError(f"unknown utility kind {kind!r}")


def cmd_audit(args) -> int:
    path = _fixture_path(args.instance)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    mechanism = args.mechanism or data.get("mechanism", "partition")
    manifest = RunManifest.start("audit", {"mechanism": mechanism, "full_table": args.full_table,
                                           "tolerance": args.tolerance}, {"instance": path})
    if _manifest_only(args, manifest):
        return EXIT_OK
    g, R, noise, utils, cred, fixed, owners, part = load_audit_instance(data)
    if mechanism == "isotonic":
        mech = complete_overlap_spec(g, credentials(cred, g.num_owners))
    elif mechanism == "naive":
        mech = naive_spec(g)
    elif mechanism == "partition":
        p = Partition.from_blocks(g, part) if part else greedy_partition(g)
        mech = partition_spec(g, p, credentials(cred, g.num_owners))
    else:
        raise IsomechError(f"unknown mechanism {mechanism!r}")
    mode = "exact" if noise.kind == "exchangeable" else "montecarlo"
    results = equilibrium_audit(mech, R, noise, utils, args.tolerance, profile=fixed,
                                owners=owners, mode=mode, seed=args.seed)
    payload = {"mechanism": mechanism, "owners": [r.to_json(args.full_table) for r in results],
               "all_truthful": all(r.truthful_is_best for r in results)}
    _emit(args, manifest, args.out, payload)
    return EXIT_OK if payload["all_truthful"] else EXIT_UNTRUTHFUL


def _check_keys(cfg: dict, preset: str) -> None:
    allowed = SIMULATE_KEYS[preset]
    for key in cfg:
        if key not in allowed:
            raise FormatError(f"config.{key}: unknown key for preset {preset!r} (allowed: {sorted(allowed)})")
    for key in ("trials", "depth", "n", "m", "L"):
        if key in cfg and (not isinstance(cfg[key], int) or cfg[key] < 1):
            raise FormatError(f"config.{key}: expected a positive integer, got {cfg[key]!r}")
    for key in ("sigma", "perception_variance"):
        if key in cfg and cfg[key] is not None and (not isinstance(cfg[key], (int, float)) or cfg[key] < 0):
            raise FormatError(f"config.{key}: expected a nonnegative number, got {cfg[key]!r}")


def resolve_simulation(args) -> dict:
    cfg = load_config(args.config) if args.config else {}
    preset = args.preset or cfg.get("preset")
    if preset not in SIMULATE_KEYS:
        raise FormatError(f"config.preset: expected one of {sorted(SIMULATE_KEYS)}, got {preset!r}")
    cfg["preset"] = preset
    for key in ("depth", "sigma", "trials", "seed"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    _check_keys(cfg, preset)
    return cfg


def cmd_simulate(args) -> int:
    cfg = resolve_simulation(args)
    manifest = RunManifest.start("simulate", cfg, {"config": args.config}, cfg.get("seed", 0))
    if _manifest_only(args, manifest):
        return EXIT_OK
    out_dir = Path(args.out_dir)
    preset, seed = cfg["preset"], cfg.get("seed", 0)
    if preset == "tree":
        sigmas = cfg.get("sigma_list", [cfg.get("sigma", 2.0)])
        report = run_tree_tradeoff(cfg.get("depth", 7), sigmas, cfg.get("variance_list", [0.1, 0.5, 1.0, 2.0]),
                                   cfg.get("trials", 20), seed, cfg.get("levels"))
    elif preset == "iclr":
        source = {"generator": "conference", "n": cfg.get("n", 3000), "m": cfg.get("m", 6000),
                  "seed": seed, "degree_law": cfg.get("degree_law", {})}
        ec = ExperimentConfig(graph_source=source, noise_sigma=cfg.get("sigma", 2.0),
                              perception_variance=cfg.get("perception_variance"),
                              partition_method=cfg.get("partition_method", "greedy"), L=cfg.get("L", 1),
                              trials=cfg.get("trials", 30), seed=seed,
                              metrics=tuple(cfg.get("metrics", ("mse", "accept@30"))))
        report = run_iclr_style(ec)
    else:
        g = gen_random_conference(cfg.get("n", 3000), cfg.get("m", 6000), DegreeLaw(**cfg.get("degree_law", {})), seed)
        rows = [{"method": r.method, "wellness": r.wellness, "objective": r.objective_value,
                 "strongness": r.strongness, "num_blocks": len(r.block_sizes)}
                for r in run_partition_benchmark(g, seed=seed)]
        _emit(args, manifest, out_dir / "benchmark.json", {"preset": preset, "reports": rows})
        return EXIT_OK
    _write_report(out_dir, report, manifest)
    return EXIT_OK


def _write_report(out_dir: Path, report: MetricsReport, manifest: RunManifest) -> None:
    payload = report.to_json()
    payload["manifest"] = manifest.digest
    write_json(out_dir / "metrics.json", payload)
    header, rows = metrics_csv_rows(report)
    write_csv(out_dir / "metrics.csv", header + ["manifest"], [r + [manifest.digest] for r in rows])
    write_manifest_sidecar(out_dir / "metrics.json", manifest.finish())


def cmd_gen(args) -> int:
    params = {k: v for k, v in vars(args).items() if k in ("kind", "depth", "n", "m", "M", "L", "N", "seed")}
    manifest = RunManifest.start("gen", params, seed=args.seed)
    if _manifest_only(args, manifest):
        return EXIT_OK
    if args.kind == "tree":
        g = gen_ternary_tree(args.depth)
    elif args.kind == "conference":
        g = gen_random_conference(args.n, args.m, DegreeLaw(), args.seed)
    else:
        g = gen_tightness_family(args.M, args.L, args.N)
    write_edges_csv(args.out, g)
    write_manifest_sidecar(args.out, manifest.finish())
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isomech", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest-only", action="store_true", help="print the run manifest and exit")
    common.add_argument("--seed", type=int, default=0, help="single source of randomness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", parents=[common], help="partition items from an edge list")
    p.add_argument("edges", help="CSV with header owner_id,item_id")
    p.add_argument("--method", choices=["greedy", "random", "bruteforce"], default="greedy")
    p.add_argument("--strong", type=int, default=1, metavar="L", help="require L common owners per block")
    p.add_argument("--map-ids", action="store_true", help="treat ids as opaque strings")
    p.add_argument("--out", help="partition JSON path (stdout if omitted)")
    p.set_defaults(func=cmd_partition)

    c = sub.add_parser("calibrate", parents=[common], help="adjust scores with owner rankings")
    c.add_argument("--edges", required=True)
    c.add_argument("--scores", required=True, help="CSV with header item_id,score")
    c.add_argument("--reports", help="JSON array of {owner_id, ranking}")
    c.add_argument("--partition", help="partition JSON (default: build one with --partition-method)")
    c.add_argument("--partition-method", choices=["greedy", "random", "bruteforce"], default="greedy")
    c.add_argument("--strong", type=int, default=1, metavar="L")
    c.add_argument("--mechanism", choices=["partition", "naive", "isotonic"], default="partition")
    c.add_argument("--no-fill", action="store_true", help="do not give silent owners random rankings")
    c.add_argument("--map-ids", action="store_true")
    c.add_argument("--out", help="output CSV (default calibrated.csv)")
    c.set_defaults(func=cmd_calibrate)

    a = sub.add_parser("audit", parents=[common], help="exhaustive truthfulness audit of a small instance")
    a.add_argument("instance", help="audit JSON, or a shipped fixture name such as remark61.json")
    a.add_argument("--mechanism", choices=["isotonic", "naive", "partition"])
    a.add_argument("--full-table", action="store_true", help="include every ranking's expected utility")
    a.add_argument("--tolerance", type=float, default=1e-9)
    a.add_argument("--out", help="audit JSON path (stdout if omitted)")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("simulate", parents=[common], help="run a simulation preset")
    s.add_argument("--config", help="TOML or JSON config")
    s.add_argument("--preset", choices=sorted(SIMULATE_KEYS))
    s.add_argument("--depth", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--trials", type=int)
    s.add_argument("--out-dir", default="results")
    s.set_defaults(func=cmd_simulate, seed=None)

    gsub = sub.add_parser("gen", parents=[common], help="write a generated instance as an edge list")
    gsub.add_argument("kind", choices=["tree", "conference", "tightness"])
    gsub.add_argument("--depth", type=int, default=3)
    gsub.add_argument("--n", type=int, default=100)
    gsub.add_argument("--m", type=int, default=200)
    gsub.add_argument("--M", type=int, default=4)
    gsub.add_argument("--L", type=int, default=2)
    gsub.add_argument("--N", type=int, default=16)
    gsub.add_argument("--out", required=True)
    gsub.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BudgetExceededError as exc:
        print(f"error: {exc} (required {exc.required}, limit {exc.limit})", file=sys.stderr)
        return EXIT_ERROR
    except (IsomechError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
