"""File formats: edge lists, scores, reports, partitions, metrics and run manifests."""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import platform
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import IsomechError
from .isotonic import check_ranking
from .ownership import OwnershipGraph, Partition
from .partition import COMPARISON_FOCUSED, SIZE_FOCUSED, objective

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EDGE_HEADER = ["owner_id", "item_id"]
SCORE_HEADER = ["item_id", "score"]
CALIBRATED_HEADER = ["item_id", "raw", "adjusted"]


class FormatError(IsomechError):
    """An input file does not follow its documented format."""


# -- atomic output -----------------------------------------------------------

def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_csv(path, header: list[str], rows) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


# -- manifest ----------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Provenance of one command run.

    ``digest`` hashes everything except the timings, so identical reruns
    produce identical artifacts.
    """

    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__
    timings: dict[str, float] = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, config: dict, input_paths: dict | None = None, seed=None) -> "RunManifest":
        digests = {name: file_digest(p) for name, p in (input_paths or {}).items() if p is not None}
        m = cls(command, _jsonable(config), digests, seed)
        m._t0 = time.perf_counter()
        return m

    def finish(self) -> "RunManifest":
        self.timings["wall_seconds"] = round(time.perf_counter() - getattr(self, "_t0", time.perf_counter()), 6)
        self.timings["python"] = platform.python_version()
        return self

    @property
    def digest(self) -> str:
        body = {"command": self.command, "config": self.config, "inputs": self.inputs,
                "seed": self.seed, "version": self.version}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def to_json(self) -> dict:
        out = asdict(self)
        out["digest"] = self.digest
        return out


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))


def write_manifest_sidecar(artifact, manifest: RunManifest) -> Path:
    side = Path(str(artifact) + ".manifest.json")
    write_json(side, manifest.to_json())
    return side


# -- edge lists --------------------------------------------------------------

@dataclass
class EdgeList:
    graph: OwnershipGraph
    owner_ids: list | None = None
    item_ids: list | None = None

    def item_index(self) -> dict:
        if self.item_ids is None:
            return {str(i): i for i in range(self.graph.num_items)}
        return {str(v): i for i, v in enumerate(self.item_ids)}

    def owner_index(self) -> dict:
        if self.owner_ids is None:
            return {str(j): j for j in range(self.graph.num_owners)}
        return {str(v): j for j, v in enumerate(self.owner_ids)}

    def item_label(self, i: int):
        return i if self.item_ids is None else self.item_ids[i]

    def owner_label(self, j: int):
        return j if self.owner_ids is None else self.owner_ids[j]


def _parse_int(text: str, line: int, column: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise FormatError(f"line {line}: {column} {text!r} is not a nonnegative integer "
                          f"(use id mapping for string ids)") from None
    if v < 0:
        raise FormatError(f"line {line}: {column} {v} is negative")
    return v


def read_edges_csv(path, map_ids: bool = False, num_items: int | None = None) -> EdgeList:
    """Parse an ``owner_id,item_id`` edge list.

    Integer ids are used as dense indices.  With ``map_ids`` both columns are
    treated as opaque strings and numbered in order of first appearance.
    """
    owners_map: dict[str, int] = {}
    items_map: dict[str, int] = {}
    edges = []
    seen = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != EDGE_HEADER:
            raise FormatError(f"line 1: expected header {','.join(EDGE_HEADER)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise FormatError(f"line {line}: expected 2 fields, got {len(row)}")
            o, it = row[0].strip(), row[1].strip()
            if map_ids:
                j = owners_map.setdefault(o, len(owners_map))
                i = items_map.setdefault(it, len(items_map))
            else:
                j = _parse_int(o, line, "owner_id")
                i = _parse_int(it, line, "item_id")
            if (j, i) in seen:
                raise FormatError(f"line {line}: duplicate edge ({o}, {it}), first seen on line {seen[(j, i)]}")
            seen[(j, i)] = line
            edges.append((j, i))
    if map_ids:
        m, n = len(owners_map), len(items_map)
        g = OwnershipGraph(m, max(n, num_items or 0), edges)
        return EdgeList(g, list(owners_map), list(items_map))
    m = 1 + max((j for j, _ in edges), default=-1)
    n = max(1 + max((i for _, i in edges), default=-1), num_items or 0)
    return EdgeList(OwnershipGraph(m, n, edges))


def write_edges_csv(path, g: OwnershipGraph) -> None:
    write_csv(path, EDGE_HEADER, g.edges())


def write_id_sidecar(path, edges: EdgeList) -> Path:
    side = Path(str(path) + ".ids.json")
    write_json(side, {"owners": edges.owner_ids, "items": edges.item_ids})
    return side


# -- scores and reports ------------------------------------------------------

def read_scores_csv(path, edges: EdgeList) -> np.ndarray:
    """Read ``item_id,score`` rows; every item of the graph needs exactly one score."""
    index = edges.item_index()
    n = edges.graph.num_items
    scores = np.full(n, np.nan)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SCORE_HEADER:
            raise FormatError(f"line 1: expected header {','.join(SCORE_HEADER)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"line {line}: expected 2 fields, got {len(row)}")
            key = row[0].strip()
            if key not in index:
                raise FormatError(f"line {line}: unknown item {key!r}")
            try:
                value = float(row[1])
            except ValueError:
                raise FormatError(f"line {line}: score {row[1]!r} is not a number") from None
            if not np.isfinite(value):
                raise FormatError(f"line {line}: score must be finite")
            if not np.isnan(scores[index[key]]):
                raise FormatError(f"line {line}: second score for item {key!r}")
            scores[index[key]] = value
    missing = np.flatnonzero(np.isnan(scores))
    if missing.size:
        raise FormatError(f"no score for items {[edges.item_label(int(i)) for i in missing[:10]]}")
    return scores


def parse_reports(data, edges: EdgeList) -> dict[int, tuple[int, ...]]:
    """Validate a reports array ``[{"owner_id": ..., "ranking": [...]}, ...]``."""
    if not isinstance(data, list):
        raise FormatError("reports must be a JSON array")
    owners, items = edges.owner_index(), edges.item_index()
    out = {}
    for k, rec in enumerate(data):
        if not isinstance(rec, dict) or "owner_id" not in rec or "ranking" not in rec:
            raise FormatError(f"reports[{k}]: needs keys owner_id and ranking")
        key = str(rec["owner_id"])
        if key not in owners:
            raise FormatError(f"reports[{k}]: unknown owner {rec['owner_id']!r}")
        j = owners[key]
        if j in out:
            raise FormatError(f"reports[{k}]: second report from owner {rec['owner_id']!r}")
        ranking = []
        for pos, it in enumerate(rec["ranking"]):
            if str(it) not in items:
                raise FormatError(f"reports[{k}].ranking[{pos}]: unknown item {it!r}")
            ranking.append(items[str(it)])
        try:
            out[j] = check_ranking(ranking, edges.graph.items_of(j))
        except IsomechError as exc:
            raise FormatError(f"reports[{k}]: {exc}") from None
    return out


def read_reports_json(path, edges: EdgeList) -> dict[int, tuple[int, ...]]:
    with open(path, encoding="utf-8") as fh:
        return parse_reports(json.load(fh), edges)


def reports_to_json(reports, edges: EdgeList | None = None) -> list[dict]:
    lab_o = (lambda j: j) if edges is None else edges.owner_label
    lab_i = (lambda i: i) if edges is None else edges.item_label
    return [{"owner_id": lab_o(j), "ranking": [lab_i(i) for i in r]} for j, r in sorted(reports.items())]


def write_calibrated_csv(path, edges: EdgeList, raw, adjusted) -> None:
    rows = [(edges.item_label(i), repr(float(r)), repr(float(a))) for i, (r, a) in enumerate(zip(raw, adjusted))]
    write_csv(path, CALIBRATED_HEADER, rows)


# -- partitions --------------------------------------------------------------

def partition_to_json(p: Partition, method: str, manifest_digest: str | None = None) -> dict:
    """Blocks with their common owners plus both built-in objective values."""
    objectives = [{"name": w.name, "value": objective(p, w)} for w in (COMPARISON_FOCUSED, SIZE_FOCUSED)]
    out = {
        "blocks": [{"items": list(b), "owners": sorted(t)} for b, t in zip(p.blocks, p.common_owners)],
        "method": method,
        "objective": objectives[0],
        "objectives": objectives,
    }
    if manifest_digest:
        out["manifest"] = manifest_digest
    return out


def partition_from_json(data: dict, g: OwnershipGraph) -> Partition:
    """Rebuild a partition and check its recorded owner sets against ``g``."""
    try:
        blocks = [blk["items"] for blk in data["blocks"]]
    except (KeyError, TypeError):
        raise FormatError("partition JSON needs blocks[].items") from None
    p = Partition.from_blocks(g, blocks)
    for k, blk in enumerate(data["blocks"]):
        if "owners" in blk and frozenset(blk["owners"]) != p.common_owners[k]:
            raise FormatError(f"blocks[{k}].owners disagrees with the edge list")
    return p


def read_partition_json(path, g: OwnershipGraph) -> Partition:
    with open(path, encoding="utf-8") as fh:
        return partition_from_json(json.load(fh), g)


# -- configuration and metrics -----------------------------------------------

def load_config(path) -> dict:
    """Read a TOML (``.toml``) or JSON configuration file."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    if path.suffix.lower() == ".json":
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    raise FormatError(f"config {path} must end in .toml or .json")


def metrics_csv_rows(report) -> tuple[list[str], list[list]]:
    rows = report.csv_rows()
    extra = sorted({k for r in rows for k in r} - {"trial", "method", "metric", "value"})
    header = ["trial", "method", "metric", "value"] + extra
    return header, [[r.get(k, "") for k in header] for r in rows]
