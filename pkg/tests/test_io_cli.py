import csv
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isomech.cli import main
from isomech.io import (EdgeList, FormatError, RunManifest, load_config, parse_reports, partition_from_json,
                        partition_to_json, read_edges_csv, read_scores_csv, reports_to_json, write_edges_csv)
from isomech.ownership import OwnershipGraph, Partition
from isomech.partition import random_partition

SHARED_EDGES = "owner_id,item_id\n0,0\n0,1\n1,0\n1,1\n2,1\n2,2\n"
NESTED_EDGES = "owner_id,item_id\n0,0\n0,1\n1,0\n1,1\n1,2\n2,1\n2,2\n"


def write(path: Path, text: str) -> str:
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_calibrated(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["item_id", "raw", "adjusted"]
    return np.array([float(r[2]) for r in rows[1:]])


@pytest.fixture
def shared_files(tmp_path):
    edges = write(tmp_path / "edges.csv", SHARED_EDGES)
    scores = write(tmp_path / "scores.csv", "item_id,score\n0,9\n1,8\n2,4\n")
    truthful = [{"owner_id": 0, "ranking": [0, 1]}, {"owner_id": 1, "ranking": [0, 1]},
                {"owner_id": 2, "ranking": [1, 2]}]
    flipped = truthful[:2] + [{"owner_id": 2, "ranking": [2, 1]}]
    return {"edges": edges, "scores": scores,
            "truthful": write(tmp_path / "truthful.json", json.dumps(truthful)),
            "flipped": write(tmp_path / "flipped.json", json.dumps(flipped)),
            "empty": write(tmp_path / "empty.json", "[]"), "dir": tmp_path}


class TestEdgeLists:
    def test_errors_name_the_line(self, tmp_path):
        bad = {"owner,item\n0,0\n": "line 1", "owner_id,item_id\n0,0\n0,0\n": "line 3",
               "owner_id,item_id\n0,x\n": "line 2", "owner_id,item_id\n0,1,2\n": "line 2"}
        for k, (text, where) in enumerate(bad.items()):
            with pytest.raises(FormatError, match=where):
                read_edges_csv(write(tmp_path / f"bad{k}.csv", text))

    def test_string_ids_map_in_first_seen_order(self, tmp_path):
        path = write(tmp_path / "e.csv", "owner_id,item_id\nalice,p9\nbob,p2\nalice,p2\n")
        edges = read_edges_csv(path, map_ids=True)
        assert edges.owner_ids == ["alice", "bob"] and edges.item_ids == ["p9", "p2"]
        assert edges.graph.items_of(0) == (0, 1)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 6), unique=True, min_size=1, max_size=7), min_size=1, max_size=5))
    def test_round_trip(self, tmp_path_factory, sets):
        g = OwnershipGraph.from_item_sets(sets, num_items=7)
        path = tmp_path_factory.mktemp("rt") / "e.csv"
        write_edges_csv(path, g)
        back = read_edges_csv(path, num_items=7).graph
        assert back.item_sets == g.item_sets

    def test_scores(self, tmp_path):
        edges = EdgeList(OwnershipGraph.from_item_sets([[0, 1]]))
        with pytest.raises(FormatError, match="no score"):
            read_scores_csv(write(tmp_path / "s.csv", "item_id,score\n0,1\n"), edges)
        with pytest.raises(FormatError, match="line 3"):
            read_scores_csv(write(tmp_path / "s2.csv", "item_id,score\n0,1\n0,2\n"), edges)
        assert read_scores_csv(write(tmp_path / "s3.csv", "item_id,score\n1,2.5\n0,1\n"), edges).tolist() == [1, 2.5]


class TestReportsAndPartitions:
    def test_report_validation(self):
        edges = EdgeList(OwnershipGraph.from_item_sets([[0, 1], [1, 2]]))
        assert parse_reports([{"owner_id": 1, "ranking": [2, 1]}], edges) == {1: (2, 1)}
        for bad, msg in [([{"owner_id": 1, "ranking": [0, 1]}], "reports\\[0\\]"),
                         ([{"owner_id": 5, "ranking": [0]}], "unknown owner"),
                         ([{"owner_id": 0, "ranking": [0, 9]}], "unknown item"),
                         ([{"owner_id": 0, "ranking": [0, 1]}, {"owner_id": 0, "ranking": [1, 0]}], "second"),
                         ({"owner_id": 0}, "array")]:
            with pytest.raises(FormatError, match=msg):
                parse_reports(bad, edges)
        assert reports_to_json({1: (2, 1)}) == [{"owner_id": 1, "ranking": [2, 1]}]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 7), unique=True, max_size=8), min_size=1, max_size=5),
           st.integers(0, 1000))
    def test_partition_round_trip(self, sets, seed):
        g = OwnershipGraph.from_item_sets(sets, num_items=8)
        p = random_partition(g, seed)
        data = json.loads(json.dumps(partition_to_json(p, "random")))
        assert partition_from_json(data, g) == p

    def test_partition_owner_mismatch(self):
        g = OwnershipGraph.from_item_sets([[0, 1], [1]])
        data = partition_to_json(Partition.from_blocks(g, [[0, 1]]), "greedy")
        data["blocks"][0]["owners"] = [0, 1]
        with pytest.raises(FormatError):
            partition_from_json(data, g)

    def test_config_formats(self, tmp_path):
        assert load_config(write(tmp_path / "c.toml", 'preset = "tree"\ndepth = 3\n')) == {"preset": "tree", "depth": 3}
        assert load_config(write(tmp_path / "c.json", '{"preset": "iclr"}')) == {"preset": "iclr"}
        with pytest.raises(FormatError):
            load_config(write(tmp_path / "c.yaml", "x"))

    def test_manifest_digest_ignores_timings(self):
        a = RunManifest.start("x", {"k": 1}, seed=3).finish()
        b = RunManifest.start("x", {"k": 1}, seed=3)
        assert a.digest == b.digest != RunManifest.start("x", {"k": 2}, seed=3).digest


class TestPartitionCommand:
    def test_greedy_and_strong(self, tmp_path, capsys):
        out = tmp_path / "p.json"
        assert main(["partition", "--method", "greedy", "--strong", "1", write(tmp_path / "e.csv", SHARED_EDGES),
                     "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert [b["items"] for b in data["blocks"]] == [[0, 1], [2]]
        assert data["objective"]["value"] == 5 and "manifest" in data
        assert Path(str(out) + ".manifest.json").exists()
        assert main(["partition", "--strong", "2", write(tmp_path / "n.csv", NESTED_EDGES)]) == 0
        assert [b["items"] for b in json.loads(capsys.readouterr().out)["blocks"]] == [[0, 1], [2]]

    def test_bruteforce_guard(self, tmp_path, capsys):
        text = "owner_id,item_id\n" + "".join(f"0,{i}\n" for i in range(13))
        assert main(["partition", "--method", "bruteforce", write(tmp_path / "big.csv", text)]) == 2
        assert "12" in capsys.readouterr().err

    def test_bad_csv_exit_code(self, tmp_path, capsys):
        assert main(["partition", write(tmp_path / "bad.csv", "owner_id,item_id\n0,0\n0,0\n")]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_map_ids_sidecar(self, tmp_path):
        out = tmp_path / "p.json"
        edges = write(tmp_path / "e.csv", "owner_id,item_id\nann,x\nann,y\nbo,y\n")
        assert main(["partition", "--map-ids", edges, "--out", str(out)]) == 0
        side = json.loads(Path(str(out) + ".ids.json").read_text())
        assert side == {"owners": ["ann", "bo"], "items": ["x", "y"]}
        assert json.loads(out.read_text())["item_ids"] == [["x", "y"]]


class TestCalibrateCommand:
    def run(self, files, *extra):
        out = files["dir"] / "cal.csv"
        code = main(["calibrate", "--edges", files["edges"], "--scores", files["scores"], "--out", str(out),
                     *extra])
        assert code == 0
        return read_calibrated(out)

    def test_truthful_partition_keeps_raw(self, shared_files):
        p = shared_files["dir"] / "p.json"
        main(["partition", shared_files["edges"], "--out", str(p)])
        adj = self.run(shared_files, "--reports", shared_files["truthful"], "--partition", str(p))
        assert np.allclose(adj, [9, 8, 4])

    def test_naive_with_flip(self, shared_files):
        adj = self.run(shared_files, "--reports", shared_files["flipped"], "--mechanism", "naive")
        assert np.allclose(adj, [9, 8 - 2 / 3, 6])

    def test_fill_policy(self, shared_files):
        assert np.array_equal(self.run(shared_files, "--reports", shared_files["empty"], "--no-fill"), [9, 8, 4])
        a = self.run(shared_files, "--reports", shared_files["empty"], "--seed", "4")
        b = self.run(shared_files, "--reports", shared_files["empty"], "--seed", "4")
        assert np.array_equal(a, b)

    def test_manifest_sidecar_and_crlf(self, shared_files):
        self.run(shared_files, "--reports", shared_files["truthful"])
        out = shared_files["dir"] / "cal.csv"
        assert out.read_bytes().startswith(b"item_id,raw,adjusted\r\n")
        manifest = json.loads(Path(str(out) + ".manifest.json").read_text())
        assert set(manifest["inputs"]) == {"edges", "scores", "reports"}

    def test_missing_score(self, shared_files, capsys):
        scores = write(shared_files["dir"] / "short.csv", "item_id,score\n0,9\n1,8\n")
        code = main(["calibrate", "--edges", shared_files["edges"], "--scores", scores,
                     "--out", str(shared_files["dir"] / "x.csv")])
        assert code == 2 and "no score" in capsys.readouterr().err


class TestAuditCommand:
    def test_fixtures(self, tmp_path):
        out = tmp_path / "a.json"
        assert main(["audit", "remark61.json", "--out", str(out)]) == 1
        owner = json.loads(out.read_text())["owners"][0]
        assert owner["gap"] == pytest.approx(5 / 36) and owner["best_reports"] == [[0, 2, 1]]
        assert main(["audit", "example32.json"]) == 0
        assert main(["audit", "example32.json", "--mechanism", "partition"]) == 0
        assert main(["audit", "example32.json", "--mechanism", "naive", "--out", str(out)]) == 1
        assert json.loads(out.read_text())["all_truthful"] is False

    def test_full_table_and_missing(self, tmp_path, capsys):
        assert main(["audit", "remark61.json", "--full-table"]) == 1
        data = json.loads(capsys.readouterr().out)
        assert len(data["owners"][0]["utility_table"]) == 6
        assert main(["audit", "nope.json"]) == 2


class TestSimulateAndGen:
    def test_iclr_preset(self, tmp_path):
        out = tmp_path / "iclr"
        assert main(["simulate", "--preset", "iclr", "--sigma", "2", "--trials", "2", "--out-dir", str(out)]) == 0
        data = json.loads((out / "metrics.json").read_text())
        assert "partition" in data["pct_change_vs_baseline"]
        assert "30" in data["accept_accuracy_at_k"]["partition"]

    def test_tree_preset_is_reproducible(self, tmp_path):
        outs = []
        for k in range(2):
            out = tmp_path / f"t{k}"
            assert main(["simulate", "--preset", "tree", "--depth", "3", "--trials", "1", "--seed", "7",
                         "--out-dir", str(out)]) == 0
            outs.append(out)
        for name in ("metrics.json", "metrics.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        header = (outs[0] / "metrics.csv").read_text().splitlines()[0].split(",")
        assert header[:4] == ["trial", "method", "metric", "value"] and header[-1] == "manifest"

    def test_config_schema_errors(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.toml", 'preset = "tree"\ndepht = 3\n')
        assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == 2
        assert "config.depht" in capsys.readouterr().err
        cfg = write(tmp_path / "d.json", '{"preset": "iclr", "trials": 0}')
        assert main(["simulate", "--config", cfg]) == 2
        assert "config.trials" in capsys.readouterr().err

    def test_benchmark_and_manifest_only(self, tmp_path, capsys):
        assert main(["simulate", "--preset", "benchmark", "--out-dir", str(tmp_path)]) == 0
        assert len(json.loads((tmp_path / "benchmark.json").read_text())["reports"]) == 4
        assert main(["simulate", "--preset", "tree", "--manifest-only"]) == 0
        assert json.loads(capsys.readouterr().out)["command"] == "simulate"

    def test_gen(self, tmp_path):
        for kind, extra in [("tree", ["--depth", "2"]), ("conference", ["--n", "20", "--m", "30"]),
                            ("tightness", ["--M", "2", "--L", "1", "--N", "2"])]:
            out = tmp_path / f"{kind}.csv"
            assert main(["gen", kind, *extra, "--out", str(out)]) == 0
            assert read_edges_csv(out).graph.num_edges > 0
        assert read_edges_csv(tmp_path / "tree.csv").graph.num_items == 9

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0 and "0.1.0" in capsys.readouterr().out
