"""Pruebas de los comandos del harness de extremo a extremo."""

import json
import os

import pandas as pd
import pytest

import harness
from core.decode_nms import candidates_from_grids
from core.eval_froc import ScanResult, match_hits, FP
from utils.db import read_annotations, read_candidates, read_grid, find_grid_files

ANNOTATION_HEADER = "seriesuid,coordX,coordY,coordZ,diameter_mm\n"


def _read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _tree_bytes(root):
    files = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as f:
                files[os.path.relpath(path, root)] = f.read()
    return files


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "synth"
    assert harness.main(["synth", "--count", "20", "--seed", "1", "--out", str(out)]) == 0
    return out


class TestGradsim:

    def test_outputs(self, tmp_path):
        out = tmp_path / "gradsim"
        code = harness.main(["gradsim", "--kinds", "siou", "SIoUpp", "--out", str(out)])
        assert code == 0
        gradients = pd.read_csv(out / "gradients.csv")
        start = gradients[gradients["d_ab"] == 8.0]
        siou_row = start[start["kind"] == "siou"].iloc[0]
        pp_row = start[start["kind"] == "siou_pp"].iloc[0]
        assert siou_row["grad_z"] == 0.0
        assert abs(pp_row["loss"] - 8.0 / 11.0) <= 1e-12
        assert pp_row["grad_z"] < 0.0

        summary = _read_json(out / "gradsim.json")
        assert summary["kinds"]["siou_pp"]["final_d_ab"] < 0.01
        assert abs(summary["kinds"]["siou"]["final_d_ab"] - 8.0) <= 1e-9
        trajectory = pd.read_csv(out / "trajectory.csv")
        assert len(trajectory) == 2 * 5001

    def test_invalid_kind(self, tmp_path, capsys):
        code = harness.main(["gradsim", "--kinds", "giou", "--out", str(tmp_path)])
        assert code == 1
        assert "❌" in capsys.readouterr().out

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["gradsim", "--kinds", "siou", "sdiou", "siou_pp", "--max-iters", "300"]
        assert harness.main(args + ["--out", str(a)]) == 0
        assert harness.main(args + ["--out", str(b)]) == 0
        assert _tree_bytes(a) == _tree_bytes(b)


class TestSynth:

    def test_files(self, synth_dir):
        grids = find_grid_files([str(synth_dir / "grids")])
        assert len(grids) == 20
        by_scan = read_annotations(str(synth_dir / "annotations.csv"))
        assert 20 <= sum(len(v) for v in by_scan.values()) <= 60
        meta = _read_json(synth_dir / "synth.json")
        assert meta["config"]["seed"] == 1
        assert len(meta["scans"]) == 20

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["synth", "--count", "3", "--noise", "0.1", "--clutter", "2", "--levels", "2", "--seed", "7"]
        assert harness.main(args + ["--out", str(a)]) == 0
        assert harness.main(args + ["--out", str(b)]) == 0
        assert _tree_bytes(a) == _tree_bytes(b)

    def test_clutter_gives_exact_false_positives(self, tmp_path):
        out = tmp_path / "synth"
        assert harness.main(["synth", "--count", "4", "--clutter", "5", "--seed", "3", "--out", str(out)]) == 0
        annotations = read_annotations(str(out / "annotations.csv"))
        for path in find_grid_files([str(out / "grids")]):
            scan_id, grid = read_grid(path)
            candidates, _ = candidates_from_grids([grid], top_n=100)
            match = match_hits(ScanResult(scan_id, candidates, annotations.get(scan_id, [])))
            assert match.candidate_labels.count(FP) == 5

    def test_infeasible_packing(self, tmp_path, capsys):
        code = harness.main(["synth", "--count", "1", "--nodules", "50", "50", "--radius", "20", "20",
                             "--out", str(tmp_path)])
        assert code == 1
        assert "❌" in capsys.readouterr().out

    def test_invalid_noise(self, tmp_path):
        assert harness.main(["synth", "--noise", "1.0", "--out", str(tmp_path)]) == 1


class TestAssign:

    def _annotations(self, tmp_path, body):
        path = tmp_path / "ann.csv"
        path.write_text(ANNOTATION_HEADER + body, encoding="utf-8")
        return str(path)

    def test_single_nodule(self, tmp_path):
        ann = self._annotations(tmp_path, "s1,48,48,48,10\n")
        out = tmp_path / "assign.json"
        assert harness.main(["assign", "--annotations", ann, "--out", str(out)]) == 0
        summary = _read_json(out)
        assert summary["counts"]["positive"] == 7
        assert summary["counts"]["negative"] == 700
        assert sum(summary["counts"].values()) == 24 ** 3
        assert len(summary["nodules"][0]["positive_cells"]) == 7

    def test_empty_annotations(self, tmp_path):
        ann = self._annotations(tmp_path, "")
        out = tmp_path / "assign.json"
        assert harness.main(["assign", "--annotations", ann, "--out", str(out)]) == 0
        counts = _read_json(out)["counts"]
        assert counts["positive"] == 0
        assert counts["negative"] == 100

    def test_no_ohem(self, tmp_path):
        ann = self._annotations(tmp_path, "s1,48,48,48,10\n")
        out = tmp_path / "assign.json"
        assert harness.main(["assign", "--annotations", ann, "--no-ohem", "--out", str(out)]) == 0
        summary = _read_json(out)
        assert summary["ohem"] is False
        assert summary["counts"]["negative"] > 700

    def test_malformed_row(self, tmp_path, capsys):
        ann = self._annotations(tmp_path, "s1,48,48,48,10\ns1,1,2,x,3\n")
        assert harness.main(["assign", "--annotations", ann, "--out", str(tmp_path / "a.json")]) == 1
        assert ":3:" in capsys.readouterr().out

    def test_config_precedence(self, tmp_path):
        ann = self._annotations(tmp_path, "s1,48,48,48,10\n")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"K": 3}), encoding="utf-8")
        out = tmp_path / "assign.json"

        assert harness.main(["assign", "--annotations", ann, "--config", str(cfg), "--out", str(out)]) == 0
        summary = _read_json(out)
        assert summary["counts"]["positive"] == 3
        assert summary["config"]["K"] == 3

        assert harness.main(["assign", "--annotations", ann, "--config", str(cfg), "--k", "5",
                             "--out", str(out)]) == 0
        summary = _read_json(out)
        assert summary["counts"]["positive"] == 5
        assert summary["config"]["K"] == 5

    def test_bad_config_is_usage_error(self, tmp_path):
        ann = self._annotations(tmp_path, "")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"unknown": 1}), encoding="utf-8")
        assert harness.main(["assign", "--annotations", ann, "--config", str(cfg),
                             "--out", str(tmp_path / "a.json")]) == 2

    def test_missing_required_option(self):
        assert harness.main(["assign"]) == 2

    def test_deterministic(self, tmp_path):
        ann = self._annotations(tmp_path, "s1,48,48,48,10\ns1,20,30,60,6\n")
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert harness.main(["assign", "--annotations", ann, "--out", str(a)]) == 0
        assert harness.main(["assign", "--annotations", ann, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestDetectAndFroc:

    def test_oracle_round_trip(self, synth_dir, tmp_path):
        candidates_csv = tmp_path / "candidates.csv"
        assert harness.main(["detect", str(synth_dir / "grids"), "--out", str(candidates_csv)]) == 0
        annotations = read_annotations(str(synth_dir / "annotations.csv"))
        candidates = read_candidates(str(candidates_csv))

        assert sorted(candidates) == sorted(annotations)
        for scan_id, nodules in annotations.items():
            found = candidates[scan_id]
            assert len(found) == len(nodules)
            for nodule in nodules:
                best = min(found, key=lambda c: sum((p - q) ** 2 for p, q in
                                                    zip(c.sphere.center.as_tuple(), nodule.center.as_tuple())))
                for p, q in zip(best.sphere.center.as_tuple(), nodule.center.as_tuple()):
                    assert abs(p - q) <= 1e-6
                assert abs(best.sphere.radius - nodule.radius) <= 1e-6

        meta = _read_json(str(candidates_csv) + ".meta.json")
        assert meta["config"]["top_n"] == 100
        assert set(meta["scans"]) == set(annotations)

        froc_dir = tmp_path / "froc"
        assert harness.main(["froc", "--candidates", str(candidates_csv),
                             "--annotations", str(synth_dir / "annotations.csv"), "--out", str(froc_dir)]) == 0
        result = _read_json(froc_dir / "froc.json")
        assert result["average"] == 1.0
        assert [p["sensitivity"] for p in result["points"]] == [1.0] * 7
        table = pd.read_csv(froc_dir / "froc.csv")
        assert list(table.columns) == ["fps_per_scan", "sensitivity"]
        assert list(table["fps_per_scan"]) == [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]

    def test_two_levels_one_survivor(self, tmp_path):
        synth = tmp_path / "synth"
        assert harness.main(["synth", "--count", "3", "--levels", "2", "--seed", "4", "--out", str(synth)]) == 0
        out = tmp_path / "candidates.csv"
        assert harness.main(["detect", str(synth / "grids"), "--out", str(out)]) == 0
        annotations = read_annotations(str(synth / "annotations.csv"))
        candidates = read_candidates(str(out))
        for scan_id, nodules in annotations.items():
            assert len(candidates[scan_id]) == len(nodules)
        meta = _read_json(str(out) + ".meta.json")
        assert all(s["grids"] == 2 for s in meta["scans"].values())

    def test_noisy_run_is_monotone(self, tmp_path):
        synth = tmp_path / "synth"
        assert harness.main(["synth", "--count", "20", "--clutter", "5", "--noise", "0.1", "--seed", "2",
                             "--out", str(synth)]) == 0
        out = tmp_path / "candidates.csv"
        assert harness.main(["detect", str(synth / "grids"), "--out", str(out)]) == 0
        froc_dir = tmp_path / "froc"
        assert harness.main(["froc", "--candidates", str(out), "--annotations", str(synth / "annotations.csv"),
                             "--out", str(froc_dir)]) == 0
        sens = [p["sensitivity"] for p in _read_json(froc_dir / "froc.json")["points"]]
        assert all(a <= b for a, b in zip(sens, sens[1:]))
        assert sens[-1] >= sens[0]

    def test_detect_deterministic(self, synth_dir, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert harness.main(["detect", str(synth_dir / "grids"), "--out", str(a)]) == 0
        assert harness.main(["detect", str(synth_dir / "grids"), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_froc_deterministic(self, synth_dir, tmp_path):
        candidates_csv = tmp_path / "candidates.csv"
        assert harness.main(["detect", str(synth_dir / "grids"), "--out", str(candidates_csv)]) == 0
        a, b = tmp_path / "froc_a", tmp_path / "froc_b"
        for out in (a, b):
            assert harness.main(["froc", "--candidates", str(candidates_csv),
                                 "--annotations", str(synth_dir / "annotations.csv"), "--out", str(out)]) == 0
        assert _tree_bytes(a) == _tree_bytes(b)

    def test_detect_bad_grid(self, tmp_path, capsys):
        bad = tmp_path / "bad.grid"
        bad.write_bytes(b"SCPMGRID1\n{\"dims\": [2, 2, 2], \"stride\": 4}\n\x00\x00")
        assert harness.main(["detect", str(bad), "--out", str(tmp_path / "c.csv")]) == 1
        assert "dims" in capsys.readouterr().out

    def test_froc_without_candidates(self, synth_dir, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        empty.write_text("seriesuid,coordX,coordY,coordZ,radius,probability\n", encoding="utf-8")
        assert harness.main(["froc", "--candidates", str(empty), "--annotations",
                             str(synth_dir / "annotations.csv"), "--out", str(tmp_path / "froc")]) == 0
        assert _read_json(tmp_path / "froc" / "froc.json")["average"] == 0.0
        assert "0.0000" in capsys.readouterr().out
