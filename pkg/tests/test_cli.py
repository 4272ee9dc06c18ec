import filecmp
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from panorank import formats, fusion, pq, ranking, synth
from panorank.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _run(runner, *args):
    result = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    return result


def _tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def _make_corpus(runner, path, scenes=4, seed=123, **flags):
    args = ["synth", path, "--scenes", scenes, "--seed", seed]
    for k, v in flags.items():
        args += [f"--{k.replace('_', '-')}", v]
    result = _run(runner, *args)
    assert result.exit_code == 0, result.output
    return Path(path)


def test_synth_deterministic(runner, tmp_path):
    a = _make_corpus(runner, tmp_path / "a")
    b = _make_corpus(runner, tmp_path / "b")
    assert _tree_bytes(a) == _tree_bytes(b)


def test_synth_pair_count(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c", scenes=3, pairs=2, things=6)
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert all(len(e["pairs"]) == 2 for e in manifest["scenes"])


def test_eval_identical_dirs_pq_100(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c")
    out = tmp_path / "report.json"
    result = _run(runner, "eval", corpus / "gt", corpus / "gt", "--out", out)
    assert result.exit_code == 0, result.output
    assert "100.0000" in result.output
    doc = json.loads(out.read_text())
    assert doc["aggregates"]["all"]["pq"] == pytest.approx(1.0)


def test_eval_empty_pred_dir(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c")
    empty = tmp_path / "empty"
    empty.mkdir()
    out = tmp_path / "report.json"
    result = _run(runner, "eval", empty, corpus / "gt", "--out", out)
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["aggregates"]["all"]["pq"] == 0.0
    fns = sum(r["fn"] for r in doc["per_category"].values())
    assert fns > 0


def test_eval_matches_library(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c")
    merged = tmp_path / "merged"
    r = _run(runner, "merge", corpus, merged, "--min-stuff-area", 0)
    assert r.exit_code == 0, r.output
    out = tmp_path / "report.json"
    r = _run(runner, "eval", merged, corpus / "gt", "--out", out)
    assert r.exit_code == 0, r.output

    cats = formats.read_categories(corpus / "categories.json")
    scenes = synth.read_corpus(corpus)
    gts = {s.name: s.gt for s in scenes}
    preds = {
        s.name: fusion.merge(
            s.preds,
            formats.stuff_argmax(s.stuff),
            fusion.FusionParams(min_stuff_area=0),
        )
        for s in scenes
    }
    expected = pq.evaluate_dataset(preds, gts)
    assert json.loads(out.read_text()) == json.loads(expected.to_json())


def test_merge_jobs_deterministic(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c", scenes=6)
    out1, out8 = tmp_path / "j1", tmp_path / "j8"
    assert _run(runner, "merge", corpus, out1, "--min-stuff-area", 0,
                "--jobs", 1).exit_code == 0
    assert _run(runner, "merge", corpus, out8, "--min-stuff-area", 0,
                "--jobs", 8).exit_code == 0
    assert _tree_bytes(out1) == _tree_bytes(out8)


def test_merge_ranking_oracle_beats_heuristic(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c", scenes=6)
    heur, rank = tmp_path / "h", tmp_path / "r"
    assert _run(runner, "merge", corpus, heur, "--min-stuff-area", 0).exit_code == 0
    assert _run(runner, "merge", corpus, rank, "--min-stuff-area", 0,
                "--mode", "ranking", "--oracle-scores").exit_code == 0
    rh, rr = tmp_path / "rh.json", tmp_path / "rr.json"
    _run(runner, "eval", heur, corpus / "gt", "--out", rh)
    _run(runner, "eval", rank, corpus / "gt", "--out", rr)
    pq_h = json.loads(rh.read_text())["aggregates"]["all"]["pq"]
    pq_r = json.loads(rr.read_text())["aggregates"]["all"]["pq"]
    assert pq_r > pq_h


def test_merge_ranking_without_scores_exit_1(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c")
    result = runner.invoke(
        main, ["merge", str(corpus), str(tmp_path / "o"), "--mode", "ranking"]
    )
    assert result.exit_code == 1


def test_eval_bad_schema_exit_2(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c")
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "x.json").write_text('{"file_name": "x.png"}')
    result = runner.invoke(main, ["eval", str(bad), str(corpus / "gt")])
    assert result.exit_code == 2


def test_srm_train_score_pipeline(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c", scenes=4)
    weights = tmp_path / "w.bin"
    curve = tmp_path / "curve.csv"
    result = _run(runner, "srm", "train", corpus, "--out", weights,
                  "--curve", curve, "--total-iters", 60)
    assert result.exit_code == 0, result.output
    rows = curve.read_text().strip().splitlines()
    assert rows[0] == "iteration,lr,loss"
    assert len(rows) == 61
    losses = [float(r.split(",")[2]) for r in rows[1:]]
    assert losses[-1] < losses[0]

    scores = tmp_path / "scores"
    result = _run(runner, "srm", "score", weights, corpus, "--out", scores)
    assert result.exit_code == 0, result.output
    recs = json.loads((scores / "scene_0000.scores.json").read_text())
    assert all(0.0 <= r["ranking_score"] <= 1.0 for r in recs)

    merged = tmp_path / "m"
    result = _run(runner, "merge", corpus, merged, "--mode", "ranking",
                  "--scores-dir", scores, "--min-stuff-area", 0)
    assert result.exit_code == 0, result.output


def test_srm_train_deterministic(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c", scenes=3)
    w1, w2 = tmp_path / "w1.bin", tmp_path / "w2.bin"
    for w in (w1, w2):
        assert _run(runner, "srm", "train", corpus, "--out", w,
                    "--total-iters", 40, "--seed", 5).exit_code == 0
    assert w1.read_bytes() == w2.read_bytes()


def test_srm_score_uniform_weights(runner, tmp_path):
    corpus = _make_corpus(runner, tmp_path / "c", scenes=2)
    c = 4
    spec = ranking.ConvSpec(
        shape="1x1",
        weights=[np.zeros((c, c, 1, 1))],
        biases=[np.zeros(c)],
    )
    weights = tmp_path / "zero.bin"
    ranking.save_weights(spec, weights)
    scores = tmp_path / "scores"
    assert _run(runner, "srm", "score", weights, corpus, "--out", scores).exit_code == 0
    for f in scores.glob("*.scores.json"):
        for rec in json.loads(f.read_text()):
            assert rec["ranking_score"] == pytest.approx(1.0 / c)


def test_convert_roundtrip(runner, tmp_path):
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 1 << 24, (9, 7)).astype(np.int32)
    src = tmp_path / "in.npy"
    np.save(src, ids)
    png = tmp_path / "mid.png"
    back = tmp_path / "out.npy"
    assert _run(runner, "convert", src, png).exit_code == 0
    assert _run(runner, "convert", png, back).exit_code == 0
    assert (np.load(back) == ids).all()


def test_convert_bad_extension_exit_2(runner, tmp_path):
    src = tmp_path / "x.txt"
    src.write_text("hi")
    result = runner.invoke(main, ["convert", str(src), str(tmp_path / "y.gif")])
    assert result.exit_code == 2


def test_help_documents_defaults(runner):
    result = _run(runner, "merge", "--help")
    assert "100" in result.output and "4900" in result.output
    result = _run(runner, "srm", "train", "--help")
    assert "0.002" in result.output and "0.02" in result.output
