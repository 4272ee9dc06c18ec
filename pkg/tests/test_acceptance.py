"""Acceptance suite: one test per criterion, each printing a PASS line
(run with -s to see them). Tolerances are fixed here, not configurable."""

import time

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import brute_force_match, counts, random_panoptic
from panorank import _kernels_py, formats, fusion, pq, ranking, synth, training
from panorank.cli import main as cli_main


def _report(name):
    print(f"ACCEPTANCE {name}: PASS")


# 1. metric oracle equivalence ------------------------------------------------


def test_01_metric_oracle_equivalence():
    rng = np.random.default_rng(2024)
    start = time.monotonic()
    for _ in range(500):
        h = int(rng.integers(4, 17))
        w = int(rng.integers(4, 17))
        gt = random_panoptic(rng, h, w, max_segments=5, n_categories=4)
        pred = random_panoptic(rng, h, w, max_segments=5, n_categories=4)
        fast = pq.match_segments(pred, gt)
        slow = brute_force_match(pred, gt)
        assert counts(fast) == counts(slow)
        a = pq.compute_pq(fast)
        b = pq.compute_pq(slow)
        for cat in a.per_category:
            assert abs(a.per_category[cat].pq - b.per_category[cat].pq) < 1e-9
        assert abs(a.aggregates["all"][0] - b.aggregates["all"][0]) < 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    _report("1 metric-oracle-equivalence")


# 2. PQ = SQ * DQ identity ----------------------------------------------------


def test_02_pq_identity():
    rng = np.random.default_rng(7)
    reports = []
    for _ in range(100):
        gt = random_panoptic(rng, 12, 12, max_segments=5)
        pred = random_panoptic(rng, 12, 12, max_segments=5)
        reports.append(pq.compute_pq(pq.match_segments(pred, gt)))
    for scene in [synth.generate(synth.SceneSpec(width=48, height=48, seed=s)) for s in range(20)]:
        merged = fusion.merge(
            scene.preds,
            formats.stuff_argmax(scene.stuff),
            fusion.FusionParams(min_stuff_area=0),
        )
        reports.append(pq.evaluate_dataset({"x": merged}, {"x": scene.gt}))
    checked = 0
    for report in reports:
        for s in report.per_category.values():
            if s.n_tp > 0:
                assert abs(s.pq - s.sq * s.dq) < 1e-9
                checked += 1
    assert checked > 0
    _report("2 pq-sq-dq-identity")


# 3. fusion direction check ---------------------------------------------------


def test_03_fusion_direction():
    start = time.monotonic()
    seeds = synth.scene_seeds(31415, 200)
    params_h = fusion.FusionParams(min_stuff_area=0)
    params_r = fusion.FusionParams(min_stuff_area=0, mode=fusion.RANKING)
    gts, hs, rs = {}, {}, {}
    for i, seed in enumerate(seeds):
        scene = synth.generate(
            synth.SceneSpec(width=64, height=64, seed=seed, score_bias=1.0)
        )
        stuff_map = formats.stuff_argmax(scene.stuff)
        ranked = synth.oracle_ranking_scores(scene.gt, scene.preds)
        key = f"s{i:03d}"
        gts[key] = scene.gt
        hs[key] = fusion.merge(scene.preds, stuff_map, params_h)
        rs[key] = fusion.merge(ranked, stuff_map, params_r)
        for pair in scene.pairs:
            occ = scene.preds[pair.front]
            ids_under = set(np.unique(rs[key].ids[occ.mask]).tolist())
            assert len(ids_under) == 1, "occludee not fully visible"
            seg = rs[key].segment_by_id(ids_under.pop())
            assert seg.category == occ.category
    pq_h = pq.evaluate_dataset(hs, gts).aggregates["all"][0]
    pq_r = pq.evaluate_dataset(rs, gts).aggregates["all"][0]
    assert pq_r > pq_h
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"took {elapsed:.1f}s"
    _report(f"3 fusion-direction (PQ ranking {pq_r:.4f} > heuristic {pq_h:.4f})")


# 4. learned ranking ----------------------------------------------------------


def test_04_learned_srm():
    start = time.monotonic()
    channels = 4
    train_seeds = synth.scene_seeds(271828, 100)
    train = [
        synth.generate(synth.SceneSpec(width=64, height=64, seed=s))
        for s in train_seeds
    ]
    scenes = [synth.ranking_scene(sc) for sc in train]
    cfg = training.TrainConfig()  # compressed schedule
    spec, curve = training.train_srm(scenes, channels=channels, cfg=cfg, shape="sep7")

    n = len(scenes)
    initial = np.mean([l for _, _, l in curve[:n]])
    final = np.mean([l for _, _, l in curve[-n:]])
    assert final <= 0.5 * initial

    held_seeds = synth.scene_seeds(161803, 50)
    held = [
        synth.generate(synth.SceneSpec(width=64, height=64, seed=s))
        for s in held_seeds
    ]
    ordered = total = 0
    gts, learned, detection = {}, {}, {}
    params_h = fusion.FusionParams(min_stuff_area=0)
    params_r = fusion.FusionParams(min_stuff_area=0, mode=fusion.RANKING)
    for i, scene in enumerate(held):
        h, w = scene.gt.ids.shape
        tensor, _ = ranking.build_instance_tensor(scene.preds, channels, h, w)
        score_map = ranking.forward(tensor, spec)
        scores = [ranking.instance_score(score_map, p) for p in scene.preds]
        for pair in scene.pairs:
            total += 1
            if scores[pair.front] > scores[pair.back]:
                ordered += 1
        key = f"s{i}"
        gts[key] = scene.gt
        ranked = [
            fusion.RankedInstance(instance=p, ranking_score=s)
            for p, s in zip(scene.preds, scores)
        ]
        learned[key] = fusion.merge(ranked, formats.stuff_argmax(scene.stuff), params_r)
        detection[key] = fusion.merge(scene.preds, formats.stuff_argmax(scene.stuff), params_h)
    assert ordered >= 0.9 * total, f"ordered {ordered}/{total}"
    pq_learned = pq.evaluate_dataset(learned, gts).aggregates["all"][0]
    pq_det = pq.evaluate_dataset(detection, gts).aggregates["all"][0]
    assert pq_learned >= pq_det
    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"took {elapsed:.1f}s"
    _report(
        f"4 learned-srm (loss {initial:.3f}->{final:.4f}, ordered {ordered}/{total}, "
        f"PQ {pq_learned:.4f} >= {pq_det:.4f}, {elapsed:.0f}s)"
    )


# 5. gradient correctness -----------------------------------------------------


def test_05_gradient_correctness():
    rng = np.random.default_rng(99)
    eps = 1e-6
    for trial in range(100):
        shape = ("1x1", "3x3", "sep7")[trial % 3]
        c = int(rng.integers(2, 5))
        h = w = 6
        spec = ranking.ConvSpec.initialize(shape, c, rng)
        for b in spec.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x = (rng.random((c, h, w)) < 0.4).astype(float)
        label = rng.integers(0, c, (h, w)).astype(np.int32)
        supervised = rng.random((h, w)) < 0.5
        supervised[0, 0] = True

        def loss_of(spec_, x_):
            score = ranking.forward(x_, spec_)
            return ranking.srm_loss(score, label, supervised)[0]

        score = ranking.forward(x, spec)
        _, grad_logits = ranking.srm_loss(score, label, supervised)
        grads, gx = ranking.conv_backward(x, spec, grad_logits)

        def check(analytic, num):
            assert abs(num - analytic) / max(abs(num), abs(analytic), 1e-7) < 1e-4

        i = tuple(rng.integers(0, s) for s in x.shape)
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        check(gx[i], (loss_of(spec, xp) - loss_of(spec, xm)) / (2 * eps))

        layer = int(rng.integers(0, len(spec.weights)))
        i = tuple(rng.integers(0, s) for s in spec.weights[layer].shape)
        wp = [w_.copy() for w_ in spec.weights]
        wm = [w_.copy() for w_ in spec.weights]
        wp[layer][i] += eps
        wm[layer][i] -= eps
        num = (
            loss_of(ranking.ConvSpec(shape, wp, spec.biases), x)
            - loss_of(ranking.ConvSpec(shape, wm, spec.biases), x)
        ) / (2 * eps)
        check(grads[layer][0][i], num)

        k = int(rng.integers(0, c))
        bp = [b_.copy() for b_ in spec.biases]
        bm = [b_.copy() for b_ in spec.biases]
        bp[layer][k] += eps
        bm[layer][k] -= eps
        num = (
            loss_of(ranking.ConvSpec(shape, spec.weights, bp), x)
            - loss_of(ranking.ConvSpec(shape, spec.weights, bm), x)
        ) / (2 * eps)
        check(grads[layer][1][k], num)
    _report("5 gradient-correctness (100 trials)")


# 6. separable oracle ---------------------------------------------------------


def test_06_separable_dense_oracle():
    rng = np.random.default_rng(55)
    for _ in range(100):
        c = int(rng.integers(2, 4))
        spec = ranking.ConvSpec.initialize("sep7", c, rng)
        spec.biases[1][:] = rng.normal(size=c)
        x = rng.normal(size=(c, int(rng.integers(5, 9)), int(rng.integers(5, 9))))
        w1, w2 = spec.weights
        dense = np.einsum("omy,mix->oiyx", w2[:, :, :, 0], w1[:, :, 0, :])
        expected = _kernels_py.conv2d_forward(x, dense, spec.biases[1])
        got = ranking.forward(x, spec).logits
        assert np.abs(got - expected).max() < 1e-10
    _report("6 separable-dense-oracle (100 inputs)")


# 7. format roundtrips --------------------------------------------------------


def test_07_format_roundtrips(tmp_path):
    rng = np.random.default_rng(77)
    for _ in range(1000):
        ids = rng.integers(0, 1 << 24, (8, 8)).astype(np.int32)
        assert (formats.decode_ids(formats.encode_ids(ids)) == ids).all()

    spec = synth.SceneSpec(width=48, height=48, seed=4242)
    synth.write_corpus(spec, 10, tmp_path)
    scenes = synth.read_corpus(tmp_path)
    seeds = synth.scene_seeds(4242, 10)
    for scene, seed in zip(scenes, seeds):
        fresh = synth.generate(synth.SceneSpec(width=48, height=48, seed=seed))
        assert (scene.gt.ids == fresh.gt.ids).all()
        assert scene.gt.segments == fresh.gt.segments
    _report("7 format-roundtrips")


# 8. schedule reproduction ----------------------------------------------------


def test_08_schedule_reproduction():
    cfg = training.TrainConfig.full()
    assert training.lr_at(0, cfg) == 0.002
    assert training.lr_at(2000, cfg) == 0.02
    assert training.lr_at(60000, cfg) == 0.002
    assert training.lr_at(80000, cfg) == 0.0002
    _report("8 schedule-reproduction")


# 9. determinism --------------------------------------------------------------


def test_09_determinism(tmp_path):
    runner = CliRunner()

    def run(*args):
        result = runner.invoke(cli_main, [str(a) for a in args], catch_exceptions=False)
        assert result.exit_code == 0, result.output
        return result

    corpus = tmp_path / "corpus"
    run("synth", corpus, "--scenes", 8, "--seed", 2718)
    for jobs, name in ((1, "m1"), (8, "m8")):
        run("merge", corpus, tmp_path / name, "--min-stuff-area", 0, "--jobs", jobs)
    trees = []
    for name in ("m1", "m8"):
        trees.append(
            {
                str(p.relative_to(tmp_path / name)): p.read_bytes()
                for p in sorted((tmp_path / name).rglob("*"))
            }
        )
    assert trees[0] == trees[1]

    for jobs, name in ((1, "r1.json"), (8, "r8.json")):
        run("eval", tmp_path / "m1", corpus / "gt", "--out", tmp_path / name,
            "--jobs", jobs)
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r8.json").read_bytes()

    for name in ("w1.bin", "w2.bin"):
        run("srm", "train", corpus, "--out", tmp_path / name,
            "--total-iters", 50, "--seed", 13)
    assert (tmp_path / "w1.bin").read_bytes() == (tmp_path / "w2.bin").read_bytes()
    _report("9 determinism")


# 10. inference constants -----------------------------------------------------


def test_10_inference_constants():
    stuff = np.zeros((1, 4899), dtype=np.int32)
    stuff[0, :] = 100
    assert fusion.merge([], stuff).segments == []

    stuff = np.zeros((1, 4900), dtype=np.int32)
    stuff[0, :] = 100
    out = fusion.merge([], stuff)
    assert len(out.segments) == 1 and out.segments[0].area == 4900

    h, w = 8, 128
    instances = []
    for k in range(120):
        m = np.zeros((h, w), dtype=bool)
        m[k % h, k % w] = True
        instances.append(
            formats.InstancePrediction(category=0, det_score=1.0 - k * 1e-3, mask=m)
        )
    out = fusion.merge(instances, np.zeros((h, w), dtype=np.int32))
    assert len([s for s in out.segments if s.is_thing]) == 100
    _report("10 inference-constants")
