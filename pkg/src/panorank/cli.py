"""panorank command line: evaluation, fusion, ranking train/score,
synthetic corpora, and format conversion.

Exit codes: 0 success, 1 contract or validation failure, 2 I/O or schema
failure, 3 training divergence.
"""

from __future__ import annotations

import functools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import formats, fusion, pq, ranking, synth, training
from .masks import MaskShapeError, PartitionError

EXIT_CONTRACT = 1
EXIT_IO = 2
EXIT_DIVERGED = 3

_CONTRACT_ERRORS = (
    PartitionError,
    MaskShapeError,
    fusion.FusionContractError,
    synth.GenerationError,
    ValueError,
)
_IO_ERRORS = (
    formats.SchemaError,
    formats.ConsistencyError,
    ranking.WeightFormatError,
    json.JSONDecodeError,
    OSError,
)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except training.DivergenceError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_DIVERGED)
        except _IO_ERRORS as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_IO)
        except _CONTRACT_ERRORS as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_CONTRACT)

    return wrapper


@click.group()
def main():
    """Panoptic fusion and evaluation toolkit."""


def _jobs_option(fn):
    return click.option(
        "--jobs",
        type=int,
        default=1,
        envvar="PANORANK_JOBS",
        show_default=True,
        help="Worker threads; output is identical for any value.",
    )(fn)


def _load_panoptic_dir(path: Path, categories: dict[int, bool]):
    images = {}
    for doc_path in sorted(path.glob("*.json")):
        if doc_path.name in ("categories.json", "manifest.json"):
            continue
        doc = json.loads(doc_path.read_text())
        rgb = np.asarray(Image.open(path / doc["file_name"]).convert("RGB"))
        images[doc_path.stem] = formats.read_panoptic_annotation(doc, rgb, categories)
    return images


def _find_categories(*candidates: Path) -> dict[int, bool]:
    for c in candidates:
        if c and c.is_file():
            return formats.read_categories(c)
    raise formats.SchemaError(
        "no categories.json found; pass --categories explicitly"
    )


@main.command("eval")
@click.argument("pred_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("gt_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_report", type=click.Path(path_type=Path), default=None,
              help="Write the report JSON here.")
@click.option("--categories", type=click.Path(path_type=Path), default=None,
              help="Category table; defaults to categories.json next to the GT.")
@_jobs_option
@_guarded
def cmd_eval(pred_dir: Path, gt_dir: Path, out_report: Path | None,
             categories: Path | None, jobs: int):
    """Compute Panoptic Quality of PRED_DIR against GT_DIR.

    Both directories hold per-image annotation JSON + id-encoded PNG pairs.
    """
    cats = _find_categories(
        categories,
        gt_dir / "categories.json",
        gt_dir.parent / "categories.json",
    )
    gts = _load_panoptic_dir(gt_dir, cats)
    preds = _load_panoptic_dir(pred_dir, cats)
    report = pq.evaluate_dataset(preds, gts, jobs=jobs)
    click.echo(report.to_table())
    if out_report is not None:
        out_report.write_text(report.to_json())


def _read_scores(path: Path) -> list[float]:
    recs = json.loads(path.read_text())
    return [float(r["ranking_score"]) for r in recs]


@main.command("merge")
@click.argument("corpus", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--mode", type=click.Choice([fusion.HEURISTIC, fusion.RANKING]),
              default=fusion.HEURISTIC, show_default=True)
@click.option("--max-boxes", type=int, default=100, show_default=True,
              help="Max number of boxes for each image.")
@click.option("--min-stuff-area", type=int, default=4900, show_default=True,
              help="Min area of a connected stuff area; smaller regions become void.")
@click.option("--overlap-drop", type=float, default=0.5, show_default=True,
              help="Drop an instance when less than (1 - this) of it stays visible.")
@click.option("--scores-dir", type=click.Path(path_type=Path), default=None,
              help="Per-scene <name>.scores.json with ranking scores (ranking mode).")
@click.option("--oracle-scores", is_flag=True,
              help="Derive ranking scores from the ground truth (ranking mode).")
@_jobs_option
@_guarded
def cmd_merge(corpus: Path, out_dir: Path, mode: str, max_boxes: int,
              min_stuff_area: int, overlap_drop: float,
              scores_dir: Path | None, oracle_scores: bool, jobs: int):
    """Fuse the predictions of a corpus into panoptic annotation pairs."""
    scenes = synth.read_corpus(corpus)
    cats = formats.read_categories(corpus / "categories.json")
    params = fusion.FusionParams(
        max_boxes=max_boxes,
        min_stuff_area=min_stuff_area,
        overlap_drop_fraction=overlap_drop,
        mode=mode,
    )
    if mode == fusion.RANKING and scores_dir is None and not oracle_scores:
        raise fusion.FusionContractError(
            "ranking mode needs --scores-dir or --oracle-scores"
        )
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(scene: synth.CorpusScene):
        instances: list = scene.preds
        if mode == fusion.RANKING:
            if oracle_scores:
                instances = synth.oracle_ranking_scores(scene.gt, scene.preds)
            else:
                scores = _read_scores(scores_dir / f"{scene.name}.scores.json")
                if len(scores) != len(scene.preds):
                    raise fusion.FusionContractError(
                        f"{scene.name}: {len(scores)} scores for {len(scene.preds)} instances"
                    )
                instances = [
                    fusion.RankedInstance(instance=p, ranking_score=s)
                    for p, s in zip(scene.preds, scores)
                ]
        stuff_map = formats.stuff_argmax(scene.stuff)
        merged = fusion.merge(instances, stuff_map, params)
        return scene.name, merged

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, scenes))
    else:
        results = [one(s) for s in scenes]

    for name, merged in sorted(results):
        doc, rgb = formats.write_panoptic_annotation(merged, name, f"{name}.png")
        Image.fromarray(rgb, mode="RGB").save(out_dir / f"{name}.png", format="PNG")
        (out_dir / f"{name}.json").write_text(json.dumps(doc))
    formats.write_categories(cats, out_dir / "categories.json")
    click.echo(f"merged {len(results)} scenes into {out_dir}")


@main.group("srm")
def cmd_srm():
    """Train or apply the occlusion ranking module."""


def _thing_channels(cats: dict[int, bool]) -> dict[int, int]:
    return {c: k for k, c in enumerate(sorted(c for c, t in cats.items() if t))}


@cmd_srm.command("train")
@click.argument("corpus", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "weights_out", type=click.Path(path_type=Path), required=True)
@click.option("--curve", type=click.Path(path_type=Path), default=None,
              help="Loss curve CSV (iteration, lr, loss).")
@click.option("--shape", type=click.Choice(list(ranking.SHAPES)), default="sep7",
              show_default=True)
@click.option("--preset", type=click.Choice(["desk", "full"]), default="desk",
              show_default=True,
              help="full: warmup 0.002->0.02 over 2000 iters, decays to 0.002 "
                   "at 60000 and 0.0002 at 80000; desk: the same compressed.")
@click.option("--total-iters", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@_guarded
def cmd_srm_train(corpus: Path, weights_out: Path, curve: Path | None,
                  shape: str, preset: str, total_iters: int | None, seed: int):
    """Train the ranking convolution on a corpus (momentum 0.9, weight
    decay 0.0001)."""
    scenes = synth.read_corpus(corpus)
    cats = formats.read_categories(corpus / "categories.json")
    channels = _thing_channels(cats)
    overrides: dict = {"seed": seed}
    if total_iters is not None:
        overrides["total_iters"] = total_iters
    cfg = training.TrainConfig.full(**overrides) if preset == "full" \
        else training.TrainConfig.desk(**overrides)

    train_scenes = []
    for scene in scenes:
        cmap = synth.category_map(scene.gt)
        label = np.full(cmap.shape, -1, dtype=np.int32)
        for cat, ch in channels.items():
            label[cmap == cat] = ch
        insts = [
            formats.InstancePrediction(
                category=channels[p.category], det_score=p.det_score, mask=p.mask
            )
            for p in scene.preds
        ]
        train_scenes.append(
            training.TrainScene(instances=insts, label=label, name=scene.name)
        )

    spec, loss_curve = training.train_srm(
        train_scenes, channels=len(channels), cfg=cfg, shape=shape
    )
    ranking.save_weights(spec, weights_out)
    if curve is not None:
        training.write_loss_curve(loss_curve, curve)
    first = loss_curve[0][2] if loss_curve else 0.0
    last = loss_curve[-1][2] if loss_curve else 0.0
    click.echo(f"trained {cfg.total_iters} iterations; loss {first:.4f} -> {last:.4f}")


@cmd_srm.command("score")
@click.argument("weights", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("corpus", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_guarded
def cmd_srm_score(weights: Path, corpus: Path, out_dir: Path):
    """Score each corpus scene's instances with trained weights."""
    spec = ranking.load_weights(weights)
    scenes = synth.read_corpus(corpus)
    cats = formats.read_categories(corpus / "categories.json")
    channels = _thing_channels(cats)
    if len(channels) != spec.channels:
        raise ranking.WeightFormatError(
            f"weights expect {spec.channels} channels, corpus has {len(channels)}"
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    for scene in scenes:
        h, w = scene.gt.ids.shape
        insts = [
            formats.InstancePrediction(
                category=channels[p.category], det_score=p.det_score, mask=p.mask
            )
            for p in scene.preds
        ]
        tensor, _ = ranking.build_instance_tensor(insts, spec.channels, h, w)
        score_map = ranking.forward(tensor, spec)
        recs = [
            {
                "index": i,
                "category_id": p.category,
                "det_score": p.det_score,
                "ranking_score": ranking.instance_score(score_map, inst),
            }
            for i, (p, inst) in enumerate(zip(scene.preds, insts))
        ]
        (out_dir / f"{scene.name}.scores.json").write_text(json.dumps(recs))
    click.echo(f"scored {len(scenes)} scenes into {out_dir}")


@main.command("synth")
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--scenes", "n_scenes", type=int, default=10, show_default=True)
@click.option("--seed", type=int, required=True, help="Master seed (required).")
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--things", type=int, default=4, show_default=True)
@click.option("--stuff-regions", type=int, default=2, show_default=True)
@click.option("--pairs", type=int, default=1, show_default=True,
              help="Planted occluder/occludee pairs per scene.")
@click.option("--score-bias", type=float, default=1.0, show_default=True,
              help="Probability that the occluder's detection score is higher.")
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--thing-categories", type=int, default=4, show_default=True)
@_guarded
def cmd_synth(out_dir: Path, n_scenes: int, seed: int, width: int, height: int,
              things: int, stuff_regions: int, pairs: int, score_bias: float,
              noise: float, thing_categories: int):
    """Generate a synthetic corpus with planted occlusions."""
    spec = synth.SceneSpec(
        width=width,
        height=height,
        n_things=things,
        n_stuff_regions=stuff_regions,
        occlusion_pairs=pairs,
        score_bias=score_bias,
        noise=noise,
        seed=seed,
        n_thing_categories=thing_categories,
    )
    names = synth.write_corpus(spec, n_scenes, out_dir)
    click.echo(f"wrote {len(names)} scenes to {out_dir}")


@main.command("convert")
@click.argument("src", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("dst", type=click.Path(path_type=Path))
@_guarded
def cmd_convert(src: Path, dst: Path):
    """Convert a label map between id-encoded PNG and raw .npy.

    Direction follows the extensions: .png -> .npy decodes segment ids,
    .npy -> .png encodes them.
    """
    if src.suffix == ".png" and dst.suffix == ".npy":
        np.save(dst, formats.load_id_image(src))
    elif src.suffix == ".npy" and dst.suffix == ".png":
        formats.save_id_image(np.load(src), dst)
    else:
        raise formats.SchemaError(
            f"unsupported conversion {src.suffix} -> {dst.suffix}"
        )


if __name__ == "__main__":
    main()
