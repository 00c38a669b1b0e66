"""Command-line entry points for every pipeline stage.

Every command honors --seed; when absent it falls back to DEFAULT_SEED,
never the clock, so rerunning any command with the same arguments yields
byte-identical files and stdout. Timing goes to stderr for the same reason.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

from .checkpoint import CheckpointError, load_model
from .data import (
    NarrativeParseError,
    SynthConfig,
    load_narratives_file,
    make_synthetic_dataset,
    narrative_stats,
)
from .points import Point2D, PointError, encode_points
from .seeding import derive_rng
from .tasks import (
    TaskError,
    caption_region,
    evaluate_ris,
    evaluate_vcr,
    evaluate_vqa,
    load_ris_instances,
    load_vcr_instances,
    load_vqa_instances,
    make_ris_instances,
    make_vcr_instances,
    make_vqa_instances,
    robustness_report,
    save_proposals,
    save_ris_instances,
    save_vcr_instances,
    save_vqa_instances,
)
from .training import TrainError, parse_train_config, train

DEFAULT_SEED = 1234  # the documented fixed fallback for every command


class CliError(ValueError):
    pass


def _parse_cli_point(arg: str) -> Point2D:
    parts = arg.split(",")
    if len(parts) != 2:
        raise CliError(f"expected x,y — got {arg!r}")
    try:
        return Point2D(float(parts[0]), float(parts[1]))
    except (ValueError, PointError) as exc:
        raise CliError(f"bad point {arg!r}: {exc}") from exc


def cmd_encode(args) -> int:
    points = [_parse_cli_point(a) for a in args.points]
    print(encode_points(points))
    return 0


def cmd_synth(args) -> int:
    if args.like:  # instance files must reference the checkpoint's images
        cfg = load_model(args.like).synth
    else:
        cfg = SynthConfig(n_images=args.n_images, grid=args.grid,
                          min_objects=args.min_objects, max_objects=args.max_objects,
                          min_scribble_points=args.min_scribble_points,
                          max_scribble_points=args.max_scribble_points,
                          seed=args.seed)
    dataset = make_synthetic_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    manifest = {"config": cfg.to_json(),
                "images": len(dataset.images),
                "regional_pairs": len(dataset.regional),
                "global_pairs": len(dataset.global_)}
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"dataset: {len(dataset.images)} images, "
          f"{len(dataset.regional)} regional + {len(dataset.global_)} global pairs")
    if args.ris:
        path = os.path.join(args.out, "ris.jsonl")
        save_ris_instances(path, make_ris_instances(dataset, args.ris,
                                                    derive_rng(args.seed, "ris")))
        print(f"wrote {args.ris} RIS instances to {path}")
    if args.vcr:
        path = os.path.join(args.out, "vcr.jsonl")
        save_vcr_instances(path, make_vcr_instances(dataset, args.vcr,
                                                    derive_rng(args.seed, "vcr")))
        print(f"wrote {args.vcr} VCR instances to {path}")
    if args.vqa:
        path = os.path.join(args.out, "vqa.jsonl")
        save_vqa_instances(path, make_vqa_instances(dataset, args.vqa,
                                                    derive_rng(args.seed, "vqa")))
        print(f"wrote {args.vqa} VQA instances to {path}")
    if args.proposals:
        from .masks import MaskProposal

        path = os.path.join(args.out, "proposals.jsonl")
        flat = [MaskProposal(image.image_id, image.object_mask(i),
                             provenance="synthetic-object")
                for image in dataset.images.values()
                for i in range(len(image.objects))]
        save_proposals(path, flat)
        print(f"wrote {len(flat)} proposals to {path}")
    return 0


def cmd_ingest(args) -> int:
    result = load_narratives_file(args.file, strict=not args.lenient)
    print(f"parsed {len(result.records)} records, {len(result.warnings)} warnings")
    for w in result.warnings:
        print(f"warning: {w}")
    return 0


def cmd_stats(args) -> int:
    result = load_narratives_file(args.file, strict=not args.lenient)
    print(json.dumps(narrative_stats(result), sort_keys=True, indent=2))
    return 0


def cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        cfg = parse_train_config(fh.read())
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    t0 = time.time()
    result = train(cfg, args.out)
    print(f"steps: {result.steps}", file=sys.stderr)
    print(f"wall: {time.time() - t0:.1f}s", file=sys.stderr)
    print(f"first epoch mean loss: {result.first_epoch_mean_loss:.6f}")
    print(f"last epoch mean loss: {result.last_epoch_mean_loss:.6f}")
    print(f"best eval loss: {result.best_eval_loss:.6f}")
    print(f"final eval loss: {result.final_eval_loss:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"report: {result.report_path}")
    return 0


def _write_records(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _eval_caption(model, instances, k: int, seed: int) -> tuple[list[dict], list[str]]:
    from .tasks import mask_output
    from .lm import Prompt, SoftSegment, lm_generate

    records, lines = [], []
    hits = 0
    for inst in instances:
        if inst.gt_mask is None:
            raise TaskError(f"{inst.instance_id}: caption eval needs ground truth")
        rng = derive_rng(seed, inst.instance_id)
        out = mask_output(model, inst.image, inst.gt_mask, k, rng)
        ids = lm_generate(model.lm, Prompt((SoftSegment(out.z_hat, "region"),)),
                          max_len=16, eos_id=model.vocab.eos_id)
        text = model.vocab.decode(ids)
        hit = text == inst.description
        hits += int(hit)
        records.append({"instance_id": inst.instance_id, "generated": text,
                        "target": inst.description, "exact": hit})
        lines.append(f"{inst.instance_id}: {text!r} (want {inst.description!r})")
    lines.append(f"caption exact-match: {hits}/{len(instances)} "
                 f"= {hits / len(instances):.4f}")
    return records, lines


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    images = make_synthetic_dataset(model.synth).images
    lines: list[str] = []
    records: list[dict] = []
    if args.task == "ris":
        instances = load_ris_instances(args.data, images)
        report = evaluate_ris(model, instances, args.k, args.seed)
        for rec in report["records"]:
            lines.append(f"{rec['instance_id']}: selected {rec['selected']}")
        if "selection_accuracy" in report:
            lines.append(f"selection accuracy: {report['selection_accuracy']:.4f}")
        if "miou" in report:
            lines.append(f"mIoU: {report['miou']:.4f}")
        records = report["records"]
    elif args.task == "robustness":
        instances = load_ris_instances(args.data, images)
        radii = [int(r) for r in args.radii.split(",") if r.strip()]
        rows = robustness_report(model, instances, radii, args.k, args.seed)
        lines.append("radius  mIoU")
        for row in rows:
            lines.append(f"{row['radius']:>6d}  {row['miou']:.4f}")
        records = rows
    elif args.task == "vcr":
        instances = load_vcr_instances(args.data, images)
        report = evaluate_vcr(model, instances, args.k, args.seed)
        for rec in report["records"]:
            lines.append(f"{rec['instance_id']}: answer {rec['answer']}")
        if "accuracy" in report:
            lines.append(f"accuracy: {report['accuracy']:.4f}")
        records = report["records"]
    elif args.task == "vqa":
        instances = load_vqa_instances(args.data, images)
        report = evaluate_vqa(model, instances)
        for rec in report["records"]:
            lines.append(f"{rec['instance_id']}: {rec['generated']!r}")
        if "exact_accuracy" in report:
            lines.append(f"exact accuracy: {report['exact_accuracy']:.4f}")
            lines.append(f"contains accuracy: {report['contains_accuracy']:.4f}")
        records = report["records"]
    elif args.task == "caption":
        instances = load_ris_instances(args.data, images)
        records, lines = _eval_caption(model, instances, args.k, args.seed)
    else:  # argparse choices already guard this
        raise CliError(f"unknown task {args.task!r}")
    for line in lines:
        print(line)
    if args.out:
        _write_records(args.out, records)
    return 0


def cmd_caption(args) -> int:
    model = load_model(args.checkpoint)
    images = make_synthetic_dataset(model.synth).images
    if args.image_id not in images:
        raise CliError(f"unknown image id {args.image_id!r}")
    points = [_parse_cli_point(a) for a in args.points]
    from .points import Scribble

    scribble = Scribble(tuple(points)) if points else None
    text = caption_region(model, images[args.image_id], scribble, args.k,
                          derive_rng(args.seed, args.image_id))
    print(text)
    return 0


def cmd_serve(args) -> int:
    from .server import run_server

    model = load_model(args.checkpoint)
    run_server(model, host=args.host, port=args.port, seed=args.seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scribblecap",
        description="Point-token region captioning: data, training, "
                    "zero-shot tasks, and the HTTP service.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode x,y points as the token string")
    p.add_argument("points", nargs="*", help="normalized points as x,y")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="generate the synthetic dataset manifest "
                                     "and task instance files")
    p.add_argument("--out", required=True)
    p.add_argument("--like", default=None, metavar="CHECKPOINT",
                   help="copy the dataset config from a checkpoint "
                        "(all dataset flags ignored)")
    p.add_argument("--n-images", type=int, default=2000)
    p.add_argument("--grid", type=int, default=6)
    p.add_argument("--min-objects", type=int, default=2)
    p.add_argument("--max-objects", type=int, default=4)
    p.add_argument("--min-scribble-points", type=int, default=6)
    p.add_argument("--max-scribble-points", type=int, default=14)
    p.add_argument("--ris", type=int, default=0, help="RIS instances to emit")
    p.add_argument("--vcr", type=int, default=0, help="VCR instances to emit")
    p.add_argument("--vqa", type=int, default=0, help="VQA instances to emit")
    p.add_argument("--proposals", action="store_true",
                   help="emit every object mask as a proposal file")
    p.add_argument("--seed", type=int, default=97,
                   help="dataset seed (97 matches the training default)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse a narrative trace file")
    p.add_argument("file")
    p.add_argument("--lenient", action="store_true",
                   help="collect malformed lines as warnings instead of failing")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="descriptive counts for a narrative file")
    p.add_argument("file")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train from a key=value config file")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run a zero-shot task over an instance file")
    p.add_argument("task", choices=("ris", "vcr", "vqa", "caption", "robustness"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=6, help="points sampled per scribble")
    p.add_argument("--radii", default="0,3,7,15",
                   help="comma-separated dilation radii (robustness only)")
    p.add_argument("--out", default=None, help="also write JSONL records here")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("caption", help="caption one region of one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("points", nargs="*", help="normalized points as x,y; "
                                             "none means the whole image")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("serve", help="serve the JSON API over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help="fallback seed for requests that do not supply one")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, PointError, TaskError, TrainError, CheckpointError,
            NarrativeParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
