"""Command-line front end: synth, run, eval, export-ply, validate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import Ot3dError
from .evalkit import evaluate, load_results
from .export import export_ply
from .pipeline import run_pipeline, write_outputs, write_proposals
from .scene.io import load_bundle, save_bundle
from .synth import NoiseSpec, generate, load_scene_spec, perturb


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except Ot3dError as exc:
        stage = getattr(args, "command", "ot3d")
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ot3d",
        description="Track-centric 3D instance segmentation over RGB-D bundles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bundle from a scene spec")
    p.add_argument("--spec", required=True, help="scene spec JSON file")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument(
        "--perturb-seed",
        type=int,
        default=None,
        help="apply the spec's noise as a post-hoc perturbation with this seed",
    )
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("run", help="run the full pipeline on a bundle")
    p.add_argument("bundle", help="bundle directory")
    p.add_argument("--config", default=None, help="config JSON file")
    p.add_argument("--preset", default=None, help="named config preset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--backend",
        default=None,
        help="classifier backend: oracle | descriptor | external:<cmd>",
    )
    p.add_argument(
        "--stage",
        default=None,
        choices=["lift", "track", "refine"],
        help="stop after this stage",
    )
    p.add_argument("--seed", type=int, default=0, help="reserved for seeded stages")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("eval", help="score results.json against ground truth")
    p.add_argument("results", help="results.json from a pipeline run")
    p.add_argument("gt", help="ground-truth JSON file or a bundle directory")
    p.add_argument("--out", default=None, help="ap_report.json path")
    p.add_argument(
        "--label-set",
        default=None,
        help="JSON file with the declared closed label set",
    )
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("export-ply", help="write an instance-colored cloud")
    p.add_argument("results", help="results.json from a pipeline run")
    p.add_argument("bundle", help="bundle directory")
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(handler=_cmd_export)

    p = sub.add_parser("validate", help="load a bundle and check every invariant")
    p.add_argument("bundle", help="bundle directory")
    p.set_defaults(handler=_cmd_validate)
    return parser


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = load_scene_spec(args.spec)
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
        spec.validate()
    if args.perturb_seed is not None:
        from dataclasses import replace

        noise = spec.noise
        clean = replace(spec, noise=NoiseSpec())
        bundle = perturb(generate(clean), noise, args.perturb_seed)
    else:
        bundle = generate(spec)
    save_bundle(bundle, args.out)
    print(
        f"wrote bundle: {len(bundle.frames)} frames, "
        f"{len(bundle.cloud)} cloud points -> {args.out}"
    )
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.preset)
    if args.backend is not None:
        from dataclasses import replace

        cfg = replace(cfg, classify=replace(cfg.classify, backend=args.backend))
        cfg.validate()
    print("resolved config:")
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    bundle = load_bundle(args.bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_pipeline(bundle, cfg, workdir=out, stop_after=args.stage)
    if args.stage == "refine":
        write_proposals(result.proposals, out / "proposals.json")
    elif args.stage is None:
        write_outputs(result, out)
    (out / "stage_report.json").write_text(
        json.dumps(result.report.to_dict(), indent=2, sort_keys=True)
    )
    print(json.dumps(result.report.to_dict(), indent=2, sort_keys=True))
    return 0


def _load_gt(path_str: str) -> list[tuple[str, np.ndarray]]:
    path = Path(path_str)
    if path.is_dir():
        bundle = load_bundle(path)
        if bundle.ground_truth is None:
            raise Ot3dError(f"bundle {path} carries no ground truth")
        return [(g.label, g.point_indices) for g in bundle.ground_truth]
    raw = json.loads(path.read_text())
    return [
        (inst["label"], np.asarray(inst["point_indices"], dtype=np.int64))
        for inst in raw["instances"]
    ]


def _cmd_eval(args: argparse.Namespace) -> int:
    preds = load_results(args.results)
    gt = _load_gt(args.gt)
    closed = None
    if args.label_set is not None:
        closed = json.loads(Path(args.label_set).read_text())
    report = evaluate(preds, gt, closed_label_set=closed)
    if args.out:
        report.write(args.out)
    print(
        json.dumps(
            {
                "mean_ap": report.mean_ap,
                "mean_ap50": report.mean_ap50,
                "mean_ap25": report.mean_ap25,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    preds = load_results(args.results)
    bundle = load_bundle(args.bundle)
    export_ply(preds, bundle, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    n_det = sum(len(f.detections) for f in bundle.frames)
    print(
        f"ok: {len(bundle.frames)} frames, {n_det} detections, "
        f"{len(bundle.cloud)} cloud points, "
        f"superpoints={'yes' if bundle.cloud.superpoint_label is not None else 'no'}, "
        f"ground_truth={'yes' if bundle.ground_truth is not None else 'no'}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
