"""Bridge CLI: extract bundles, serve the classifier protocol, affordances."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .affordance import affordance_nouns
from .extract import ExtractorConfig, extract
from .mllm import EndpointConfig
from .serve import classify_serve, validate_protocol_files


def _endpoint_from_args(args: argparse.Namespace) -> EndpointConfig:
    if args.endpoint is not None:
        raw = json.loads(Path(args.endpoint).read_text())
        return EndpointConfig(**raw)
    return EndpointConfig(mode=args.mode)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ot3d-bridge", description="RGB-D model adapter and MLLM backend"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="emit a scene bundle from an RGB-D folder")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", nargs="*", default=["object"])
    p.add_argument("--models", default="stub", choices=["stub", "real"])
    p.add_argument("--feature-maps", action="store_true")
    p.set_defaults(handler=_cmd_extract)

    p = sub.add_parser("serve", help="answer a jobs.jsonl file")
    p.add_argument("jobs")
    p.add_argument("answers")
    p.add_argument("--endpoint", default=None, help="endpoint settings JSON")
    p.add_argument("--mode", default="stub", help="endpoint mode when no JSON given")
    p.set_defaults(handler=_cmd_serve)

    p = sub.add_parser("affordance", help="extract affordance nouns from a task")
    p.add_argument("task")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--mode", default="stub")
    p.set_defaults(handler=_cmd_affordance)

    p = sub.add_parser("check-protocol", help="validate a jobs/answers pair")
    p.add_argument("jobs")
    p.add_argument("answers")
    p.set_defaults(handler=_cmd_check)

    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _cmd_extract(args: argparse.Namespace) -> int:
    cfg = ExtractorConfig(
        vocabulary=list(args.vocab),
        models=args.models,
        emit_feature_maps=args.feature_maps,
    )
    out = extract(args.dataset, args.out, cfg)
    print(f"wrote bundle to {out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    n = classify_serve(args.jobs, args.answers, _endpoint_from_args(args))
    print(f"answered {n} jobs -> {args.answers}")
    return 0


def _cmd_affordance(args: argparse.Namespace) -> int:
    nouns = affordance_nouns(args.task, _endpoint_from_args(args))
    print(", ".join(nouns))
    return 0


def _cmd_check(args: argparse.Namespace) -> int:
    validate_protocol_files(args.jobs, args.answers)
    print("protocol ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
