"""Command line entry point."""
from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import (
    ApsError,
    BundleIntegrityError,
    DependencyError,
    DivergenceError,
    IncomparableReportsError,
    NotFoundError,
    ParseError,
    ReferentialIntegrityError,
    StaleArtifactError,
)
from .pipeline import STAGES, run_stage

_STAGE_COMMANDS = [s.replace("_", "-") for s in STAGES]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aps",
        description="Multi-modal indoor positioning pipeline: procedural "
                    "scenes, scene classification, RGB to point-cloud "
                    "translation, and fused pose regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in _STAGE_COMMANDS:
        p = sub.add_parser(cmd, help=f"run the {cmd} stage")
        p.add_argument("--run-dir", required=True, help="run directory for artifacts")
        p.add_argument("--config", default=None, help="YAML config overriding defaults")
        p.add_argument("--seed", type=int, default=None,
                       help="override the training seed (data stages unaffected)")
        p.add_argument("--force", action="store_true",
                       help="re-run even if the stage stamp is up to date")
    p = sub.add_parser("infer", help="localize a single RGB image")
    p.add_argument("--run-dir", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--image", help="path to an RGB png")
    group.add_argument("--sample", type=int, help="dataset sample id to localize")
    p.add_argument("--out", default=None, help="write the JSON result here instead of stdout")
    return parser


def _cmd_infer(args) -> None:
    import os

    from .inference import load_bundle, localize_file

    bundle = load_bundle(args.run_dir)
    if args.image is not None:
        result = localize_file(bundle, args.image)
    else:
        match = [s for s in bundle.manifest["samples"] if s["id"] == args.sample]
        if not match:
            raise NotFoundError(f"sample {args.sample} not in manifest")
        sample = match[0]
        path = os.path.join(args.run_dir, "data", sample["rgb_path"])
        result = localize_file(bundle, path)
        result["true_scene_id"] = sample["scene_id"]
        result["true_position"] = sample["position"]
        result["true_quaternion"] = sample["quaternion"]
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "infer":
            _cmd_infer(args)
        else:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg["training"]["seed"] = args.seed
            stage = args.command.replace("-", "_")
            status = run_stage(cfg, args.run_dir, stage, force=args.force)
            print(f"{stage}: {status}")
        return 0
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DependencyError, StaleArtifactError, NotFoundError, ParseError,
            ReferentialIntegrityError, BundleIntegrityError,
            IncomparableReportsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ApsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
