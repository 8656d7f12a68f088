"""extract: one IFT1 feature file per manifest record plus a run log."""

from __future__ import annotations

import argparse
import sys

from .config import DEFAULT_ARCH_SEED, ExtractionConfig
from .pipeline import extract_batch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Extract diffusion up-block feature tensors as IFT1 files",
    )
    parser.add_argument("--manifest", required=True,
                        help="JSON-lines manifest with image_id and path")
    parser.add_argument("--t", type=int, default=25,
                        help="noising timestep (default 25)")
    parser.add_argument("--idx", type=int, default=1,
                        help="up-block index to capture (default 1)")
    parser.add_argument("--seed", type=int, default=0,
                        help="run seed; per-image noise derives from it")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--skip-existing", action="store_true",
                        dest="skip_existing",
                        help="do not recompute ids whose .ift1 already exists")
    parser.add_argument("--batch-size", type=int, default=2, dest="batch_size")
    parser.add_argument("--model", default="sd21-offline-seeded",
                        help="backbone identifier (recorded; offline builds "
                             "always use the seeded architecture)")
    parser.add_argument("--arch-seed", type=int, default=DEFAULT_ARCH_SEED,
                        dest="arch_seed",
                        help="weight-initialization seed for the offline backbone")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExtractionConfig(
            t=args.t, idx=args.idx, seed=args.seed, batch_size=args.batch_size,
            model=args.model, out_dir=args.out, skip_existing=args.skip_existing,
            arch_seed=args.arch_seed,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        failures = extract_batch(args.manifest, config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if failures:
        print(f"error: {failures} image(s) failed; see extraction_log.jsonl",
              file=sys.stderr)
        return 1
    return 0


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
