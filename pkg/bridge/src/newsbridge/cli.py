"""Command-line entry point for batch extraction.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .extract import Toolchain, run_batch
from .types import BridgeError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="newsbridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="extract a manifest of raw items to corpus JSONL")
    p.add_argument("--manifest", required=True, help="CSV with id,text,image_path,label")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--report", help="run report JSON path")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--d-visual", type=int, default=512, dest="d_visual")
    return parser


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = _build_parser().parse_args(argv)
        toolchain = Toolchain(d_visual=args.d_visual)
        report = run_batch(
            args.manifest, args.out,
            report_path=args.report, toolchain=toolchain, workers=args.workers,
        )
        print(f"{report['successes']}/{report['items']} items extracted to {args.out}"
              + (f" ({len(report['skips'])} skipped)" if report["skips"] else ""))
        return 0
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
