"""Run the edit service: python -m lorashield.service --spool DIR --base NAME=PATH."""

from __future__ import annotations

import argparse
import logging
import os
from pathlib import Path

import uvicorn

from .app import ServiceConfig, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lorashield-service")
    parser.add_argument("--spool", required=True, help="spool directory for jobs")
    parser.add_argument(
        "--base", action="append", default=[], metavar="NAME=PATH",
        help="register a base weight container (repeat)",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--workers", type=int, default=2, help="pipeline worker threads")
    parser.add_argument("--queue-depth", type=int, default=64)
    parser.add_argument("--max-upload-mb", type=int, default=256)
    parser.add_argument("--ttl-hours", type=float, default=24.0)
    args = parser.parse_args(argv)

    level = os.environ.get("LORASHIELD_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO))

    bases = {}
    for entry in args.base:
        if "=" not in entry:
            parser.error(f"--base expects NAME=PATH, got {entry!r}")
        name, path = entry.split("=", 1)
        bases[name] = Path(path)

    app = create_app(
        ServiceConfig(
            spool_dir=Path(args.spool),
            bases=bases,
            workers=args.workers,
            queue_depth=args.queue_depth,
            max_upload_mb=args.max_upload_mb,
            ttl_hours=args.ttl_hours,
        )
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
