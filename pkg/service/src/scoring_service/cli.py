"""Run the scoring service: ``scoring-service --backend overlap --port 8400``."""

from __future__ import annotations

import argparse

import uvicorn

from .app import DEFAULT_MAX_BATCH_SIZE, create_app
from .backends import make_backend


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoring-service",
        description="Batch relevance-scoring service (POST /score).",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    parser.add_argument(
        "--backend",
        default="stub",
        help="stub, overlap, or model:<checkpoint identifier>",
    )
    parser.add_argument(
        "--max-batch", type=int, default=DEFAULT_MAX_BATCH_SIZE,
        help="largest accepted batch, advertised via /health",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backend = make_backend(args.backend)
    except ValueError as exc:
        build_parser().error(str(exc))
        return 2
    app = create_app(backend, max_batch_size=args.max_batch)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
