"""Entry point: py-embedder --config service.yaml [--host H] [--port P]."""

import argparse
from dataclasses import replace

import uvicorn

from py_embedder.app import create_app
from py_embedder.config import ConfigurationError, load_service_config


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="py-embedder",
        description="serve a transformer encoder behind the embedding wire protocol",
    )
    parser.add_argument("--config", default=None, help="YAML or JSON service configuration")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=None, help="overrides the configured port")
    args = parser.parse_args(argv)
    try:
        config = load_service_config(args.config)
        if args.port is not None:
            config = replace(config, port=args.port)
    except ConfigurationError as exc:
        parser.error(str(exc))
    uvicorn.run(create_app(config), host=args.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
