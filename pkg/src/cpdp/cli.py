"""Command line client for the prediction service.

Every command posts one RunConfig to the service and prints the JSON
response.  Without ``--server`` the app runs in-process, so the CLI works
standalone; with it, the same request goes to a remote instance.  Errors
print a single ``[code] message`` line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from .errors import ConfigError, CpdpError
from .service.app import create_app
from .service.schemas import MODE_ALIASES

COMMANDS = {
    "fit": "/v1/fit",
    "predict": "/v1/predict",
    "synth": "/v1/synth",
    "evaluate": "/v1/evaluate",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    help_by_command = {
        "fit": "fit one regressor per signal and save the model files",
        "predict": "predict past the end of the input data and dump clouds",
        "synth": "generate a synthetic trajectory plus ground-truth angles",
        "evaluate": "benchmark all prediction modes on a synthetic suite",
    }
    for name, text in help_by_command.items():
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", required=True, help="run configuration JSON file")
        cmd.add_argument(
            "--mode",
            choices=sorted(MODE_ALIASES),
            help="override the configured prediction mode",
        )
        cmd.add_argument("--seed", type=int, help="override every seed in the config")
        cmd.add_argument("--out", help="override the configured output directory")
        cmd.add_argument("--server", help="base URL of a running service (default: in-process)")

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _load_config(args: argparse.Namespace) -> dict:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc.msg} (line {exc.lineno})")
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")

    if args.mode:
        raw["mode"] = args.mode
    if args.out:
        raw["out_dir"] = args.out
    if args.seed is not None:
        for section in ("prediction", "gp", "ik", "evaluate"):
            raw.setdefault(section, {})["seed"] = args.seed
        synth = raw.get("data", {}).get("synth") if isinstance(raw.get("data"), dict) else None
        if isinstance(synth, dict):
            synth["seed"] = args.seed
    return raw


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def run() -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://cpdp.internal", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(run())


def _error_parts(response: httpx.Response) -> tuple[str, str]:
    try:
        body = response.json()
    except ValueError:
        return "http_error", f"status {response.status_code}: {response.text[:200]}"
    if isinstance(body, dict) and "code" in body:
        return str(body["code"]), str(body.get("message", ""))
    if response.status_code == 422 and isinstance(body, dict):
        details = body.get("detail", [])
        if details and isinstance(details, list):
            first = details[0]
            loc = ".".join(str(p) for p in first.get("loc", []) if p != "body")
            return "config_error", f"{loc}: {first.get('msg', 'invalid value')}"
    return "http_error", f"status {response.status_code}"


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    try:
        payload = _load_config(args)
    except CpdpError as exc:
        print(f"[{exc.code}] {exc.message}", file=sys.stderr)
        return 1

    try:
        response = _post(args.server, COMMANDS[args.command], {"config": payload})
    except httpx.HTTPError as exc:
        print(f"[connection_error] {exc}", file=sys.stderr)
        return 1

    if response.status_code == 200:
        print(json.dumps(response.json(), indent=2))
        return 0
    code, message = _error_parts(response)
    print(f"[{code}] {message}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
