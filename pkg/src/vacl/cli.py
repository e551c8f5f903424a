"""Command-line client for the experiment runner.

By default commands execute in process through the same code paths the HTTP
service uses; with ``--server URL`` (or the VACL_SERVER env var) the command
is posted to a running service instead and only the response handling stays
local.

Exit codes: 0 ok, 2 config error, 3 numeric abort, 4 I/O error, 1 anything
else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Callable

from .config import load_config
from . import runner
from .service import classify_error

EXIT_CODES = {"config": 2, "numeric": 3, "io": 4, "internal": 1}

COMMANDS: dict[str, tuple[str, Callable]] = {
    "train": ("/train", runner.run_train),
    "prune": ("/prune", runner.run_prune),
    "finetune": ("/finetune", runner.run_finetune),
    "pipeline": ("/pipeline", runner.run_pipeline),
    "sweep-tau": ("/sweep/tau", runner.run_sweep_tau),
    "sweep-lambda": ("/sweep/lambda", runner.run_sweep_lambda),
    "heatmap": ("/heatmap", runner.run_heatmap),
    "contour": ("/contour", runner.run_contour),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vacl",
        description="Train, prune, and analyze residual MLPs with "
                    "cross-layer sparsity regularization.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="experiment config JSON")
        cmd.add_argument("--out", default=None, help="output directory override")
        cmd.add_argument("--seed", type=int, default=None, help="training seed override")
        cmd.add_argument("--tau", type=float, default=None, help="pruning threshold override")
        cmd.add_argument("--lambda", dest="lam", type=float, default=None,
                         help="penalty strength override")
        cmd.add_argument("--server", default=os.environ.get("VACL_SERVER"),
                         help="base URL of a running vacl service")
        if name == "heatmap":
            cmd.add_argument("--group", type=int, default=0,
                             help="cross-layer group id")
    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _run_local(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    cfg = runner.apply_overrides(cfg, out_dir=args.out, seed=args.seed,
                                 tau=args.tau, lam=args.lam)
    _, fn = COMMANDS[args.command]
    if args.command == "heatmap":
        result = fn(cfg, group=args.group)
    else:
        result = fn(cfg)
    return result.to_dict()


def _run_remote(args: argparse.Namespace) -> dict:
    import httpx

    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    payload: dict = {"config": doc}
    if args.out is not None:
        payload["out_dir"] = args.out
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.tau is not None:
        payload["tau"] = args.tau
    if args.lam is not None:
        payload["lambda"] = args.lam
    if args.command == "heatmap":
        payload["group"] = args.group
    path, _ = COMMANDS[args.command]
    try:
        response = httpx.post(args.server.rstrip("/") + path, json=payload,
                              timeout=None)
    except httpx.HTTPError as exc:
        raise OSError(f"cannot reach {args.server}: {exc}") from exc
    try:
        body = response.json()
    except ValueError as exc:
        raise RuntimeError(f"server returned a malformed response "
                           f"({response.status_code})") from exc
    if response.status_code != 200:
        error = body.get("error", {})
        code = error.get("code", "internal")
        raise SystemExit(_fail(error.get("message", response.text),
                               EXIT_CODES.get(code, 1)))
    return body


def _fail(message: str, exit_code: int) -> int:
    print(f"vacl: error: {message}", file=sys.stderr)
    return exit_code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("vacl.service:app", host=args.host, port=args.port)
        return 0
    try:
        if args.server:
            body = _run_remote(args)
        else:
            body = _run_local(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 1
    except Exception as exc:  # noqa: BLE001 - mapped onto exit codes
        return _fail(str(exc), EXIT_CODES[classify_error(exc)])
    print(json.dumps(body, sort_keys=True, indent=2))
    return 0


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
