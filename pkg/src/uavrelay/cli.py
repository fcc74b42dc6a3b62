"""Thin-client command line.

Each subcommand builds the same request model the HTTP API accepts, then
either calls the in-process handler (default) or POSTs it to a running
service (`--server http://host:port`). `serve` starts the service.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from pydantic import BaseModel

from .harness.config import load_config
from .service import schemas


def _dispatch(server: Optional[str], route: str, request: BaseModel, handler):
    if server:
        import httpx

        resp = httpx.post(f"{server.rstrip('/')}{route}",
                          json=request.model_dump(mode="json"), timeout=None)
        if resp.status_code != 200:
            raise SystemExit(f"server error {resp.status_code}: {resp.text}")
        return resp.json()
    return handler(request).model_dump(mode="json")


def _print(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="uavrelay",
                                     description="UAV relay handover simulator and learner")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; default runs in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--episodes", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--policy", default=None, choices=["vqmix", "location_only"])

    p_eval = sub.add_parser("eval", help="evaluate a policy across seeds")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--seeds", type=int, nargs="+", default=None)
    p_eval.add_argument("--policy", default=None)
    p_eval.add_argument("--episodes-per-seed", type=int, default=None)
    p_eval.add_argument("--out-csv", default=None)

    p_oracle = sub.add_parser("oracle", help="exhaustive optimum on a scripted scenario")
    p_oracle.add_argument("--config", required=True)
    p_oracle.add_argument("--horizon", type=int, required=True)

    p_trace = sub.add_parser("trace", help="dump a per-slot episode trace CSV")
    p_trace.add_argument("--config", required=True)
    p_trace.add_argument("--policy", default=None)
    p_trace.add_argument("--seed", type=int, default=None)
    p_trace.add_argument("--out", default=None)
    p_trace.add_argument("--checkpoint", default=None)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)

    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    cfg = load_config(args.config)
    run = cfg.run

    if args.command == "train":
        from .service.app import handle_train

        req = schemas.TrainRequest(
            config=cfg,
            seed=args.seed if args.seed is not None else run.seeds[0],
            episodes=args.episodes if args.episodes is not None else run.episodes,
            out_dir=args.out if args.out is not None else run.out_dir,
            policy=args.policy if args.policy is not None else run.policy,
        )
        _print(_dispatch(args.server, "/train", req, handle_train))
    elif args.command == "eval":
        from .service.app import handle_eval

        req = schemas.EvalRequest(
            config=cfg,
            policy=args.policy if args.policy is not None else run.policy,
            seeds=list(args.seeds) if args.seeds is not None else list(run.seeds),
            checkpoint=args.checkpoint,
            episodes_per_seed=(args.episodes_per_seed if args.episodes_per_seed is not None
                               else run.eval_episodes),
            out_csv=args.out_csv,
        )
        _print(_dispatch(args.server, "/eval", req, handle_eval))
    elif args.command == "oracle":
        from .service.app import handle_oracle

        req = schemas.OracleRequest(config=cfg, horizon=args.horizon)
        _print(_dispatch(args.server, "/oracle", req, handle_oracle))
    elif args.command == "trace":
        from .service.app import handle_trace

        req = schemas.TraceRequest(
            config=cfg,
            policy=args.policy if args.policy is not None else run.policy,
            seed=args.seed if args.seed is not None else run.seeds[0],
            out_path=args.out if args.out is not None else "trace.csv",
            checkpoint=args.checkpoint,
        )
        _print(_dispatch(args.server, "/trace", req, handle_trace))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
