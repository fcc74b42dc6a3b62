"""FastAPI wrapper around the harness runners.

Jobs run synchronously in the request (desk-scale budgets); artifacts are
written to server-side paths named in the request. The CLI is a thin client
of these handlers, either over HTTP or in-process.
"""
from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..harness import runners
from . import schemas


def handle_train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    art = runners.run_train(req.config, seed=req.seed, episodes=req.episodes,
                            out_dir=req.out_dir, policy=req.policy)
    return schemas.TrainResponse(
        csv_path=art.csv_path, checkpoint_path=art.checkpoint_path,
        episodes=art.episodes, r_bar=art.r_bar, config_hash=art.config_hash,
        final_epsilon=art.final_epsilon, final_block_ratio=art.final_block_ratio,
        final_throughput_bits=art.final_throughput_bits,
    )


def handle_eval(req: schemas.EvalRequest) -> schemas.EvalResponse:
    summary = runners.run_eval(req.config, policy=req.policy, seeds=req.seeds,
                               checkpoint=req.checkpoint,
                               episodes_per_seed=req.episodes_per_seed,
                               out_csv=req.out_csv)
    return schemas.EvalResponse(
        policy=summary.policy, seeds=list(summary.seeds),
        per_seed=[schemas.SeedMetrics(**row) for row in summary.per_seed],
        block_ratio_mean=summary.block_ratio_mean, block_ratio_ci95=summary.block_ratio_ci,
        throughput_mean=summary.throughput_mean, throughput_ci95=summary.throughput_ci,
        degenerate_ci=summary.degenerate_ci, csv_path=summary.csv_path,
    )


def handle_oracle(req: schemas.OracleRequest) -> schemas.OracleResponse:
    res = runners.run_oracle(req.config, req.horizon)
    return schemas.OracleResponse(
        optimal_return=res.optimal_return,
        actions=[schemas.JointAction(a_m=a.a_m, a_u=a.a_u) for a in res.actions],
        enumerated=res.enumerated, horizon=res.horizon,
    )


def handle_trace(req: schemas.TraceRequest) -> schemas.TraceResponse:
    art = runners.run_trace(req.config, policy=req.policy, seed=req.seed,
                            out_path=req.out_path, checkpoint=req.checkpoint)
    return schemas.TraceResponse(
        csv_path=art.csv_path, slots=art.slots, block_ratio=art.block_ratio,
        throughput_bits=art.throughput_bits, episode_return=art.episode_return,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="uavrelay", version=__version__)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
        try:
            return handle_train(req)
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/eval", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest) -> schemas.EvalResponse:
        try:
            return handle_eval(req)
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/oracle", response_model=schemas.OracleResponse)
    def oracle(req: schemas.OracleRequest) -> schemas.OracleResponse:
        try:
            return handle_oracle(req)
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/trace", response_model=schemas.TraceResponse)
    def trace(req: schemas.TraceRequest) -> schemas.TraceResponse:
        try:
            return handle_trace(req)
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    return app


app = create_app()
