import logging
from typing import Any, Dict, List, Optional

import uvicorn
from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from . import runner
from .config import ScenarioConfig, parse_config
from .errors import ConfigError, SimulatorError
from .settings import settings

logging.basicConfig(level=settings.log_level)
logger = logging.getLogger(__name__)

app = FastAPI(title="WFM Transmission Simulator API", version="1.0.0")


class SimulateRequest(BaseModel):
    config: str = ""
    seeds: Optional[List[int]] = None
    fixed_snr_db: Optional[float] = None


class SimulateResponse(BaseModel):
    seeds: int
    stats: Dict[str, Dict[str, Any]]
    per_seed: List[Dict[str, Any]]
    plan: Optional[Dict[str, Any]] = None


class PlanRequest(BaseModel):
    config: str = ""
    reference_seeds: Optional[int] = None
    fixed_snr_db: Optional[float] = None


class PlanResponse(BaseModel):
    plan: Dict[str, Any]
    slots: List[int]
    reference: List[float]


def _parse(text: str) -> ScenarioConfig:
    return parse_config(text, source="request") if text.strip() else ScenarioConfig()


def _http_error(e: Exception) -> HTTPException:
    if isinstance(e, ConfigError):
        return HTTPException(status_code=422, detail=str(e))
    if isinstance(e, SimulatorError):
        return HTTPException(status_code=400, detail=str(e))
    return HTTPException(status_code=500, detail=str(e))


@app.post("/simulate/", response_model=SimulateResponse)
def simulate(request: SimulateRequest):
    """Run sessions for the given config text and return the run summary"""
    try:
        cfg = _parse(request.config)
        seeds = request.seeds if request.seeds else list(cfg.seeds)
        plan = None
        if cfg.protocol.strategy == "feedback_active":
            plan, _ = runner.build_plan(cfg, request.fixed_snr_db)
        traces = runner.run_seeds(cfg, seeds, plan, request.fixed_snr_db, settings.parallel)
        summary = runner.summarize(traces).to_dict()
        logger.info(f"simulate: {cfg.scenario}/{cfg.protocol.strategy}, {len(seeds)} seed(s)")
        return SimulateResponse(
            seeds=summary["seeds"],
            stats=summary["stats"],
            per_seed=summary["per_seed"],
            plan=plan.model_dump(mode="json") if plan else None,
        )
    except Exception as e:
        logger.error(f"simulate failed: {e}")
        raise _http_error(e)


@app.post("/plan/", response_model=PlanResponse)
def plan(request: PlanRequest):
    """Active transmission plan for the config's forecast"""
    try:
        cfg = _parse(request.config)
        reference = runner.reference_for(cfg, request.reference_seeds)
        result, _ = runner.build_plan(cfg, request.fixed_snr_db, reference)
        return PlanResponse(plan=result.model_dump(mode="json"), slots=list(result.slots), reference=reference.tolist())
    except Exception as e:
        logger.error(f"plan failed: {e}")
        raise _http_error(e)


@app.get("/ber-check/")
def ber_check(snr: List[float] = Query(default=[6.0, 10.0, 14.0]), bits: int = 200_000, seed: int = 0):
    """Measured against analytic 16-QAM bit error rate"""
    try:
        table = runner.ber_check(snr, bits, seed)
        return {"rows": table.to_dict(orient="records")}
    except Exception as e:
        logger.error(f"ber-check failed: {e}")
        raise _http_error(e)


@app.get("/health/")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "components": {"simulator": "active", "parallel": settings.parallel}}


if __name__ == "__main__":
    uvicorn.run(app, host=settings.service_host, port=settings.service_port)
