import sys
from pathlib import Path

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from app.errors import ContractViolation, TorusError
from app.models import (
    FixedPointRequest,
    FixedPointResponse,
    FrameRequest,
    FrameResponse,
    NormalFormRequest,
    NormalFormResponse,
)
from app.service import get_torus_service


app = FastAPI(title="Torus Symmetry Breaking")


@app.exception_handler(RequestValidationError)
async def invalid_request(request: Request, exc: RequestValidationError):
    detail = [{"loc": list(error["loc"]), "msg": error["msg"]} for error in exc.errors()]
    return JSONResponse(status_code=400, content={"detail": detail})


def _failure(exc: TorusError) -> HTTPException:
    if isinstance(exc, ContractViolation):
        return HTTPException(status_code=400, detail=str(exc))
    return HTTPException(status_code=422, detail=f"{type(exc).__name__}: {exc}")


@app.get("/api/torus/status")
async def get_torus_status():
    return get_torus_service().status()


@app.post("/api/torus/frame", response_model=FrameResponse)
async def compute_frame(request: FrameRequest):
    try:
        frame = get_torus_service().frame(request.pattern, request.network)
    except TorusError as exc:
        raise _failure(exc) from exc
    return FrameResponse(**frame.as_dict())


@app.post("/api/torus/normalform", response_model=NormalFormResponse)
async def compute_normal_form(request: NormalFormRequest):
    try:
        sol, warnings, discrepancy = get_torus_service().normal_form(
            request.pattern, request.network, request.perturb, request.lmax
        )
    except TorusError as exc:
        raise _failure(exc) from exc
    return NormalFormResponse(
        pattern=sol.pattern.word,
        f1=sol.f1.to_json_entries(),
        e1=sol.e1.to_json_entries(),
        discrepancy=discrepancy,
        warnings=warnings,
    )


@app.post("/api/torus/fixed-points", response_model=FixedPointResponse)
async def compute_fixed_points(request: FixedPointRequest):
    try:
        points, degenerate = get_torus_service().fixed_points(request.pattern, request.perturb)
    except TorusError as exc:
        raise _failure(exc) from exc
    return FixedPointResponse(
        pattern=request.pattern.strip().upper(),
        points=[point.as_dict() for point in points],
        degenerate=degenerate,
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
