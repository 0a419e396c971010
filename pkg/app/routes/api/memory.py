from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from app.services.explicit_state import GateConfig, gate_param_count
from app.services.fast_weight_memory import FastWeightConfig, fast_weight_param_count
from app.services.gradcheck_service import run_gradcheck

router = APIRouter()

# ===============================
# PARAMETER COUNTS
# ===============================
@router.get("/param-count")
def param_count():
    """Parameter counts of both memory modules at their default dimensions."""
    return {
        "fast_weight_params": fast_weight_param_count(FastWeightConfig()),
        "gate_params": gate_param_count(GateConfig()),
    }

# ===============================
# GRADIENT CHECK
# ===============================
class GradCheckPayload(BaseModel):
    seed: int = Field(0, description="Seed of the random instances")
    instances_per_width: int = Field(34, ge=1, le=200, description="Instances per head width")

@router.post("/gradcheck")
def gradcheck(payload: GradCheckPayload):
    try:
        return run_gradcheck(seed=payload.seed, instances_per_width=payload.instances_per_width)
    except ValueError as ve:
        raise HTTPException(status_code=400, detail=str(ve))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Gradient check failed: {e}")
