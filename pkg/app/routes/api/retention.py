from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from app.services.retention_service import retention_experiment

router = APIRouter()

class RetentionPayload(BaseModel):
    steps: int = Field(50, ge=2, le=10_000)
    zetas: list[float] = Field(default_factory=lambda: [0.1, 1.0], description="Fixed gate values in [0, 1]")
    learned_gate: bool = Field(False, description="Also run the learned channel gate")
    noise_level: float = Field(1.0, ge=0.0)
    seed: int = 0

@router.post("/run")
def run_retention(payload: RetentionPayload):
    """Forgetting curves ||S_t - S_0|| / ||S_0|| per gate mode."""
    try:
        curves = retention_experiment(
            steps=payload.steps,
            zetas=payload.zetas,
            learned_gate=payload.learned_gate,
            noise_level=payload.noise_level,
            seed=payload.seed,
        )
        return {"status": "success", "curves": curves}
    except ValueError as ve:
        raise HTTPException(status_code=400, detail=str(ve))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Retention run failed: {e}")
