from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from app.services.geometry_metrics import ate, chamfer, check_timestamps, rpe
from app.utils.trajectory_io import parse_tum_lines

router = APIRouter()

# ===============================
# TRAJECTORY
# ===============================
class TrajectoryPayload(BaseModel):
    est: list[list[float]] = Field(..., description="TUM rows: timestamp tx ty tz qx qy qz qw")
    gt: list[list[float]] = Field(..., description="TUM rows, associated to est by index")
    delta: int = Field(1, ge=1, description="RPE frame offset")

def _rows_to_poses(rows: list[list[float]]):
    return parse_tum_lines([" ".join(repr(v) for v in row) for row in rows])

@router.post("/trajectory")
def trajectory_metrics(payload: TrajectoryPayload):
    """ATE after Sim(3) alignment plus RPE at the requested offset."""
    try:
        est, gt = _rows_to_poses(payload.est), _rows_to_poses(payload.gt)
        check_timestamps(est)
        check_timestamps(gt)
        rpe_trans, rpe_rot = rpe(est, gt, delta=payload.delta)
        return {"ate": ate(est, gt), "rpe_trans": rpe_trans, "rpe_rot_deg": rpe_rot}
    except ValueError as ve:
        raise HTTPException(status_code=400, detail=str(ve))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Unexpected error: {e}")

# ===============================
# CHAMFER
# ===============================
class ChamferPayload(BaseModel):
    pred: list[list[float]] = Field(..., description="Predicted points, one [x, y, z] per entry")
    truth: list[list[float]] = Field(..., description="Ground-truth points")

@router.post("/chamfer")
def chamfer_metrics(payload: ChamferPayload):
    try:
        cd, accuracy, completeness = chamfer(payload.pred, payload.truth)
        return {"chamfer": cd, "accuracy": accuracy, "completeness": completeness}
    except ValueError as ve:
        raise HTTPException(status_code=400, detail=str(ve))
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Unexpected error: {e}")
