import logging

from fastapi import APIRouter, HTTPException

from app.config import RunConfig, apply_seed_override, get_settings
from app.services.scene_service import generate_scene
from app.services.stream_runner import run_stream

logger = logging.getLogger(__name__)

router = APIRouter()

@router.post("/run")
def run_synthetic_stream(config: RunConfig):
    """
    Stream a synthetic scene through a fresh engine and return the run summary.
    A run that stops early still answers 200 with the error in the body.
    """
    try:
        cfg = apply_seed_override(config, get_settings().global_seed)
        scene = generate_scene(cfg.seeds.scene, cfg.landmarks, cfg.traj_kind, cfg.frames)
        report, _ = run_stream(scene, cfg.engine_config(), cfg.featurizer_config(), cfg.ate_lengths)
        return {
            "status": "success" if report.error is None else "stopped",
            "error": report.error,
            "frames": len(report.records),
            "summary": report.summary,
        }
    except ValueError as ve:
        raise HTTPException(status_code=400, detail=str(ve))
    except Exception as e:
        logger.error(f"[Stream] API run failed: {e}")
        raise HTTPException(status_code=500, detail=f"Stream run failed: {e}")
