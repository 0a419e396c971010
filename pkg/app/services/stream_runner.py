"""
End-to-end streaming run over a synthetic scene, with per-frame footprint, timing,
gate statistics and supervision losses, and run-level trajectory / depth / Chamfer metrics.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from app.services.frame_packet import FramePacket
from app.services.geometry_metrics import DepthFrame, TrajectoryPose, ate, ate_by_length, chamfer, depth_metrics, rpe
from app.services.objectives import PoseTarget, loss_3d, pose_loss, scale_norm, total_loss
from app.services.recurrent_core import EngineConfig, StepOutput, build_engine, persistent_footprint, recurrent_step
from app.services.scene_service import FeaturizerConfig, FrameTargets, SyntheticScene, featurize, frame_targets

logger = logging.getLogger(__name__)


@dataclass
class FrameRecord:
    frame_index: int
    ttt_loss: float
    zeta_mean: float
    zeta_min: float
    zeta_max: float
    token_gate_mean: float
    footprint_bytes: int
    tokens: int
    loss_3d: float | None = None
    loss_pose: float | None = None
    loss_total: float | None = None
    wall_ms: float | None = None


@dataclass
class RunReport:
    records: list[FrameRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def footprints(self) -> list[int]:
        return [r.footprint_bytes for r in self.records]

    def to_jsonl(self, include_timing: bool = False) -> str:
        lines = []
        for record in self.records:
            row = {"type": "frame", **asdict(record)}
            if not include_timing:
                row.pop("wall_ms")
            lines.append(json.dumps(row))
        if self.error is not None:
            lines.append(json.dumps({"type": "error", "frame_index": len(self.records), "message": self.error}))
        lines.append(json.dumps({"type": "summary", **self.summary}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunReport":
        report = cls()
        names = {f.name for f in fields(FrameRecord)}
        for line in text.splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            kind = row.pop("type")
            if kind == "frame":
                report.records.append(FrameRecord(**{k: v for k, v in row.items() if k in names}))
            elif kind == "error":
                report.error = row["message"]
            elif kind == "summary":
                report.summary = row
            else:
                raise ValueError(f"unknown report line type '{kind}'")
        return report

    def write(self, path: str | Path, include_timing: bool = False) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl(include_timing), encoding="utf-8")
        logger.info(f"[Stream] Report written to {path} ({len(self.records)} frames)")
        return path


# ============================================================
# Per-frame supervision
# ============================================================
def _optional(name: str, fn: Callable[[], float]) -> float | None:
    try:
        return fn()
    except ValueError as e:
        logger.debug(f"[Stream] {name} undefined: {e}")
        return None


def _frame_losses(out: StepOutput, targets: FrameTargets, frame: FramePacket) -> tuple[float | None, float | None, float | None]:
    l3d = _optional(
        "loss_3d",
        lambda: loss_3d(out.local_points, targets.self_points, out.world_points, targets.world_points),
    )

    def _pose() -> float:
        if targets.pose is None:
            raise ValueError("no ground-truth pose scale for this frame")
        pred = PoseTarget(
            out.predicted_pose.quaternion,
            out.predicted_pose.translation,
            scale=scale_norm(out.world_points),
        )
        return pose_loss([pred], [targets.pose], canonicalize=True)

    lpose = _optional("loss_pose", _pose)
    total = None if l3d is None or lpose is None else total_loss(l3d, lpose, 0.0, frame.is_raymap)
    return l3d, lpose, total


# ============================================================
# Run-level metrics
# ============================================================
def _metric(name: str, fn: Callable[[], object]):
    try:
        return fn()
    except ValueError as e:
        logger.warning(f"[Metrics] {name} not computable for this run: {e}")
        return None


def _summarise(
    scene: SyntheticScene,
    estimates: list[TrajectoryPose],
    depth_frames: list[DepthFrame],
    world_points: list[np.ndarray],
    ate_lengths: list[int],
    footprints: list[int],
) -> dict:
    gt = scene.trajectory[: len(estimates)]
    rpe_pair = _metric("RPE", lambda: rpe(estimates, gt, delta=1))
    depth_pair = _metric("depth", lambda: depth_metrics(depth_frames, mode="per-seq-scaled"))
    cd = _metric("Chamfer", lambda: chamfer(np.concatenate(world_points), scene.landmarks))
    by_length = _metric("ATE by length", lambda: ate_by_length(estimates, gt, ate_lengths)) or {}
    return {
        "frames": len(estimates),
        "footprint_min": min(footprints) if footprints else None,
        "footprint_max": max(footprints) if footprints else None,
        "ate": _metric("ATE", lambda: ate(estimates, gt)),
        "rpe_trans": rpe_pair[0] if rpe_pair else None,
        "rpe_rot_deg": rpe_pair[1] if rpe_pair else None,
        "ate_by_length": [[n, value] for n, value in sorted(by_length.items())],
        "depth_abs_rel": depth_pair[0] if depth_pair else None,
        "depth_delta_125": depth_pair[1] if depth_pair else None,
        "chamfer": cd[0] if cd else None,
        "chamfer_accuracy": cd[1] if cd else None,
        "chamfer_completeness": cd[2] if cd else None,
    }


# ============================================================
# Runner
# ============================================================
def run_stream(
    scene: SyntheticScene,
    engine_config: EngineConfig,
    featurizer_config: FeaturizerConfig | None = None,
    ate_lengths: list[int] | None = None,
) -> tuple[RunReport, list[TrajectoryPose]]:
    """
    Stream every frame of the scene through a freshly built engine.
    Returns the report and the estimated trajectory (scene timestamps, predicted poses).
    """
    featurizer_config = featurizer_config or FeaturizerConfig(d_in=engine_config.fast_weight.d_in)
    engine = build_engine(engine_config)
    report = RunReport()
    estimates: list[TrajectoryPose] = []
    depth_frames: list[DepthFrame] = []
    world_points: list[np.ndarray] = []

    logger.info(f"[Stream] Run started ({scene.frame_count} frames, traj={scene.traj_kind})")
    for i in range(scene.frame_count):
        frame = featurize(scene, i, featurizer_config)
        started = time.perf_counter()
        try:
            out = recurrent_step(engine, frame)
        except Exception as e:
            report.error = f"frame {i}: {e}"
            logger.error(f"[Stream] Run stopped at frame {i}: {e}")
            break
        wall_ms = 1000.0 * (time.perf_counter() - started)

        targets = frame_targets(scene, i, featurizer_config)
        l3d, lpose, total = _frame_losses(out, targets, frame)
        report.records.append(FrameRecord(
            frame_index=i,
            ttt_loss=out.ttt_loss,
            zeta_mean=out.gate_stats["zeta_mean"],
            zeta_min=out.gate_stats["zeta_min"],
            zeta_max=out.gate_stats["zeta_max"],
            token_gate_mean=out.gate_stats["token_gate_mean"],
            footprint_bytes=persistent_footprint(engine),
            tokens=frame.token_count,
            loss_3d=l3d,
            loss_pose=lpose,
            loss_total=total,
            wall_ms=wall_ms,
        ))

        gt_pose = scene.trajectory[i]
        estimates.append(TrajectoryPose(gt_pose.timestamp, out.predicted_pose.quaternion, out.predicted_pose.translation))
        depth_frames.append(DepthFrame(
            estimate=out.local_points.points[:, 2],
            truth=targets.depth,
            valid=targets.self_points.valid,
        ))
        world_points.append(out.world_points.points)

    report.summary = _summarise(scene, estimates, depth_frames, world_points, ate_lengths or [], report.footprints)
    logger.info(
        f"[Stream] Run finished: {len(report.records)}/{scene.frame_count} frames, "
        f"ate={report.summary['ate']}, error={report.error}"
    )
    return report, estimates
