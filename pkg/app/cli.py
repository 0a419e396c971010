"""
Command-line entry point.

    python -m app.cli param-count
    python -m app.cli gradcheck --seed 7
    python -m app.cli run --config configs/toy.json --out reports/run.jsonl
    python -m app.cli metrics --est est.txt --gt gt.txt
    python -m app.cli retention --steps 50 --zeta 0.1 --zeta 1.0
    python -m app.cli gen --seed 0 --out-dir scene/

Exit codes: 0 success, 1 contract violation or bad usage, 2 I/O error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from app.config import get_settings, load_run_config
from app.services.explicit_state import GateConfig, gate_param_count
from app.services.fast_weight_memory import FastWeightConfig, fast_weight_param_count
from app.services.geometry_metrics import DepthFrame, ate, chamfer, check_timestamps, depth_metrics, rpe
from app.services.gradcheck_service import run_gradcheck
from app.services.recurrent_core import build_engine, save_checkpoint
from app.services.retention_service import retention_experiment
from app.services.scene_service import generate_scene
from app.services.stream_runner import run_stream
from app.utils.contracts import require
from app.utils.pointcloud_io import read_points, write_ply
from app.utils.trajectory_io import read_tum, write_tum

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_IO = 2

GRADCHECK_TOLERANCE = 1e-6


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2))


# ===============================
# SUBCOMMANDS
# ===============================
def _cmd_param_count(args) -> int:
    print(f"fast_weight_params {fast_weight_param_count(FastWeightConfig())}")
    print(f"gate_params {gate_param_count(GateConfig())}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    result = run_gradcheck(seed=args.seed, instances_per_width=args.instances)
    print(f"max_rel_error {result['max_rel_error']:.3e} over {result['instances']} instances")
    if result["max_rel_error"] >= GRADCHECK_TOLERANCE:
        logger.error(
            f"[CLI] Analytic TTT gradient disagrees with finite differences: "
            f"{result['max_rel_error']:.3e} >= {GRADCHECK_TOLERANCE:g}"
        )
        return EXIT_CONTRACT
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    scene = generate_scene(cfg.seeds.scene, cfg.landmarks, cfg.traj_kind, cfg.frames)
    engine_cfg = cfg.engine_config()
    report, estimates = run_stream(scene, engine_cfg, cfg.featurizer_config(), cfg.ate_lengths)

    out = Path(args.out) if args.out else Path(get_settings().report_dir) / "run.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out, include_timing=args.timing)
    if args.trajectory_out:
        write_tum(estimates, args.trajectory_out)
        logger.info(f"[CLI] Estimated trajectory written to {args.trajectory_out}")

    _print_json(report.summary)
    if report.error is not None:
        print(f"run stopped early: {report.error}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


def _cmd_metrics(args) -> int:
    result = {}
    if args.est or args.gt:
        require(bool(args.est and args.gt), "--est and --gt must be given together")
        est, gt = read_tum(args.est), read_tum(args.gt)
        check_timestamps(est)
        check_timestamps(gt)
        result["ate"] = ate(est, gt)
        result["rpe_trans"], result["rpe_rot_deg"] = rpe(est, gt, delta=args.delta)

    if args.pred_cloud or args.gt_cloud:
        require(bool(args.pred_cloud and args.gt_cloud), "--pred-cloud and --gt-cloud must be given together")
        cd, acc, comp = chamfer(read_points(args.pred_cloud), read_points(args.gt_cloud))
        result.update(chamfer=cd, accuracy=acc, completeness=comp)

    if args.depth_est or args.depth_gt:
        require(bool(args.depth_est and args.depth_gt), "--depth-est and --depth-gt must be given together")
        frame = DepthFrame(estimate=np.load(args.depth_est), truth=np.load(args.depth_gt))
        result["depth_abs_rel"], result["depth_delta_125"] = depth_metrics([frame], mode=args.depth_mode)

    require(bool(result), "nothing to evaluate: pass --est/--gt, --pred-cloud/--gt-cloud or --depth-est/--depth-gt")
    _print_json(result)
    return EXIT_OK


def _cmd_retention(args) -> int:
    curves = retention_experiment(
        steps=args.steps,
        zetas=args.zeta or [0.1, 1.0],
        learned_gate=args.learned,
        noise_level=args.noise,
        seed=args.seed,
    )
    if args.out:
        names = list(curves)
        rows = ["step," + ",".join(names)]
        rows += [f"{t + 1}," + ",".join(repr(curves[n][t]) for n in names) for t in range(args.steps)]
        Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
        logger.info(f"[CLI] Retention curves written to {args.out}")
    _print_json({name: curve[-1] for name, curve in curves.items()})
    return EXIT_OK


def _cmd_gen(args) -> int:
    scene = generate_scene(args.seed, args.landmarks, args.traj, args.frames)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ply(out_dir / "landmarks.ply", scene.landmarks, scene.normals)
    write_tum(scene.trajectory, out_dir / "trajectory.txt")
    logger.info(f"[CLI] Scene written to {out_dir}")
    print(f"wrote {scene.landmarks.shape[0]} landmarks and {scene.frame_count} poses to {out_dir}")
    return EXIT_OK


def _cmd_checkpoint(args) -> int:
    cfg = load_run_config(args.config)
    save_checkpoint(build_engine(cfg.engine_config()), args.out)
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="app.cli", description="Dual-memory streaming engine tools")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("param-count", help="print the parameter counts of both memory modules")
    p.set_defaults(handler=_cmd_param_count)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference TTT gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=34, help="instances per head width")
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("run", help="stream a synthetic scene and write a report")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--timing", action="store_true", help="include per-frame wall-clock in the report")
    p.add_argument("--trajectory-out")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("metrics", help="trajectory, point-cloud and depth metrics from files")
    p.add_argument("--est")
    p.add_argument("--gt")
    p.add_argument("--delta", type=int, default=1)
    p.add_argument("--pred-cloud")
    p.add_argument("--gt-cloud")
    p.add_argument("--depth-est")
    p.add_argument("--depth-gt")
    p.add_argument("--depth-mode", choices=["metric", "per-seq-scaled"], default="metric")
    p.set_defaults(handler=_cmd_metrics)

    p = sub.add_parser("retention", help="forgetting curves of the gated state update")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--zeta", type=float, action="append")
    p.add_argument("--learned", action="store_true")
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV file for the full curves")
    p.set_defaults(handler=_cmd_retention)

    p = sub.add_parser("gen", help="write a synthetic scene (PLY landmarks + TUM trajectory)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--landmarks", type=int, default=256)
    p.add_argument("--traj", choices=["orbit", "corridor", "random-walk"], default="orbit")
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_gen)

    p = sub.add_parser("checkpoint", help="write the initial engine memories for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_checkpoint)
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=get_settings().log_level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_CONTRACT
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return args.handler(args)
    except OSError as e:
        logger.error(f"[CLI] I/O error in '{args.command}': {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        logger.error(f"[CLI] Contract violation in '{args.command}': {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(cli_main())
