import logging
from typing import Sequence

import numpy as np

from app.services.fast_weight_memory import FastWeights, finite_diff_gradient, gradient_relative_error, ttt_gradient
from app.utils.numerics import l2_normalize_rows

logger = logging.getLogger(__name__)

DEFAULT_WIDTHS = (2, 4, 8)
DEFAULT_STEP = 1e-5
CHECK_HEADS = 2


def random_instance(rng: np.random.Generator, heads: int, d_head: int) -> tuple[FastWeights, np.ndarray, np.ndarray]:
    """Fast weights, unit-norm per-head queries and a posterior of width heads*d_head."""
    std = 1.0 / np.sqrt(d_head)
    shape = (heads, d_head, d_head)
    fw = FastWeights(
        w1=rng.normal(0.0, std, size=shape),
        w2=rng.normal(0.0, std, size=shape),
        w3=rng.normal(0.0, std, size=shape),
    )
    queries = l2_normalize_rows(rng.normal(size=(heads, d_head)))
    posterior = rng.normal(size=heads * d_head)
    return fw, queries, posterior


def run_gradcheck(
    seed: int = 0,
    instances_per_width: int = 34,
    widths: Sequence[int] = DEFAULT_WIDTHS,
    step: float = DEFAULT_STEP,
) -> dict:
    """Analytic TTT gradient against central differences on seeded random instances."""
    rng = np.random.default_rng(seed)
    per_width: dict[int, float] = {}
    for d_head in widths:
        worst = 0.0
        for _ in range(instances_per_width):
            fw, queries, posterior = random_instance(rng, CHECK_HEADS, d_head)
            analytic = ttt_gradient(fw, queries, posterior)
            reference = finite_diff_gradient(fw, queries, posterior, step)
            worst = max(worst, gradient_relative_error(analytic, reference))
        per_width[int(d_head)] = worst
        logger.info(f"[GradCheck] d_head={d_head}: max relative error {worst:.3e} over {instances_per_width} instances")

    return {
        "seed": seed,
        "instances": instances_per_width * len(widths),
        "max_rel_error": max(per_width.values()) if per_width else 0.0,
        "per_width": per_width,
    }
