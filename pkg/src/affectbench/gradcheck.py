"""Finite-difference verification of every differentiable primitive.

Each check builds a small random instance, compares analytic gradients
against central differences, and reports the maximum relative error.
The suite is what `affectbench gradcheck` runs and what the tests gate
on; everything here is deterministic per seed.
"""

from __future__ import annotations

import numpy as np

from affectbench.autodiff import (
    add,
    conv1d,
    dropout,
    flatten,
    grad_check,
    matmul,
    maxpool1d,
    silu,
    softmax_cross_entropy,
    weighted_sum,
)
from affectbench.model import ModelConfig, build_model
from affectbench.rng import ROLE_INIT, Rng

TOLERANCE = 1e-4

# Small but full-depth: one block of each layer kind, dropout active.
_E2E_CONFIG = ModelConfig(
    in_channels=2, window_len=8, depth=1, base_channels=2, conv_kernel=3,
    pool_kernel=2, dropout_rate=0.0, fc_hidden=4, num_classes=3,
)
_E2E_TRAIN_CONFIG = ModelConfig(
    in_channels=2, window_len=16, depth=2, base_channels=2, conv_kernel=3,
    pool_kernel=2, dropout_rate=0.25, fc_hidden=4, num_classes=3,
)


def _array(rng: Rng, *shape: int) -> np.ndarray:
    n = int(np.prod(shape))
    return rng.normals(n).reshape(shape)


def run_gradient_checks(seed: int = 0) -> dict[str, float]:
    """Name -> max relative error for every primitive plus the full stack.

    Non-scalar ops are projected to a scalar through a fixed random
    weighting, so the adjoint pushed through each op is nontrivial.
    """
    rng = Rng(seed)
    results: dict[str, float] = {}

    def projected(name, op, out_shape, param_shapes):
        w = _array(rng, *out_shape)
        arrays = [_array(rng, *shape) for shape in param_shapes]
        results[name] = grad_check(
            lambda p: weighted_sum(op(p), w), arrays)

    projected("add", lambda p: add(p[0], p[1]),
              (3, 4), [(3, 4), (3, 4)])
    projected("add_bias", lambda p: add(p[0], p[1]),
              (2, 3, 5), [(2, 3, 5), (3,)])
    projected("matmul", lambda p: matmul(p[0], p[1]),
              (3, 2), [(3, 4), (4, 2)])
    projected("conv1d", lambda p: conv1d(p[0], p[1], p[2], pad=1),
              (2, 4, 7), [(2, 3, 7), (4, 3, 3), (4,)])
    projected("maxpool1d", lambda p: maxpool1d(p[0], 2),
              (2, 3, 4), [(2, 3, 8)])
    projected("silu", lambda p: silu(p[0]), (4, 5), [(4, 5)])
    mask_seed = rng.next_u64()
    projected("dropout",
              lambda p: dropout(p[0], 0.3, "train", Rng(mask_seed)),
              (3, 6), [(3, 6)])
    projected("flatten", lambda p: flatten(p[0]), (2, 12), [(2, 3, 4)])
    targets = rng.below_many(3, 5)
    results["softmax_cross_entropy"] = grad_check(
        lambda p: softmax_cross_entropy(p[0], targets),
        [_array(rng, 5, 3)],
    )

    results["end_to_end"] = _end_to_end(rng, _E2E_CONFIG, batch=4)
    results["end_to_end_dropout"] = _end_to_end(rng, _E2E_TRAIN_CONFIG,
                                                batch=3)
    return results


def _end_to_end(rng: Rng, cfg: ModelConfig, batch: int) -> float:
    """Gradient-check the whole network loss wrt every parameter."""
    model = build_model(cfg, Rng.derived(rng.next_u64(), ROLE_INIT))
    xb = rng.normals(batch * cfg.in_channels * cfg.window_len).reshape(
        batch, cfg.in_channels, cfg.window_len)
    yb = rng.below_many(cfg.num_classes, batch)
    mask_seed = rng.next_u64()
    mode = "train" if cfg.dropout_rate > 0 else "eval"

    def f(param_list):
        return model.loss_with_params(
            param_list, xb, yb, mode=mode,
            rng_factory=lambda: Rng(mask_seed),
        )

    return grad_check(f, list(model.params.values()))


def all_within_tolerance(results: dict[str, float],
                         tol: float = TOLERANCE) -> bool:
    return all(err <= tol for err in results.values())
