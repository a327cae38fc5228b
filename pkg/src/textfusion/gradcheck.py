"""Finite-difference gradient verification.

The oracle side of every gradient test: perturb each input element by a
central step and compare the numerical slope against what the tape
produced. Relative error uses an absolute floor so that exactly-zero
gradients are not drowned by float rounding in the difference quotient.

``run_full_suite`` drives both the per-op checks and an end-to-end check of
every parameter of a tiny model for each variant; the CLI's grad-check
subcommand and the test suite share it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T

DEFAULT_STEP = 1e-5
ERROR_FLOOR = 1e-6


def finite_difference(loss_fn: Callable[[], float], arrays: Sequence[np.ndarray],
                      step: float = DEFAULT_STEP) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn`` w.r.t. each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, floor)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), ERROR_FLOOR)
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(loss_fn: Callable[[], float], arrays: Sequence[np.ndarray],
                    analytic: Sequence[np.ndarray], step: float = DEFAULT_STEP) -> float:
    """Return the max relative error between analytic and numeric gradients."""
    numeric = finite_difference(loss_fn, arrays, step)
    worst = 0.0
    for got, want in zip(analytic, numeric):
        worst = max(worst, relative_error(got, want))
    return worst


def _op_cases(rng: np.random.Generator):
    """(name, leaf arrays, forward) triples covering every differentiable op."""
    def rand(*shape):
        return rng.uniform(-1.0, 1.0, shape)

    cases = []

    def case(name, arrays, forward):
        cases.append((name, arrays, forward))

    w = rand(3, 4)
    case("matmul_left", [rand(2, 3)], lambda xs: T.matmul(xs[0], T.Tensor(w)))
    a_fixed = rand(2, 3)
    case("matmul_right", [rand(3, 4)], lambda xs: T.matmul(T.Tensor(a_fixed), xs[0]))
    b3 = rand(2, 4, 3)
    case("matmul_batched", [rand(2, 3, 4)], lambda xs: T.matmul(xs[0], T.Tensor(b3)))
    a3 = rand(2, 3, 4)
    case("matmul_stacked_weight", [rand(4, 5)], lambda xs: T.matmul(T.Tensor(a3), xs[0]))
    case("softmax_lastdim", [rand(3, 5)], lambda xs: T.softmax_lastdim(xs[0]))
    case("layer_norm", [rand(4, 6), rand(6), rand(6)],
         lambda xs: T.layer_norm(xs[0], xs[1], xs[2], eps=1e-5))
    case("mean_axis0", [rand(4, 3)], lambda xs: T.mean_axis(xs[0], 0))
    case("mean_axis1", [rand(4, 3)], lambda xs: T.mean_axis(xs[0], 1))
    case("elementwise_add", [rand(3, 4), rand(3, 4)], lambda xs: T.add(xs[0], xs[1]))
    case("elementwise_sub", [rand(3, 4), rand(3, 4)], lambda xs: T.sub(xs[0], xs[1]))
    case("elementwise_mul", [rand(3, 4), rand(3, 4)], lambda xs: T.mul(xs[0], xs[1]))
    case("add_trailing_vector", [rand(3, 4), rand(4)], lambda xs: T.add(xs[0], xs[1]))
    case("mul_trailing_vector", [rand(3, 4), rand(4)], lambda xs: T.mul(xs[0], xs[1]))
    # keep piecewise ops away from their kink at 0
    case("activation_relu", [rand(3, 4) + np.sign(rand(3, 4)) * 0.1],
         lambda xs: T.relu(xs[0]))
    case("activation_gelu", [rand(3, 4)], lambda xs: T.gelu(xs[0]))
    case("absolute", [rand(3, 4) + np.sign(rand(3, 4)) * 0.1],
         lambda xs: T.absolute(xs[0]))
    case("scale", [rand(3, 4)], lambda xs: T.scale(xs[0], -1.7))
    case("mean_all", [rand(3, 4)], lambda xs: T.mean_all(xs[0]))
    case("reshape", [rand(3, 4)], lambda xs: T.reshape(xs[0], (2, 6)))
    case("transpose_last2", [rand(3, 4)], lambda xs: T.transpose_last2(xs[0]))
    case("slice_lastdim", [rand(3, 6)], lambda xs: T.slice_lastdim(xs[0], 1, 4))
    case("slice_axis0", [rand(5, 3)], lambda xs: T.slice_axis0(xs[0], 1, 4))
    case("concat_lastdim", [rand(3, 2), rand(3, 4)],
         lambda xs: T.concat_lastdim([xs[0], xs[1]]))
    case("expand_batch", [rand(3, 4)], lambda xs: T.expand_batch(xs[0], 5))
    return cases


def op_gradcheck_suite(seed: int = 0) -> dict[str, float]:
    """Autodiff vs finite differences for each op; returns max error per op."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for name, arrays, forward in _op_cases(rng):
        probe = None

        def loss_value():
            nonlocal probe
            out = forward([T.Tensor(arr) for arr in arrays])
            if probe is None:
                probe = rng.uniform(-1.0, 1.0, out.shape)
            return float((out.data * probe).sum())

        loss_value()  # fix the probe before differencing
        xs = [T.Tensor(arr, requires_grad=True) for arr in arrays]
        with T.GradientTape() as tape:
            out = forward(xs)
            loss = T.sum_all(T.mul(out, T.Tensor(probe)))
        tape.backward(loss)
        analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in xs]
        worst[name] = check_gradients(loss_value, arrays, analytic)
    return worst


def model_gradcheck(seed: int = 0) -> dict[str, float]:
    """End-to-end loss gradients over all parameters of a tiny model
    (d_ts=8, one layer, l=7, h=3), for both variants."""
    from .data import PatchConfig
    from .encoder import EncoderConfig
    from .fusion import (WITH_TEXT, WITHOUT_TEXT, FusionConfig, build_model,
                         predict_batch_with_text, predict_batch_without_text)
    from .training import compute_loss

    rng = np.random.default_rng(seed)
    enc = EncoderConfig(d_ts=8, n_layers=1, n_heads=2, d_ff=16, p_max=3,
                        patch=PatchConfig(4, 2, True))
    x = rng.uniform(-1.0, 1.0, (2, 7))
    ztx = rng.uniform(-1.0, 1.0, (2, 6))
    target = rng.uniform(-1.0, 1.0, (2, 3))
    results: dict[str, float] = {}
    for variant in (WITH_TEXT, WITHOUT_TEXT):
        model = build_model(variant, enc, FusionConfig(), horizon=3, seed=seed,
                            d_tx=6 if variant == WITH_TEXT else None)

        def predict():
            xb = np.stack([np.asarray(row) for row in x])
            if variant == WITH_TEXT:
                return predict_batch_with_text(xb, ztx, model)
            return predict_batch_without_text(xb, model)

        def loss_value():
            return float(((predict().data - target) ** 2).mean())

        named = model.named_parameters()
        model.zero_grads()
        with T.GradientTape() as tape:
            loss = compute_loss(predict(), target, "mse")
        tape.backward(loss)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data)
                    for _, t in named]
        results[f"model_{variant}"] = check_gradients(
            loss_value, [t.data for _, t in named], analytic)
    return results


def run_full_suite(seed: int = 0) -> dict[str, float]:
    """Per-op and end-to-end gradient checks; keys map to max relative error."""
    results = op_gradcheck_suite(seed)
    results.update(model_gradcheck(seed))
    return results
