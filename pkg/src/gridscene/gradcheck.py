"""Finite-difference verification of analytic gradients.

Every registered primitive has a sampler producing small random instances;
`check_primitive` scalarizes the primitive's output through an MSE against a
fixed random target (staying inside the primitive set), differentiates it
both analytically (tape) and numerically (central differences), and reports
the worst relative error.  `check_composite` does the same for an arbitrary
loss closure over named parameters, probing a seeded subset of coordinates
so wide models stay affordable.

All checks run in float64 with step 1e-5; the pass threshold is a relative
error below 1e-4 with denominator max(|analytic|, |numeric|, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ContractError, Tape, Tensor, backward

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    kind: str
    trials: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)


# ---------------------------------------------------------------------------
# per-primitive samplers: rng -> (inputs, attrs)


def _sn(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def _s_add(rng):
    variant = rng.integers(3)
    if variant == 0:
        return [_sn(rng, 3, 4), _sn(rng, 3, 4)], {}
    if variant == 1:
        return [_sn(rng, 4), _sn(rng, 3, 4)], {}
    return [_sn(rng, 3, 1), _sn(rng, 3, 4)], {}


def _s_scale(rng):
    factor = float(rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0]))
    return [_sn(rng, 3, 5)], {"factor": factor}


def _s_relu(rng):
    # keep samples off the kink so central differences are valid
    mag = rng.uniform(0.1, 1.0, (4, 5))
    sign = rng.choice([-1.0, 1.0], (4, 5))
    return [Tensor(mag * sign)], {}


def _s_sigmoid(rng):
    return [_sn(rng, 3, 4)], {}


def _s_softmax(rng):
    if rng.integers(2):
        mask = rng.random((4, 5)) < 0.4
        mask[:, 0] = False  # keep every row partially unmasked
        return [_sn(rng, 4, 5)], {"axis": -1, "mask": mask}
    return [_sn(rng, 4, 5)], {"axis": -1}


def _s_layer_norm(rng):
    x = _sn(rng, 3, 6)
    gain = Tensor(rng.uniform(0.5, 1.5, 6))
    bias = Tensor(rng.standard_normal(6) * 0.3)
    return [x, gain, bias], {}


def _s_mse(rng):
    return [_sn(rng, 3, 4), _sn(rng, 3, 4)], {}


def _s_reshape(rng):
    return [_sn(rng, 2, 6)], {"shape": (3, 4)}


def _s_transpose(rng):
    return [_sn(rng, 2, 3, 4)], {"axes": tuple(int(a) for a in rng.permutation(3))}


def _s_concat(rng):
    if rng.integers(2):
        return [_sn(rng, 2, 3), _sn(rng, 4, 3)], {"axis": 0}
    return [_sn(rng, 3, 2), _sn(rng, 3, 1), _sn(rng, 3, 3)], {"axis": 1}


def _s_matmul(rng):
    variant = rng.integers(4)
    if variant == 0:
        return [_sn(rng, 3, 4), _sn(rng, 4, 2)], {}
    if variant == 1:
        return [_sn(rng, 2, 3, 4), _sn(rng, 2, 4, 2)], {}
    if variant == 2:
        return [_sn(rng, 3, 4), _sn(rng, 2, 4, 2)], {}
    return [_sn(rng, 2, 3, 4), _sn(rng, 4, 2)], {}


def _s_embedding(rng):
    table = _sn(rng, 7, 4)
    ids = rng.integers(0, 7, 5)
    return [table], {"ids": ids}


def _s_conv2d(rng):
    if rng.integers(2):
        return [_sn(rng, 2, 2, 5, 5), _sn(rng, 3, 2, 3, 3)], {"stride": 1, "pad": 1}
    return [_sn(rng, 1, 2, 6, 6), _sn(rng, 2, 2, 4, 4)], {"stride": 2, "pad": 1}


def _s_conv_transpose2d(rng):
    if rng.integers(2):
        return [_sn(rng, 2, 3, 4, 4), _sn(rng, 3, 2, 3, 3)], {"stride": 1, "pad": 1}
    return [_sn(rng, 1, 3, 3, 3), _sn(rng, 3, 2, 4, 4)], {"stride": 2, "pad": 1}


def _s_upsample(rng):
    return [_sn(rng, 1, 2, 3, 4)], {"factor": 2}


def _s_avg_pool(rng):
    if rng.integers(2):
        return [_sn(rng, 2, 2, 4, 6)], {"window": (2, 3)}
    return [_sn(rng, 1, 3, 4, 6)], {"window": (4, 6)}


SAMPLERS = {
    "add": _s_add,
    "scale": _s_scale,
    "relu": _s_relu,
    "sigmoid": _s_sigmoid,
    "softmax": _s_softmax,
    "layer_norm": _s_layer_norm,
    "mse": _s_mse,
    "reshape": _s_reshape,
    "transpose": _s_transpose,
    "concat": _s_concat,
    "matmul": _s_matmul,
    "embedding": _s_embedding,
    "conv2d": _s_conv2d,
    "conv_transpose2d": _s_conv_transpose2d,
    "upsample_bilinear2d": _s_upsample,
    "avg_pool2d": _s_avg_pool,
}


def _apply(kind, inputs, attrs):
    return ops.apply_primitive(kind, inputs, attrs)


def check_primitive(kind: str, trials: int = 8, rng=None) -> CheckResult:
    """Finite-difference check of one registered primitive."""
    sampler = SAMPLERS.get(kind)
    if sampler is None:
        raise ContractError(f"no gradient-check sampler for primitive {kind!r}")
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for _ in range(trials):
        inputs, attrs = sampler(rng)
        tensors = inputs
        for t in tensors:
            t.requires_grad = True
        with Tape() as tape:
            out = _apply(kind, inputs, attrs)
            target = Tensor(rng.standard_normal(out.shape))
            loss = ops.mse(out, target)
        grads = backward(tape, loss)

        def eval_loss():
            fresh = _apply(kind, inputs, attrs)
            return ops.mse(Tensor(fresh.data), target).item()

        for t in tensors:
            analytic = grads[t]
            base = t.data
            flat = base.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + STEP
                plus = eval_loss()
                flat[idx] = orig - STEP
                minus = eval_loss()
                flat[idx] = orig
                numeric = (plus - minus) / (2 * STEP)
                worst = max(worst, _rel_err(analytic.reshape(-1)[idx], numeric))
    return CheckResult(kind, trials, worst)


def check_all_primitives(trials: int = 8, seed: int = 0) -> list[CheckResult]:
    """Check every registered primitive; sampler coverage must be complete."""
    missing = set(ops.PRIMITIVES) - set(SAMPLERS)
    if missing:
        raise ContractError(f"primitives without samplers: {sorted(missing)}")
    rng = np.random.default_rng(seed)
    return [check_primitive(kind, trials, rng) for kind in sorted(ops.PRIMITIVES)]


def format_report(results: list[CheckResult]) -> str:
    lines = ["primitive            trials  max rel err  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.kind:<20} {r.trials:>6}  {r.max_rel_err:>11.3e}  {status}")
    return "\n".join(lines)


def check_composite(loss_fn, params: dict[str, Tensor], rng, max_coords: int = 240) -> float:
    """Worst relative error of d(loss)/d(param) over sampled coordinates.

    `loss_fn` re-runs the forward pass from the current parameter values.
    Coordinates are drawn without replacement per parameter, spreading the
    budget evenly, so the probe stays cheap on wide layers.
    """
    for p in params.values():
        p.requires_grad = True
    with Tape() as tape:
        for p in params.values():
            tape.watch(p)
        loss = loss_fn()
    grads = backward(tape, loss)

    per_param = max(1, max_coords // max(1, len(params)))
    worst = 0.0
    for name, p in params.items():
        analytic = grads[p].reshape(-1)
        flat = p.data.reshape(-1)
        count = min(per_param, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + STEP
            plus = loss_fn().item()
            flat[idx] = orig - STEP
            minus = loss_fn().item()
            flat[idx] = orig
            numeric = (plus - minus) / (2 * STEP)
            worst = max(worst, _rel_err(analytic[idx], numeric))
    return worst
