"""Forward diffusion, epsilon-prediction losses, and the guided reverse sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .network import ScoreNetwork, forward_batch, predict_noise_batch
from .schedule import NoiseSchedule
from .tensor import ParamSet

# Optional forward override used by tests and diagnostics:
# (nodes, x_t, t, cond) -> graph node of shape (B, series_len).
ForwardFn = Callable[[dict, np.ndarray, np.ndarray, np.ndarray | None], ad.Node]


@dataclass(frozen=True)
class NoiseDraw:
    """The sampled step indices and noise for one loss evaluation.

    Sharing one draw between the conditional and unconditional losses keeps
    their difference free of sampling noise within a finetuning step.
    """

    t: np.ndarray
    eps: np.ndarray


@dataclass(frozen=True)
class LossResult:
    value: float
    grads: ParamSet
    draw: NoiseDraw


def diffuse(x: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """x^(t) = sqrt(abar_t) x + sqrt(1 - abar_t) eps for a single series."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must be in [1, {schedule.T}], got {t}")
    if eps.shape != x.shape:
        raise ValueError("eps must be shaped like x")
    ab = schedule.alpha_bar[t - 1]
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps


def _diffuse_batch(xs: np.ndarray, draw: NoiseDraw, schedule: NoiseSchedule) -> np.ndarray:
    ab = schedule.alpha_bar[draw.t - 1][:, None]
    return np.sqrt(ab) * xs + np.sqrt(1.0 - ab) * draw.eps


def draw_noise(xs: np.ndarray, schedule: NoiseSchedule, rng: np.random.Generator) -> NoiseDraw:
    B = xs.shape[0]
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(xs.shape)
    return NoiseDraw(t=t, eps=eps)


def _eps_loss(
    net: ScoreNetwork,
    xs: np.ndarray,
    cond: np.ndarray | None,
    schedule: NoiseSchedule,
    draw: NoiseDraw,
    *,
    with_grads: bool,
    forward_fn: ForwardFn | None,
):
    x_t = _diffuse_batch(xs, draw, schedule)
    fwd = forward_fn if forward_fn is not None else forward_batch

    def computation(nodes):
        if forward_fn is None:
            pred = fwd(nodes, net.arch, x_t, draw.t, cond)
        else:
            pred = fwd(nodes, x_t, draw.t, cond)
        return ad.mean(ad.sq_err(pred, ad.constant(draw.eps)))

    if with_grads:
        value, grads = ad.value_and_grad(computation, net.params)
        return LossResult(value, grads, draw)
    return LossResult(ad.evaluate(computation, net.params), None, draw)


def _check_batch(xs: np.ndarray, net: ScoreNetwork) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("batch must be a nonempty (B, L) array")
    if xs.shape[1] != net.arch.series_len:
        raise ValueError(f"series length must be {net.arch.series_len}")
    return xs


def loss_conditional(
    net: ScoreNetwork,
    xs: np.ndarray,
    cond: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    *,
    draw: NoiseDraw | None = None,
    with_grads: bool = True,
    forward_fn: ForwardFn | None = None,
) -> LossResult:
    """Conditional epsilon loss: mean over items and positions of the
    squared error between predicted and injected noise.

    The sampled (t, eps) draw is exposed on the result so the unconditional
    loss can reuse it.
    """
    xs = _check_batch(xs, net)
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape != (xs.shape[0], net.arch.cond_dim):
        raise ValueError("every batch item needs a condition row")
    if draw is None:
        draw = draw_noise(xs, schedule, rng)
    return _eps_loss(
        net, xs, cond, schedule, draw, with_grads=with_grads, forward_fn=forward_fn
    )


def loss_unconditional(
    net: ScoreNetwork,
    xs: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None = None,
    *,
    draw: NoiseDraw | None = None,
    with_grads: bool = True,
    forward_fn: ForwardFn | None = None,
) -> LossResult:
    """Unconditional epsilon loss (condition fixed to the NULL token).

    Evaluated over the full collection it is the pretraining objective;
    over the labeled subset with a shared draw it is the constraint loss.
    """
    xs = _check_batch(xs, net)
    if draw is None:
        draw = draw_noise(xs, schedule, rng)
    return _eps_loss(
        net, xs, None, schedule, draw, with_grads=with_grads, forward_fn=forward_fn
    )


PredictFn = Callable[[np.ndarray, np.ndarray, np.ndarray | None], np.ndarray]


def _reverse_chain(
    net: ScoreNetwork,
    schedule: NoiseSchedule,
    cond: np.ndarray | None,
    w: float,
    rng: np.random.Generator,
    n: int,
    predict_fn: PredictFn | None,
) -> np.ndarray:
    if w < 0:
        raise ValueError("guidance weight w must be >= 0")
    L = net.arch.series_len
    predict = predict_fn or (lambda x, t, c: predict_noise_batch(net, x, t, c))
    cond_is_null = cond is None or not np.any(cond)
    x = rng.standard_normal((n, L))
    for t in range(schedule.T, 0, -1):
        tt = np.full(n, t)
        eps_hat = predict(x, tt, cond)
        if w > 0.0 and not cond_is_null:
            eps_unc = predict(x, tt, None)
            eps_hat = (1.0 + w) * eps_hat - w * eps_unc
        beta = schedule.beta[t - 1]
        ab = schedule.alpha_bar[t - 1]
        x = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(schedule.alpha[t - 1])
        if t > 1:
            sigma = np.sqrt(schedule.posterior_sigma2[t - 1])
            x = x + sigma * rng.standard_normal((n, L))
    return x


def sample(
    net: ScoreNetwork,
    schedule: NoiseSchedule,
    cond=None,
    w: float = 0.0,
    rng: np.random.Generator | None = None,
    *,
    predict_fn: PredictFn | None = None,
) -> np.ndarray:
    """Draw one series by the guided reverse process.

    eps_tilde = (1 + w) * eps(x, t, c) - w * eps(x, t, NULL); with w = 0 or a
    NULL condition the unconditional branch is never evaluated. No noise is
    added at the final step. Deterministic given (net, cond, w, rng seed).
    """
    row = _as_cond_row(net, cond)
    return _reverse_chain(net, schedule, row, w, rng, 1, predict_fn)[0]


def sample_many(
    net: ScoreNetwork,
    schedule: NoiseSchedule,
    cond=None,
    w: float = 0.0,
    rng: np.random.Generator | None = None,
    n: int = 1,
    *,
    predict_fn: PredictFn | None = None,
) -> np.ndarray:
    """Vectorized sampling of n chains.

    ``cond`` may be None, one condition (shared by all chains), or an
    (n, cond_dim) matrix of per-chain conditions. Noise is drawn per step
    for the whole batch, so individual rows do not reproduce single-chain
    ``sample`` streams; results are still fully deterministic given the seed.
    """
    arr = None if cond is None else np.asarray(getattr(cond, "values", cond), dtype=np.float64)
    if arr is not None and arr.ndim == 2:
        if arr.shape != (n, net.arch.cond_dim):
            raise ValueError(f"condition matrix must have shape ({n}, {net.arch.cond_dim})")
        rows = arr
    else:
        row = _as_cond_row(net, cond)
        rows = None if row is None else np.repeat(row, n, axis=0)
    return _reverse_chain(net, schedule, rows, w, rng, n, predict_fn)


def _as_cond_row(net: ScoreNetwork, cond) -> np.ndarray | None:
    if cond is None:
        return None
    if getattr(cond, "is_null", False):
        return None
    values = getattr(cond, "values", cond)
    row = np.asarray(values, dtype=np.float64).reshape(1, -1)
    if row.shape[1] != net.arch.cond_dim:
        raise ValueError(f"condition must have dimension {net.arch.cond_dim}")
    return row
