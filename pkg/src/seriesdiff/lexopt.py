"""Constraint-guarded gradient descent for the finetuning stage.

Each step minimizes the conditional loss while a dynamic barrier keeps the
unconditional loss at or below the level reached during pretraining:

    theta <- theta - omega * (grad_l2 + lambda * grad_l1p)
    phi    = min(alpha * (l1p - gamma * xi), beta * ||grad_l1p||^2)
    lambda = max((phi - grad_l2 . grad_l1p) / ||grad_l1p||^2, 0)

where ``xi`` is the (relaxed) constraint anchor. Setting lambda to zero at
every step recovers the plain finetuning baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .diffusion import NoiseDraw, loss_conditional, loss_unconditional
from .errors import NumericalInstabilityError
from .network import ScoreNetwork
from .schedule import NoiseSchedule
from .tensor import ParamSet


@dataclass(frozen=True)
class LexoptConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    omega: float = 1e-3
    rho: float = 1.05
    p_uncond: float = 0.1
    eps_div: float = 1e-12
    xi_hat: float | None = None  # raw (unrelaxed) anchor

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "omega"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError("p_uncond must lie in [0, 1]")
        if self.rho < 1.0:
            raise ValueError("rho must be >= 1")
        if self.eps_div <= 0.0:
            raise ValueError("eps_div must be positive")
        if self.xi_hat is not None and self.xi_hat < 0.0:
            raise ValueError("xi_hat must be >= 0")

    @property
    def anchor(self) -> float:
        """Relaxed constraint level gamma * rho * xi_hat used inside phi."""
        if self.xi_hat is None:
            raise ValueError("xi_hat has not been set")
        return self.gamma * self.rho * self.xi_hat

    def with_xi_hat(self, xi_hat: float) -> "LexoptConfig":
        return replace(self, xi_hat=float(xi_hat))


@dataclass(frozen=True)
class StepTrace:
    step: int
    l2: float
    l1p: float
    phi: float
    lam: float
    grad_norm_l2: float
    grad_norm_l1p: float
    constraint_ok: bool


@dataclass(frozen=True)
class FinetuneResult:
    net: ScoreNetwork
    traces: list[StepTrace]
    diverged: bool = False


def compute_xi_hat(
    net: ScoreNetwork,
    xs: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    n_batches: int,
    batch_size: int = 32,
) -> float:
    """Monte-Carlo estimate of the unconditional loss at the pretrained
    parameters, averaged over fresh (t, eps) draws.

    Returns the raw value; the relaxation multiplier rho is applied by the
    config so traces can report both the raw and relaxed anchors.
    """
    if n_batches < 1:
        raise ValueError("n_batches must be >= 1")
    xs = np.asarray(xs, dtype=np.float64)
    total = 0.0
    for _ in range(n_batches):
        idx = rng.integers(0, xs.shape[0], size=min(batch_size, xs.shape[0]))
        res = loss_unconditional(net, xs[idx], schedule, rng, with_grads=False)
        total += res.value
    return total / n_batches


def barrier_phi(l1p: float, grad_l1p_normsq: float, cfg: LexoptConfig) -> float:
    """Dynamic barrier min(alpha*(l1p - anchor), beta*||grad_l1p||^2)."""
    if grad_l1p_normsq < 0.0:
        raise ValueError("grad_l1p_normsq must be >= 0")
    return min(cfg.alpha * (l1p - cfg.anchor), cfg.beta * grad_l1p_normsq)


def lambda_weight(
    phi: float, grad_l2: np.ndarray, grad_l1p: np.ndarray, eps_div: float
) -> float:
    """Barrier multiplier max((phi - g2.g1p) / ||g1p||^2, 0).

    Returns 0 when the constraint gradient is degenerate (||g1p||^2 below
    eps_div), by convention.
    """
    grad_l2 = np.asarray(grad_l2, dtype=np.float64).reshape(-1)
    grad_l1p = np.asarray(grad_l1p, dtype=np.float64).reshape(-1)
    if grad_l2.shape != grad_l1p.shape:
        raise ValueError("gradients must have the same length")
    normsq = float(grad_l1p @ grad_l1p)
    if normsq < eps_div:
        return 0.0
    return max((phi - float(grad_l2 @ grad_l1p)) / normsq, 0.0)


def lex_step(
    params: ParamSet,
    grad_l2: ParamSet,
    grad_l1p: ParamSet,
    lam: float,
    omega: float,
) -> ParamSet:
    """Pure update theta - omega * (grad_l2 + lambda * grad_l1p)."""
    if omega < 0.0:
        raise ValueError("omega must be >= 0")
    flat = params.flatten()
    with np.errstate(over="ignore", invalid="ignore"):
        step = grad_l2.flatten() + lam * grad_l1p.flatten()
        updated = flat - omega * step
    if not np.all(np.isfinite(updated)):
        raise NumericalInstabilityError("lex_step produced non-finite parameters")
    return params.unflatten(updated)


# step_fn(params, k) -> (l2, grad_l2, l1p, grad_l1p)
StepLosses = Callable[[ParamSet, int], tuple[float, ParamSet, float, ParamSet]]


def lex_descend(
    step_fn: StepLosses,
    params: ParamSet,
    cfg: LexoptConfig,
    steps: int,
    *,
    constrained: bool = True,
) -> tuple[ParamSet, list[StepTrace], bool]:
    """Core descent loop shared by the constrained and plain finetuners.

    With ``constrained=False`` lambda is forced to zero and no barrier
    bookkeeping is done. Returns (params, traces, diverged); on a non-finite
    loss the parameters from the last good step are retained.
    """
    traces: list[StepTrace] = []
    for k in range(steps):
        try:
            l2, g2, l1p, g1p = step_fn(params, k)
            if not (np.isfinite(l2) and np.isfinite(l1p)):
                return params, traces, True
            g2_flat = g2.flatten()
            g1p_flat = g1p.flatten()
            if constrained:
                with np.errstate(over="ignore", invalid="ignore"):
                    normsq = float(g1p_flat @ g1p_flat)
                if not np.isfinite(normsq):
                    return params, traces, True
                phi = barrier_phi(l1p, normsq, cfg)
                lam = lambda_weight(phi, g2_flat, g1p_flat, cfg.eps_div)
            else:
                phi, lam = 0.0, 0.0
            params = lex_step(params, g2, g1p, lam, cfg.omega)
        except NumericalInstabilityError:
            return params, traces, True
        with np.errstate(over="ignore"):
            norm2 = float(np.linalg.norm(g2_flat))
            norm1p = float(np.linalg.norm(g1p_flat))
        traces.append(
            StepTrace(
                step=k,
                l2=l2,
                l1p=l1p,
                phi=phi,
                lam=lam,
                grad_norm_l2=norm2,
                grad_norm_l1p=norm1p,
                constraint_ok=bool(l1p <= cfg.anchor) if cfg.xi_hat is not None else True,
            )
        )
    return params, traces, False


def _epoch_batches(
    n: int, batch_size: int, epochs: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffled without-replacement batches; every item is visited once per epoch."""
    batches = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            batches.append(perm[start : start + batch_size])
    return batches


def _make_diffusion_step_fn(
    net: ScoreNetwork,
    xs: np.ndarray,
    cond: np.ndarray | None,
    schedule: NoiseSchedule,
    p_uncond: float,
    rng: np.random.Generator,
    batches: Sequence[np.ndarray],
    *,
    constrained: bool,
) -> StepLosses:
    """Builds the per-step loss closure of the finetuning loops.

    The conditional and unconditional losses share one (t, eps) draw per
    step; conditional dropout applies only to the conditional branch. The
    rng consumption pattern is identical for both loop flavors so that a
    never-binding constrained run reproduces the plain trajectory bit for bit.
    """

    def step_fn(params: ParamSet, k: int):
        idx = batches[k]
        x_b = xs[idx]
        draw = NoiseDraw(
            t=rng.integers(1, schedule.T + 1, size=len(idx)),
            eps=rng.standard_normal(x_b.shape),
        )
        c_b = cond[idx].copy()
        if p_uncond > 0.0:
            dropped = rng.random(len(idx)) < p_uncond
            c_b[dropped] = 0.0
        live = net.with_params(params)
        res2 = loss_conditional(live, x_b, c_b, schedule, draw=draw)
        if constrained:
            res1 = loss_unconditional(live, x_b, schedule, draw=draw)
            return res2.value, res2.grads, res1.value, res1.grads
        zeros = params.unflatten(np.zeros(params.total_size))
        l1p = loss_unconditional(live, x_b, schedule, draw=draw, with_grads=False).value
        return res2.value, res2.grads, l1p, zeros

    return step_fn


def finetune(
    net: ScoreNetwork,
    xs: np.ndarray,
    cond: np.ndarray,
    schedule: NoiseSchedule,
    cfg: LexoptConfig,
    rng: np.random.Generator,
    epochs: int,
    batch_size: int = 16,
) -> FinetuneResult:
    """Constraint-guarded finetuning over the labeled subset.

    Per step: sample a labeled batch and a (t, eps) draw, apply conditional
    dropout to the condition rows, evaluate the conditional loss (primary)
    and the unconditional loss (constraint, shared draw), then take the
    barrier-weighted step.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("labeled set must be nonempty")
    if cfg.xi_hat is None:
        raise ValueError("cfg.xi_hat must be set before finetuning")
    cond = np.asarray(cond, dtype=np.float64)
    batches = _epoch_batches(xs.shape[0], batch_size, epochs, rng)
    step_fn = _make_diffusion_step_fn(
        net, xs, cond, schedule, cfg.p_uncond, rng, batches, constrained=True
    )
    params, traces, diverged = lex_descend(
        step_fn, net.params, cfg, len(batches), constrained=True
    )
    return FinetuneResult(net.with_params(params), traces, diverged)


def plain_finetune(
    net: ScoreNetwork,
    xs: np.ndarray,
    cond: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    epochs: int,
    omega: float,
    p_uncond: float = 0.1,
    batch_size: int = 16,
) -> FinetuneResult:
    """The unconstrained baseline: the same loop with lambda forced to zero."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("labeled set must be nonempty")
    cond = np.asarray(cond, dtype=np.float64)
    cfg = LexoptConfig(omega=omega, p_uncond=p_uncond, rho=1.0)
    batches = _epoch_batches(xs.shape[0], batch_size, epochs, rng)
    step_fn = _make_diffusion_step_fn(
        net, xs, cond, schedule, p_uncond, rng, batches, constrained=False
    )
    params, traces, diverged = lex_descend(
        step_fn, net.params, cfg, len(batches), constrained=False
    )
    return FinetuneResult(net.with_params(params), traces, diverged)


TRACE_FIELDS = [
    "step",
    "l2",
    "l1p",
    "phi",
    "lambda",
    "grad_norm_l2",
    "grad_norm_l1p",
    "constraint_ok",
]


def write_traces(path, traces: Sequence[StepTrace]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for tr in traces:
            writer.writerow(
                [
                    tr.step,
                    repr(tr.l2),
                    repr(tr.l1p),
                    repr(tr.phi),
                    repr(tr.lam),
                    repr(tr.grad_norm_l2),
                    repr(tr.grad_norm_l1p),
                    int(tr.constraint_ok),
                ]
            )


def read_traces(path) -> list[StepTrace]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                StepTrace(
                    step=int(row["step"]),
                    l2=float(row["l2"]),
                    l1p=float(row["l1p"]),
                    phi=float(row["phi"]),
                    lam=float(row["lambda"]),
                    grad_norm_l2=float(row["grad_norm_l2"]),
                    grad_norm_l1p=float(row["grad_norm_l1p"]),
                    constraint_ok=bool(int(row["constraint_ok"])),
                )
            )
    return out
