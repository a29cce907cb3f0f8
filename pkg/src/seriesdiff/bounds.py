"""Finite-class concentration bounds for the constraint level, plus a
Monte-Carlo checker.

The deviation bound for an m-sample empirical mean of squared zero-mean
sub-Gaussian variables over a finite hypothesis class is

    eps_m = max( sqrt(C vt) * sqrt((log|Theta| + log(2/delta)) / m),
                 C vt * (log|Theta| + log(2/delta)) / m )

with C = 8*sqrt(2) and vt = sigma^2 + 1 (the +1 absorbs the unit-variance
reference noise the predictions are compared against). The Monte-Carlo
checker draws squared samples per hypothesis and verifies the empirical
violation rate stays below delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

C_BOUND = 8.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class BoundsInput:
    sigma2: float
    delta: float
    n: int
    n_p: int
    theta_card: float

    def __post_init__(self):
        if self.sigma2 < 0.0:
            raise ValueError("sigma2 must be >= 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.n < 1 or self.n_p < 1:
            raise ValueError("sample counts must be >= 1")
        if self.theta_card < 1:
            raise ValueError("hypothesis-set cardinality must be >= 1")

    @property
    def sigma_tilde2(self) -> float:
        return self.sigma2 + 1.0

    @property
    def log_term(self) -> float:
        return math.log(self.theta_card) + math.log(2.0 / self.delta)


@dataclass(frozen=True)
class BoundsReport:
    eps_n: float
    eps_np: float
    eps: float
    guarantee_l2_slack: float
    guarantee_l1p_slack: float
    xi: float

    def __post_init__(self):
        for name in ("eps_n", "eps_np", "eps", "guarantee_l2_slack", "guarantee_l1p_slack"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def l1p_bound(self) -> float:
        """Upper bound on the constraint loss at the empirical optimum."""
        return self.xi + self.guarantee_l1p_slack

    def to_json(self) -> dict:
        return {
            "eps_n": self.eps_n,
            "eps_np": self.eps_np,
            "eps": self.eps,
            "guarantee_l2_slack": self.guarantee_l2_slack,
            "guarantee_l1p_slack": self.guarantee_l1p_slack,
            "xi": self.xi,
            "l1p_bound": self.l1p_bound,
        }


def epsilon_bound(m: int, inp: BoundsInput) -> float:
    """Deviation bound at sample count m: max of the sqrt and linear branches."""
    if m < 1:
        raise ValueError("m must be >= 1")
    cvt = C_BOUND * inp.sigma_tilde2
    ratio = inp.log_term / m
    return max(math.sqrt(cvt) * math.sqrt(ratio), cvt * ratio)


def guarantee_report(inp: BoundsInput, xi: float) -> BoundsReport:
    """Slack terms for the two optimality guarantees.

    The empirical optimum competes on the conditional loss up to
    2*eps_np and overshoots the constraint level xi by at most
    2*eps_np + 2*eps_n.
    """
    if xi < 0.0:
        raise ValueError("xi must be >= 0")
    eps_n = epsilon_bound(inp.n, inp)
    eps_np = epsilon_bound(inp.n_p, inp)
    return BoundsReport(
        eps_n=eps_n,
        eps_np=eps_np,
        eps=eps_n + eps_np,
        guarantee_l2_slack=2.0 * eps_np,
        guarantee_l1p_slack=2.0 * eps_np + 2.0 * eps_n,
        xi=xi,
    )


@dataclass(frozen=True)
class Hypothesis:
    """A zero-mean sub-Gaussian generator with known variance proxy."""

    name: str
    sigma2: float
    true_sq_mean: float
    sampler: Callable[[np.random.Generator, int], np.ndarray]


def gaussian_family(sigmas: Sequence[float]) -> list[Hypothesis]:
    """Centered Gaussians: sub-Gaussian proxy and E[X^2] both equal sigma^2."""

    def make(s: float) -> Hypothesis:
        return Hypothesis(
            name=f"gauss(sigma={s})",
            sigma2=s * s,
            true_sq_mean=s * s,
            sampler=lambda rng, size, s=s: s * rng.standard_normal(size),
        )

    return [make(float(s)) for s in sigmas]


def monte_carlo_coverage(
    family: Sequence[Hypothesis],
    m: int,
    delta: float,
    trials: int,
    seed: int = 0,
) -> float:
    """Fraction of trials where the worst-hypothesis deviation of the
    empirical squared mean exceeds the bound.

    The bound guarantees this stays at or below delta; the bound is
    conservative, so rates near zero are expected.
    """
    if not family:
        raise ValueError("hypothesis family must be nonempty")
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if m < 1:
        raise ValueError("m must be >= 1")
    inp = BoundsInput(
        sigma2=max(h.sigma2 for h in family),
        delta=delta,
        n=m,
        n_p=m,
        theta_card=len(family),
    )
    eps = epsilon_bound(m, inp)
    violations = 0
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
        sup_dev = max(
            abs(float(np.mean(h.sampler(rng, m) ** 2)) - h.true_sq_mean) for h in family
        )
        if sup_dev > eps:
            violations += 1
    return violations / trials
