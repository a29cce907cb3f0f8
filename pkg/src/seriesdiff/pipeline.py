"""End-to-end pipeline: pretraining, the three finetuning modes,
controllability evaluation, and plot-data export.

All randomness flows from a single seed through named child streams
(dataset/model/training/evaluation), so every artifact is reproducible
byte for byte from its seeds.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .condition import FEATURE_NAMES, encode, parse_text, render_text
from .diffusion import loss_unconditional, sample_many
from .errors import ConfigError, DataError
from .features import extract_features, minmax_normalize
from .lexopt import (
    FinetuneResult,
    LexoptConfig,
    StepTrace,
    compute_xi_hat,
    finetune,
    lex_step,
    plain_finetune,
    write_traces,
)
from .network import Architecture, ScoreNetwork
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, make_linear_schedule
from .synthdata import Dataset, load_dataset

MODES = ("text2data", "unconstrained", "supervised")


def derived_rng(seed: int, label: str) -> np.random.Generator:
    """Child generator for a named stream; stable across runs and platforms."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))


@dataclass
class RunConfig:
    """Harness-level run configuration.

    The optimizer-facing defaults here (omega, alpha, p_uncond) are the
    values calibrated for the default synthetic corpus and the width-128
    backbone; the library-level LexoptConfig keeps neutral defaults for
    small problems.
    """

    data_dir: str | None = None
    out_path: str | None = None
    init_path: str | None = None
    mode: str = "text2data"
    epochs: int = 1000
    batch_size: int = 16
    seed: int = 0
    t_steps: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    hidden: tuple[int, ...] = (128, 128, 128)
    time_dim: int = 16
    activation: str = "silu"
    omega: float = 0.1
    alpha: float = 30.0
    beta: float = 1.0
    gamma: float = 1.0
    rho: float = 1.05
    p_uncond: float = 0.0
    eps_div: float = 1e-12
    xi: float | None = None
    w: float = 0.0
    n_per_prompt: int = 8
    xi_batches: int = 200
    pretrain_batch_size: int = 32


@dataclass(frozen=True)
class PretrainResult:
    net: ScoreNetwork
    final_l1: float
    losses: list[float] = field(repr=False, default_factory=list)


# The pipeline encodes conditions with presence bits (12 = 6 values + 6
# flags) so the NULL token is linearly separable from every real condition
# rather than colliding with "all features at midrange".
COND_DIM = 12
PRESENCE_BITS = True


def _architecture(config: RunConfig, series_len: int) -> Architecture:
    return Architecture(
        series_len=series_len,
        cond_dim=COND_DIM,
        time_dim=config.time_dim,
        hidden=tuple(config.hidden),
        activation=config.activation,
    )


def _load_data(config: RunConfig) -> tuple[Dataset, Dataset]:
    if not config.data_dir:
        raise ConfigError("a dataset directory is required")
    return load_dataset(config.data_dir)


def _bins_json(ds: Dataset) -> str:
    return json.dumps(ds.bins.to_json(), sort_keys=True)


def pretrain(config: RunConfig) -> PretrainResult:
    """Stage 1: plain gradient descent on the unconditional loss over all
    training series. Records the converged loss, which anchors the
    finetuning constraint."""
    train, _ = _load_data(config)
    schedule = make_linear_schedule(config.t_steps, config.beta_start, config.beta_end)
    arch = _architecture(config, train.length)
    net = ScoreNetwork.init(arch, derived_rng(config.seed, "model-init"))
    rng = derived_rng(config.seed, "pretrain")
    losses: list[float] = []
    for _ in range(config.epochs):
        perm = rng.permutation(train.n)
        for start in range(0, train.n, config.pretrain_batch_size):
            idx = perm[start : start + config.pretrain_batch_size]
            res = loss_unconditional(net, train.take(idx), schedule, rng)
            net = net.with_params(lex_step(net.params, res.grads, res.grads, 0.0, config.omega))
            losses.append(res.value)
    final_l1 = compute_xi_hat(
        net, train.series, schedule, derived_rng(config.seed, "xi-estimate"), config.xi_batches
    )
    if config.out_path:
        save_checkpoint(
            config.out_path,
            net,
            schedule,
            stage="pretrain",
            seed=config.seed,
            extras={"final_l1": final_l1, "bins": _bins_json(train)},
        )
    return PretrainResult(net=net, final_l1=final_l1, losses=losses)


@dataclass(frozen=True)
class FinetuneOutcome:
    net: ScoreNetwork
    traces: list[StepTrace]
    diverged: bool
    xi_raw: float | None


def run_finetune(config: RunConfig) -> FinetuneOutcome:
    """Dispatch to the constrained finetuner, the unconstrained baseline,
    or from-scratch supervised training on the labeled subset only."""
    if config.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {config.mode!r}")
    train, _ = _load_data(config)
    xs = train.take(list(train.labeled_indices))
    cond = train.labeled_condition_matrix(presence_bits=PRESENCE_BITS)
    if xs.shape[0] == 0:
        raise DataError("no labeled series in the training split")
    rng = derived_rng(config.seed, f"finetune-{config.mode}")

    xi_raw: float | None = None
    if config.mode == "supervised":
        schedule = make_linear_schedule(config.t_steps, config.beta_start, config.beta_end)
        arch = _architecture(config, train.length)
        net = ScoreNetwork.init(arch, derived_rng(config.seed, "model-init-supervised"))
        result = plain_finetune(
            net, xs, cond, schedule, rng, config.epochs, config.omega,
            p_uncond=config.p_uncond, batch_size=config.batch_size,
        )
    else:
        if not config.init_path:
            raise ConfigError(f"mode {config.mode!r} requires a stage-1 checkpoint")
        net, schedule, meta = load_checkpoint(config.init_path)
        if config.mode == "text2data":
            xi_raw = config.xi
            if xi_raw is None and "final_l1" in meta:
                xi_raw = float(meta["final_l1"])
            if xi_raw is None:
                raise ConfigError(
                    "text2data mode needs a constraint anchor: pass xi or use a "
                    "checkpoint with a recorded final_l1"
                )
            cfg = LexoptConfig(
                alpha=config.alpha,
                beta=config.beta,
                gamma=config.gamma,
                omega=config.omega,
                rho=config.rho,
                p_uncond=config.p_uncond,
                eps_div=config.eps_div,
                xi_hat=xi_raw,
            )
            result = finetune(
                net, xs, cond, schedule, cfg, rng, config.epochs, batch_size=config.batch_size
            )
        else:
            result = plain_finetune(
                net, xs, cond, schedule, rng, config.epochs, config.omega,
                p_uncond=config.p_uncond, batch_size=config.batch_size,
            )

    if config.out_path:
        extras: dict[str, float | int | str] = {"bins": _bins_json(train)}
        if xi_raw is not None:
            extras["xi_hat_raw"] = float(xi_raw)
            extras["rho"] = float(config.rho)
            extras["gamma"] = float(config.gamma)
        save_checkpoint(
            config.out_path, result.net, schedule,
            stage=config.mode, seed=config.seed, extras=extras,
        )
        if config.mode == "text2data":
            write_traces(str(config.out_path) + ".traces.csv", result.traces)
    return FinetuneOutcome(
        net=result.net, traces=result.traces, diverged=result.diverged, xi_raw=xi_raw
    )


@dataclass(frozen=True)
class EvalReport:
    mae: dict[str, float]
    baseline_mae: dict[str, float]
    n_prompts: int
    n_per_prompt: int
    mode: str
    label_fraction: float
    seed: int
    w: float
    pairs: list[dict] = field(repr=False, default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.n_prompts * self.n_per_prompt

    def to_json(self) -> dict:
        return {
            "mae": {k: self.mae[k] for k in FEATURE_NAMES},
            "baseline_mae": {k: self.baseline_mae[k] for k in FEATURE_NAMES},
            "n_prompts": self.n_prompts,
            "n_per_prompt": self.n_per_prompt,
            "n_samples": self.n_samples,
            "mode": self.mode,
            "label_fraction": self.label_fraction,
            "seed": self.seed,
            "w": self.w,
            "pairs": self.pairs,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(
            mae=dict(d["mae"]),
            baseline_mae=dict(d["baseline_mae"]),
            n_prompts=int(d["n_prompts"]),
            n_per_prompt=int(d["n_per_prompt"]),
            mode=d["mode"],
            label_fraction=float(d["label_fraction"]),
            seed=int(d["seed"]),
            w=float(d["w"]),
            pairs=list(d.get("pairs", [])),
        )


def save_eval_report(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_eval_report(path) -> EvalReport:
    path = Path(path)
    if not path.exists():
        raise DataError(f"evaluation report not found: {path}")
    return EvalReport.from_json(json.loads(path.read_text()))


N_BASELINE_SAMPLES = 64
N_EXPORT_PAIRS = 16


def evaluate_controllability(
    net: ScoreNetwork,
    schedule,
    test: Dataset,
    w: float = 0.0,
    n_per_prompt: int = 8,
    seed: int = 0,
    *,
    mode: str = "text2data",
    label_fraction: float = 1.0,
    sampler_fn=None,
) -> EvalReport:
    """Per-feature mean absolute error between prompted and generated features.

    For every test item: render its features as text, parse the text back,
    encode it, draw ``n_per_prompt`` series, normalize each, extract
    features, and compare against the prompt. Also reports the MAE of an
    unconditional sample pool as a calibration baseline. ``sampler_fn``
    (cond_matrix_or_None, n, rng) -> (n, L) overrides the model sampler.
    """
    if len(test.labeled_indices) != test.n:
        raise ValueError("controllability evaluation needs a fully labeled test set")
    if test.n == 0:
        raise ValueError("test set is empty")

    text_rng = derived_rng(seed, "eval-text")
    cond_rng = derived_rng(seed, "eval-cond")
    base_rng = derived_rng(seed, "eval-base")

    targets = []
    cond_rows = []
    for i in range(test.n):
        text = render_text(test.features[i], "exact", rng=text_rng)
        parsed = parse_text(text).to_feature_vector()
        targets.append(parsed)
        cond_rows.append(encode(parsed, test.bins, presence_bits=PRESENCE_BITS).values)
    cond_matrix = np.repeat(np.stack(cond_rows), n_per_prompt, axis=0)

    if sampler_fn is None:
        def sampler_fn(c, n, rng):
            return sample_many(net, schedule, c, w, rng, n)

    generated = sampler_fn(cond_matrix, test.n * n_per_prompt, cond_rng)
    gen_feats = np.stack(
        [extract_features(minmax_normalize(row)).as_array() for row in generated]
    )
    target_arr = np.stack([t.as_array() for t in targets])
    per_prompt = np.abs(
        gen_feats.reshape(test.n, n_per_prompt, -1) - target_arr[:, None, :]
    ).mean(axis=1)
    mae = {name: float(per_prompt[:, j].mean()) for j, name in enumerate(FEATURE_NAMES)}

    pool = sampler_fn(None, N_BASELINE_SAMPLES, base_rng)
    pool_feats = np.stack(
        [extract_features(minmax_normalize(row)).as_array() for row in pool]
    )
    base_dev = np.abs(pool_feats[None, :, :] - target_arr[:, None, :]).mean(axis=(0, 1))
    baseline_mae = {name: float(base_dev[j]) for j, name in enumerate(FEATURE_NAMES)}

    pairs = []
    for i in range(min(test.n, N_EXPORT_PAIRS)):
        pairs.append(
            {
                "prompt_features": {k: getattr(targets[i], k) for k in FEATURE_NAMES},
                "target": test.series[i].tolist(),
                "generated": generated[i * n_per_prompt].tolist(),
            }
        )
    return EvalReport(
        mae=mae,
        baseline_mae=baseline_mae,
        n_prompts=test.n,
        n_per_prompt=n_per_prompt,
        mode=mode,
        label_fraction=label_fraction,
        seed=seed,
        w=w,
        pairs=pairs,
    )


def heldout_unconditional_loss(
    net: ScoreNetwork, xs: np.ndarray, schedule, seed: int, n_batches: int = 200
) -> float:
    """Monte-Carlo unconditional loss on held-out series (forgetting metric)."""
    return compute_xi_hat(net, xs, schedule, derived_rng(seed, "heldout-l1"), n_batches)


def export_plot_data(
    reports: list[EvalReport],
    traces: dict[str, list[StepTrace]] | None,
    out_dir,
) -> list[Path]:
    """Write the MAE table, paired series for embedding plots, and traces.

    The CSV holds one row per (label_fraction, mode, feature, seed), sorted;
    floats are written in shortest round-trip form so a reload reproduces
    the reports exactly.
    """
    if not reports:
        raise ValueError("need at least one evaluation report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = []
    for rep in reports:
        for feature in FEATURE_NAMES:
            rows.append(
                (rep.label_fraction, rep.mode, feature, rep.mae[feature], rep.seed)
            )
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[4]))
    mae_path = out / "mae.csv"
    with open(mae_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label_fraction", "mode", "feature", "mae", "seed"])
        for lf, mode, feature, value, seed in rows:
            writer.writerow([repr(lf), mode, feature, repr(value), seed])
    written.append(mae_path)

    pairs_payload = [
        {"mode": rep.mode, "seed": rep.seed, "label_fraction": rep.label_fraction,
         "pairs": rep.pairs}
        for rep in reports
    ]
    pairs_path = out / "pairs.json"
    with open(pairs_path, "w") as fh:
        json.dump(pairs_payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(pairs_path)

    for tag, tr in (traces or {}).items():
        trace_path = out / f"traces_{tag}.csv"
        write_traces(trace_path, tr)
        written.append(trace_path)
    return written


def read_mae_csv(path) -> list[tuple[float, str, str, float, int]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                (
                    float(row["label_fraction"]),
                    row["mode"],
                    row["feature"],
                    float(row["mae"]),
                    int(row["seed"]),
                )
            )
    return out
