"""Command-line pipeline.

Subcommands: gen-data, pretrain, finetune, sample, evaluate, bounds,
export. Every subcommand accepts ``--config FILE`` holding flat
``key=value`` lines mirroring the flags; explicit flags override the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .bounds import BoundsInput, guarantee_report
from .checkpoint import load_checkpoint
from .condition import QuintileBins, encode, parse_text
from .diffusion import draw_noise, sample_many
from .errors import ConfigError, DataError, NumericalInstabilityError, ParseError
from .lexopt import read_traces
from .network import predict_noise_batch
from .pipeline import (
    EvalReport,
    RunConfig,
    derived_rng,
    evaluate_controllability,
    export_plot_data,
    load_eval_report,
    pretrain,
    run_finetune,
    save_eval_report,
)
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T
from .synthdata import load_dataset, make_dataset, save_dataset


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable[[str], Any]
    default: Any = None
    required: bool = False
    help: str = ""


GEN_DATA_OPTS = [
    Opt("n", int, 1000, help="number of series to generate"),
    Opt("length", int, 64, help="series length L"),
    Opt("label-frac", float, 0.1, help="labeled fraction of the train split"),
    Opt("seed", int, 0),
    Opt("out", str, required=True, help="output directory"),
]

PRETRAIN_OPTS = [
    Opt("data", str, required=True, help="dataset directory"),
    Opt("epochs", int, 1000),
    Opt("out", str, required=True, help="checkpoint path"),
    Opt("seed", int, 0),
    Opt("batch-size", int, 32),
    Opt("omega", float, 0.1, help="gradient step size"),
    Opt("t-steps", int, DEFAULT_T),
    Opt("beta-start", float, DEFAULT_BETA_START),
    Opt("beta-end", float, DEFAULT_BETA_END),
    Opt("xi-batches", int, 200, help="Monte-Carlo batches for the final loss estimate"),
]

FINETUNE_OPTS = [
    Opt("mode", str, "text2data", help="text2data | unconstrained | supervised"),
    Opt("data", str, required=True),
    Opt("init", str, help="stage-1 checkpoint (text2data/unconstrained modes)"),
    Opt("xi", float, help="constraint anchor; defaults to the checkpoint's final_l1"),
    Opt("rho", float, 1.05),
    Opt("alpha", float, 30.0, help="barrier scale on the constraint excess"),
    Opt("beta", float, 1.0),
    Opt("gamma", float, 1.0),
    Opt("omega", float, 0.1),
    Opt("p-uncond", float, 0.0),
    Opt("epochs", int, 4000),
    Opt("out", str, required=True),
    Opt("seed", int, 0),
    Opt("batch-size", int, 16),
]

SAMPLE_OPTS = [
    Opt("ckpt", str, required=True),
    Opt("text", str, required=True, help="feature description to condition on"),
    Opt("w", float, 0.0, help="guidance weight"),
    Opt("n", int, 1),
    Opt("seed", int, 0),
    Opt("out", str, help="output JSON path (stdout when omitted)"),
]

EVALUATE_OPTS = [
    Opt("ckpt", str, required=True),
    Opt("data", str, required=True),
    Opt("w", float, 0.0),
    Opt("out", str, required=True),
    Opt("n-per-prompt", int, 8),
    Opt("seed", int, 0),
]

BOUNDS_OPTS = [
    Opt("sigma2", float, help="sub-Gaussian variance proxy"),
    Opt("delta", float, 0.05),
    Opt("n", int, required=True, help="unlabeled sample count"),
    Opt("np", int, required=True, help="labeled sample count"),
    Opt("theta-card", float, required=True, help="effective hypothesis count"),
    Opt("xi", float, 0.0, help="constraint level for the report"),
    Opt("estimate-from", str, help="checkpoint for the plug-in sigma2 heuristic"),
    Opt("data", str, help="dataset directory for the plug-in heuristic"),
    Opt("out", str, help="optional JSON output path"),
]

EXPORT_OPTS = [
    Opt("in", str, required=True, help="directory of evaluation reports and traces"),
    Opt("out", str, required=True, help="output directory"),
]

COMMANDS: dict[str, list[Opt]] = {
    "gen-data": GEN_DATA_OPTS,
    "pretrain": PRETRAIN_OPTS,
    "finetune": FINETUNE_OPTS,
    "sample": SAMPLE_OPTS,
    "evaluate": EVALUATE_OPTS,
    "bounds": BOUNDS_OPTS,
    "export": EXPORT_OPTS,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seriesdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, opts in COMMANDS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="flat key=value config file")
        for opt in opts:
            p.add_argument(
                f"--{opt.name}",
                dest=opt.name.replace("-", "_"),
                type=opt.type,
                default=argparse.SUPPRESS,
                help=opt.help,
            )
    return parser


def _read_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(opts: list[Opt], args: argparse.Namespace) -> dict[str, Any]:
    """defaults < config file < explicit flags."""
    resolved: dict[str, Any] = {
        o.name.replace("-", "_"): o.default for o in opts if not o.required
    }
    if args.config:
        file_values = _read_config_file(args.config)
        known = {o.name.replace("-", "_"): o for o in opts}
        for key, raw in file_values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                resolved[key] = known[key].type(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    for opt in opts:
        key = opt.name.replace("-", "_")
        if hasattr(args, key):
            resolved[key] = getattr(args, key)
    for opt in opts:
        key = opt.name.replace("-", "_")
        if opt.required and resolved.get(key) is None:
            raise ConfigError(f"--{opt.name} is required")
    return resolved


def _cmd_gen_data(v: dict[str, Any]) -> int:
    train, test = make_dataset(v["n"], v["length"], v["label_frac"], v["seed"])
    save_dataset(train, test, v["out"])
    print(
        f"wrote dataset: {train.n} train ({train.n_labeled} labeled), "
        f"{test.n} test -> {v['out']}"
    )
    return 0


def _cmd_pretrain(v: dict[str, Any]) -> int:
    config = RunConfig(
        data_dir=v["data"],
        out_path=v["out"],
        epochs=v["epochs"],
        seed=v["seed"],
        pretrain_batch_size=v["batch_size"],
        omega=v["omega"],
        t_steps=v["t_steps"],
        beta_start=v["beta_start"],
        beta_end=v["beta_end"],
        xi_batches=v["xi_batches"],
    )
    result = pretrain(config)
    print(f"pretrained: final unconditional loss {result.final_l1:.6f} -> {v['out']}")
    return 0


def _cmd_finetune(v: dict[str, Any]) -> int:
    config = RunConfig(
        data_dir=v["data"],
        out_path=v["out"],
        init_path=v["init"],
        mode=v["mode"],
        epochs=v["epochs"],
        batch_size=v["batch_size"],
        seed=v["seed"],
        omega=v["omega"],
        alpha=v["alpha"],
        beta=v["beta"],
        gamma=v["gamma"],
        rho=v["rho"],
        p_uncond=v["p_uncond"],
        xi=v["xi"],
    )
    outcome = run_finetune(config)
    if outcome.diverged:
        print("finetuning hit a non-finite loss; kept the last good parameters", file=sys.stderr)
        return 4
    tail = outcome.traces[-1] if outcome.traces else None
    detail = f", final l2 {tail.l2:.6f}" if tail else ""
    print(f"finetuned ({v['mode']}){detail} -> {v['out']}")
    return 0


def _cmd_sample(v: dict[str, Any]) -> int:
    net, schedule, meta = load_checkpoint(v["ckpt"])
    if "bins" not in meta:
        raise DataError("checkpoint lacks corpus bins; cannot encode text")
    bins = QuintileBins.from_json(json.loads(meta["bins"]))
    parsed = parse_text(v["text"])
    cond = encode(parsed, bins, presence_bits=net.arch.cond_dim == 12)
    rng = derived_rng(v["seed"], "cli-sample")
    series = sample_many(net, schedule, cond, v["w"], rng, v["n"])
    payload = {
        "text": v["text"],
        "w": v["w"],
        "seed": v["seed"],
        "series": [row.tolist() for row in series],
    }
    body = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if v["out"]:
        Path(v["out"]).write_text(body)
        print(f"wrote {v['n']} series -> {v['out']}")
    else:
        sys.stdout.write(body)
    return 0


def _cmd_evaluate(v: dict[str, Any]) -> int:
    net, schedule, meta = load_checkpoint(v["ckpt"])
    train, test = load_dataset(v["data"])
    report = evaluate_controllability(
        net,
        schedule,
        test,
        w=v["w"],
        n_per_prompt=v["n_per_prompt"],
        seed=v["seed"],
        mode=meta.get("stage", "unknown"),
        label_fraction=train.label_fraction,
    )
    save_eval_report(report, v["out"])
    summary = ", ".join(f"{k}={report.mae[k]:.4f}" for k in report.mae)
    print(f"evaluated {report.n_prompts} prompts: {summary} -> {v['out']}")
    return 0


def _plugin_sigma2(ckpt: str, data_dir: str) -> float:
    """Heuristic variance proxy: empirical variance of prediction residuals."""
    net, schedule, _ = load_checkpoint(ckpt)
    train, _ = load_dataset(data_dir)
    rng = derived_rng(0, "sigma2-plugin")
    residuals = []
    for _ in range(50):
        idx = rng.integers(0, train.n, size=min(32, train.n))
        xs = train.series[idx]
        draw = draw_noise(xs, schedule, rng)
        ab = schedule.alpha_bar[draw.t - 1][:, None]
        x_t = np.sqrt(ab) * xs + np.sqrt(1.0 - ab) * draw.eps
        pred = predict_noise_batch(net, x_t, draw.t, None)
        residuals.append((pred - draw.eps).reshape(-1))
    return float(np.concatenate(residuals).var())


def _cmd_bounds(v: dict[str, Any]) -> int:
    sigma2 = v["sigma2"]
    source = "user"
    if sigma2 is None:
        if not (v["estimate_from"] and v["data"]):
            raise ConfigError(
                "pass --sigma2, or both --estimate-from and --data for the "
                "plug-in heuristic"
            )
        sigma2 = _plugin_sigma2(v["estimate_from"], v["data"])
        source = "plugin_heuristic"
    inp = BoundsInput(
        sigma2=sigma2, delta=v["delta"], n=v["n"], n_p=v["np"], theta_card=v["theta_card"]
    )
    report = guarantee_report(inp, v["xi"])
    payload = {
        "inputs": {
            "sigma2": sigma2,
            "sigma2_source": source,
            "delta": v["delta"],
            "n": v["n"],
            "np": v["np"],
            "theta_card": v["theta_card"],
        },
        "assumption": (
            "finite hypothesis set of the stated cardinality; predictions are "
            "zero-mean sub-Gaussian with the stated variance proxy"
        ),
        "report": report.to_json(),
    }
    body = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if v["out"]:
        Path(v["out"]).write_text(body)
    sys.stdout.write(body)
    return 0


def _cmd_export(v: dict[str, Any]) -> int:
    src = Path(v["in"])
    if not src.is_dir():
        raise DataError(f"input directory not found: {src}")
    reports: list[EvalReport] = []
    for path in sorted(src.glob("*.json")):
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(payload, dict) and "mae" in payload:
            reports.append(load_eval_report(path))
    traces = {
        path.name[: -len(".traces.csv")]: read_traces(path)
        for path in sorted(src.glob("*.traces.csv"))
    }
    if not reports:
        raise DataError(f"no evaluation reports found under {src}")
    written = export_plot_data(reports, traces, v["out"])
    print(f"exported {len(reports)} reports -> " + ", ".join(str(p) for p in written))
    return 0


_HANDLERS = {
    "gen-data": (_cmd_gen_data, GEN_DATA_OPTS),
    "pretrain": (_cmd_pretrain, PRETRAIN_OPTS),
    "finetune": (_cmd_finetune, FINETUNE_OPTS),
    "sample": (_cmd_sample, SAMPLE_OPTS),
    "evaluate": (_cmd_evaluate, EVALUATE_OPTS),
    "bounds": (_cmd_bounds, BOUNDS_OPTS),
    "export": (_cmd_export, EXPORT_OPTS),
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler, opts = _HANDLERS[args.command]
    try:
        values = _resolve(opts, args)
        return handler(values)
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalInstabilityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
