"""Synthetic corpus with controllable series features.

A series is assembled as linear trend + (contrast-shaped) sinusoid +
skew-shaped noise + localized bumps + smoothed white noise, then mapped
onto [0, 1] with an optional monotone power warp that steers the mean.
The planner solves the trend slope, skew weight and mean warp against
sampled feature targets, and records as the spec's target the features of
the spec's own reference realization; regenerating under a different seed
stays within the published per-feature tolerances below.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .condition import FEATURE_NAMES, FeatureVector, QuintileBins, encode, render_text
from .errors import DataError, FeasibilityError
from .features import extract_features, minmax_normalize

# Cross-seed stability of the generator, verified over the corpus by
# tests (99% of items must regenerate within these bounds).
FEATURE_TOLERANCE = {
    "frequency": 0.06,
    "skewness": 0.18,
    "mean": 0.055,
    "variance": 0.02,
    "linearity": 0.05,
    "n_peaks": 3,
}

_N_SPIKES = 5  # sparse one-sided spikes carry the skewness
_SPIKE_WIDTH = 1.8


@dataclass(frozen=True)
class SeriesSpec:
    """Feature targets plus the generator knobs that realize them.

    Spike and bump geometry are knobs (fixed per spec); only the white
    noise is redrawn when a series is regenerated under a new seed.
    """

    target: FeatureVector
    cycles: int
    amp_sin: float
    contrast: float
    slope: float
    noise_scale: float
    skew_weight: float
    spike_positions: tuple[float, ...]
    spike_heights: tuple[float, ...]
    bump_positions: tuple[float, ...]
    bump_height: float
    phase: float
    mean_power: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "spike_positions", tuple(self.spike_positions))
        object.__setattr__(self, "spike_heights", tuple(self.spike_heights))
        object.__setattr__(self, "bump_positions", tuple(self.bump_positions))
        if len(self.spike_positions) != len(self.spike_heights):
            raise ValueError("spike positions and heights must align")
        knobs = (
            self.amp_sin, self.contrast, self.slope, self.noise_scale,
            self.skew_weight, self.bump_height, self.phase, self.mean_power,
            *self.spike_positions, *self.spike_heights, *self.bump_positions,
        )
        if not all(math.isfinite(v) for v in knobs):
            raise ValueError("generator knobs must be finite")

    def knobs_json(self) -> dict:
        d = asdict(self)
        d["target"] = {name: getattr(self.target, name) for name in FEATURE_NAMES}
        for key in ("spike_positions", "spike_heights", "bump_positions"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SeriesSpec":
        d = dict(d)
        d["target"] = FeatureVector.from_mapping(d["target"])
        for key in ("spike_positions", "spike_heights", "bump_positions"):
            d[key] = tuple(d[key])
        return cls(**d)


def _skew_unit(L: int, positions: tuple[float, ...], heights: tuple[float, ...]) -> np.ndarray:
    """Sparse one-sided spikes, standardized: strong sample skewness from
    sparsity while adding few local maxima."""
    if not positions:
        return np.zeros(L)
    i = np.arange(L, dtype=np.float64)
    unit = np.zeros(L)
    for p, h in zip(positions, heights):
        unit += h * np.exp(-((i - p * (L - 1)) ** 2) / (2.0 * _SPIKE_WIDTH**2))
    unit -= unit.mean()
    sd = unit.std()
    return unit / sd if sd > 0.0 else unit


def _draw_white(L: int, rng: np.random.Generator) -> np.ndarray:
    """Lightly smoothed unit-variance noise (the only per-seed randomness)."""
    white = rng.standard_normal(L + 2)
    kernel = np.array([0.25, 0.5, 0.25])
    return np.convolve(white, kernel, mode="valid") / np.linalg.norm(kernel)


def _assemble(L: int, knobs: dict, white: np.ndarray) -> np.ndarray:
    i = np.arange(L, dtype=np.float64)
    u = i / (L - 1)
    trend = knobs["slope"] * (u - 0.5)
    if knobs["amp_sin"] > 0.0 and knobs["cycles"] > 0:
        ang = 2.0 * math.pi * knobs["cycles"] * i / L + knobs["phase"]
        c = max(knobs["contrast"], 1e-6)
        osc = knobs["amp_sin"] * np.tanh(c * np.sin(ang)) / math.tanh(c)
    else:
        osc = np.zeros(L)
    bumps = np.zeros(L)
    if knobs["bump_positions"]:
        width = max(1.5, L / (10.0 * max(knobs["cycles"], 1)))
        for p in knobs["bump_positions"]:
            bumps += knobs["bump_height"] * np.exp(-((i - p * (L - 1)) ** 2) / (2 * width**2))
    skew = knobs["skew_weight"] * _skew_unit(
        L, knobs["spike_positions"], knobs["spike_heights"]
    )
    return trend + osc + skew + knobs["noise_scale"] * white + bumps


def _spec_knobs(spec: SeriesSpec) -> dict:
    return {
        "cycles": spec.cycles,
        "amp_sin": spec.amp_sin,
        "contrast": spec.contrast,
        "slope": spec.slope,
        "noise_scale": spec.noise_scale,
        "skew_weight": spec.skew_weight,
        "spike_positions": spec.spike_positions,
        "spike_heights": spec.spike_heights,
        "bump_positions": spec.bump_positions,
        "bump_height": spec.bump_height,
        "phase": spec.phase,
    }


def generate_series(
    spec: SeriesSpec, L: int, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Realize a spec as a length-L series on [0, 1].

    Deterministic given the rng; when none is passed the spec's own seed is
    used (that realization defines the spec's target features).
    """
    if L < 8:
        raise ValueError("L must be >= 8")
    stochastic = (
        spec.noise_scale != 0.0
        or spec.skew_weight != 0.0
        or spec.amp_sin != 0.0
        or len(spec.bump_positions) > 0
    )
    if abs(spec.target.linearity) == 1.0 and stochastic:
        raise FeasibilityError(
            "a perfectly linear series (|linearity| = 1) is incompatible with "
            "noise, skew, sinusoid or bump components"
        )
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    raw = _assemble(L, _spec_knobs(spec), _draw_white(L, rng))
    y = minmax_normalize(raw)
    if spec.mean_power != 1.0:
        y = y ** spec.mean_power
    return y


def _sample_skewness(x: np.ndarray) -> float:
    c = x - x.mean()
    m2 = np.mean(c**2)
    return 0.0 if m2 == 0.0 else float(np.mean(c**3) / m2**1.5)


def _solve_skew_weight(base: np.ndarray, skew_unit: np.ndarray, target: float) -> float:
    """Pick the skew-component weight whose mixture sample skewness hits target.

    The weight is capped near the base amplitude so the spikes never dominate
    the series (which would destabilize normalization and the spectrum);
    extreme targets saturate at the cap.
    """
    if target == 0.0:
        return 0.0
    sigma_b = float(base.std()) or 1.0
    amax = 1.3 * sigma_b

    def skew_at(a: float) -> float:
        return _sample_skewness(base + a * skew_unit)

    grid = np.linspace(-amax, amax, 161)
    vals = np.array([skew_at(a) for a in grid])
    k = int(np.argmin(np.abs(vals - target)))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if (skew_at(lo) - target) * (skew_at(mid) - target) <= 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _solve_slope(rest: np.ndarray, L: int, target: float) -> float:
    """Trend slope whose least-squares R^2 (signed) approximates target."""
    if target == 0.0:
        return 0.0
    i = np.arange(L, dtype=np.float64)
    u = i / (L - 1) - 0.5
    sigma_rest = float(rest.std())
    if sigma_rest == 0.0:
        return math.copysign(1.0, target)

    def r2_at(s: float) -> float:
        x = s * u + rest
        c = x - x.mean()
        m2 = np.mean(c**2)
        if m2 == 0.0:
            return 0.0
        i_c = i - i.mean()
        cov = np.mean(i_c * c)
        return float(cov * cov / (np.mean(i_c**2) * m2))

    goal = abs(target)
    lo, hi = 0.0, 4.0 * sigma_rest / float(u.std())
    while r2_at(hi) < goal and hi < 1e6:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if r2_at(mid) < goal:
            lo = mid
        else:
            hi = mid
    return math.copysign(0.5 * (lo + hi), target)


def _solve_mean_power(y: np.ndarray, target: float) -> float:
    """Monotone warp exponent p with mean(y**p) == target (bisection)."""

    def mean_at(p: float) -> float:
        return float(np.mean(y**p))

    lo, hi = 0.2, 5.0
    if target >= mean_at(lo):
        return lo
    if target <= mean_at(hi):
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mean_at(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def plan_series_spec(rng: np.random.Generator, L: int) -> SeriesSpec:
    """Sample feature targets over feasible ranges and solve the knobs.

    Spike and bump geometry is drawn here (it belongs to the spec), the
    trend slope / skew weight / mean warp are solved against the sampled
    targets, and the spec's target is the feature vector of its reference
    realization.
    """
    seed = int(rng.integers(0, 2**62))
    cycles = int(rng.integers(1, max(L // 8, 2) + 1))
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    contrast = float(rng.uniform(0.5, 3.0))
    amp_sin = 1.0
    noise_scale = float(rng.uniform(0.02, 0.08))
    n_bumps = int(rng.integers(0, min(cycles, 3) + 1))
    bump_height = float(rng.uniform(0.5, 0.9))
    skew_target = float(rng.uniform(-1.1, 1.1))
    linearity_target = float(rng.uniform(-0.8, 0.8))
    mean_target = float(rng.uniform(0.4, 0.6))

    spike_positions = tuple(float(p) for p in rng.uniform(0.05, 0.95, _N_SPIKES))
    spike_heights = tuple(
        float(h) for h in 1.0 + 0.35 * rng.exponential(1.0, _N_SPIKES)
    )
    if n_bumps > 0:
        # Bumps sit near sinusoid troughs so each one adds a local maximum.
        troughs = rng.choice(cycles, size=min(n_bumps, cycles), replace=False)
        centers = (0.75 + troughs - phase / (2.0 * math.pi)) % cycles / cycles
        jitter = rng.uniform(-0.2, 0.2, size=len(centers)) / max(cycles, 1)
        bump_positions = tuple(float(p) for p in np.clip(centers + jitter, 0.02, 0.98))
    else:
        bump_positions = ()

    knobs = {
        "cycles": cycles,
        "amp_sin": amp_sin,
        "contrast": contrast,
        "slope": 0.0,
        "noise_scale": noise_scale,
        "skew_weight": 0.0,
        "spike_positions": spike_positions,
        "spike_heights": spike_heights,
        "bump_positions": bump_positions,
        "bump_height": bump_height,
        "phase": phase,
    }
    white = _draw_white(L, np.random.default_rng(seed))
    unit = _skew_unit(L, spike_positions, spike_heights)

    # Two alternating passes: the skew weight shifts the variance the slope
    # solve sees, and the trend feeds back into the mixture moments.
    def no_skew(k: dict) -> np.ndarray:
        return _assemble(L, k | {"skew_weight": 0.0}, white)

    knobs["skew_weight"] = _solve_skew_weight(no_skew(knobs), unit, skew_target)
    knobs["slope"] = _solve_slope(
        _assemble(L, knobs | {"slope": 0.0}, white), L, linearity_target
    )
    knobs["skew_weight"] = _solve_skew_weight(no_skew(knobs), unit, skew_target)
    raw = _assemble(L, knobs, white)
    mean_power = _solve_mean_power(minmax_normalize(raw), mean_target)

    placeholder = FeatureVector(0.0, 0.0, 0.5, 0.0, 0.0, 0)
    spec = SeriesSpec(
        target=placeholder,
        cycles=cycles,
        amp_sin=amp_sin,
        contrast=contrast,
        slope=knobs["slope"],
        noise_scale=noise_scale,
        skew_weight=knobs["skew_weight"],
        spike_positions=spike_positions,
        spike_heights=spike_heights,
        bump_positions=bump_positions,
        bump_height=bump_height,
        phase=phase,
        mean_power=mean_power,
        seed=seed,
    )
    return replace(spec, target=extract_features(generate_series(spec, L)))


class Dataset:
    """One split of the corpus: all series plus the labeled subset."""

    def __init__(
        self,
        length: int,
        seed: int,
        label_fraction: float,
        series: np.ndarray,
        features: list[FeatureVector],
        texts: dict[int, str],
        labeled_indices: tuple[int, ...],
        bins: QuintileBins,
        specs: list[SeriesSpec] | None = None,
        global_indices: tuple[int, ...] | None = None,
    ) -> None:
        series = np.asarray(series, dtype=np.float64)
        if series.ndim != 2 or series.shape[1] != length:
            raise ValueError("series must be (n, length)")
        if len(features) != series.shape[0]:
            raise ValueError("features and series must align")
        labeled_indices = tuple(sorted(int(i) for i in labeled_indices))
        if len(set(labeled_indices)) != len(labeled_indices):
            raise ValueError("labeled indices must be unique")
        if labeled_indices and not (
            0 <= labeled_indices[0] and labeled_indices[-1] < series.shape[0]
        ):
            raise ValueError("labeled indices out of range")
        self.length = length
        self.seed = seed
        self.label_fraction = label_fraction
        self.series = series
        self.features = features
        self.texts = dict(texts)
        self.labeled_indices = labeled_indices
        self.bins = bins
        self.specs = specs
        self.global_indices = global_indices or tuple(range(series.shape[0]))
        self.touch_counts = np.zeros(series.shape[0], dtype=np.int64)

    @property
    def n(self) -> int:
        return self.series.shape[0]

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_indices)

    def take(self, indices) -> np.ndarray:
        """Fetch series rows; every access is counted for isolation audits."""
        indices = np.asarray(indices, dtype=np.int64)
        np.add.at(self.touch_counts, indices, 1)
        return self.series[indices]

    def reset_touches(self) -> None:
        self.touch_counts[:] = 0

    def labeled_condition_matrix(self, presence_bits: bool = False) -> np.ndarray:
        rows = [
            encode(self.features[i], self.bins, presence_bits).values
            for i in self.labeled_indices
        ]
        dim = 12 if presence_bits else 6
        return np.stack(rows) if rows else np.zeros((0, dim))


def make_dataset(
    n: int, L: int, label_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Generate, normalize, split 80/20, then label a train subset.

    The split happens before labeling; the test split is fully labeled so
    controllability evaluation always has ground truth.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    if not 0.0 < label_fraction <= 1.0:
        raise ValueError("label_fraction must lie in (0, 1]")
    if L < 8:
        raise ValueError("L must be >= 8")

    design_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    split_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    label_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    text_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    specs = [plan_series_spec(design_rng, L) for _ in range(n)]
    series = np.stack([generate_series(spec, L) for spec in specs])
    features = [spec.target for spec in specs]

    n_train = int(math.floor(0.8 * n))
    perm = split_rng.permutation(n)
    train_g = sorted(int(i) for i in perm[:n_train])
    test_g = sorted(int(i) for i in perm[n_train:])

    bins = QuintileBins.fit([features[i] for i in train_g])

    n_labeled = int(math.floor(label_fraction * n_train))
    labeled_local = sorted(
        int(i) for i in label_rng.choice(n_train, size=n_labeled, replace=False)
    )

    def build(globals_, labeled, lf) -> Dataset:
        texts = {
            li: render_text(features[gi], "exact", rng=text_rng)
            for li, gi in enumerate(globals_)
            if li in labeled
        }
        return Dataset(
            length=L,
            seed=seed,
            label_fraction=lf,
            series=series[globals_],
            features=[features[gi] for gi in globals_],
            texts=texts,
            labeled_indices=tuple(labeled),
            bins=bins,
            specs=[specs[gi] for gi in globals_],
            global_indices=tuple(globals_),
        )

    train = build(train_g, set(labeled_local), label_fraction)
    test = build(test_g, set(range(len(test_g))), 1.0)
    return train, test


def save_dataset(train: Dataset, test: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = train.n + test.n
    records: list[dict | None] = [None] * n
    for ds in (train, test):
        for li, gi in enumerate(ds.global_indices):
            rec = {
                "values": ds.series[li].tolist(),
                "features": {name: getattr(ds.features[li], name) for name in FEATURE_NAMES},
            }
            if li in ds.texts:
                rec["text"] = ds.texts[li]
            if ds.specs is not None:
                rec["spec"] = ds.specs[li].knobs_json()
            records[gi] = rec
    manifest = {
        "format": 1,
        "length": train.length,
        "seed": train.seed,
        "n": n,
        "label_fraction": train.label_fraction,
        "train_indices": list(train.global_indices),
        "test_indices": list(test.global_indices),
        "labeled_indices": [train.global_indices[i] for i in train.labeled_indices],
        "bins": train.bins.to_json(),
    }
    with open(out / "data.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_dataset(in_dir) -> tuple[Dataset, Dataset]:
    path = Path(in_dir)
    manifest_path = path / "manifest.json"
    data_path = path / "data.jsonl"
    if not manifest_path.exists() or not data_path.exists():
        raise DataError(f"dataset files not found under {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        records = [json.loads(line) for line in data_path.read_text().splitlines()]
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed dataset files under {path}: {exc}") from exc
    if len(records) != manifest["n"]:
        raise DataError("record count does not match the manifest")
    bins = QuintileBins.from_json(manifest["bins"])
    labeled_global = set(manifest["labeled_indices"])

    def build(globals_, labeled_set, lf) -> Dataset:
        series = np.stack([records[gi]["values"] for gi in globals_])
        # features are optional in the record format (externally supplied
        # series may omit them); recompute from the stored values then
        features = [
            FeatureVector.from_mapping(records[gi]["features"])
            if "features" in records[gi]
            else extract_features(minmax_normalize(np.asarray(records[gi]["values"])))
            for gi in globals_
        ]
        texts = {
            li: records[gi]["text"]
            for li, gi in enumerate(globals_)
            if "text" in records[gi]
        }
        labeled = tuple(li for li, gi in enumerate(globals_) if gi in labeled_set)
        specs = None
        if all("spec" in records[gi] for gi in globals_):
            specs = [SeriesSpec.from_json(records[gi]["spec"]) for gi in globals_]
        return Dataset(
            length=manifest["length"],
            seed=manifest["seed"],
            label_fraction=lf,
            series=series,
            features=features,
            texts=texts,
            labeled_indices=labeled,
            bins=bins,
            specs=specs,
            global_indices=tuple(globals_),
        )

    train = build(manifest["train_indices"], labeled_global, manifest["label_fraction"])
    test = build(manifest["test_indices"], set(manifest["test_indices"]), 1.0)
    return train, test
