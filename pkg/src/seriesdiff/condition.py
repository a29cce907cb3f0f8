"""Deterministic text templates for series features, and their encodings.

Replaces a learned text encoder with a fixed grammar: features render to a
sentence, sentences parse back to features, and features (or the NULL
token) embed as fixed-length condition vectors. The grammar is unambiguous
by construction, which is what makes the parser sound.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParseError

FEATURE_NAMES = ("frequency", "skewness", "mean", "variance", "linearity", "n_peaks")

LEVELS = ("very low", "low", "medium", "high", "very high")


class EncodingRangeWarning(UserWarning):
    """A feature value fell outside the corpus range and was clamped."""


@dataclass(frozen=True)
class FeatureVector:
    """The six controllable properties of a normalized series."""

    frequency: float
    skewness: float
    mean: float
    variance: float
    linearity: float
    n_peaks: int

    def __post_init__(self):
        if not 0.0 <= self.frequency <= 0.5:
            raise ValueError("frequency must lie in [0, 0.5]")
        if not 0.0 <= self.mean <= 1.0:
            raise ValueError("mean of a normalized series must lie in [0, 1]")
        if self.variance < 0.0:
            raise ValueError("variance must be >= 0")
        if not -1.0 <= self.linearity <= 1.0:
            raise ValueError("linearity must lie in [-1, 1]")
        if self.n_peaks < 0 or int(self.n_peaks) != self.n_peaks:
            raise ValueError("n_peaks must be a nonnegative integer")
        object.__setattr__(self, "n_peaks", int(self.n_peaks))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_mapping(cls, values) -> "FeatureVector":
        return cls(**{name: values[name] for name in FEATURE_NAMES})


@dataclass(frozen=True)
class ConditionVector:
    """Embedded condition c; the NULL token is the all-zero vector."""

    values: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.is_null and np.any(values != 0.0):
            raise ValueError("the NULL condition must be all zero")

    @classmethod
    def null(cls, dim: int) -> "ConditionVector":
        return cls(np.zeros(dim), is_null=True)

    @property
    def dim(self) -> int:
        return self.values.size


class QuintileBins:
    """Five equal-mass bins per feature, fitted on corpus ranks.

    ``edges[name]`` holds the six boundaries (min, four quintile cuts, max).
    New values bin by their position among the cuts; corpus items bin by
    rank, which makes the five bins hold 20% (+/- 1 item) each even under
    ties.
    """

    def __init__(self, edges: dict[str, np.ndarray]) -> None:
        self.edges = {}
        for name in FEATURE_NAMES:
            e = np.asarray(edges[name], dtype=np.float64)
            if e.shape != (6,) or np.any(np.diff(e) < 0):
                raise ValueError(f"edges for {name} must be 6 nondecreasing values")
            self.edges[name] = e

    @classmethod
    def fit(cls, features: list[FeatureVector]) -> "QuintileBins":
        if not features:
            raise ValueError("cannot fit bins on an empty corpus")
        table = np.stack([f.as_array() for f in features])
        edges = {}
        for j, name in enumerate(FEATURE_NAMES):
            edges[name] = np.quantile(table[:, j], [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
        return cls(edges)

    def level(self, name: str, value: float) -> str:
        cuts = self.edges[name][1:5]
        return LEVELS[int(np.searchsorted(cuts, value, side="right"))]

    def rank_levels(self, name: str, values: np.ndarray) -> list[str]:
        """Equal-mass level assignment for the corpus itself (rank based)."""
        values = np.asarray(values, dtype=np.float64)
        order = np.argsort(values, kind="stable")
        ranks = np.empty(values.size, dtype=np.int64)
        ranks[order] = np.arange(values.size)
        bins = np.minimum(ranks * 5 // values.size, 4)
        return [LEVELS[b] for b in bins]

    def midpoint(self, name: str, level: str) -> float:
        k = LEVELS.index(level)
        e = self.edges[name]
        return 0.5 * (e[k] + e[k + 1])

    def feature_range(self, name: str) -> tuple[float, float]:
        e = self.edges[name]
        return float(e[0]), float(e[-1])

    def to_json(self) -> dict:
        return {name: self.edges[name].tolist() for name in FEATURE_NAMES}

    @classmethod
    def from_json(cls, payload: dict) -> "QuintileBins":
        return cls({name: np.asarray(payload[name]) for name in FEATURE_NAMES})


def _fmt(value: float) -> str:
    return repr(float(value))


def _peaks_clause(n: int) -> str:
    return f"{n} peak" if n == 1 else f"{n} peaks"


_EXACT_CLAUSES = {
    "frequency": lambda f: f"the frequency of {_fmt(f.frequency)}",
    "skewness": lambda f: f"the skewness of {_fmt(f.skewness)}",
    "mean": lambda f: f"the mean of {_fmt(f.mean)}",
    "variance": lambda f: f"the variance of {_fmt(f.variance)}",
    "linearity": lambda f: f"the linear trend of {_fmt(f.linearity)}",
    "n_peaks": lambda f: _peaks_clause(f.n_peaks),
}

_GENERAL_NOUN = {
    "frequency": "frequency",
    "skewness": "skewness",
    "mean": "mean",
    "variance": "variance",
    "linearity": "linearity",
    "n_peaks": "number of peaks",
}

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_EXACT_RES = {
    "frequency": re.compile(rf"^the frequency of ({_NUM})$"),
    "skewness": re.compile(rf"^the skewness of ({_NUM})$"),
    "mean": re.compile(rf"^the mean of ({_NUM})$"),
    "variance": re.compile(rf"^the variance of ({_NUM})$"),
    "linearity": re.compile(rf"^the linear trend of ({_NUM})$"),
    "n_peaks": re.compile(r"^(\d+) peaks?$"),
}
_GENERAL_RE = re.compile(
    r"^a (very low|low|medium|high|very high) "
    r"(frequency|skewness|mean|variance|linearity|number of peaks)$"
)
_NOUN_TO_NAME = {noun: name for name, noun in _GENERAL_NOUN.items()}

_PREFIX = "A time series with "


def render_text(
    f: FeatureVector,
    kind: str = "exact",
    bins: QuintileBins | None = None,
    rng: np.random.Generator | None = None,
) -> str:
    """Render a feature vector as a sentence.

    ``exact`` states every value in shortest round-trip decimal; ``general``
    maps each feature to one of five corpus-quintile levels. Clause order is
    shuffled when an rng is supplied.
    """
    if kind == "exact":
        clauses = [_EXACT_CLAUSES[name](f) for name in FEATURE_NAMES]
    elif kind == "general":
        if bins is None:
            raise ValueError("general descriptions need corpus quintile bins")
        clauses = [
            f"a {bins.level(name, getattr(f, name))} {_GENERAL_NOUN[name]}"
            for name in FEATURE_NAMES
        ]
    else:
        raise ValueError(f"unknown kind {kind!r}")
    if rng is not None:
        clauses = [clauses[i] for i in rng.permutation(len(clauses))]
    if len(clauses) == 1:
        body = clauses[0]
    else:
        body = ", ".join(clauses[:-1]) + " and " + clauses[-1]
    return _PREFIX + body + "."


@dataclass(frozen=True)
class ParsedText:
    """Parse result: exact values and/or level descriptors per feature.

    Features not mentioned in the text are simply absent from both maps.
    """

    exact: dict[str, float]
    general: dict[str, str]

    @property
    def kind(self) -> str:
        return "general" if self.general else "exact"

    def mentioned(self) -> set[str]:
        return set(self.exact) | set(self.general)

    def to_feature_vector(self) -> FeatureVector:
        if self.general or set(self.exact) != set(FEATURE_NAMES):
            raise ValueError("text does not state exact values for all six features")
        return FeatureVector.from_mapping(self.exact)


def parse_text(text: str) -> ParsedText:
    """Recover feature values or level descriptors from a rendered sentence."""
    if not text.startswith(_PREFIX) or not text.endswith("."):
        raise ParseError(f"text does not follow the series template: {text!r}")
    body = text[len(_PREFIX) : -1]
    parts = body.split(", ")
    if parts and " and " in parts[-1]:
        last = parts.pop()
        head, tail = last.split(" and ", 1)
        parts.extend([head, tail])
    exact: dict[str, float] = {}
    general: dict[str, str] = {}
    for clause in parts:
        matched = False
        for name, pattern in _EXACT_RES.items():
            m = pattern.match(clause)
            if m:
                if name in exact or name in general:
                    raise ParseError(f"feature stated twice: {clause!r}")
                exact[name] = float(m.group(1))
                matched = True
                break
        if matched:
            continue
        m = _GENERAL_RE.match(clause)
        if m:
            name = _NOUN_TO_NAME[m.group(2)]
            if name in exact or name in general:
                raise ParseError(f"feature stated twice: {clause!r}")
            general[name] = m.group(1)
            continue
        raise ParseError(f"unparseable clause: {clause!r}")
    if not exact and not general:
        raise ParseError("text mentions no features")
    return ParsedText(exact=exact, general=general)


def encode(
    f: FeatureVector | ParsedText | None,
    bins: QuintileBins,
    presence_bits: bool = False,
) -> ConditionVector:
    """Embed features (or NULL) as a condition vector.

    Exact values map affinely to [-1, 1] per feature using the corpus range
    (out-of-range values clamp with a warning); level descriptors map
    through their bin midpoints. Absent features encode as 0, with a
    companion presence bit when ``presence_bits`` is on (doubling the
    dimension from 6 to 12).
    """
    dim = 2 * len(FEATURE_NAMES) if presence_bits else len(FEATURE_NAMES)
    if f is None:
        return ConditionVector.null(dim)

    values = np.zeros(len(FEATURE_NAMES))
    present = np.zeros(len(FEATURE_NAMES))
    for j, name in enumerate(FEATURE_NAMES):
        if isinstance(f, FeatureVector):
            raw = float(getattr(f, name))
        elif name in f.exact:
            raw = float(f.exact[name])
        elif name in f.general:
            raw = bins.midpoint(name, f.general[name])
        else:
            continue
        lo, hi = bins.feature_range(name)
        if raw < lo or raw > hi:
            warnings.warn(
                f"{name} value {raw!r} outside corpus range [{lo!r}, {hi!r}]; clamped",
                EncodingRangeWarning,
                stacklevel=2,
            )
            raw = min(max(raw, lo), hi)
        values[j] = 0.0 if hi == lo else 2.0 * (raw - lo) / (hi - lo) - 1.0
        present[j] = 1.0
    out = np.concatenate([values, present]) if presence_bits else values
    return ConditionVector(out, is_null=False)
