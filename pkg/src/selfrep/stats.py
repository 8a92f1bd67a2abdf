"""Sample containers and the two-sample Kolmogorov-Smirnov test."""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

MIN_SAMPLE = 50


def ks_coefficient(alpha):
    """Asymptotic KS coefficient ``c(alpha) = sqrt(-ln(alpha/2) / 2)``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    return math.sqrt(-math.log(alpha / 2.0) / 2.0)


def ks_critical(alpha, m, n):
    return ks_coefficient(alpha) * math.sqrt((m + n) / (m * n))


@dataclass(frozen=True)
class SampleSet:
    label: str
    values: np.ndarray
    seeds: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", v)
        if v.size == 0:
            raise ValueError(f"sample set {self.label!r} is empty")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"sample set {self.label!r} has non-finite values")

    def __len__(self):
        return self.values.size

    def to_csv(self, fh):
        fh.write(f"{self.label}\n")
        for v in self.values.tolist():
            fh.write(f"{v!r}\n")


@dataclass(frozen=True)
class StatReport:
    """Outcome of one test; ``passed`` iff ``statistic < critical``."""
    name: str
    statistic: float
    critical: float
    alpha: float
    sizes: tuple
    params: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.statistic < self.critical)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        d["sizes"] = list(self.sizes)
        return _jsonable(d)

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: stat={self.statistic:.5g} crit={self.critical:.5g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def ks_statistic(a, b):
    """Sup distance between the empirical CDFs of ``a`` and ``b``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pts = np.concatenate((a, b))
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(A, B, alpha=0.01, name=None, params=None):
    if len(A) < MIN_SAMPLE or len(B) < MIN_SAMPLE:
        raise ValueError(f"KS test needs at least {MIN_SAMPLE} values per sample")
    d = ks_statistic(A.values, B.values)
    crit = ks_critical(alpha, len(A), len(B))
    return StatReport(name or f"ks[{A.label} vs {B.label}]", d, crit, alpha, (len(A), len(B)),
                      dict(params or {}))


def mean_report(values, expected, name, n_se=3.0, params=None):
    """``|mean - expected|`` against ``n_se`` standard errors."""
    v = np.asarray(values, dtype=float)
    se = v.std(ddof=1) / math.sqrt(v.size)
    return StatReport(name, abs(v.mean() - expected), n_se * se if se > 0 else 1e-12,
                      float("nan"), (v.size,), dict(params or {}),
                      {"mean": float(v.mean()), "expected": float(expected), "se": float(se)})


def proportion_report(hits, n, expected, name, n_se=3.0, params=None):
    p = hits / n
    se = math.sqrt(expected * (1 - expected) / n)
    return StatReport(name, abs(p - expected), n_se * se, float("nan"), (n,), dict(params or {}),
                      {"frequency": p, "expected": expected, "se": se})
