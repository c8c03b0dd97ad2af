"""Divergence and ANOVA statistics used by the preliminary analysis.

All divergences use log base 2 so that the Jensen-Shannon divergence of
two distributions lies in [0, 1]. p-values are computed through our own
continued-fraction evaluation of the regularized incomplete beta
function, so the package carries no statistics dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericError

_SIMPLEX_ATOL = 1e-9


def _as_distribution(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DomainError(f"distribution must be 1-D, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise NumericError("distribution has non-finite entries")
    if np.any(p < 0):
        raise DomainError("distribution has negative entries")
    if abs(float(p.sum()) - 1.0) > _SIMPLEX_ATOL:
        raise DomainError(f"distribution sums to {p.sum()!r}, not 1")
    return p


def kl_divergence(p, q) -> float:
    """Kullback-Leibler divergence D(p || q) in bits.

    Uses the convention 0*log(0/q) = 0. Returns math.inf when p puts
    mass where q has none (support violation is a value, not a crash).
    """
    p = _as_distribution(p)
    q = _as_distribution(q)
    if p.shape != q.shape:
        raise DomainError(f"length mismatch: {p.shape[0]} vs {q.shape[0]}")
    support = p > 0.0
    if np.any(q[support] == 0.0):
        return math.inf
    ps = p[support]
    return float(np.sum(ps * np.log2(ps / q[support])))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits: always finite, in [0, 1].

    Defined through the midpoint distribution m = (p + q) / 2, which has
    the union support, so both KL terms are finite.
    """
    p = _as_distribution(p)
    q = _as_distribution(q)
    if p.shape != q.shape:
        raise DomainError(f"length mismatch: {p.shape[0]} vs {q.shape[0]}")
    m = 0.5 * (p + q)
    # Summation over the union support in index order keeps jsd(p, q)
    # bit-identical to jsd(q, p).
    total = 0.0
    for i in range(p.shape[0]):
        tp = 0.5 * p[i] * math.log2(p[i] / m[i]) if p[i] > 0.0 else 0.0
        tq = 0.5 * q[i] * math.log2(q[i] / m[i]) if q[i] > 0.0 else 0.0
        # add smaller term first so jsd(p, q) is bit-identical to jsd(q, p)
        total += min(tp, tq)
        total += max(tp, tq)
    return total


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(x: float, a: float, b: float) -> float:
    # Lentz's algorithm for the continued fraction of I_x(a, b).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b), evaluated by continued fraction (abs error ~1e-14)."""
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x={x} outside [0, 1]")
    if a <= 0.0 or b <= 0.0:
        raise DomainError("shape parameters must be positive")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - log_beta(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - math.exp(b * math.log1p(-x) + a * math.log(x) - log_beta(b, a)) \
        * _betacf(1.0 - x, b, a) / b


def f_sf(f: float, df1: int, df2: int) -> float:
    """Survival function P(F > f) of the F distribution."""
    if f <= 0.0:
        return 1.0
    if math.isinf(f):
        return 0.0
    x = df2 / (df2 + df1 * f)
    return regularized_incomplete_beta(x, df2 / 2.0, df1 / 2.0)


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    df_between: int
    df_within: int
    p_value: float


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """Classical one-way ANOVA across >= 2 groups of >= 2 samples each.

    Degenerate convention: if every sample is identical (no variance at
    all), returns F = 0, p = 1 rather than 0/0.
    """
    if len(groups) < 2:
        raise DomainError("need at least 2 groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    for g in arrays:
        if g.ndim != 1 or g.shape[0] < 2:
            raise DomainError("each group needs at least 2 samples")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite sample value")
    n_total = sum(g.shape[0] for g in arrays)
    grand = sum(float(g.sum()) for g in arrays) / n_total
    ss_between = sum(g.shape[0] * (float(g.mean()) - grand) ** 2 for g in arrays)
    ss_within = sum(float(((g - g.mean()) ** 2).sum()) for g in arrays)
    df_between = len(arrays) - 1
    df_within = n_total - len(arrays)
    if ss_within <= 0.0:
        if ss_between <= 0.0:
            return AnovaResult(0.0, df_between, df_within, 1.0)
        return AnovaResult(math.inf, df_between, df_within, 0.0)
    f = (ss_between / df_between) / (ss_within / df_within)
    if ss_between <= 0.0:
        f = 0.0
    return AnovaResult(f, df_between, df_within, f_sf(f, df_between, df_within))


# Feature accessors for the significance report; order mirrors the
# findings table (personal traits first, then social behavior).
SIGNIFICANCE_FEATURES = (
    ("age", lambda u: u.features_p[0]),
    ("social_anxiety", lambda u: u.features_p[9]),
    ("neuroticism", lambda u: u.features_p[8]),
    ("searching", lambda u: u.features_s[0]),
    ("leaving_comment", lambda u: u.features_i[1]),
    ("bidirectional_friendship", lambda u: u.features_c[2]),
)


@dataclass(frozen=True)
class FeatureFinding:
    feature: str
    f_stat: float
    p_value: float
    direction: str  # sign of mean(positive) - mean(negative): "up"/"down"/"flat"


def feature_significance_report(users, features=SIGNIFICANCE_FEATURES):
    """ANOVA across the three score groups for each named feature.

    Direction is taken from the binary positive-vs-negative mean gap,
    since that is the contrast the detector ultimately uses.
    """
    from .graph import Label

    by_label = {}
    for u in users:
        by_label.setdefault(u.label, []).append(u)
    if len(by_label) < 2:
        raise DomainError("need at least 2 label groups for the report")
    group_order = [lab for lab in Label if lab in by_label]

    rows = []
    for name, getter in features:
        groups = [[float(getter(u)) for u in by_label[lab]] for lab in group_order]
        if all(len(set(g)) == 1 for g in groups) and len({g[0] for g in groups}) == 1:
            result = AnovaResult(0.0, len(groups) - 1,
                                 sum(len(g) for g in groups) - len(groups), 1.0)
        else:
            result = anova_oneway(groups)
        pos = [float(getter(u)) for u in users if u.binary_label.value == "positive"]
        neg = [float(getter(u)) for u in users if u.binary_label.value == "negative"]
        if not pos or not neg:
            direction = "flat"
        else:
            gap = float(np.mean(pos)) - float(np.mean(neg))
            direction = "up" if gap > 0 else ("down" if gap < 0 else "flat")
        rows.append(FeatureFinding(name, result.f_stat, result.p_value, direction))
    return rows


def render_significance_markdown(rows, alpha: float = 0.05) -> str:
    lines = [
        "| Feature | F | p-value | Direction (positive vs negative) | Significant |",
        "|---|---|---|---|---|",
    ]
    for r in rows:
        flag = "yes" if r.p_value < alpha else "no"
        lines.append(
            f"| {r.feature} | {r.f_stat:.4f} | {r.p_value:.4g} | {r.direction} | {flag} |"
        )
    return "\n".join(lines) + "\n"
