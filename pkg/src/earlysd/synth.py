"""Synthetic cohort generator calibrated to the published dataset tables.

The real cohort is private, so experiments run on generated users whose
group sizes, score ranges/means, per-channel content statistics, and
pairwise topic-distribution divergences match the published summary
tables. A tunable planted signal (strength s in [0, 1]) controls how
strongly features and topic choices correlate with the addiction label:
s = 0 produces a null cohort where no detector should beat chance.

Distribution families are our choice (the tables give only min/max/
mean): discretized truncated log-normals for heavy-tailed counts,
truncated normals for scores, with the free location parameter fit to
the target mean by bisection over the exact discrete expectation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigError
from .graph import Label, TopicNode, UserRecord, UtEdge, save_dataset
from .stats import jsd

GROUPS = ("non_sfva", "sfva", "potential_sfva")
PAIRS = (("non_sfva", "sfva"), ("non_sfva", "potential_sfva"),
         ("sfva", "potential_sfva"))


@dataclass(frozen=True)
class RangeStat:
    lo: float
    hi: float
    mean: float

    def validate(self, what: str):
        if not self.lo <= self.mean <= self.hi:
            raise ConfigError(f"{what}: mean {self.mean} outside "
                              f"[{self.lo}, {self.hi}]")


# Published cohort summary: group sizes with per-group score ranges and
# means, and per-group content-channel ranges and means.
DEFAULT_GROUP_SIZES = {"non_sfva": 259, "sfva": 134, "potential_sfva": 75}
DEFAULT_SCORE_STATS = {
    "non_sfva": RangeStat(26, 57, 44.73),
    "sfva": RangeStat(64, 95, 70.8),
    "potential_sfva": RangeStat(58, 63, 60.11),
}
DEFAULT_CONTENT_STATS = {
    "posts": {
        "non_sfva": RangeStat(2, 1214, 49.87),
        "sfva": RangeStat(2, 416, 27.41),
        "potential_sfva": RangeStat(2, 507, 47.35),
    },
    "stories": {
        "non_sfva": RangeStat(2, 3876, 474.08),
        "sfva": RangeStat(2, 4603, 640.53),
        "potential_sfva": RangeStat(15, 2812, 621.78),
    },
    "comments": {
        "non_sfva": RangeStat(1, 6727, 541.75),
        "sfva": RangeStat(1, 27137, 697.39),
        "potential_sfva": RangeStat(8, 2277, 481.19),
    },
}
DEFAULT_JSD_TARGETS = {
    ("non_sfva", "sfva"): 0.48,
    ("non_sfva", "potential_sfva"): 0.41,
    ("sfva", "potential_sfva"): 0.39,
}

# Additive shifts applied to positive users at full signal strength,
# matching the directions of the significant-features findings.
DEFAULT_SIGNAL_EFFECTS = {
    "age": -4.0,
    "sias": 12.0,
    "big5_n": 0.9,
    "searches": 40.0,
    "social_searches": 25.0,
    "comment_inter": 80.0,
    "bidir_ratio": 0.15,
}


@dataclass
class CohortConfig:
    group_sizes: dict = field(default_factory=lambda: dict(DEFAULT_GROUP_SIZES))
    score_stats: dict = field(default_factory=lambda: dict(DEFAULT_SCORE_STATS))
    content_stats: dict = field(
        default_factory=lambda: {c: dict(g) for c, g in DEFAULT_CONTENT_STATS.items()})
    topic_count_original: int = 317
    jsd_targets: dict = field(default_factory=lambda: dict(DEFAULT_JSD_TARGETS))
    topic_rate: float = 14.15          # mean interest topics per user
    topic_count_range: tuple = (1, 60)
    signal_strength: float = 1.0
    signal_effects: dict = field(
        default_factory=lambda: dict(DEFAULT_SIGNAL_EFFECTS))
    seed: int = 0

    def validate(self):
        for g in GROUPS:
            if g not in self.group_sizes or int(self.group_sizes[g]) <= 0:
                raise ConfigError(f"missing/invalid group size for {g}")
            self.score_stats[g].validate(f"score[{g}]")
        for channel, per_group in self.content_stats.items():
            for g in GROUPS:
                per_group[g].validate(f"{channel}[{g}]")
        for pair, t in self.jsd_targets.items():
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"jsd target {pair} = {t} outside [0, 1]")
        if self.topic_count_original <= 0:
            raise ConfigError("topic_count_original must be positive")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigError("signal_strength outside [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        return self


def load_cohort_config(path) -> CohortConfig:
    """Read a synth.toml file; absent keys keep their defaults."""
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    cfg = CohortConfig()
    if "group_sizes" in raw:
        cfg.group_sizes.update({k: int(v) for k, v in raw["group_sizes"].items()})
    for g, triple in raw.get("score_stats", {}).items():
        cfg.score_stats[g] = RangeStat(*triple)
    for channel, groups in raw.get("content_stats", {}).items():
        for g, triple in groups.items():
            cfg.content_stats[channel][g] = RangeStat(*triple)
    for key in ("topic_count_original", "topic_rate", "signal_strength", "seed"):
        if key in raw:
            setattr(cfg, key, raw[key])
    if "jsd_targets" in raw:
        t = raw["jsd_targets"]
        cfg.jsd_targets = {
            ("non_sfva", "sfva"): t.get("non_sfva", 0.48),
            ("non_sfva", "potential_sfva"): t.get("non_potential", 0.41),
            ("sfva", "potential_sfva"): t.get("sfva_potential", 0.39),
        }
        if "non_sfva" not in t and "non_sfva_sfva" in t:
            cfg.jsd_targets = {
                ("non_sfva", "sfva"): t["non_sfva_sfva"],
                ("non_sfva", "potential_sfva"): t["non_sfva_potential"],
                ("sfva", "potential_sfva"): t["sfva_potential"],
            }
    if "signal_effects" in raw:
        cfg.signal_effects.update(raw["signal_effects"])
    return cfg.validate()


@dataclass
class GroundTruth:
    labels: dict            # user id -> Label
    distributions: dict     # group name -> probability vector over topics
    topic_ids: list


# ---------------------------------------------------------------------------
# Discrete bounded distributions with mean fit by bisection

def _discrete_truncnorm_pmf(lo: int, hi: int, mu: float, sigma: float):
    k = np.arange(lo, hi + 1, dtype=np.float64)
    w = np.exp(-0.5 * ((k - mu) / sigma) ** 2)
    return k, w / w.sum()


def _discrete_lognorm_pmf(lo: int, hi: int, mu_log: float, sigma_log: float):
    k = np.arange(max(lo, 1), hi + 1, dtype=np.float64)
    w = np.exp(-0.5 * ((np.log(k) - mu_log) / sigma_log) ** 2) / k
    return k, w / w.sum()


def _fit_mean(pmf_fn, target: float, lo_param: float, hi_param: float, tol=1e-6):
    """Bisection over the location parameter so E[X] hits the target."""
    def mean_at(p):
        k, w = pmf_fn(p)
        return float(k @ w)

    a, b = lo_param, hi_param
    fa, fb = mean_at(a) - target, mean_at(b) - target
    if fa > 0 or fb < 0:
        raise ConfigError(f"target mean {target} unreachable in family")
    for _ in range(100):
        mid = 0.5 * (a + b)
        fm = mean_at(mid) - target
        if abs(fm) < tol:
            return mid
        if fm < 0:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def fit_score_pmf(stat: RangeStat, sigma=None):
    lo, hi = int(stat.lo), int(stat.hi)
    sigma = sigma or max((hi - lo) / 4.0, 0.5)
    mu = _fit_mean(lambda m: _discrete_truncnorm_pmf(lo, hi, m, sigma),
                   stat.mean, lo - 6 * sigma, hi + 6 * sigma)
    return _discrete_truncnorm_pmf(lo, hi, mu, sigma)


def fit_count_pmf(stat: RangeStat, sigma_log=1.0):
    lo, hi = int(stat.lo), int(stat.hi)
    mu = _fit_mean(lambda m: _discrete_lognorm_pmf(lo, hi, m, sigma_log),
                   stat.mean, math.log(max(lo, 1)) - 8, math.log(hi) + 8)
    return _discrete_lognorm_pmf(lo, hi, mu, sigma_log)


def _quantile(values, pmf, u):
    cdf = np.cumsum(pmf)
    idx = np.searchsorted(cdf, np.asarray(u), side="right")
    return values[np.clip(idx, 0, len(values) - 1)]


def _stratified_levels(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


# ---------------------------------------------------------------------------
# Topic-distribution calibration

def _pair_jsd_closed(li: float, lj: float) -> float:
    # JSD of two mixtures sharing a base distribution, with the
    # remaining mass li / lj on mutually disjoint supports.
    lm = 0.5 * (li + lj)
    if lm >= 1.0:
        return 1.0

    def term(x):
        if 1.0 - x <= 0.0:
            return 0.0
        return (1.0 - x) * math.log2((1.0 - x) / (1.0 - lm))

    return 0.5 * (term(li) + term(lj)) + lm


def _solve_lambdas(targets: dict, tol=5e-3, sweeps=200):
    lam = {g: 0.3 for g in GROUPS}
    pair_of = {g: [p for p in PAIRS if g in p] for g in GROUPS}

    def residual_for(g, value):
        total = 0.0
        for a, b in pair_of[g]:
            other = lam[b] if a == g else lam[a]
            total += _pair_jsd_closed(value, other) - targets[(a, b)]
        return total

    for _ in range(sweeps):
        moved = 0.0
        for g in GROUPS:
            lo, hi = 0.0, 1.0
            flo, fhi = residual_for(g, lo), residual_for(g, hi)
            if flo >= 0:
                new = 0.0
            elif fhi <= 0:
                new = 1.0
            else:
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if residual_for(g, mid) < 0:
                        lo = mid
                    else:
                        hi = mid
                new = 0.5 * (lo + hi)
            moved = max(moved, abs(new - lam[g]))
            lam[g] = new
        if moved < 1e-12:
            break
    worst = max(abs(_pair_jsd_closed(lam[a], lam[b]) - targets[(a, b)])
                for a, b in PAIRS)
    return lam, worst


def _zipf_weights(n: int, exponent=0.8) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** exponent
    return w / w.sum()


def calibrate_topic_divergence(jsd_targets: dict, topic_count: int, seed: int,
                               tol: float = 0.03):
    """Three topic distributions whose pairwise JSD match the targets.

    Construction: a shared Zipf base plus per-group mass on mutually
    disjoint topic blocks; pairwise JSD then has a closed form in the
    three group-specific mass fractions, which a coordinate bisection
    solves against the targets. Deterministic for a fixed seed (the
    seed only shuffles which topics land in which block).
    """
    for pair in PAIRS:
        if pair not in jsd_targets:
            raise ConfigError(f"missing jsd target for {pair}")
        if not 0.0 <= jsd_targets[pair] <= 1.0:
            raise ConfigError(f"jsd target {jsd_targets[pair]} outside [0, 1]")

    lam, worst = _solve_lambdas(jsd_targets)
    if worst > tol:
        raise CalibrationError(
            f"pairwise targets are jointly infeasible (residual {worst:.4f})",
            best_residual=worst)

    block = max(1, topic_count // 6)
    if topic_count < 3 * block:
        raise CalibrationError(f"{topic_count} topics cannot host 3 blocks")
    shared = topic_count - 3 * block
    if shared == 0 and any(lam[g] < 1.0 - 1e-12 for g in GROUPS):
        raise CalibrationError(
            f"{topic_count} topics leave no shared support for these targets")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(topic_count)
    slices = {g: perm[i * block:(i + 1) * block] for i, g in enumerate(GROUPS)}
    shared_idx = perm[3 * block:]
    base = _zipf_weights(shared) if shared else np.zeros(0)

    dists = {}
    for g in GROUPS:
        d = np.zeros(topic_count)
        if shared:
            d[shared_idx] = (1.0 - lam[g]) * base
        d[slices[g]] = lam[g] * _zipf_weights(block)
        total = d.sum()
        if total <= 0:
            raise CalibrationError(f"degenerate distribution for {g}")
        dists[g] = d / total

    realized = {(a, b): jsd(dists[a], dists[b]) for a, b in PAIRS}
    worst_real = max(abs(realized[p] - jsd_targets[p]) for p in PAIRS)
    if worst_real > tol:
        raise CalibrationError(
            f"realized divergences off target (residual {worst_real:.4f})",
            best_residual=worst_real)
    return dists


# ---------------------------------------------------------------------------
# Topic vocabulary

_SYLLABLES = ("va", "ren", "ko", "li", "mar", "tu", "shi", "pel", "no",
              "da", "qui", "fen", "zo", "ras", "mi", "ul", "ber", "ta",
              "gri", "son", "wex", "ha", "lu", "dor")

# Interests deliberately left out of the original vocabulary; content
# snippets can mention them so topic-set expansion has work to do.
EXTRA_TOPIC_POOL = (
    "k-pop", "urban sketching", "sourdough baking", "speedcubing",
    "vintage synths", "trail running", "lo-fi beats", "street food",
    "thrift flipping", "astrophotography", "bouldering", "latte art",
    "retro gaming", "houseplant care", "film photography", "bullet journaling",
    "cold brew", "drone racing", "miniature painting", "city pop",
)


def topic_name(index: int) -> str:
    parts = []
    i = index
    for _ in range(3):
        parts.append(_SYLLABLES[i % len(_SYLLABLES)])
        i //= len(_SYLLABLES)
    return "".join(parts) + f"-{index:03d}"


def make_topics(count: int):
    return [TopicNode(id=f"t{i:04d}", name=topic_name(i)) for i in range(count)]


_SNIPPET_TEMPLATES = (
    "been watching a lot of {a} and {b} clips lately",
    "cannot stop scrolling {a} reels before bed",
    "my feed is all {a} these days",
    "spent the whole evening on {a} videos again",
    "found a great {a} account, also into {b} now",
)


# ---------------------------------------------------------------------------
# Cohort generation

def plant_signal(users, strength: float, effects: dict | None = None):
    """Shift the known-significant features of positive users.

    Returns new records; strength 0 is the identity. Shifts respect the
    record invariants (ratio clipped to [0, 1], counts floored at 0).
    """
    if not 0.0 <= strength <= 1.0:
        raise ConfigError(f"signal strength {strength} outside [0, 1]")
    effects = dict(DEFAULT_SIGNAL_EFFECTS if effects is None else effects)
    out = []
    for u in users:
        if strength == 0.0 or u.binary_label.value != "positive":
            out.append(u)
            continue
        p = u.features_p.copy()
        c = u.features_c.copy()
        s = u.features_s.copy()
        i = u.features_i.copy()
        p[0] = max(16.0, round(p[0] + strength * effects["age"]))
        p[8] = min(5.0, p[8] + strength * effects["big5_n"])
        p[9] = min(80.0, p[9] + strength * effects["sias"])
        c[2] = min(1.0, c[2] + strength * effects["bidir_ratio"])
        s[0] = max(0.0, round(s[0] + strength * effects["searches"]))
        s[1] = min(s[0], max(0.0, round(s[1] + strength * effects["social_searches"])))
        i[1] = max(0.0, round(i[1] + strength * effects["comment_inter"]))
        out.append(replace(u, features_p=p, features_c=c, features_s=s, features_i=i))
    return out


def _pooled_stat(per_group: dict, sizes: dict) -> RangeStat:
    lo = max(per_group[g].lo for g in GROUPS)
    hi = min(per_group[g].hi for g in GROUPS)
    total = sum(sizes[g] for g in GROUPS)
    mean = sum(sizes[g] * per_group[g].mean for g in GROUPS) / total
    if not lo <= mean <= hi:
        # Degenerate table combination; fall back to the widest group.
        mean = min(max(mean, lo), hi)
    return RangeStat(lo, hi, mean)


def generate_cohort(config: CohortConfig):
    """Build (users, topics, ut_edges, ground_truth) for one seed.

    Scores are stratified quantile draws, so per-group bounds hold
    exactly and group means land on target. Content counts blend a
    pooled and a per-group distribution by signal strength, so at
    strength 0 the channels carry no label information while every
    per-group bound from the tables still holds.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    sizes = {g: int(config.group_sizes[g]) for g in GROUPS}
    n_total = sum(sizes.values())
    s = float(config.signal_strength)

    dists = calibrate_topic_divergence(config.jsd_targets,
                                       config.topic_count_original, config.seed)
    pooled_topic = sum(sizes[g] * dists[g] for g in GROUPS) / n_total
    topics = make_topics(config.topic_count_original)

    # Interleave group assignment deterministically, then shuffle ids.
    group_of = np.repeat([g for g in GROUPS], [sizes[g] for g in GROUPS])
    rng.shuffle(group_of)

    # Scores per group: quantile levels + seeded permutation.
    score_pool = {}
    for g in GROUPS:
        vals, pmf = fit_score_pmf(config.score_stats[g])
        draw = _quantile(vals, pmf, _stratified_levels(sizes[g])).astype(int)
        rng.shuffle(draw)
        score_pool[g] = list(draw)

    content_pmf = {}
    for channel, per_group in config.content_stats.items():
        pooled = _pooled_stat(per_group, sizes)
        content_pmf[channel] = {
            "pooled": fit_count_pmf(pooled),
            **{g: fit_count_pmf(per_group[g]) for g in GROUPS},
        }

    def blended_count(channel, g):
        u = rng.uniform()
        vg, pg = content_pmf[channel][g]
        vp, pp = content_pmf[channel]["pooled"]
        xg = float(_quantile(vg, pg, u))
        xp = float(_quantile(vp, pp, u))
        x = round((1.0 - s) * xp + s * xg)
        stat = config.content_stats[channel][g]
        return int(min(max(x, stat.lo), stat.hi))

    lo_t, hi_t = config.topic_count_range
    users, ut_edges = [], []
    labels = {}
    for n, g in enumerate(group_of):
        uid = f"u{n:04d}"
        score = score_pool[g].pop()

        age = float(np.clip(round(rng.normal(24, 6)), 18, 65))
        gender = float(rng.uniform() < 0.763)
        edu = float(rng.choice(3, p=[0.41, 0.45, 0.14]))
        platforms = float(rng.integers(1, 6))
        big5 = np.clip(rng.normal(3.2, 0.6, size=5), 1.0, 5.0)
        sias = float(np.clip(round(rng.normal(28, 12)), 0, 80))
        features_p = np.array([age, gender, edu, platforms, *big5, sias])

        followers = float(np.clip(round(rng.lognormal(5.6, 0.9)), 0, 50000))
        following = float(np.clip(round(rng.lognormal(5.8, 0.8)), 0, 50000))
        bidir = float(rng.beta(5, 3))
        features_c = np.array([followers, following, bidir])

        posts = blended_count("posts", g)
        stories = blended_count("stories", g)
        comments = blended_count("comments", g)
        mean_len = float(np.clip(round(rng.normal(40, 15), 1), 3.0, 300.0))
        features_t = np.array([posts, stories, comments, mean_len], dtype=float)

        searches = float(np.clip(round(rng.lognormal(4.2, 0.8)), 0, 5000))
        social_searches = float(round(searches * rng.beta(2, 2)))
        friend_ratio = float(rng.beta(2, 2))
        features_s = np.array([searches, social_searches, friend_ratio])

        likes = float(np.clip(round(rng.lognormal(6.5, 1.0)), 0, 100000))
        comment_inter = float(np.clip(round(rng.lognormal(4.8, 1.0)), 0, 20000))
        story_inter = float(np.clip(round(rng.lognormal(5.2, 1.0)), 0, 30000))
        features_i = np.array([likes, comment_inter, story_inter])

        p_topic = (1.0 - s) * pooled_topic + s * dists[g]
        support = int(np.count_nonzero(p_topic))
        count = int(np.clip(rng.poisson(config.topic_rate), lo_t,
                            min(hi_t, support)))
        chosen = rng.choice(len(topics), size=count, replace=False, p=p_topic)
        topic_ids = {topics[k].id for k in chosen}

        content = _make_content(rng, [topics[k].name for k in sorted(chosen)])
        user = UserRecord(
            id=uid, score=int(score),
            features_p=features_p, features_c=features_c, features_t=features_t,
            features_s=features_s, features_i=features_i,
            content=content, topics=topic_ids,
        )
        users.append(user)
        labels[uid] = user.label
        for t in sorted(topic_ids):
            ut_edges.append(UtEdge(uid, t))

    users = plant_signal(users, s, config.signal_effects)
    truth = GroundTruth(labels=labels, distributions=dists,
                        topic_ids=[t.id for t in topics])
    return users, topics, ut_edges, truth


def _make_content(rng, topic_names):
    n = int(rng.integers(3, 7))
    out = []
    for _ in range(n):
        tmpl = _SNIPPET_TEMPLATES[int(rng.integers(len(_SNIPPET_TEMPLATES)))]
        picks = rng.choice(len(topic_names), size=min(2, len(topic_names)),
                           replace=False)
        a = topic_names[picks[0]]
        b = topic_names[picks[-1]]
        out.append(tmpl.format(a=a, b=b))
    if rng.uniform() < 0.08:
        extra = EXTRA_TOPIC_POOL[int(rng.integers(len(EXTRA_TOPIC_POOL)))]
        out.append(f"getting into {extra} content recently, {extra} is all over my feed")
    return out


def save_cohort(users, topics, ut_edges, truth: GroundTruth, path, d_t=None):
    """Dataset directory plus ground-truth sidecars."""
    path = Path(path)
    save_dataset(users, topics, ut_edges, path, d_t=d_t)
    with open(path / "ground_truth.csv", "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "group"])
        for uid in sorted(truth.labels):
            w.writerow([uid, truth.labels[uid].value])
    with open(path / "latent_distributions.csv", "w", encoding="utf-8",
              newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["topic_id"] + [f"p_{g}" for g in GROUPS])
        for i, tid in enumerate(truth.topic_ids):
            w.writerow([tid] + [repr(float(truth.distributions[g][i]))
                                for g in GROUPS])
