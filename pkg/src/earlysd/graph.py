"""Heterogeneous social graph: node/edge schemas, labels, splits, file I/O.

The graph couples two node types (users, interest topics) through
weighted user-user edges and unweighted user-topic interest edges.
User-user edges are stored undirected in canonical (min, max) id order;
directionality of raw follows is captured by the bidirectional
friendship ratio feature instead.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DomainError,
    GraphLookupError,
    ConfigError,
    ParseError,
    ValidationError,
)


class Label(Enum):
    NON_SFVA = "non_sfva"
    POTENTIAL_SFVA = "potential_sfva"
    SFVA = "sfva"


class BinaryLabel(Enum):
    NEGATIVE = "negative"
    POSITIVE = "positive"


class EdgeOrigin(Enum):
    GIVEN = "given"
    AUGMENTED = "augmented"


class TopicOrigin(Enum):
    ORIGINAL = "original"
    EXPANDED = "expanded"


_LABEL_RANK = {Label.NON_SFVA: 0, Label.POTENTIAL_SFVA: 1, Label.SFVA: 2}

# Severity boundaries on the addiction scale score. The potential band
# is the closed interval [58, 63]; 64 and above is the addicted group.
SCORE_MIN, SCORE_MAX = 0, 120
POTENTIAL_LO, SFVA_LO = 58, 64


def label_from_score(score: int) -> Label:
    score = int(score)
    if not SCORE_MIN <= score <= SCORE_MAX:
        raise DomainError(f"score {score} outside [{SCORE_MIN}, {SCORE_MAX}]")
    if score < POTENTIAL_LO:
        return Label.NON_SFVA
    if score < SFVA_LO:
        return Label.POTENTIAL_SFVA
    return Label.SFVA


def label_rank(label: Label) -> int:
    return _LABEL_RANK[label]


# Fixed modality layout; kept explicit so the total feature dimension F
# is reconstructible from the manifest.
P_FIELDS = ("age", "gender", "edu", "platforms",
            "big5_o", "big5_c", "big5_e", "big5_a", "big5_n", "sias")
C_FIELDS = ("followers", "following", "bidir_ratio")
T_FIELDS = ("posts", "stories", "comments", "mean_len")
S_FIELDS = ("searches", "social_searches", "friend_ratio")
I_FIELDS = ("likes", "comment_inter", "story_inter")
MODALITY_FIELDS = {"P": P_FIELDS, "C": C_FIELDS, "T": T_FIELDS,
                   "S": S_FIELDS, "I": I_FIELDS}
USER_CSV_HEADER = ("id", "score") + P_FIELDS + C_FIELDS + T_FIELDS + S_FIELDS + I_FIELDS


@dataclass
class UserRecord:
    id: str
    score: int
    features_p: np.ndarray
    features_c: np.ndarray
    features_t: np.ndarray
    features_s: np.ndarray
    features_i: np.ndarray
    content: list[str] = field(default_factory=list)
    topics: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.score = int(self.score)
        label_from_score(self.score)  # range check
        for attr, fields in (("features_p", P_FIELDS), ("features_c", C_FIELDS),
                             ("features_t", T_FIELDS), ("features_s", S_FIELDS),
                             ("features_i", I_FIELDS)):
            vec = np.asarray(getattr(self, attr), dtype=np.float64)
            if vec.shape != (len(fields),):
                raise ValidationError(
                    f"user {self.id}: {attr} has shape {vec.shape}, "
                    f"expected ({len(fields)},)")
            setattr(self, attr, vec)
        ratio = float(self.features_c[2])
        if not 0.0 <= ratio <= 1.0:
            raise ValidationError(f"user {self.id}: bidir_ratio {ratio} outside [0, 1]")
        counts = np.concatenate([self.features_c[:2], self.features_t[:3],
                                 self.features_s[:2], self.features_i])
        if np.any(counts < 0):
            raise ValidationError(f"user {self.id}: negative count feature")

    @property
    def label(self) -> Label:
        return label_from_score(self.score)

    @property
    def binary_label(self) -> BinaryLabel:
        if self.label in (Label.SFVA, Label.POTENTIAL_SFVA):
            return BinaryLabel.POSITIVE
        return BinaryLabel.NEGATIVE

    def feature_vector(self, mask: str = "PCTSI") -> np.ndarray:
        blocks = {"P": self.features_p, "C": self.features_c, "T": self.features_t,
                  "S": self.features_s, "I": self.features_i}
        return np.concatenate([blocks[m] for m in mask])

    def __eq__(self, other):
        if not isinstance(other, UserRecord):
            return NotImplemented
        return (self.id == other.id and self.score == other.score
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("features_p", "features_c", "features_t",
                                  "features_s", "features_i"))
                and self.content == other.content and self.topics == other.topics)


@dataclass
class TopicNode:
    id: str
    name: str
    origin: TopicOrigin = TopicOrigin.ORIGINAL
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if not self.name.strip():
            raise ValidationError(f"topic {self.id}: empty name")
        if self.embedding is not None:
            self.embedding = np.asarray(self.embedding, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, TopicNode):
            return NotImplemented
        if (self.embedding is None) != (other.embedding is None):
            return False
        return (self.id == other.id and self.name == other.name
                and self.origin is other.origin
                and (self.embedding is None
                     or np.array_equal(self.embedding, other.embedding)))


@dataclass(frozen=True)
class UuEdge:
    u: str
    v: str
    weight: float = 1.0
    origin: EdgeOrigin = EdgeOrigin.GIVEN
    # Similarity components cached on augmented edges so the blend
    # weight can be re-derived differentiably during training.
    sim_f: float | None = None
    sim_t: float | None = None


@dataclass(frozen=True)
class UtEdge:
    user: str
    topic: str
    origin: EdgeOrigin = EdgeOrigin.GIVEN


class Relation(Enum):
    USER_USER = "user_user"
    USER_TOPIC = "user_topic"


class HeteroSocialGraph:
    """Immutable after construction; build through build_graph()."""

    def __init__(self, users, topics, uu_edges, ut_edges):
        self.users: list[UserRecord] = list(users)
        self.topics: list[TopicNode] = list(topics)
        self.uu_edges: list[UuEdge] = list(uu_edges)
        self.ut_edges: list[UtEdge] = list(ut_edges)
        self.user_index = {u.id: i for i, u in enumerate(self.users)}
        self.topic_index = {t.id: i for i, t in enumerate(self.topics)}
        self._uu_adj: dict[str, list[tuple[str, float]]] = {}
        self._ut_adj: dict[str, list[tuple[str, float]]] = {}
        self._tu_adj: dict[str, list[tuple[str, float]]] = {}
        for e in self.uu_edges:
            self._uu_adj.setdefault(e.u, []).append((e.v, e.weight))
            self._uu_adj.setdefault(e.v, []).append((e.u, e.weight))
        for e in self.ut_edges:
            self._ut_adj.setdefault(e.user, []).append((e.topic, 1.0))
            self._tu_adj.setdefault(e.topic, []).append((e.user, 1.0))
        for adj in (self._uu_adj, self._ut_adj, self._tu_adj):
            for k in adj:
                adj[k].sort()

    @property
    def N(self) -> int:
        return len(self.users)

    @property
    def F(self) -> int:
        return sum(len(f) for f in MODALITY_FIELDS.values())

    def adjacency(self, u: str, v: str) -> int:
        self._require_user(u)
        self._require_user(v)
        a, b = (u, v) if u < v else (v, u)
        return 1 if any(e.u == a and e.v == b for e in self.uu_edges) else 0

    def _require_user(self, node: str):
        if node not in self.user_index:
            raise GraphLookupError(f"unknown user {node!r}")

    def neighbors(self, node: str, relation: Relation):
        """1-hop neighbors of `node` under `relation`, ascending id order."""
        if relation is Relation.USER_USER:
            self._require_user(node)
            return list(self._uu_adj.get(node, []))
        if node in self.user_index:
            return list(self._ut_adj.get(node, []))
        if node in self.topic_index:
            return list(self._tu_adj.get(node, []))
        raise GraphLookupError(f"unknown node {node!r}")

    def with_edges(self, uu_edges=None, ut_edges=None, topics=None):
        """Derived graph sharing the user records (copy-on-extend)."""
        return HeteroSocialGraph(
            self.users,
            self.topics if topics is None else topics,
            self.uu_edges if uu_edges is None else uu_edges,
            self.ut_edges if ut_edges is None else ut_edges,
        )


def build_graph(users, topics, uu_edges=(), ut_edges=()) -> HeteroSocialGraph:
    """Validate, canonicalize and deduplicate into a HeteroSocialGraph.

    Given u-u edges always get weight 1.0; augmented edges keep their
    similarity score. Raises ValidationError listing every offender.
    """
    problems = []
    user_ids = set()
    for u in users:
        if u.id in user_ids:
            problems.append(f"duplicate user id {u.id!r}")
        user_ids.add(u.id)
    topic_ids = set()
    for t in topics:
        if t.id in topic_ids:
            problems.append(f"duplicate topic id {t.id!r}")
        if t.id in user_ids:
            problems.append(f"topic id {t.id!r} collides with a user id")
        topic_ids.add(t.id)

    canonical: dict[tuple[str, str], UuEdge] = {}
    for raw in uu_edges:
        e = raw if isinstance(raw, UuEdge) else UuEdge(*raw)
        if e.u == e.v:
            problems.append(f"self-loop on {e.u!r}")
            continue
        for end in (e.u, e.v):
            if end not in user_ids:
                problems.append(f"uu edge references unknown user {end!r}")
        if not 0.0 <= e.weight <= 1.0:
            problems.append(f"uu edge ({e.u},{e.v}) weight {e.weight} outside [0, 1]")
        a, b = (e.u, e.v) if e.u < e.v else (e.v, e.u)
        weight = 1.0 if e.origin is EdgeOrigin.GIVEN else e.weight
        e = replace(e, u=a, v=b, weight=weight)
        prev = canonical.get((a, b))
        if prev is None or (prev.origin is EdgeOrigin.AUGMENTED
                            and e.origin is EdgeOrigin.GIVEN):
            canonical[(a, b)] = e

    ut_seen: dict[tuple[str, str], UtEdge] = {}
    for raw in ut_edges:
        e = raw if isinstance(raw, UtEdge) else UtEdge(*raw)
        if e.user not in user_ids:
            problems.append(f"ut edge references unknown user {e.user!r}")
        if e.topic not in topic_ids:
            problems.append(f"ut edge references unknown topic {e.topic!r}")
        key = (e.user, e.topic)
        prev = ut_seen.get(key)
        if prev is None or (prev.origin is EdgeOrigin.AUGMENTED
                            and e.origin is EdgeOrigin.GIVEN):
            ut_seen[key] = e

    if problems:
        raise ValidationError("invalid graph: " + "; ".join(problems))

    graph = HeteroSocialGraph(users, topics,
                              [canonical[k] for k in sorted(canonical)],
                              [ut_seen[k] for k in sorted(ut_seen)])
    # Keep the per-user topic sets in sync with the edge list; the edge
    # list is the single source of truth after construction.
    for u in graph.users:
        u.topics = {t for t, _ in graph._ut_adj.get(u.id, [])}
    return graph


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]
    seed: int

    def parts(self):
        return (self.train, self.val, self.test)


def stratified_split(users, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> DatasetSplit:
    """Deterministic train/val/test partition stratified by binary label.

    Per-class allocation uses largest-remainder rounding, so tiny classes
    still land one member in each split when the ratios allow it.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"need 3 positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios sum to {sum(ratios)}, not 1")

    by_class: dict[BinaryLabel, list[str]] = {}
    for u in users:
        by_class.setdefault(u.binary_label, []).append(u.id)
    rng = np.random.default_rng(seed)
    parts: list[list[str]] = [[], [], []]
    # Rounding carry flows across classes so split totals match a global
    # largest-remainder allocation (e.g. 100 users at .7/.15/.15 gives
    # exactly 70/15/15 even with two equal classes).
    carry = [0.0, 0.0, 0.0]
    for lab in sorted(by_class, key=lambda x: x.value):
        ids = sorted(by_class[lab])
        if len(ids) < len(ratios):
            raise ConfigError(
                f"class {lab.value} has {len(ids)} members, fewer than "
                f"{len(ratios)} splits")
        rng.shuffle(ids)
        counts = _largest_remainder(len(ids), ratios, carry)
        for i, r in enumerate(ratios):
            carry[i] += len(ids) * r - counts[i]
        start = 0
        for part, c in zip(parts, counts):
            part.extend(ids[start:start + c])
            start += c
    return DatasetSplit(frozenset(parts[0]), frozenset(parts[1]),
                        frozenset(parts[2]), seed)


def _largest_remainder(n: int, ratios, carry=None):
    exact = [n * r + (carry[i] if carry else 0.0) for i, r in enumerate(ratios)]
    counts = [max(0, int(np.floor(x))) for x in exact]
    remainder = n - sum(counts)
    while remainder < 0:
        j = max(range(len(counts)), key=lambda k: counts[k])
        counts[j] -= 1
        remainder += 1
    order = sorted(range(len(ratios)), key=lambda i: exact[i] - counts[i],
                   reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    # Every split must be nonempty when the class is large enough.
    for i, c in enumerate(counts):
        if c == 0 and n >= len(ratios):
            j = max(range(len(counts)), key=lambda k: counts[k])
            counts[j] -= 1
            counts[i] += 1
    return counts


# ---------------------------------------------------------------------------
# Dataset directory I/O
#
# Layout: users.csv, topics.csv, ut_edges.csv, content.jsonl,
# manifest.toml; refined graphs additionally persist uu_edges.csv and an
# origin column on ut_edges.csv. UTF-8, LF, '.' decimal separator.

def _fmt(x: float) -> str:
    # repr round-trips doubles exactly; integers stay integer-looking.
    if float(x) == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def manifest_dict(d_t: int | None, n_users: int, n_topics: int, n_ut: int):
    return {
        "counts": {"users": n_users, "topics": n_topics, "ut_edges": n_ut},
        "modalities": {m: len(f) for m, f in MODALITY_FIELDS.items()},
        "d_t": 0 if d_t is None else int(d_t),
    }


def _write_manifest(path: Path, manifest: dict):
    lines = [f'd_t = {manifest["d_t"]}', "", "[counts]"]
    for k, v in manifest["counts"].items():
        lines.append(f"{k} = {v}")
    lines.append("")
    lines.append("[modalities]")
    for k, v in manifest["modalities"].items():
        lines.append(f"{k} = {v}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_dataset(users, topics, ut_edges, path, d_t: int | None = None):
    """Write the standard dataset directory (no u-u edges)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "users.csv", "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(USER_CSV_HEADER)
        for u in users:
            vec = u.feature_vector("PCTSI")
            w.writerow([u.id, u.score] + [_fmt(x) for x in vec])
    with open(path / "topics.csv", "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "name", "origin"])
        for t in topics:
            w.writerow([t.id, t.name, t.origin.value])
    with open(path / "ut_edges.csv", "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "topic_id"])
        for e in ut_edges:
            e = e if isinstance(e, UtEdge) else UtEdge(*e)
            w.writerow([e.user, e.topic])
    with open(path / "content.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for u in users:
            fh.write(json.dumps({"user": u.id, "texts": u.content},
                                ensure_ascii=False) + "\n")
    _write_manifest(path / "manifest.toml",
                    manifest_dict(d_t, len(users), len(topics), len(list(ut_edges))))


def load_dataset(path):
    """Load a dataset directory; returns (users, topics, ut_edges)."""
    path = Path(path)
    users_file = path / "users.csv"
    for required in ("users.csv", "topics.csv", "ut_edges.csv"):
        if not (path / required).exists():
            raise ParseError("missing file", path=str(path / required))

    content: dict[str, list[str]] = {}
    content_file = path / "content.jsonl"
    if content_file.exists():
        with open(content_file, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    content[obj["user"]] = list(obj["texts"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(f"bad content row: {exc}",
                                     path=str(content_file), line=lineno)

    users = []
    with open(users_file, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != USER_CSV_HEADER:
            raise ParseError("unexpected users.csv header", path=str(users_file), line=1)
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(USER_CSV_HEADER):
                raise ParseError(f"expected {len(USER_CSV_HEADER)} columns, "
                                 f"got {len(row)}", path=str(users_file), line=lineno)
            try:
                vals = [float(x) for x in row[2:]]
                users.append(UserRecord(
                    id=row[0], score=int(row[1]),
                    features_p=vals[0:10], features_c=vals[10:13],
                    features_t=vals[13:17], features_s=vals[17:20],
                    features_i=vals[20:23],
                    content=content.get(row[0], []),
                ))
            except (ValueError, ValidationError, DomainError) as exc:
                raise ParseError(f"bad user row: {exc}",
                                 path=str(users_file), line=lineno)

    topics = []
    topics_file = path / "topics.csv"
    with open(topics_file, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, 2):
            try:
                topics.append(TopicNode(id=row[0], name=row[1],
                                        origin=TopicOrigin(row[2])))
            except (IndexError, ValueError, ValidationError) as exc:
                raise ParseError(f"bad topic row: {exc}",
                                 path=str(topics_file), line=lineno)

    topic_ids = {t.id for t in topics}
    user_ids = {u.id for u in users}
    ut_edges = []
    edges_file = path / "ut_edges.csv"
    with open(edges_file, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        has_origin = header is not None and len(header) > 2
        for lineno, row in enumerate(reader, 2):
            if len(row) < 2:
                raise ParseError("short ut edge row", path=str(edges_file), line=lineno)
            if row[0] not in user_ids:
                raise ParseError(f"unknown user id {row[0]!r}",
                                 path=str(edges_file), line=lineno)
            if row[1] not in topic_ids:
                raise ParseError(f"unknown topic id {row[1]!r}",
                                 path=str(edges_file), line=lineno)
            origin = EdgeOrigin(row[2]) if has_origin else EdgeOrigin.GIVEN
            ut_edges.append(UtEdge(row[0], row[1], origin))

    # Interest sets are stored only as edges; rebuild them per user so
    # save -> load is the identity.
    by_user: dict[str, set[str]] = {}
    for e in ut_edges:
        by_user.setdefault(e.user, set()).add(e.topic)
    for u in users:
        u.topics = by_user.get(u.id, set())
    return users, topics, ut_edges


def save_graph(graph: HeteroSocialGraph, path, d_t: int | None = None):
    """Persist a (possibly refined) graph: adds uu_edges.csv + provenance."""
    path = Path(path)
    save_dataset(graph.users, graph.topics, [], path, d_t=d_t)
    with open(path / "ut_edges.csv", "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "topic_id", "origin"])
        for e in graph.ut_edges:
            w.writerow([e.user, e.topic, e.origin.value])
    with open(path / "uu_edges.csv", "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "peer_id", "weight", "origin", "sim_f", "sim_t"])
        for e in graph.uu_edges:
            w.writerow([e.u, e.v, _fmt(e.weight), e.origin.value,
                        "" if e.sim_f is None else repr(e.sim_f),
                        "" if e.sim_t is None else repr(e.sim_t)])
    if any(t.embedding is not None for t in graph.topics):
        emb = {t.id: t.embedding.tolist() for t in graph.topics
               if t.embedding is not None}
        with open(path / "topic_embeddings.json", "w", encoding="utf-8") as fh:
            json.dump(emb, fh)
    _write_manifest(path / "manifest.toml",
                    manifest_dict(d_t, graph.N, len(graph.topics),
                                  len(graph.ut_edges)))


def load_graph(path) -> HeteroSocialGraph:
    path = Path(path)
    users, topics, ut_edges = load_dataset(path)
    emb_file = path / "topic_embeddings.json"
    if emb_file.exists():
        with open(emb_file, encoding="utf-8") as fh:
            emb = json.load(fh)
        for t in topics:
            if t.id in emb:
                t.embedding = np.asarray(emb[t.id], dtype=np.float64)
    uu_edges = []
    uu_file = path / "uu_edges.csv"
    if uu_file.exists():
        with open(uu_file, encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for lineno, row in enumerate(reader, 2):
                try:
                    uu_edges.append(UuEdge(
                        row[0], row[1], float(row[2]), EdgeOrigin(row[3]),
                        sim_f=float(row[4]) if row[4] else None,
                        sim_t=float(row[5]) if row[5] else None))
                except (IndexError, ValueError) as exc:
                    raise ParseError(f"bad uu edge row: {exc}",
                                     path=str(uu_file), line=lineno)
    return build_graph(users, topics, uu_edges, ut_edges)
