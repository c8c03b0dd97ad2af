"""Text-intelligence backends for topic similarity, extraction, embedding.

Two interchangeable modes:

* StubEnhancer -- fully local and deterministic. Similarity is a Jaccard
  overlap mapped to [-1, 1], extraction is TF-IDF matching against the
  lexicon, embeddings are hashed character n-gram projections.
* RemoteEnhancer -- HTTP endpoint behind an append-only response cache.
  Without an explicit network permission flag it only ever replays
  cached responses, so experiments stay reproducible offline.

Prompt templates live in templates/ with a version suffix in the file
name; the cache key covers the template version, so editing a template
invalidates its cache namespace.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
from collections import Counter
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, EnhancerError, ProtocolError

DEFAULT_EMBED_DIM = 64

# Hyphenated words ("k-pop") stay single tokens.
_WORD_RE = re.compile(r"[^\W\d_]+(?:-[^\W\d_]+)*", re.UNICODE)

_STOPWORDS = frozenset("""
a an and are as at be but by for from has have i in is it its me my of on
or our so that the their them they this to was we were with you your not
just really very lately keep about all day today tonight again every
another more then new now one two
""".split())


def canonical_topic(name: str) -> str:
    """Case-folded, whitespace-collapsed canonical form of a topic name."""
    return " ".join(name.casefold().split())


class TopicLexicon:
    """Canonical topic names plus alias sets, all case-folded."""

    def __init__(self, entries):
        self.entries: dict[str, set[str]] = {}
        for name, aliases in entries:
            canon = canonical_topic(name)
            if canon in self.entries:
                raise ConfigError(f"duplicate canonical topic {canon!r}")
            self.entries[canon] = {canonical_topic(a) for a in aliases} | {canon}
        self._alias_to_canon = {}
        for canon, aliases in self.entries.items():
            for a in aliases:
                self._alias_to_canon.setdefault(a, canon)

    @classmethod
    def from_names(cls, names):
        return cls((n, ()) for n in names)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return canonical_topic(name) in self.entries

    def resolve(self, term: str) -> str | None:
        return self._alias_to_canon.get(canonical_topic(term))


def _template_text(template_id: str) -> str:
    ref = resources.files("earlysd.templates").joinpath(f"{template_id}.txt")
    return ref.read_text(encoding="utf-8")


def _tokens(text: str):
    return [w for w in (m.group(0).casefold() for m in _WORD_RE.finditer(text))
            if w not in _STOPWORDS and len(w) > 1]


class StubEnhancer:
    """Deterministic local implementation of the three capabilities."""

    mode = "stub"

    def __init__(self, d_t: int = DEFAULT_EMBED_DIM, min_term_count: int = 2):
        if d_t < 2:
            raise ConfigError(f"embedding dimension {d_t} too small")
        self.d_t = d_t
        self.min_term_count = min_term_count

    # -- similarity ---------------------------------------------------------
    def topic_similarity(self, topics_a, topics_b) -> float:
        a = {canonical_topic(t) for t in topics_a}
        b = {canonical_topic(t) for t in topics_b}
        if not a or not b:
            raise EnhancerError("topic similarity requires nonempty topic sets")
        jac = len(a & b) / len(a | b)
        return 2.0 * jac - 1.0

    def similarity_matrix(self, topic_sets) -> np.ndarray:
        """Pairwise topic_similarity for a list of topic sets (vectorized).

        Empty sets yield NaN rows/columns; callers decide how to treat
        pairs with no topic evidence.
        """
        vocab = {}
        for s in topic_sets:
            for t in s:
                vocab.setdefault(canonical_topic(t), len(vocab))
        n = len(topic_sets)
        member = np.zeros((n, max(len(vocab), 1)), dtype=np.float64)
        for i, s in enumerate(topic_sets):
            for t in s:
                member[i, vocab[canonical_topic(t)]] = 1.0
        sizes = member.sum(axis=1)
        inter = member @ member.T
        union = sizes[:, None] + sizes[None, :] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            jac = np.where(union > 0, inter / np.maximum(union, 1e-300), np.nan)
        sim = 2.0 * jac - 1.0
        sim[sizes == 0, :] = np.nan
        sim[:, sizes == 0] = np.nan
        return sim

    # -- extraction ---------------------------------------------------------
    def extract_topics_with_sources(self, content, lexicon: TopicLexicon):
        """Map topic name -> indices of the snippets that support it.

        Lexicon aliases are matched on unigrams and bigrams; remaining
        terms that clear a TF-IDF score cut and a raw-count floor are
        proposed as new (expanded) topic names.
        """
        found: dict[str, set[int]] = {}
        if not content:
            return found
        docs = [_tokens(text) for text in content]
        n_docs = len(docs)
        df = Counter()
        for toks in docs:
            grams = set(toks) | {f"{a} {b}" for a, b in zip(toks, toks[1:])}
            df.update(grams)
        tf = Counter()
        gram_sources: dict[str, set[int]] = {}
        for i, toks in enumerate(docs):
            grams = list(toks) + [f"{a} {b}" for a, b in zip(toks, toks[1:])]
            tf.update(grams)
            for g in set(grams):
                gram_sources.setdefault(g, set()).add(i)

        matched_grams = set()
        for gram in tf:
            canon = lexicon.resolve(gram)
            if canon is not None:
                found.setdefault(canon, set()).update(gram_sources[gram])
                matched_grams.add(gram)

        # Unmatched high-score terms become expanded-topic proposals.
        # Bigrams beat their component unigrams to avoid fragments.
        scored = []
        for gram, count in tf.items():
            if gram in matched_grams or count < self.min_term_count:
                continue
            score = count * (1.0 + math.log((1 + n_docs) / (1 + df[gram])))
            scored.append((score, gram))
        scored.sort(key=lambda x: (-x[0], x[1]))
        covered = set()
        for _, gram in scored:
            parts = gram.split()
            if any(p in covered for p in parts):
                continue
            found.setdefault(gram, set()).update(gram_sources[gram])
            covered.update(parts)
            covered.add(gram)
        return found

    def extract_topics(self, content, lexicon: TopicLexicon) -> set[str]:
        return set(self.extract_topics_with_sources(content, lexicon))

    # -- embedding ----------------------------------------------------------
    def embed_topic(self, name: str) -> np.ndarray:
        canon = canonical_topic(name)
        if not canon:
            raise EnhancerError("cannot embed an empty topic name")
        vec = np.zeros(self.d_t, dtype=np.float64)
        padded = f"^{canon}$"
        for i in range(len(padded) - 2):
            gram = padded[i:i + 3]
            digest = hashlib.md5(gram.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:4], "little") % self.d_t
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return vec / norm


class ResponseCache:
    """Append-only (hash, response) record file for remote replies."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._mem: dict[str, object] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._mem[rec["hash"]] = rec["response"]

    @staticmethod
    def key(template_id: str, inputs) -> str:
        payload = json.dumps({"template_id": template_id, "inputs": inputs},
                             sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def get(self, key: str):
        return self._mem.get(key)

    def put(self, key: str, response):
        with self._lock:
            self._mem[key] = response
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"hash": key, "response": response},
                                    ensure_ascii=False) + "\n")


class RemoteEnhancer:
    """Cached HTTP client for a hosted model endpoint.

    Requests are JSON {template_id, inputs}; responses carry one of
    {score | topics | embedding}. A malformed reply raises ProtocolError
    unless fallback_to_stub is set.
    """

    mode = "remote"

    def __init__(self, cache_path, d_t: int = DEFAULT_EMBED_DIM,
                 allow_network: bool = False, fallback_to_stub: bool = False,
                 endpoint: str | None = None, api_key: str | None = None):
        self.cache = ResponseCache(cache_path)
        self.d_t = d_t
        self.allow_network = allow_network
        self.endpoint = endpoint or os.environ.get("EARLYSD_LLM_ENDPOINT")
        self.api_key = api_key or os.environ.get("EARLYSD_LLM_KEY")
        self._stub = StubEnhancer(d_t=d_t) if fallback_to_stub else None
        self._inflight = threading.Semaphore(1)

    def _call(self, template_id: str, inputs):
        key = self.cache.key(template_id, inputs)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        if not self.allow_network:
            raise EnhancerError(
                f"no cached response for {template_id} and network use is "
                "not permitted (pass allow_network=True)")
        if not self.endpoint:
            raise ConfigError("EARLYSD_LLM_ENDPOINT is not set")
        import urllib.request

        body = json.dumps({"template_id": template_id, "inputs": inputs,
                           "prompt": _template_text(template_id)}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body,
            headers={"Content-Type": "application/json",
                     "Authorization": f"Bearer {self.api_key or ''}"})
        with self._inflight:
            with urllib.request.urlopen(req, timeout=60) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        self.cache.put(key, payload)
        return payload

    def topic_similarity(self, topics_a, topics_b) -> float:
        a = sorted({canonical_topic(t) for t in topics_a})
        b = sorted({canonical_topic(t) for t in topics_b})
        if not a or not b:
            raise EnhancerError("topic similarity requires nonempty topic sets")
        try:
            payload = self._call("topic_similarity.v1",
                                 {"topics_a": a, "topics_b": b})
            score = payload["score"]
            if not isinstance(score, (int, float)) or not math.isfinite(score):
                raise ProtocolError(f"non-numeric similarity reply: {score!r}")
        except ProtocolError:
            if self._stub is None:
                raise
            return self._stub.topic_similarity(a, b)
        return float(min(1.0, max(-1.0, score)))

    def extract_topics(self, content, lexicon: TopicLexicon) -> set[str]:
        if not content:
            return set()
        try:
            payload = self._call("extract_topics.v1",
                                 {"snippets": list(content),
                                  "lexicon": sorted(lexicon.entries)})
            names = payload["topics"]
            if not isinstance(names, list):
                raise ProtocolError(f"bad topics reply: {names!r}")
        except ProtocolError:
            if self._stub is None:
                raise
            return self._stub.extract_topics(content, lexicon)
        out = set()
        for n in names:
            canon = lexicon.resolve(n) or canonical_topic(str(n))
            if canon:
                out.add(canon)
        return out

    def embed_topic(self, name: str) -> np.ndarray:
        canon = canonical_topic(name)
        if not canon:
            raise EnhancerError("cannot embed an empty topic name")
        try:
            payload = self._call("embed_topic.v1", {"name": canon})
            vec = np.asarray(payload["embedding"], dtype=np.float64)
            if vec.shape != (self.d_t,) or not np.all(np.isfinite(vec)):
                raise ProtocolError(f"bad embedding reply shape {vec.shape}")
        except ProtocolError:
            if self._stub is None:
                raise
            return self._stub.embed_topic(canon)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ProtocolError("zero embedding reply")
        return vec / norm
