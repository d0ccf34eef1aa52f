"""Pluggable generation, embedding and encoding backends (offline doubles and HTTP clients)."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

import httpx
import numpy as np

from ._util import atomic_write_text, canonical_json, rng_stream, sha256_text
from .corpus import Artifact, Corpus
from .decompose import DEFAULT_PARALINGUISTIC, DecomposedArtifact, StubAudioEncoder, StubImageEncoder
from .ontology import SchemaDef, is_latent
from .triplets import Node, Triplet, triplet_line

log = logging.getLogger(__name__)

# Predicates the noisy oracle uses for schema-invalid lines; none exist in the default schema.
INVALID_PREDICATES = (
    "admires", "worries_about", "located_near", "causes", "remembers", "owns", "avoids", "prefers",
)


class BackendError(RuntimeError):
    """Base class for backend failures recorded per instance by the harness."""


class TransportError(BackendError):
    pass


class AuthorizationError(BackendError):
    pass


class ResponseShapeError(BackendError):
    pass


class BackendConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendFingerprint:
    capability: str
    provider: str
    model: str
    config_hash: str

    @classmethod
    def make(cls, capability: str, provider: str, model: str, config: Mapping[str, Any]) -> "BackendFingerprint":
        return cls(capability, provider, model, sha256_text(canonical_json(dict(config)))[:16])

    @property
    def id(self) -> str:
        return f"{self.provider}.{self.model}.{self.config_hash}"

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ embedding


_TOKEN = re.compile(r"[a-z0-9]+")


class HashingEmbedder:
    """Signed feature hashing of lowercase alphanumeric tokens, L2-normalised."""

    def __init__(self, dim: int = 512, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "big", signed=False)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.fingerprint = BackendFingerprint.make("embedding", "offline", "hashing", {"dim": dim, "seed": seed})

    def _bucket(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest(), "big")
        return h % self.dim, (1.0 if (h >> 63) & 1 else -1.0)

    def _embed_one(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in _TOKEN.findall(text.lower()):
            idx, sign = self._bucket(tok)
            v[idx] += sign
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim))
        for i, text in enumerate(texts):
            v = self._cache.get(text)
            if v is None:
                v = self._embed_one(text)
                with self._lock:
                    self._cache[text] = v
            out[i] = v
        return out


class IndicatorEmbedder:
    """Test double: one orthogonal one-hot axis per distinct text seen in this run."""

    def __init__(self, capacity: int = 8192):
        self.dim = capacity
        self._axes: dict[str, int] = {}
        self._lock = threading.Lock()
        self.fingerprint = BackendFingerprint.make("embedding", "offline", "indicator", {"capacity": capacity})

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        with self._lock:
            for i, text in enumerate(texts):
                axis = self._axes.setdefault(text, len(self._axes))
                if axis >= self.dim:
                    raise BackendError(f"indicator embedder capacity {self.dim} exhausted")
                out[i, axis] = 1.0
        return out


# ----------------------------------------------------------------- generation


class OracleGenerator:
    """Returns the gold graph of the query instance, ignoring the prompt."""

    deterministic = True

    def __init__(self, corpus: Corpus):
        self._gold = {i.instance_id: i.gold for i in corpus.instances}
        self.fingerprint = BackendFingerprint.make("generation", "offline", "oracle", {})

    def generate(self, prompt: str, params: Mapping[str, Any]) -> str:
        g = self._gold[params["instance_id"]]
        return "\n".join(triplet_line(t) for t in g.sorted_triplets())


@dataclass(frozen=True)
class NoisyOracleConfig:
    drop_rate_surface: float = 0.0
    drop_rate_latent: float = 0.0
    corrupt_rate: float = 0.0
    hallucinate_rate: float = 0.0
    invalid_rate: float = 1.0
    exact_invalid_fraction: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("drop_rate_surface", "drop_rate_latent", "corrupt_rate", "hallucinate_rate", "invalid_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise BackendConfigError(f"{name} must be in [0, 1], got {v}")
        f = self.exact_invalid_fraction
        if f is not None and not 0.0 <= f < 1.0:
            raise BackendConfigError(f"exact_invalid_fraction must be in [0, 1), got {f}")


class NoisyOracleGenerator:
    """Gold graph passed through independent drop, corrupt and hallucinate knobs.

    Every call logs its realised counts in ``emissions`` keyed by ``(instance_id, seed)``
    so metric checks can compare against exact realised rates.

    With ``exact_invalid_fraction`` set, invalid lines are count-based: the output is
    trimmed so that invalid/total equals that fraction exactly.
    """

    deterministic = False

    def __init__(self, corpus: Corpus, schema: SchemaDef, cfg: NoisyOracleConfig):
        self.schema = schema
        self.cfg = cfg
        self._gold = {i.instance_id: i.gold for i in corpus.instances}
        self.emissions: dict[tuple[str, int], dict[str, int]] = {}
        self._lock = threading.Lock()
        self.fingerprint = BackendFingerprint.make("generation", "offline", "noisy-oracle", asdict(cfg))

    def _corrupt(self, t: Triplet, rng: np.random.Generator, taken: set[Triplet]) -> Triplet | None:
        kind = self.schema.kind(t.object.kind)
        options = [v for v in kind.vocabulary if Node(kind.id, v).name != t.object.name]
        for i in rng.permutation(len(options)):
            cand = Triplet(t.subject, t.predicate, Node(kind.id, options[i]))
            if cand not in taken:
                return cand
        return None

    def _invalid_line(self, nodes: list[Node], rng: np.random.Generator, taken: set[Triplet]) -> Triplet:
        for attempt in range(1000):
            s = nodes[rng.integers(len(nodes))]
            o = nodes[rng.integers(len(nodes))]
            p = INVALID_PREDICATES[rng.integers(len(INVALID_PREDICATES))]
            if attempt > 100:
                p = f"{p}_{attempt}"
            t = Triplet(s, p, o)
            if t not in taken:
                return t
        raise BackendError("could not construct a distinct invalid triplet")

    def _valid_line(self, rng: np.random.Generator, taken: set[Triplet]) -> Triplet | None:
        preds = self.schema.predicates
        for _ in range(1000):
            p = preds[rng.integers(len(preds))]
            sk, ok = (self.schema.kind(k) for k in p.arity[rng.integers(len(p.arity))])
            t = Triplet(
                Node(sk.id, sk.vocabulary[rng.integers(len(sk.vocabulary))]),
                p.id,
                Node(ok.id, ok.vocabulary[rng.integers(len(ok.vocabulary))]),
            )
            if t not in taken:
                return t
        return None

    def generate(self, prompt: str, params: Mapping[str, Any]) -> str:
        iid = params["instance_id"]
        seed = int(params.get("seed", 0))
        cfg = self.cfg
        rng = rng_stream(cfg.seed, "noisy-oracle", iid, seed)
        gold = self._gold[iid].sorted_triplets()
        counts = dict.fromkeys(
            ("gold", "dropped_surface", "dropped_latent", "corrupted", "hallucinated", "invalid", "trimmed", "emitted"),
            0,
        )
        counts["gold"] = len(gold)
        kept: list[Triplet] = []
        for t in gold:
            latent = is_latent(self.schema, t)
            rate = cfg.drop_rate_latent if latent else cfg.drop_rate_surface
            if rng.random() < rate:
                counts["dropped_latent" if latent else "dropped_surface"] += 1
            else:
                kept.append(t)
        taken = set(gold)
        out: list[Triplet] = []
        for t in kept:
            if cfg.corrupt_rate and rng.random() < cfg.corrupt_rate:
                c = self._corrupt(t, rng, taken)
                if c is not None:
                    taken.add(c)
                    out.append(c)
                    counts["corrupted"] += 1
                    continue
            out.append(t)
        nodes = sorted({n for t in gold for n in (t.subject, t.object)})
        invalid: list[Triplet] = []
        if cfg.exact_invalid_fraction is not None:
            frac = Fraction(str(cfg.exact_invalid_fraction)).limit_denominator(1000)
            p, q = frac.numerator, frac.denominator
            m = len(out) // (q - p) if p else 0
            keep = (q - p) * m if p else len(out)
            if keep < len(out):
                idx = sorted(rng.choice(len(out), size=keep, replace=False).tolist())
                counts["trimmed"] = len(out) - keep
                out = [out[i] for i in idx]
            for _ in range(p * m):
                t = self._invalid_line(nodes, rng, taken)
                taken.add(t)
                invalid.append(t)
        elif cfg.hallucinate_rate:
            for _ in range(len(kept)):
                if rng.random() >= cfg.hallucinate_rate:
                    continue
                counts["hallucinated"] += 1
                if rng.random() < cfg.invalid_rate:
                    t = self._invalid_line(nodes, rng, taken)
                    invalid.append(t)
                else:
                    t = self._valid_line(rng, taken)
                    if t is None:
                        continue
                    out.append(t)
                taken.add(t)
        counts["invalid"] = len(invalid)
        counts["hallucinated"] = max(counts["hallucinated"], len(invalid))
        lines = out + invalid
        order = rng.permutation(len(lines))
        counts["emitted"] = len(lines)
        with self._lock:
            self.emissions[(iid, seed)] = counts
        return "\n".join(triplet_line(lines[i]) for i in order)


# ---------------------------------------------------------------------- HTTP


class DiskCache:
    """``<root>/<capability>/<fingerprint>/<input-hash>.json``; atomic, serialised writes."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._lock = threading.Lock()

    def path(self, fp: BackendFingerprint, key: str) -> Path:
        return self.root / fp.capability / fp.id / f"{key}.json"

    def get(self, fp: BackendFingerprint, key: str) -> Any | None:
        p = self.path(fp, key)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def put(self, fp: BackendFingerprint, key: str, value: Any) -> None:
        with self._lock:
            atomic_write_text(self.path(fp, key), canonical_json(value))


@dataclass
class HttpSettings:
    endpoint: str
    model: str
    provider: str = "http"
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 4
    backoff: float = 0.5
    max_in_flight: int = 4
    cache_dir: str | None = "cache"
    log_full: bool = False
    extra: dict = field(default_factory=dict)


class _HttpBackend:
    capability = ""
    forwarded_params = ("temperature", "seed", "max_tokens", "top_p")
    retry_status = frozenset({408, 429, 500, 502, 503, 504})

    def __init__(self, settings: HttpSettings, client: httpx.Client | None = None):
        self.settings = settings
        self._token = None
        if settings.api_key_env:
            self._token = os.environ.get(settings.api_key_env)
            if not self._token:
                raise BackendConfigError(f"credential variable {settings.api_key_env} is not set")
        self.client = client or httpx.Client(timeout=settings.timeout)
        self.cache = DiskCache(settings.cache_dir) if settings.cache_dir else None
        self._slots = threading.BoundedSemaphore(settings.max_in_flight)
        self.fingerprint = BackendFingerprint.make(
            self.capability, settings.provider, settings.model, {"endpoint": settings.endpoint, **settings.extra}
        )

    def _post(self, payload: dict) -> dict:
        key = sha256_text(canonical_json(payload))
        if self.cache is not None:
            hit = self.cache.get(self.fingerprint, key)
            if hit is not None:
                return hit
        headers = {"Authorization": f"Bearer {self._token}"} if self._token else {}
        if self.settings.log_full:
            log.debug("%s request %s", self.capability, canonical_json(payload))
        else:
            log.debug("%s request sha256=%s", self.capability, key[:16])
        last: Exception | None = None
        for attempt in range(self.settings.max_retries + 1):
            if attempt:
                time.sleep(self.settings.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self.client.post(self.settings.endpoint, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code in (401, 403):
                raise AuthorizationError(f"{self.settings.endpoint} rejected credentials ({resp.status_code})")
            if resp.status_code in self.retry_status:
                last = BackendError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code} from {self.settings.endpoint}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise ResponseShapeError("response is not JSON") from exc
            if not isinstance(body, dict):
                raise ResponseShapeError("response must be a JSON object")
            if self.cache is not None:
                self.cache.put(self.fingerprint, key, body)
            return body
        raise TransportError(f"{self.settings.endpoint} failed after {self.settings.max_retries} retries: {last}")


class HttpGenerator(_HttpBackend):
    capability = "generation"
    deterministic = False

    def generate(self, prompt: str, params: Mapping[str, Any]) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        fwd = {k: params[k] for k in self.forwarded_params if k in params}
        body = self._post({"model": self.settings.model, "input": prompt, "params": fwd})
        out = body.get("output")
        if not isinstance(out, str):
            raise ResponseShapeError("expected {'output': str}")
        return out


class HttpEmbedder(_HttpBackend):
    capability = "embedding"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ValueError("texts must be non-empty")
        body = self._post({"model": self.settings.model, "input": list(texts), "params": {}})
        vecs = body.get("embeddings")
        if not isinstance(vecs, list) or len(vecs) != len(texts):
            raise ResponseShapeError("expected {'embeddings': [[float]...]} with one vector per input")
        arr = np.asarray(vecs, dtype=float)
        if arr.ndim != 2:
            raise ResponseShapeError("embeddings must share one dimension")
        return arr


class HttpEncoder(_HttpBackend):
    """Live media encoder; no default service is designated."""

    capability = "encoding"

    def encode(self, a: Artifact) -> DecomposedArtifact:
        body = self._post(
            {"model": self.settings.model, "input": a.file_ref or a.content, "params": {"modality": a.modality}}
        )
        text, desc = body.get("text_view"), body.get("descriptors", {})
        if not isinstance(text, str) or not isinstance(desc, dict):
            raise ResponseShapeError("expected {'text_view': str, 'descriptors': {str: str}}")
        return DecomposedArtifact(a.artifact_id, a.modality, text, {str(k): str(v) for k, v in desc.items()}, a.genre)


# -------------------------------------------------------------------- wiring


@dataclass
class Backends:
    generator: Any
    embedder: Any
    encoders: dict[str, Any]

    def fingerprints(self) -> dict[str, dict]:
        out = {
            "generation": self.generator.fingerprint.to_dict(),
            "embedding": self.embedder.fingerprint.to_dict(),
        }
        for modality, enc in sorted(self.encoders.items()):
            fp = enc.fingerprint
            out[f"encoding.{modality}"] = fp.to_dict() if isinstance(fp, BackendFingerprint) else {"id": fp}
        return out


def build_backends(spec: Mapping[str, Any], corpus: Corpus, schema: SchemaDef) -> Backends:
    """Build backends from a config mapping.

    ``spec`` keys: ``generation`` ({type: oracle|noisy_oracle|http, ...}), ``embedding``
    ({type: hashing|indicator|http, ...}) and ``encoding`` ({type: stub|http, ...}).
    Missing credentials fail here, before any query is made.
    """
    gen_spec = dict(spec.get("generation", {"type": "oracle"}))
    gtype = gen_spec.pop("type", "oracle")
    if gtype == "oracle":
        generator = OracleGenerator(corpus)
    elif gtype == "noisy_oracle":
        generator = NoisyOracleGenerator(corpus, schema, NoisyOracleConfig(**gen_spec))
    elif gtype == "http":
        generator = HttpGenerator(HttpSettings(**gen_spec))
    else:
        raise BackendConfigError(f"unknown generation backend {gtype!r}")

    emb_spec = dict(spec.get("embedding", {"type": "hashing"}))
    etype = emb_spec.pop("type", "hashing")
    if etype == "hashing":
        embedder = HashingEmbedder(**emb_spec)
    elif etype == "indicator":
        embedder = IndicatorEmbedder(**emb_spec)
    elif etype == "http":
        embedder = HttpEmbedder(HttpSettings(**emb_spec))
    else:
        raise BackendConfigError(f"unknown embedding backend {etype!r}")

    enc_spec = dict(spec.get("encoding", {"type": "stub"}))
    ctype = enc_spec.pop("type", "stub")
    if ctype == "stub":
        vocab = enc_spec.get("paralinguistic", DEFAULT_PARALINGUISTIC)
        encoders = {"image": StubImageEncoder(), "audio": StubAudioEncoder(vocab)}
    elif ctype == "http":
        enc = HttpEncoder(HttpSettings(**enc_spec))
        encoders = {"image": enc, "audio": enc}
    else:
        raise BackendConfigError(f"unknown encoding backend {ctype!r}")
    return Backends(generator, embedder, encoders)
