"""Structure-first synthetic data: sample a valid graph, then render artifacts from it."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from typing import Mapping, Protocol, Sequence

import numpy as np

from ._util import rng_stream
from .corpus import DEFAULT_DOMAINS, Artifact, Corpus, Instance, SituationGraph
from .ontology import CompletenessRule, SchemaDef, is_latent, validate_graph
from .triplets import Node, Triplet, canon

log = logging.getLogger(__name__)

GENRES = ("email", "chat_log", "calendar_entry", "social_post")
MAX_REJECTIONS = 1000
DEFAULT_PERSONA = {
    "name": "Elise Navarro",
    "age": "28",
    "occupation": "Senior Marketing Analyst",
    "city": "Toronto",
    "background": "Filipino",
}


class GenerationConfigError(ValueError):
    """The configuration cannot produce a valid corpus; raised before sampling."""


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenConfig:
    seed: int = 42
    n_instances: int = 75
    domains: tuple[str, ...] = DEFAULT_DOMAINS
    domain_weights: tuple[float, ...] | None = None
    triplet_count_range: tuple[int, int] | None = None
    artifacts_per_instance: tuple[int, int] = (3, 3)
    renderer: str = "template"
    media_rate: float = 0.15
    start_year: int = 2021
    end_year: int = 2025
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenConfig":
        d = dict(d)
        for key in ("domains", "domain_weights", "triplet_count_range", "artifacts_per_instance"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise GenerationConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "jobs"}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def count_range(self, schema: SchemaDef) -> tuple[int, int]:
        return self.triplet_count_range or (schema.min_triplets, schema.max_triplets)

    def weights(self) -> np.ndarray:
        w = np.ones(len(self.domains)) if self.domain_weights is None else np.asarray(self.domain_weights, float)
        return w / w.sum()


def _capacity(schema: SchemaDef) -> int:
    total = 0
    for p in schema.predicates:
        for s, o in p.arity:
            total += len(schema.kind(s).vocabulary) * len(schema.kind(o).vocabulary)
    return total


def check_config(schema: SchemaDef, cfg: GenConfig) -> None:
    if cfg.n_instances < 0:
        raise GenerationConfigError("n_instances must be >= 0")
    if not cfg.domains:
        raise GenerationConfigError("at least one domain is required")
    if cfg.domain_weights is not None:
        if len(cfg.domain_weights) != len(cfg.domains) or any(w <= 0 for w in cfg.domain_weights):
            raise GenerationConfigError("domain_weights must be positive, one per domain")
    lo, hi = cfg.count_range(schema)
    if not (schema.min_triplets <= lo <= hi <= schema.max_triplets):
        raise GenerationConfigError(
            f"triplet_count_range [{lo}, {hi}] must lie within [{schema.min_triplets}, {schema.max_triplets}]"
        )
    if len(schema.completeness_rules) > lo:
        raise GenerationConfigError(
            f"{len(schema.completeness_rules)} completeness rules cannot fit in a budget of {lo} triplets"
        )
    if _capacity(schema) < hi:
        raise GenerationConfigError(f"schema admits only {_capacity(schema)} distinct triplets, need {hi}")
    for rule in schema.completeness_rules:
        if not _rule_options(schema, rule):
            raise GenerationConfigError(f"no predicate/arity pair can satisfy rule {rule.label}")
    a_lo, a_hi = cfg.artifacts_per_instance
    if not (1 <= a_lo <= a_hi):
        raise GenerationConfigError("artifacts_per_instance must satisfy 1 <= lo <= hi")
    if cfg.renderer not in ("template", "external"):
        raise GenerationConfigError(f"unknown renderer {cfg.renderer!r}")
    if not 0.0 <= cfg.media_rate <= 1.0:
        raise GenerationConfigError("media_rate must be in [0, 1]")
    if cfg.end_year < cfg.start_year:
        raise GenerationConfigError("end_year must be >= start_year")


def _rule_options(schema: SchemaDef, rule: CompletenessRule) -> list[tuple[str, tuple[str, str]]]:
    ids = {canon(i) for i in rule.ids}
    opts = []
    for p in schema.predicates:
        for pair in p.arity:
            target = canon(p.id) if rule.type == "predicate" else canon(pair[1])
            if target in ids:
                opts.append((p.id, pair))
    return opts


def _draw_triplet(schema: SchemaDef, rng: np.random.Generator, pred_id: str, pair: tuple[str, str]) -> Triplet:
    sk, ok = schema.kind(pair[0]), schema.kind(pair[1])
    sn = sk.vocabulary[rng.integers(len(sk.vocabulary))]
    on = ok.vocabulary[rng.integers(len(ok.vocabulary))]
    return Triplet(Node(sk.id, sn), pred_id, Node(ok.id, on))


def _sample_from_stream(schema: SchemaDef, cfg: GenConfig, rng: np.random.Generator) -> set[Triplet]:
    lo, hi = cfg.count_range(schema)
    chosen: set[Triplet] = set()
    rejections = 0

    def add(t: Triplet) -> bool:
        nonlocal rejections
        if t in chosen:
            rejections += 1
            if rejections > MAX_REJECTIONS:
                raise GenerationConfigError(f"gave up after {MAX_REJECTIONS} duplicate rejections")
            return False
        chosen.add(t)
        return True

    for opts in [_rule_options(schema, r) for r in schema.completeness_rules]:
        while True:
            pred_id, pair = opts[rng.integers(len(opts))]
            if add(_draw_triplet(schema, rng, pred_id, pair)):
                break
    target = int(rng.integers(lo, hi + 1))
    preds = schema.predicates
    while len(chosen) < target:
        p = preds[rng.integers(len(preds))]
        pair = p.arity[rng.integers(len(p.arity))]
        add(_draw_triplet(schema, rng, p.id, pair))
    return chosen


def sample_graph(
    schema: SchemaDef,
    cfg: GenConfig,
    rng_state: np.random.Generator | None = None,
    domain: str | None = None,
    time_index: int = 0,
    instance_id: str | None = None,
) -> SituationGraph:
    """Draw one graph from the uniform prior.

    Without ``rng_state`` the stream is derived from ``(cfg.seed, time_index)``.
    ``domain`` is accepted so a domain-aware prior can be dropped in; the uniform
    prior ignores it.
    """
    check_config(schema, cfg)
    rng = rng_state if rng_state is not None else rng_stream(cfg.seed, "graph", time_index)
    triplets = _sample_from_stream(schema, cfg, rng)
    return SituationGraph(instance_id or _instance_id(time_index), time_index, frozenset(triplets))


def _instance_id(index: int) -> str:
    return f"inst-{index:04d}"


# ---------------------------------------------------------------- rendering


def load_cue_table(source: str | Mapping | None = None) -> dict[str, list[str]]:
    if source is None:
        text = resources.files("sgp.data").joinpath("cue_table.json").read_text(encoding="utf-8")
        raw = json.loads(text)
    elif isinstance(source, Mapping):
        raw = source
    else:
        with open(source, encoding="utf-8") as fh:
            raw = json.load(fh)
    return {canon(k): [str(p) for p in v] for k, v in raw.items()}


def check_cue_table(schema: SchemaDef, cues: Mapping[str, Sequence[str]]) -> None:
    for k in schema.kinds:
        if canon(k.id) not in schema.psychological_kinds:
            continue
        for v in k.vocabulary:
            if not cues.get(canon(v)):
                raise GenerationConfigError(f"cue table has no phrases for {k.id}:{v}")


_SURFACE_SENTENCES = {
    "has_participant": ["{o} joined the {s}.", "Looping in {o} for the {s}.", "{o} will be at the {s} too."],
    "has_role": ["{s} is my {o} these days.", "{s}, acting as {o}.", "{s} (the {o}) weighed in."],
    "affiliated_with": ["{s} is with {o}.", "{s} works out of {o}.", "{s} from {o} reached out."],
    "occurs_at": ["The {s} is at the {o}.", "{s} happening at the {o}.", "Heading to the {o} for the {s}."],
    "occurs_during": ["The {s} is in the {o}.", "{s} set for the {o}.", "{o} slot booked for the {s}."],
    "involves_activity": ["The {s} means a lot of {o}.", "{o} all through the {s}.", "{s}: mostly {o}."],
    "has_ambience": ["The {s} felt {o}.", "Pretty {o} around the {s}.", "{s}, very {o} atmosphere."],
    "has_context": ["The {s} is a {o} thing.", "{o} setting for the {s}.", "Keeping the {s} strictly {o}."],
    "interacts_with": ["{s} caught up with {o}.", "{s} and {o} talked for a while.", "{s} messaged {o}."],
    "part_of": ["{s} is part of the {o}.", "{s} belongs to {o}.", "{s}, all for the {o}."],
}
_GENERIC_SURFACE = ["{s} and {o} came up again.", "Note: {s}, {o}."]
_LATENT_SENTENCES = {
    "feels": ["{s}: {cue}.", "{s} here, {cue}.", "Checked in with {s}, {cue}."],
    "evokes": ["Thinking about the {s}: {cue}.", "The {s} left me {cue}.", "Every time the {s} comes up, {cue}."],
    "has_valence": ["{cue_s}. {cue}.", "{cue_s}, and overall {cue}."],
    "conveys_val": ["That {s} vibe: {cue}.", "The {s} mood said it all, {cue}.", "{s} all around, {cue}."],
}
_GENERIC_LATENT = ["About {s}: {cue}.", "{s}... {cue}."]
_PARALINGUISTIC = {
    "stressed": {"voice_tremor": "high", "tempo": "fast", "loudness": "medium"},
    "fear": {"voice_tremor": "high", "tempo": "fast", "loudness": "low"},
    "anger": {"voice_tremor": "low", "tempo": "fast", "loudness": "high"},
    "sadness": {"voice_tremor": "medium", "tempo": "slow", "loudness": "low"},
    "joy": {"voice_tremor": "low", "tempo": "fast", "loudness": "high"},
    "calm": {"voice_tremor": "low", "tempo": "slow", "loudness": "medium"},
}


class Renderer(Protocol):
    def render(
        self, g: SituationGraph, persona: Mapping[str, str], genres: Sequence[str], modalities: Sequence[str],
        rng: np.random.Generator, meta: Mapping[str, str],
    ) -> list[Artifact]: ...


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


class TemplateRenderer:
    """Offline renderer: slot-fills genre templates with node names and cue phrases."""

    def __init__(self, schema: SchemaDef, cue_table: Mapping[str, Sequence[str]] | None = None):
        self.schema = schema
        self.cues = load_cue_table(cue_table)
        check_cue_table(schema, self.cues)

    def _is_psych(self, node: Node) -> bool:
        return node.kind in self.schema.psychological_kinds

    def _cue(self, rng: np.random.Generator, node: Node) -> str:
        return _pick(rng, self.cues[node.name])

    def sentence(self, t: Triplet, rng: np.random.Generator) -> str:
        s, o = t.subject, t.object
        if not is_latent(self.schema, t):
            tpl = _pick(rng, _SURFACE_SENTENCES.get(t.predicate, _GENERIC_SURFACE))
            return tpl.format(s=s.name, o=o.name)
        tpl = _pick(rng, _LATENT_SENTENCES.get(t.predicate, _GENERIC_LATENT))
        cue = self._cue(rng, o) if self._is_psych(o) else o.name
        cue_s = self._cue(rng, s) if self._is_psych(s) else s.name
        if "{s}" in tpl and self._is_psych(s):
            tpl = "{cue_s}, {cue}."
        return tpl.format(s=s.name, o=o.name, cue=cue, cue_s=cue_s)

    def render(self, g, persona, genres, modalities, rng, meta) -> list[Artifact]:
        n = len(genres)
        order = [g.sorted_triplets()[i] for i in rng.permutation(len(g))]
        buckets: list[list[str]] = [[] for _ in range(n)]
        for i, t in enumerate(order):
            buckets[i % n].append(self.sentence(t, rng))
        events = sorted(t.subject.name for t in g.triplets if t.subject.kind == "event")
        title = events[0] if events else "quick update"
        emotions = sorted(t.object.name for t in g.triplets if t.object.kind == "emotion")
        out = []
        for j, (genre, modality, sentences) in enumerate(zip(genres, modalities, buckets)):
            content = self._wrap(genre, modality, sentences, persona, title, emotions, meta, rng)
            out.append(
                Artifact(
                    artifact_id=f"{g.instance_id}-a{j}",
                    modality=modality,
                    content=content,
                    meta={**meta, "genre": genre},
                )
            )
        return out

    def _wrap(self, genre, modality, sentences, persona, title, emotions, meta, rng) -> str:
        first = persona.get("name", "me").split()[0]
        date = meta.get("date", "")
        body = " ".join(sentences)
        if modality == "image":
            tags = sorted({w for s in sentences for w in s.rstrip(".").lower().split() if len(w) > 3})[:8]
            return f"scene: {body}\ntags: {', '.join(tags)}"
        if modality == "audio":
            desc = _PARALINGUISTIC.get(emotions[0] if emotions else "", {"voice_tremor": "low", "tempo": "medium", "loudness": "medium"})
            lines = [f"transcript: {body}"] + [f"{k}: {v}" for k, v in sorted(desc.items())]
            return "\n".join(lines)
        if genre == "email":
            return f"Subject: re: {title}\nFrom: {persona.get('name', first)}\nDate: {date}\n\nHi,\n\n{body}\n\nBest,\n{first}"
        if genre == "chat_log":
            stamps = ["08:12", "09:47", "12:05", "15:30", "18:22", "21:40"]
            return "\n".join(f"[{date} {stamps[i % len(stamps)]}] {first}: {s}" for i, s in enumerate(sentences))
        if genre == "calendar_entry":
            return f"Calendar entry ({date})\nTitle: {title}\nNotes: {body}"
        hashtag = meta.get("domain", "life").replace("_", "")
        return f"{body} #{hashtag}"


def surface_names(schema: SchemaDef, g: SituationGraph) -> set[str]:
    names = set()
    for t in g.triplets:
        for node in (t.subject, t.object):
            if node.kind not in schema.psychological_kinds:
                names.add(node.name)
    return names


def surface_coverage(schema: SchemaDef, g: SituationGraph, texts: Sequence[str]) -> set[str]:
    """Return surface node names of ``g`` missing from ``texts``."""
    blob = "\n".join(texts).lower()
    return {n for n in surface_names(schema, g) if n not in blob}


class ExternalRenderer:
    """Renders through a text-generation backend, accepting only fully covering outputs."""

    max_attempts = 3

    def __init__(self, schema: SchemaDef, generator):
        self.schema = schema
        self.generator = generator

    def prompt(self, g: SituationGraph, persona: Mapping[str, str], genre: str) -> str:
        lines = "\n".join(f"- {t.subject} | {t.predicate} | {t.object}" for t in g.sorted_triplets())
        who = ", ".join(f"{k}: {v}" for k, v in sorted(persona.items()))
        return (
            f"Write one {genre.replace('_', ' ')} by this person ({who}).\n"
            f"It must be consistent with every fact in this situation graph:\n{lines}\n"
            "Mention every non-psychological name literally. Convey emotions and valence "
            "only indirectly, never by naming them."
        )

    def render(self, g, persona, genres, modalities, rng, meta) -> list[Artifact]:
        for attempt in range(1, self.max_attempts + 1):
            texts = []
            for j, genre in enumerate(genres):
                seed = int(rng.integers(2**31))
                text = self.generator.generate(self.prompt(g, persona, genre), {"seed": seed, "attempt": attempt})
                if not text or not text.strip():
                    raise RenderError(f"renderer returned empty output for {g.instance_id}")
                texts.append(text)
            missing = surface_coverage(self.schema, g, texts)
            if not missing:
                return [
                    Artifact(f"{g.instance_id}-a{j}", "text", text, {**meta, "genre": genre})
                    for j, (genre, text) in enumerate(zip(genres, texts))
                ]
            log.info("render attempt %d for %s missed %s", attempt, g.instance_id, sorted(missing))
        raise RenderError(f"renderer failed surface coverage for {g.instance_id} after {self.max_attempts} attempts")


def _calendar_date(cfg: GenConfig, index: int) -> str:
    months = (cfg.end_year - cfg.start_year + 1) * 12
    m = index * months // max(cfg.n_instances, 1)
    return f"{cfg.start_year + m // 12}-{m % 12 + 1:02d}"


def render_artifacts(
    g: SituationGraph,
    persona: Mapping[str, str],
    cfg: GenConfig,
    renderer: Renderer,
    rng: np.random.Generator | None = None,
    meta: Mapping[str, str] | None = None,
) -> list[Artifact]:
    rng = rng if rng is not None else rng_stream(cfg.seed, "render", g.time_index)
    a_lo, a_hi = cfg.artifacts_per_instance
    n = int(rng.integers(a_lo, a_hi + 1))
    perm = [GENRES[i] for i in rng.permutation(len(GENRES))]
    genres = [perm[i % len(perm)] for i in range(n)]
    modalities = []
    for genre in genres:
        media = rng.random() < cfg.media_rate
        if media and genre == "social_post":
            modalities.append("image")
        elif media and genre == "chat_log":
            modalities.append("audio")
        else:
            modalities.append("text")
    bundle = renderer.render(g, persona, genres, modalities, rng, dict(meta or {}))
    if len(bundle) != n:
        raise RenderError(f"renderer returned {len(bundle)} artifacts, expected {n}")
    return bundle


def _make_instance(schema, cfg, persona, renderer, index: int) -> Instance:
    rng = rng_stream(cfg.seed, "instance", index)
    domain = cfg.domains[int(rng.choice(len(cfg.domains), p=cfg.weights()))]
    g = sample_graph(schema, cfg, rng, domain, index, _instance_id(index))
    meta = {"date": _calendar_date(cfg, index), "domain": domain}
    arts = render_artifacts(g, persona, cfg, renderer, rng, meta)
    return Instance(g.instance_id, index, domain, tuple(arts), g)


def generate_corpus(
    schema: SchemaDef,
    cfg: GenConfig,
    persona: Mapping[str, str] | None = None,
    renderer: Renderer | None = None,
    cue_table: Mapping | str | None = None,
) -> Corpus:
    """Generate ``cfg.n_instances`` instances; each instance owns an independent RNG stream."""
    check_config(schema, cfg)
    persona = dict(DEFAULT_PERSONA if persona is None else persona)
    if renderer is None:
        if cfg.renderer != "template":
            raise GenerationConfigError("the external renderer needs a generation backend")
        renderer = TemplateRenderer(schema, cue_table)
    make = lambda i: _make_instance(schema, cfg, persona, renderer, i)  # noqa: E731
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            instances = list(pool.map(make, range(cfg.n_instances)))
    else:
        instances = [make(i) for i in range(cfg.n_instances)]
    for inst in instances:
        bad = validate_graph(schema, inst.gold)
        if bad:
            raise AssertionError(f"generator produced an invalid graph {inst.instance_id}: {bad[0]}")
    return Corpus(persona, tuple(instances), schema.fingerprint, cfg.domains)


def with_seed(cfg: GenConfig, seed: int) -> GenConfig:
    return replace(cfg, seed=seed)
