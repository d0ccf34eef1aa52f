"""Modality decomposition: turn raw artifacts into one textual view for the predictor."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

from .corpus import Artifact

DEFAULT_PARALINGUISTIC = ("voice_tremor", "loudness", "tempo", "pitch", "pauses")


class DecomposeError(ValueError):
    pass


class MissingEncoderError(DecomposeError):
    pass


@dataclass(frozen=True)
class DecomposedArtifact:
    artifact_id: str
    modality: str
    text_view: str
    descriptors: Mapping[str, str] = field(default_factory=dict)
    genre: str = "unknown"


class Encoder(Protocol):
    def encode(self, a: Artifact) -> DecomposedArtifact: ...


def _parse_stub(content: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    for line in content.splitlines():
        key, sep, value = line.partition(":")
        if not sep or not key.strip():
            raise DecomposeError(f"descriptor stub line without 'key: value': {line!r}")
        fields[key.strip().lower()] = value.strip()
    return fields


class StubImageEncoder:
    """Offline image encoder: reads the stored ``scene:`` / ``tags:`` descriptor stub."""

    fingerprint = "offline/image-stub/v1"

    def encode(self, a: Artifact) -> DecomposedArtifact:
        fields = _parse_stub(a.content)
        scene = fields.pop("scene", "") or fields.pop("scene_summary", "")
        if not scene:
            raise DecomposeError(f"{a.artifact_id}: image stub has no scene summary")
        descriptors = {"tags": fields.pop("tags", "")}
        descriptors.update(sorted(fields.items()))
        return DecomposedArtifact(a.artifact_id, "image", scene, descriptors, a.genre)


class StubAudioEncoder:
    """Offline audio encoder: transcript plus paralinguistic descriptors from a closed vocabulary."""

    fingerprint = "offline/audio-stub/v1"

    def __init__(self, vocabulary: Sequence[str] = DEFAULT_PARALINGUISTIC):
        self.vocabulary = tuple(vocabulary)

    def encode(self, a: Artifact) -> DecomposedArtifact:
        fields = _parse_stub(a.content)
        transcript = fields.pop("transcript", "")
        if not transcript:
            raise DecomposeError(f"{a.artifact_id}: audio stub has no transcript")
        unknown = sorted(set(fields) - set(self.vocabulary))
        if unknown:
            raise DecomposeError(f"{a.artifact_id}: descriptors outside vocabulary: {unknown}")
        return DecomposedArtifact(a.artifact_id, "audio", transcript, dict(sorted(fields.items())), a.genre)


def offline_encoders() -> dict[str, Encoder]:
    return {"image": StubImageEncoder(), "audio": StubAudioEncoder()}


def decompose(a: Artifact, encoders: Mapping[str, Encoder] | None = None) -> DecomposedArtifact:
    if a.modality == "text":
        return DecomposedArtifact(a.artifact_id, "text", a.content, {}, a.genre)
    enc = (encoders or {}).get(a.modality)
    if enc is None:
        raise MissingEncoderError(f"no encoder configured for modality {a.modality!r} ({a.artifact_id})")
    out = enc.encode(a)
    if not out.text_view.strip():
        raise DecomposeError(f"{a.artifact_id}: encoder returned an empty text view")
    return out


def decompose_bundle(
    bundle: Iterable[Artifact], encoders: Mapping[str, Encoder] | None = None
) -> list[DecomposedArtifact]:
    return [decompose(a, encoders) for a in bundle]


def flatten(decomposed: Sequence[DecomposedArtifact]) -> str:
    """Concatenate in bundle order, each block headed by ``[modality | genre | artifact_id]``."""
    blocks = []
    for d in decomposed:
        lines = [f"[{d.modality} | {d.genre} | {d.artifact_id}]", d.text_view]
        lines.extend(f"{k}: {v}" for k, v in d.descriptors.items())
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def bundle_text(bundle: Iterable[Artifact], encoders: Mapping[str, Encoder] | None = None) -> str:
    return flatten(decompose_bundle(bundle, encoders))
