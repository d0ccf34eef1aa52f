"""Typed nodes and (subject, predicate, object) triplets in canonical form."""
from __future__ import annotations

import re
from dataclasses import dataclass

# Reserved by the canonical text and the prediction line grammar.
_RESERVED = re.compile(r"[|:\n\r]")


def canon(text: str) -> str:
    return text.strip().lower()


def has_reserved_chars(text: str) -> bool:
    return bool(_RESERVED.search(text))


@dataclass(frozen=True, order=True)
class Node:
    kind: str
    name: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", canon(self.kind))
        object.__setattr__(self, "name", canon(self.name))

    def __str__(self) -> str:
        return f"{self.kind}:{self.name}"


@dataclass(frozen=True, order=True)
class Triplet:
    subject: Node
    predicate: str
    object: Node

    def __post_init__(self) -> None:
        object.__setattr__(self, "predicate", canon(self.predicate))

    @classmethod
    def of(cls, s_kind: str, s_name: str, predicate: str, o_kind: str, o_name: str) -> "Triplet":
        return cls(Node(s_kind, s_name), predicate, Node(o_kind, o_name))

    @classmethod
    def parse(cls, text: str) -> "Triplet":
        """Inverse of :func:`canonical_triplet_text`; also accepts spaces around ``|``."""
        parts = [p.strip() for p in text.split("|")]
        if len(parts) != 3:
            raise ValueError(f"not a triplet: {text!r}")
        s, p, o = parts
        sk, _, sn = s.partition(":")
        ok, _, on = o.partition(":")
        if not (sk and sn and p and ok and on):
            raise ValueError(f"not a triplet: {text!r}")
        return cls.of(sk, sn, p, ok, on)

    def as_row(self) -> list[str]:
        return [self.subject.kind, self.subject.name, self.predicate, self.object.kind, self.object.name]

    def __str__(self) -> str:
        return canonical_triplet_text(self)


def canonical_triplet_text(t: Triplet) -> str:
    return f"{t.subject.kind}:{t.subject.name}|{t.predicate}|{t.object.kind}:{t.object.name}"


def triplet_line(t: Triplet) -> str:
    """Render in the prediction output grammar."""
    return f"{t.subject.kind}:{t.subject.name} | {t.predicate} | {t.object.kind}:{t.object.name}"
