"""Question templates, mechanical QA generation and the annotation-backed oracle.

The annotation oracle answers from structured image annotations with the same
rules that ``generate_qa`` uses to write answers, so one is a check on the
other. A neural VQA model plugs in through :class:`bridgecause.remote.RemoteOracle`.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import yaml

YES, NO = "yes", "no"

TEMPLATES: dict[str, str] = {
    "member_present": "Is the {member} in the image?",
    "damage_present": "Is there {damage} in the image?",
    "damage_on_member": "Is there {damage} on the {member}?",
    "any_damage_on_member": "Is there damage on the {member}?",
    "what_damage_on_member": "What kind of damage has occurred to the {member}?",
    "what_damage_in_image": "What kind of damage is occurring in the image?",
    "which_member_has_damage": "What is the member that has {damage}?",
}
YES_NO_TEMPLATES = frozenset(
    {"member_present", "damage_present", "damage_on_member", "any_damage_on_member"}
)

DEFAULT_MEMBERS = (
    "main girder",
    "cross beam",
    "slab",
    "abutment",
    "drainage pipe",
    "wheel guard",
    "expansion joint",
    "bearing",
    "utility attachment",
    "wall",
)
DEFAULT_DAMAGES = (
    "corrosion",
    "cracking",
    "leaking",
    "free lime",
    "degradation of the anticorrosive",
    "fracture",
    "fissure",
    "sinking/displacement/slanting",
)
DEFAULT_SYNONYMS = {
    "water leakage": "leaking",
    "leakage": "leaking",
    "crack": "cracking",
    "cracks": "cracking",
    "rust": "corrosion",
}
DEFAULT_NEGATIVES = 2

_WS = re.compile(r"\s+")


class OracleError(Exception):
    """An oracle could not produce a usable answer."""


class UnknownImageError(OracleError):
    pass


class NotApplicableError(OracleError):
    """A what/which question has no answer for this image; never counted as evidence."""


class AnswerNormalizationError(OracleError):
    def __init__(self, raw: str, message: str | None = None):
        self.raw = raw
        super().__init__(message or f"answer {raw!r} is outside the vocabulary")


def normalize_text(s: str) -> str:
    return _WS.sub(" ", s.strip().lower())


@dataclass(frozen=True)
class Vocabulary:
    members: tuple[str, ...] = DEFAULT_MEMBERS
    damages: tuple[str, ...] = DEFAULT_DAMAGES
    synonyms: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_SYNONYMS))

    def __post_init__(self) -> None:
        members = tuple(normalize_text(m) for m in self.members)
        damages = tuple(normalize_text(d) for d in self.damages)
        for kind, names in (("member", members), ("damage", damages)):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {kind} names in vocabulary")
            if "" in names:
                raise ValueError(f"empty {kind} name in vocabulary")
        clash = (set(members) & set(damages)) | ({YES, NO} & (set(members) | set(damages)))
        if clash:
            raise ValueError(f"ambiguous vocabulary names: {sorted(clash)}")
        known = set(members) | set(damages) | {YES, NO}
        syn = {normalize_text(k): normalize_text(v) for k, v in dict(self.synonyms).items()}
        # close chains so that normalization is idempotent
        closed = {}
        for key, target in syn.items():
            seen = {key}
            while target in syn:
                if target in seen:
                    raise ValueError(f"synonym cycle through {target!r}")
                seen.add(target)
                target = syn[target]
            if target not in known:
                raise ValueError(f"synonym {key!r} maps to unknown name {target!r}")
            if key in known:
                raise ValueError(f"synonym key {key!r} shadows a vocabulary name")
            closed[key] = target
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "damages", damages)
        object.__setattr__(self, "synonyms", closed)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Vocabulary":
        return cls(
            members=tuple(doc.get("members", DEFAULT_MEMBERS)),
            damages=tuple(doc.get("damages", DEFAULT_DAMAGES)),
            synonyms=dict(doc.get("synonyms", DEFAULT_SYNONYMS)),
        )

    def to_dict(self) -> dict:
        return {"members": list(self.members), "damages": list(self.damages), "synonyms": dict(self.synonyms)}

    def normalize(self, s: str) -> str:
        text = normalize_text(s)
        return self.synonyms.get(text, text)

    def is_answer(self, value: str) -> bool:
        return value in (YES, NO) or value in self.members or value in self.damages

    def member_rank(self, name: str) -> int:
        return self.members.index(name)

    def damage_rank(self, name: str) -> int:
        return self.damages.index(name)


def load_vocabulary(path: str | Path) -> Vocabulary:
    return Vocabulary.from_dict(yaml.safe_load(Path(path).read_text()) or {})


# ---------------------------------------------------------------------------
# annotations


@dataclass(frozen=True)
class MemberAnnotation:
    name: str
    damages: tuple[str, ...] = ()


@dataclass(frozen=True)
class Annotation:
    image_id: str
    members: tuple[MemberAnnotation, ...] = ()

    @classmethod
    def from_dict(cls, rec: Mapping) -> "Annotation":
        members = tuple(
            MemberAnnotation(normalize_text(m["name"]), tuple(normalize_text(d) for d in m.get("damages", ())))
            for m in rec.get("members", ())
        )
        return cls(str(rec["image_id"]), members)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "members": [{"name": m.name, "damages": list(m.damages)} for m in self.members],
        }

    def validate(self, vocab: Vocabulary) -> None:
        seen = set()
        for m in self.members:
            if m.name not in vocab.members:
                raise ValueError(f"{self.image_id}: unknown member {m.name!r}")
            if m.name in seen:
                raise ValueError(f"{self.image_id}: member {m.name!r} listed twice")
            seen.add(m.name)
            for d in m.damages:
                if d not in vocab.damages:
                    raise ValueError(f"{self.image_id}: unknown damage {d!r} on {m.name!r}")

    def damage_map(self) -> dict[str, set[str]]:
        return {m.name: set(m.damages) for m in self.members}


def parse_annotations(data: bytes | str) -> list[Annotation]:
    doc = json.loads(data)
    if isinstance(doc, dict) and "annotations" in doc:
        doc = doc["annotations"]
    if not isinstance(doc, list):
        raise ValueError("annotation document must be a list of records")
    out = [Annotation.from_dict(rec) for rec in doc]
    ids = [a.image_id for a in out]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image_id in annotation document")
    return out


def serialize_annotations(annotations: Iterable[Annotation]) -> str:
    return json.dumps([a.to_dict() for a in annotations], indent=1) + "\n"


# ---------------------------------------------------------------------------
# questions


@dataclass(frozen=True)
class Question:
    template_id: str
    member: str | None = None
    damage: str | None = None
    text: str = ""

    @property
    def is_yes_no(self) -> bool:
        return self.template_id in YES_NO_TEMPLATES


@dataclass(frozen=True)
class Answer:
    value: str
    confidence: float | None = None


_PLACEHOLDER = re.compile(r"\{(\w+)\}")


def render_question(template_id: str, slots: Mapping[str, str] | None = None, **kw: str) -> Question:
    """Render a template with ``member``/``damage`` slots into a :class:`Question`."""
    try:
        template = TEMPLATES[template_id]
    except KeyError:
        raise ValueError(f"unknown question template {template_id!r}") from None
    values = {**(slots or {}), **kw}
    needed = _PLACEHOLDER.findall(template)
    missing = [k for k in needed if not values.get(k)]
    if missing:
        raise ValueError(f"template {template_id!r} needs slot(s) {missing}")
    extra = {k for k, v in values.items() if v is not None and k not in needed}
    if extra:
        raise ValueError(f"template {template_id!r} takes no slot(s) {sorted(extra)}")
    args = {k: values[k] for k in needed}
    return Question(template_id, args.get("member"), args.get("damage"), template.format(**args))


def parse_question(text: str, vocab: Vocabulary) -> Question:
    """Inverse of :func:`render_question` over a vocabulary."""
    for template_id, template in TEMPLATES.items():
        pattern = "^" + re.escape(template) + "$"
        pattern = pattern.replace(re.escape("{member}"), r"(?P<member>.+?)")
        pattern = pattern.replace(re.escape("{damage}"), r"(?P<damage>.+?)")
        m = re.match(pattern, text.strip())
        if not m:
            continue
        slots = m.groupdict()
        if slots.get("member") is not None and slots["member"] not in vocab.members:
            continue
        if slots.get("damage") is not None and slots["damage"] not in vocab.damages:
            continue
        return render_question(template_id, slots)
    raise ValueError(f"question does not match any template: {text!r}")


def _first(names: Iterable[str], order: tuple[str, ...]) -> str | None:
    present = set(names)
    return next((n for n in order if n in present), None)


def _negative_draw(image_id: str, candidates: list[str], k: int) -> list[str]:
    def key(name: str) -> bytes:
        return hashlib.sha256(f"{image_id}\x00{name}".encode()).digest()

    chosen = set(sorted(candidates, key=key)[:k])
    return [c for c in candidates if c in chosen]


def generate_qa(
    annotation: Annotation, vocab: Vocabulary, negatives: int = DEFAULT_NEGATIVES
) -> list[tuple[Question, Answer]]:
    """Mechanically derive question/answer pairs from one image annotation.

    Each question text appears once. What/which questions carry the single
    answer the annotation oracle gives (first name in vocabulary order), so a
    multi-damage member is not asked the same question with two answers.
    """
    annotation.validate(vocab)
    dmap = annotation.damage_map()
    qa: list[tuple[Question, Answer]] = []

    def add(template_id: str, answer: str, **slots: str) -> None:
        qa.append((render_question(template_id, slots), Answer(answer)))

    for member in vocab.members:
        if member not in dmap:
            continue
        damages = dmap[member]
        add("member_present", YES, member=member)
        add("any_damage_on_member", YES if damages else NO, member=member)
        if damages:
            add("what_damage_on_member", _first(damages, vocab.damages), member=member)
        for damage in vocab.damages:
            if damage in damages:
                add("damage_on_member", YES, damage=damage, member=member)

    all_damages = set().union(*dmap.values()) if dmap else set()
    for damage in vocab.damages:
        if damage in all_damages:
            add("damage_present", YES, damage=damage)
            carriers = [m for m, ds in dmap.items() if damage in ds]
            add("which_member_has_damage", _first(carriers, vocab.members), damage=damage)
    if all_damages:
        add("what_damage_in_image", _first(all_damages, vocab.damages))

    absent_members = [m for m in vocab.members if m not in dmap]
    absent_damages = [d for d in vocab.damages if d not in all_damages]
    for member in _negative_draw(annotation.image_id, absent_members, negatives):
        add("member_present", NO, member=member)
    for damage in _negative_draw(annotation.image_id, absent_damages, negatives):
        add("damage_present", NO, damage=damage)
    return qa


def qa_records(annotations: Iterable[Annotation], vocab: Vocabulary, negatives: int = DEFAULT_NEGATIVES) -> list[dict]:
    return [
        {"image_id": a.image_id, "question_text": q.text, "answer": ans.value, "template_id": q.template_id}
        for a in annotations
        for q, ans in generate_qa(a, vocab, negatives)
    ]


def corpus_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records)


# ---------------------------------------------------------------------------
# oracles


class Oracle(Protocol):
    kind: str

    def answer(self, image_id: str, question: Question) -> Answer: ...


class AnnotationOracle:
    """Deterministic oracle reading answers off image annotations."""

    kind = "annotation"

    def __init__(self, annotations: Iterable[Annotation], vocab: Vocabulary | None = None):
        self.vocab = vocab or Vocabulary()
        self._by_id: dict[str, dict[str, set[str]]] = {}
        for a in annotations:
            a.validate(self.vocab)
            if a.image_id in self._by_id:
                raise ValueError(f"duplicate annotation for {a.image_id!r}")
            self._by_id[a.image_id] = a.damage_map()

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    def answer(self, image_id: str, question: Question) -> Answer:
        try:
            dmap = self._by_id[image_id]
        except KeyError:
            raise UnknownImageError(f"no annotation for image {image_id!r}") from None
        tid, member, damage = question.template_id, question.member, question.damage

        def yn(flag: bool) -> Answer:
            return Answer(YES if flag else NO)

        if tid == "member_present":
            return yn(member in dmap)
        if tid == "damage_present":
            return yn(any(damage in ds for ds in dmap.values()))
        if tid == "damage_on_member":
            return yn(damage in dmap.get(member, ()))
        if tid == "any_damage_on_member":
            return yn(bool(dmap.get(member)))
        if tid == "what_damage_on_member":
            if not dmap.get(member):
                raise NotApplicableError(f"{image_id}: no damaged {member!r} to name a damage for")
            return Answer(_first(dmap[member], self.vocab.damages))
        if tid == "what_damage_in_image":
            found = _first(set().union(*dmap.values()) if dmap else (), self.vocab.damages)
            if found is None:
                raise NotApplicableError(f"{image_id}: image shows no damage")
            return Answer(found)
        if tid == "which_member_has_damage":
            found = _first((m for m, ds in dmap.items() if damage in ds), self.vocab.members)
            if found is None:
                raise NotApplicableError(f"{image_id}: no member carries {damage!r}")
            return Answer(found)
        raise ValueError(f"unknown question template {tid!r}")


def oracle_answer(oracle: Oracle, image_id: str, question: Question) -> Answer:
    return oracle.answer(image_id, question)
