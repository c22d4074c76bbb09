"""Two-step damage-cause estimation over the image of interest and its neighbours.

Step 1 asks the oracle what damage the image of interest shows and which
member carries it. Step 2 takes every cause rule triggered by that damage and,
per analysed image, asks whether the rule's related member is present (N) and,
if so, whether any causal event shows on it (M). Causes rank by M/N.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .neighborhood import DEFAULT_RADIUS, NeighborhoodSelection, select_surrounding, shooting_points
from .scene import Scene
from .vqa import NO, YES, Oracle, OracleError, Vocabulary, normalize_text, render_question


class DiagnosisError(Exception):
    """Step 1 failed; ``transcript`` holds what was asked before the failure."""

    def __init__(self, message: str, transcript: list["TranscriptEntry"] | None = None):
        super().__init__(message)
        self.transcript = list(transcript or [])


@dataclass(frozen=True)
class CauseRule:
    cause_name: str
    trigger_damage: str
    related_member: str
    events: tuple[str, ...]
    proxy_for: str | None = None

    def __post_init__(self) -> None:
        if not self.events:
            raise ValueError(f"cause {self.cause_name!r} needs at least one event")
        object.__setattr__(self, "trigger_damage", normalize_text(self.trigger_damage))
        object.__setattr__(self, "related_member", normalize_text(self.related_member))
        object.__setattr__(self, "events", tuple(normalize_text(e) for e in self.events))

    @classmethod
    def from_dict(cls, rec: Mapping) -> "CauseRule":
        missing = {"cause_name", "trigger_damage", "related_member", "events"} - set(rec)
        if missing:
            raise ValueError(f"cause rule missing field(s) {sorted(missing)}: {dict(rec)}")
        return cls(
            str(rec["cause_name"]),
            rec["trigger_damage"],
            rec["related_member"],
            tuple(rec["events"]),
            rec.get("proxy_for"),
        )

    def to_dict(self) -> dict:
        d = {
            "cause_name": self.cause_name,
            "trigger_damage": self.trigger_damage,
            "related_member": self.related_member,
            "events": list(self.events),
        }
        if self.proxy_for:
            d["proxy_for"] = self.proxy_for
        return d

    def validate(self, vocab: Vocabulary) -> None:
        if self.trigger_damage not in vocab.damages:
            raise ValueError(f"{self.cause_name}: unknown trigger damage {self.trigger_damage!r}")
        if self.related_member not in vocab.members:
            raise ValueError(f"{self.cause_name}: unknown member {self.related_member!r}")
        for e in self.events:
            if e not in vocab.damages:
                raise ValueError(f"{self.cause_name}: unknown event {e!r}")


# the four moisture sources for corrosion, with the event sets used in the field test
DEFAULT_RULES = (
    CauseRule("leaking from cracking on the slab", "corrosion", "slab", ("cracking", "leaking")),
    CauseRule("leaking from the expansion joint", "corrosion", "abutment", ("leaking",), proxy_for="expansion joint"),
    CauseRule("leaking from the drainage pipe", "corrosion", "drainage pipe", ("corrosion", "fissure", "fracture", "leaking")),
    CauseRule("leaking from cracking on the wheel guard", "corrosion", "wheel guard", ("leaking",)),
)


def parse_rules(text: str) -> list[CauseRule]:
    doc = yaml.safe_load(text)
    if isinstance(doc, dict):
        doc = doc.get("rules")
    if not isinstance(doc, list) or not doc:
        raise ValueError("rule document must be a non-empty list of cause rules")
    rules = [CauseRule.from_dict(r) for r in doc]
    names = [r.cause_name for r in rules]
    if len(set(names)) != len(names):
        raise ValueError("duplicate cause_name in rule document")
    return rules


def load_rules(path: str | Path) -> list[CauseRule]:
    return parse_rules(Path(path).read_text())


def dump_rules(rules: Iterable[CauseRule]) -> str:
    return yaml.safe_dump([r.to_dict() for r in rules], sort_keys=False)


@dataclass(frozen=True)
class TranscriptEntry:
    image_id: str
    template_id: str
    question: str
    answer: str | None
    cause: str | None = None
    confidence: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class CauseEvidence:
    cause_name: str
    related_member: str
    n: int
    m: int
    degraded: int = 0
    proxy_for: str | None = None
    events: tuple[str, ...] = ()

    @property
    def ratio(self) -> float | None:
        return self.m / self.n if self.n else None

    @property
    def ratio_text(self) -> str:
        return "N/A" if self.ratio is None else f"{self.ratio:.2f}"

    def to_dict(self) -> dict:
        d = {
            "cause_name": self.cause_name,
            "related_member": self.related_member,
            "events": list(self.events),
            "n": self.n,
            "m": self.m,
            "ratio": self.ratio,
            "ratio_display": self.ratio_text,
            "degraded_questions": self.degraded,
        }
        if self.proxy_for:
            d["proxy_for"] = self.proxy_for
        return d


def rank_evidence(evidence: Iterable[CauseEvidence]) -> list[CauseEvidence]:
    """Descending M/N, N/A last, ties by cause name."""
    return sorted(
        evidence,
        key=lambda e: (e.ratio is None, -(e.ratio or 0.0), e.cause_name),
    )


@dataclass
class DiagnosisReport:
    interest_image: str
    identified_damage: str
    identified_member: str
    evidence: list[CauseEvidence]
    transcript: list[TranscriptEntry]
    analysed_images: list[str]
    config: dict = field(default_factory=dict)
    selection_counts: dict | None = None
    generated_at: str | None = None

    @property
    def no_applicable_rules(self) -> bool:
        return not self.evidence

    @property
    def degraded_questions(self) -> int:
        return sum(1 for t in self.transcript if t.error is not None)

    def to_dict(self, *, include_timestamp: bool = True) -> dict:
        doc = {
            "interest_image": self.interest_image,
            "identified_damage": self.identified_damage,
            "identified_member": self.identified_member,
            "no_applicable_rules": self.no_applicable_rules,
            "analysed_images": list(self.analysed_images),
            "evidence": [e.to_dict() for e in self.evidence],
            "degraded_questions": self.degraded_questions,
            "transcript": [t.to_dict() for t in self.transcript],
            "config": self.config,
        }
        if self.selection_counts is not None:
            doc["selection"] = self.selection_counts
        if include_timestamp and self.generated_at is not None:
            doc["generated_at"] = self.generated_at
        return doc

    def render_table(self) -> str:
        lines = [
            f"Image of interest: {self.interest_image}",
            f"Damage: {self.identified_damage}",
            f"Member: {self.identified_member}",
            f"Analysed images: {len(self.analysed_images)}",
            "",
        ]
        if self.no_applicable_rules:
            lines.append(f"No cause rules apply to {self.identified_damage!r}.")
            return "\n".join(lines) + "\n"
        names = [e.cause_name + (f" (via {e.related_member})" if e.proxy_for else "") for e in self.evidence]
        width = max(len("Damage cause"), *(len(n) for n in names))
        lines.append(f"{'Damage cause':<{width}}  {'N':>4}  {'M':>4}  {'M/N':>5}")
        lines.append("-" * (width + 19))
        for name, e in zip(names, self.evidence):
            lines.append(f"{name:<{width}}  {e.n:>4}  {e.m:>4}  {e.ratio_text:>5}")
        if self.degraded_questions:
            lines.append("")
            lines.append(f"warning: {self.degraded_questions} question(s) failed and were counted as 'no'")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# step 1


def _ask(oracle: Oracle, image_id: str, template_id: str, cause: str | None = None, **slots: str):
    q = render_question(template_id, slots)
    try:
        ans = oracle.answer(image_id, q)
    except OracleError as exc:
        err = f"{type(exc).__name__}: {exc}"
        return None, TranscriptEntry(image_id, template_id, q.text, None, cause, None, err)
    return ans.value, TranscriptEntry(image_id, template_id, q.text, ans.value, cause, ans.confidence)


def identify_damage_and_member(
    oracle: Oracle, interest_image: str, transcript: list[TranscriptEntry] | None = None
) -> tuple[str, str]:
    """Ask which damage the image of interest shows, then which member carries it."""
    log = transcript if transcript is not None else []
    damage, entry = _ask(oracle, interest_image, "what_damage_in_image")
    log.append(entry)
    if damage is None:
        raise DiagnosisError(f"step 1 failed on {interest_image!r}: {entry.error}", log)
    if damage in (YES, NO):
        raise DiagnosisError(f"step 1: expected a damage name, got {damage!r}", log)
    member, entry = _ask(oracle, interest_image, "which_member_has_damage", damage=damage)
    log.append(entry)
    if member is None:
        raise DiagnosisError(f"step 1 failed on {interest_image!r}: {entry.error}", log)
    if member in (YES, NO):
        raise DiagnosisError(f"step 1: expected a member name, got {member!r}", log)
    return damage, member


# ---------------------------------------------------------------------------
# step 2


def _yes_no(oracle: Oracle, image_id: str, template_id: str, cause: str, **slots: str):
    value, entry = _ask(oracle, image_id, template_id, cause, **slots)
    if value is not None and value not in (YES, NO):
        entry = TranscriptEntry(
            entry.image_id, template_id, entry.question, value, cause, entry.confidence,
            f"expected yes/no, got {value!r}",
        )
        value = None
    return value == YES, entry


def _evaluate_image(
    oracle: Oracle, image_id: str, rule: CauseRule, exhaustive: bool
) -> tuple[bool, bool, list[TranscriptEntry]]:
    present, entry = _yes_no(oracle, image_id, "member_present", rule.cause_name, member=rule.related_member)
    entries = [entry]
    if not present:
        return False, False, entries
    event = False
    for e in rule.events:
        yes, entry = _yes_no(
            oracle, image_id, "damage_on_member", rule.cause_name, damage=e, member=rule.related_member
        )
        entries.append(entry)
        event = event or yes
        if event and not exhaustive:
            break
    return True, event, entries


def _evaluate_all(
    oracle: Oracle,
    images: Sequence[str],
    rules: Sequence[CauseRule],
    exhaustive: bool,
    max_workers: int,
) -> dict[str, list[tuple[bool, bool, list[TranscriptEntry]]]]:
    def per_image(image_id: str):
        return [_evaluate_image(oracle, image_id, r, exhaustive) for r in rules]

    unique = sorted(set(images))
    if max_workers <= 1 or len(unique) <= 1:
        results = [per_image(i) for i in unique]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(per_image, unique))
    return dict(zip(unique, results))


def _reduce(
    rule: CauseRule, k: int, per_image: Mapping[str, list], transcript: list[TranscriptEntry] | None
) -> CauseEvidence:
    n = m = degraded = 0
    for image_id in sorted(per_image):
        present, event, entries = per_image[image_id][k]
        n += present
        m += event
        degraded += sum(1 for t in entries if t.error is not None)
        if transcript is not None:
            transcript.extend(entries)
    return CauseEvidence(rule.cause_name, rule.related_member, n, m, degraded, rule.proxy_for, rule.events)


def evaluate_cause(
    oracle: Oracle,
    images: Sequence[str],
    rule: CauseRule,
    *,
    exhaustive: bool = False,
    max_workers: int = 1,
    transcript: list[TranscriptEntry] | None = None,
) -> CauseEvidence:
    """Count N (images showing the related member) and M (those also showing an event).

    Each image contributes at most one to N and one to M. Failed questions are
    logged with an error and counted as "no".
    """
    if not images:
        raise ValueError("evaluate_cause needs at least one image")
    per_image = _evaluate_all(oracle, images, [rule], exhaustive, max_workers)
    return _reduce(rule, 0, per_image, transcript)


def diagnose_images(
    oracle: Oracle,
    interest_id: str,
    images: Sequence[str],
    rules: Sequence[CauseRule],
    *,
    exhaustive: bool = False,
    max_workers: int = 1,
    config: dict | None = None,
    timestamp: bool = False,
) -> DiagnosisReport:
    """Run both steps over an explicit image list (which should include ``interest_id``)."""
    transcript: list[TranscriptEntry] = []
    damage, member = identify_damage_and_member(oracle, interest_id, transcript)
    applicable = [r for r in rules if r.trigger_damage == damage]
    evidence = []
    if applicable:
        per_image = _evaluate_all(oracle, images, applicable, exhaustive, max_workers)
        step2: list[list[TranscriptEntry]] = []
        for k, rule in enumerate(applicable):
            entries: list[TranscriptEntry] = []
            evidence.append(_reduce(rule, k, per_image, entries))
            step2.append(entries)
        # transcript: id-sorted, rules in configured order within an image
        by_image: dict[str, list[TranscriptEntry]] = {}
        for entries in step2:
            for t in entries:
                by_image.setdefault(t.image_id, []).append(t)
        for image_id in sorted(by_image):
            transcript.extend(by_image[image_id])
    cfg = {
        "oracle": getattr(oracle, "kind", type(oracle).__name__),
        "exhaustive_events": exhaustive,
        "rules": [r.to_dict() for r in rules],
    }
    cfg.update(config or {})
    return DiagnosisReport(
        interest_image=interest_id,
        identified_damage=damage,
        identified_member=member,
        evidence=rank_evidence(evidence),
        transcript=transcript,
        analysed_images=list(images),
        config=cfg,
        generated_at=datetime.now(timezone.utc).isoformat(timespec="seconds") if timestamp else None,
    )


def diagnose(
    scene: Scene,
    interest_id: str,
    rules: Sequence[CauseRule],
    oracle: Oracle,
    radius: float = DEFAULT_RADIUS,
    *,
    exhaustive: bool = False,
    max_workers: int = 1,
    timestamp: bool = False,
    selection: NeighborhoodSelection | None = None,
) -> DiagnosisReport:
    """Select the neighbourhood of ``interest_id`` in ``scene`` and run both steps over it."""
    if selection is None:
        selection = select_surrounding(shooting_points(scene), interest_id, radius)
    report = diagnose_images(
        oracle,
        interest_id,
        selection.analysed_ids,
        rules,
        exhaustive=exhaustive,
        max_workers=max_workers,
        config={"radius": selection.radius},
        timestamp=timestamp,
    )
    report.selection_counts = {
        "surrounding": len(selection.surrounding),
        "excluded": len(selection.excluded),
        "missed": len(selection.missed),
    }
    return report
