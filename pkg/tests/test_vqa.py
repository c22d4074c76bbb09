import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bridgecause.harness import random_annotation
from bridgecause.vqa import (
    NO,
    TEMPLATES,
    YES,
    Annotation,
    AnnotationOracle,
    MemberAnnotation,
    NotApplicableError,
    UnknownImageError,
    Vocabulary,
    corpus_jsonl,
    generate_qa,
    normalize_text,
    oracle_answer,
    parse_annotations,
    parse_question,
    qa_records,
    render_question,
)

VOCAB = Vocabulary()


def ann(image_id="img", **members):
    return Annotation(image_id, tuple(MemberAnnotation(m.replace("_", " "), tuple(d)) for m, d in members.items()))


@pytest.mark.parametrize(
    "template_id, slots, text",
    [
        ("member_present", {"member": "drainage pipe"}, "Is the drainage pipe in the image?"),
        ("what_damage_on_member", {"member": "drainage pipe"}, "What kind of damage has occurred to the drainage pipe?"),
        (
            "damage_on_member",
            {"damage": "degradation of the anticorrosive", "member": "main girder"},
            "Is there degradation of the anticorrosive on the main girder?",
        ),
        ("damage_present", {"damage": "corrosion"}, "Is there corrosion in the image?"),
        ("damage_on_member", {"damage": "corrosion", "member": "drainage pipe"}, "Is there corrosion on the drainage pipe?"),
        ("any_damage_on_member", {"member": "utility attachment"}, "Is there damage on the utility attachment?"),
        (
            "which_member_has_damage",
            {"damage": "degradation of the anticorrosive"},
            "What is the member that has degradation of the anticorrosive?",
        ),
        ("what_damage_in_image", {}, "What kind of damage is occurring in the image?"),
    ],
)
def test_render_question_text(template_id, slots, text):
    q = render_question(template_id, slots)
    assert q.text == text
    assert parse_question(text, VOCAB) == q


def test_render_errors():
    with pytest.raises(ValueError, match="unknown"):
        render_question("how_old", {})
    with pytest.raises(ValueError, match="needs"):
        render_question("damage_on_member", {"member": "slab"})
    with pytest.raises(ValueError, match="takes no"):
        render_question("member_present", {"member": "slab", "damage": "corrosion"})


def test_parse_question_rejects_unknown():
    with pytest.raises(ValueError):
        parse_question("Is the spaceship in the image?", VOCAB)
    # "damage" is not a damage name, so this is the any-damage template
    assert parse_question("Is there damage on the slab?", VOCAB).template_id == "any_damage_on_member"


def test_every_template_round_trips_over_vocabulary():
    for tid, template in TEMPLATES.items():
        members = VOCAB.members if "{member}" in template else [None]
        damages = VOCAB.damages if "{damage}" in template else [None]
        for m in members:
            for d in damages:
                q = render_question(tid, member=m, damage=d)
                assert parse_question(q.text, VOCAB) == q


def test_generate_contains_reference_pairs():
    qa = {(q.text, a.value) for q, a in generate_qa(ann(main_girder=["corrosion"]), VOCAB)}
    assert ("Is there corrosion in the image?", YES) in qa
    assert ("Is there corrosion on the main girder?", YES) in qa
    assert ("Is the main girder in the image?", YES) in qa
    assert ("What is the member that has corrosion?", "main girder") in qa
    assert ("What kind of damage has occurred to the main girder?", "corrosion") in qa


def test_generate_empty_annotation_only_negatives():
    qa = generate_qa(Annotation("empty"), VOCAB)
    assert len(qa) == 4
    assert {a.value for _, a in qa} == {NO}
    assert {q.template_id for q, _ in qa} == {"member_present", "damage_present"}


def test_generate_undamaged_member():
    qa = {(q.template_id, a.value) for q, a in generate_qa(ann(slab=[]), VOCAB)}
    assert ("any_damage_on_member", NO) in qa
    assert "what_damage_on_member" not in {t for t, _ in qa}


def test_generate_rejects_unknown_names():
    with pytest.raises(ValueError):
        generate_qa(ann(spaceship=["corrosion"]), VOCAB)
    with pytest.raises(ValueError):
        generate_qa(ann(slab=["dust"]), VOCAB)


def test_negative_count_configurable_and_deterministic():
    a = ann("x1", slab=["cracking"])
    n0 = len(generate_qa(a, VOCAB, negatives=0))
    n3 = len(generate_qa(a, VOCAB, negatives=3))
    assert n3 - n0 == 6
    assert generate_qa(a, VOCAB) == generate_qa(a, VOCAB)
    # draw is keyed on image_id
    draws = {tuple(q.text for q, _ in generate_qa(ann(f"img{i}", slab=[]), VOCAB)) for i in range(20)}
    assert len(draws) > 1


def test_oracle_examples():
    oracle = AnnotationOracle([ann(slab=["cracking"])])
    ask = lambda tid, **s: oracle_answer(oracle, "img", render_question(tid, s)).value  # noqa: E731
    assert ask("member_present", member="slab") == YES
    assert ask("damage_on_member", damage="leaking", member="slab") == NO
    assert ask("what_damage_on_member", member="slab") == "cracking"
    assert ask("what_damage_in_image") == "cracking"
    assert ask("which_member_has_damage", damage="cracking") == "slab"
    assert ask("any_damage_on_member", member="abutment") == NO


def test_oracle_not_applicable_and_unknown_image():
    oracle = AnnotationOracle([ann(slab=[]), ann("clean")])
    with pytest.raises(NotApplicableError):
        oracle.answer("img", render_question("what_damage_on_member", member="slab"))
    with pytest.raises(NotApplicableError):
        oracle.answer("img", render_question("what_damage_on_member", member="abutment"))
    with pytest.raises(NotApplicableError):
        oracle.answer("clean", render_question("what_damage_in_image"))
    with pytest.raises(NotApplicableError):
        oracle.answer("img", render_question("which_member_has_damage", damage="corrosion"))
    with pytest.raises(UnknownImageError):
        oracle.answer("other", render_question("member_present", member="slab"))


def test_multi_damage_answers_follow_vocabulary_order():
    a = ann(slab=["leaking", "cracking"], main_girder=["leaking"])
    oracle = AnnotationOracle([a])
    assert oracle.answer("img", render_question("what_damage_on_member", member="slab")).value == "cracking"
    assert oracle.answer("img", render_question("which_member_has_damage", damage="leaking")).value == "main girder"


@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    a = random_annotation(seed, f"img{seed}")
    oracle = AnnotationOracle([a])
    qa = generate_qa(a, VOCAB)
    assert len(qa) >= 1 + 2 * len(a.members)
    assert len({q.text for q, _ in qa}) == len(qa)
    for q, expected in qa:
        got = oracle.answer(a.image_id, q)
        assert got.value == expected.value
        assert VOCAB.is_answer(got.value)


@given(st.text(max_size=40))
def test_normalization_idempotent(s):
    once = VOCAB.normalize(s)
    assert VOCAB.normalize(once) == once
    assert VOCAB.normalize("  " + s.upper() + "\t") == VOCAB.normalize(s.upper())


def test_normalization_synonyms():
    assert VOCAB.normalize("  Water   Leakage ") == "leaking"
    assert VOCAB.normalize("YES") == "yes"


def test_vocabulary_validation():
    with pytest.raises(ValueError):
        Vocabulary(members=("slab", "Slab"))
    with pytest.raises(ValueError):
        Vocabulary(members=("slab",), damages=("slab",))
    with pytest.raises(ValueError):
        Vocabulary(synonyms={"wet": "soggy"})
    with pytest.raises(ValueError):
        Vocabulary(synonyms={"a": "b", "b": "a"})
    chained = Vocabulary(synonyms={"drip": "seep", "seep": "leaking"})
    assert chained.normalize("drip") == "leaking"


def test_vocabulary_is_extensible():
    vocab = Vocabulary(members=Vocabulary().members + ("pier",), damages=Vocabulary().damages + ("spalling",))
    qa = generate_qa(ann(pier=["spalling"]), vocab)
    assert ("Is there spalling on the pier?", YES) in {(q.text, a.value) for q, a in qa}


def test_corpus_export_is_deterministic_jsonl():
    anns = [random_annotation(s, f"img{s:03d}") for s in range(30)]
    text = corpus_jsonl(qa_records(anns, VOCAB))
    assert text == corpus_jsonl(qa_records(anns, VOCAB))
    lines = text.splitlines()
    assert len(lines) == sum(len(generate_qa(a, VOCAB)) for a in anns)
    rec = json.loads(lines[0])
    assert set(rec) == {"image_id", "question_text", "answer", "template_id"}


def test_annotation_document_parsing():
    doc = json.dumps([{"image_id": "a", "members": [{"name": " Slab ", "damages": ["Cracking"]}]}, {"image_id": "b", "members": []}])
    a, b = parse_annotations(doc)
    assert a.members[0] == MemberAnnotation("slab", ("cracking",))
    assert b.members == ()
    with pytest.raises(ValueError):
        parse_annotations(json.dumps([{"image_id": "a"}, {"image_id": "a"}]))


def test_normalize_text():
    assert normalize_text("  Main\n  Girder ") == "main girder"
