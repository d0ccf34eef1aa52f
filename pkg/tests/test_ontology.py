import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgp.ontology import (
    SchemaError,
    check_triplet,
    default_schema_text,
    load_schema,
    partition_latent_surface,
    serialize_schema,
    validate_graph,
)
from sgp.triplets import Node, Triplet

from conftest import T

MINIMAL = {
    "kinds": [
        {"id": "Person", "stratum": "participants", "vocabulary": ["Elise"]},
        {"id": "Emotion", "stratum": "psychological", "vocabulary": ["Stressed"]},
    ],
    "predicates": [{"id": "feels", "latent": True, "arity": [["Person", "Emotion"]]}],
    "min_triplets": 1,
    "max_triplets": 3,
    "completeness_rules": [],
}


def kinds_of(violations):
    return [v.kind for v in violations]


def test_default_schema_counts(schema):
    assert len(schema.kinds) == 11
    assert len(schema.predicates) == 14
    assert schema.latent_predicates == {"feels", "evokes", "has_valence", "conveys_val"}
    assert len(schema.strata) == 4
    assert schema.psychological_kinds == {"emotion", "valence"}


def test_default_vocabulary_sizes(schema):
    surface = sum(len(k.vocabulary) for k in schema.kinds if k.stratum != "psychological")
    latent = sum(len(k.vocabulary) for k in schema.kinds if k.stratum == "psychological")
    assert (surface, latent) == (106, 8)
    assert len(schema.kind("Emotion").vocabulary) == 6
    assert "stressed" in schema.kind("emotion").names


def test_minimal_schema_loads():
    s = load_schema(json.dumps(MINIMAL))
    assert [k.id for k in s.kinds] == ["Person", "Emotion"]
    assert s.predicate("FEELS").latent


def test_dangling_kind_reference():
    doc = json.loads(json.dumps(MINIMAL))
    doc["predicates"][0]["arity"] = [["Person", "Ghost"]]
    with pytest.raises(SchemaError) as exc:
        load_schema(doc)
    assert any("Ghost" in msg and "arity[0]" in path for path, msg in exc.value.issues)


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d["kinds"].append(dict(d["kinds"][0])), "duplicate kind"),
        (lambda d: d["kinds"][0].update(vocabulary=[]), "empty vocabulary"),
        (lambda d: d["predicates"].append(dict(d["predicates"][0])), "duplicate predicate"),
        (lambda d: d["kinds"][0].update(vocabulary=["Elise", "elise "]), "duplicate name"),
        (lambda d: d.update(min_triplets=5, max_triplets=2), "min_triplets"),
        (lambda d: d["kinds"][0].update(stratum="mood"), "unknown stratum"),
        (lambda d: d["predicates"][0].update(arity=[]), "empty arity"),
        (lambda d: d["kinds"][1].update(vocabulary=["a|b"]), "invalid name"),
    ],
)
def test_schema_errors_name_the_path(mutate, fragment):
    doc = json.loads(json.dumps(MINIMAL))
    mutate(doc)
    with pytest.raises(SchemaError) as exc:
        load_schema(doc)
    assert fragment in str(exc.value)
    assert all(path.startswith("$") for path, _ in exc.value.issues)


def test_parse_failure_reports_position():
    with pytest.raises(SchemaError) as exc:
        load_schema('{"kinds": [')
    assert "line 1" in exc.value.issues[0][0]


def test_round_trip(schema):
    again = load_schema(serialize_schema(schema))
    assert again == schema
    assert again.fingerprint == schema.fingerprint
    assert load_schema(default_schema_text()) == schema


def test_check_triplet_valid(schema):
    assert check_triplet(schema, T("Person:Elise|feels|Emotion:Stressed")) == []
    assert check_triplet(schema, T(" person: ELISE |Feels| emotion:stressed")) == []


def test_check_triplet_reversed_roles(schema):
    assert kinds_of(check_triplet(schema, T("Emotion:Stressed|feels|Person:Elise"))) == ["arity_violation"]


def test_check_triplet_unknown_predicate(schema):
    assert kinds_of(check_triplet(schema, T("Person:Elise|admires|Person:Marco"))) == ["unknown_predicate"]


def test_check_triplet_unknown_kind_and_name(schema):
    v = kinds_of(check_triplet(schema, T("Ghost:Casper|feels|Emotion:Bored")))
    assert "unknown_node_kind" in v and "name_not_in_vocabulary" in v and "arity_violation" in v


def _gold(schema):
    return {
        T("Event:Interview|has_participant|Person:Elise"),
        T("Event:Interview|occurs_at|LocationType:Office"),
        T("Person:Elise|feels|Emotion:Stressed"),
        T("Emotion:Stressed|has_valence|Valence:Negative"),
        T("Event:Interview|has_context|SocialContext:Professional"),
        T("Event:Interview|occurs_during|TimeOfDay:Morning"),
    }


def test_validate_graph_ok(schema):
    assert validate_graph(schema, _gold(schema)) == []


def test_validate_graph_size_bounds(schema):
    g = _gold(schema)
    people = sorted(k for k in schema.kind("Person").vocabulary)
    for name in people:
        g.add(T(f"Event:Wedding|has_participant|Person:{name}"))
    g.add(T("Event:Wedding|occurs_at|LocationType:Park"))
    assert len(g) == schema.max_triplets + 1
    assert "size_above_max" in kinds_of(validate_graph(schema, g))
    assert "size_below_min" in kinds_of(validate_graph(schema, list(_gold(schema))[:2]))


def test_validate_graph_completeness(schema):
    surface_only = [t for t in _gold(schema) if t.predicate not in ("feels", "has_valence")]
    surface_only += [T("Event:Wedding|occurs_at|LocationType:Park"), T("Event:Gym|part_of|Event:Wedding")]
    v = validate_graph(schema, surface_only)
    unmet = [x.subject for x in v if x.kind == "completeness_unmet"]
    assert unmet == ["predicate:feels", "predicate:has_valence"]


def test_validate_graph_duplicates(schema):
    g = list(_gold(schema))
    assert "duplicate_triplet" in kinds_of(validate_graph(schema, g + g[:1]))


def test_partition_examples(schema):
    feels = T("Person:Elise|feels|Emotion:Stressed")
    occurs = T("Event:Interview|occurs_at|LocationType:Office")
    assert partition_latent_surface(schema, {feels}) == ({feels}, set())
    assert partition_latent_surface(schema, {occurs}) == (set(), {occurs})
    assert partition_latent_surface(schema, set()) == (set(), set())


def test_partition_object_kind_rule(schema):
    # not a latent predicate, but the object is psychological
    t = T("Event:Interview|has_context|Emotion:Fear")
    assert partition_latent_surface(schema, {t})[0] == {t}


_names = st.sampled_from(["Elise", "Office", "Stressed", "Calm", "Interview", "Positive", "x"])
_kinds = st.sampled_from(["Person", "LocationType", "Emotion", "Valence", "Event", "Ghost"])
_preds = st.sampled_from(["feels", "occurs_at", "has_valence", "evokes", "admires", "part_of"])
triplets = st.builds(lambda sk, sn, p, ok, on: Triplet(Node(sk, sn), p, Node(ok, on)), _kinds, _names, _preds, _kinds, _names)


@settings(max_examples=200, deadline=None)
@given(st.sets(triplets, max_size=20))
def test_partition_is_exact(schema, ts):
    lat, surf = partition_latent_surface(schema, ts)
    assert lat | surf == ts
    assert not lat & surf


@settings(max_examples=200, deadline=None)
@given(st.sets(triplets, max_size=20))
def test_clean_graph_means_clean_triplets(schema, ts):
    if validate_graph(schema, ts) == []:
        assert all(check_triplet(schema, t) == [] for t in ts)
