import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgp.corpus import (
    Artifact,
    Corpus,
    CorpusError,
    FingerprintMismatch,
    Instance,
    SituationGraph,
    dumps_corpus,
    read_corpus,
    write_corpus,
)
from sgp.synthgen import GenConfig, generate_corpus


def test_pilot_shape(pilot):
    assert len(pilot) == 75
    assert pilot.n_artifacts == 225
    assert all(len(i.artifacts) == 3 for i in pilot.instances)
    assert [i.time_index for i in pilot.instances] == list(range(75))


def test_round_trip_file(tmp_path, small, schema):
    path = tmp_path / "corpus.jsonl"
    write_corpus(small, path, schema)
    back = read_corpus(path, schema)
    assert back == small
    assert dumps_corpus(back) == path.read_text()


def test_header_fields(small):
    header = json.loads(dumps_corpus(small).splitlines()[0])
    assert set(header) == {"persona", "schema_fingerprint", "domain_list"}


def test_gold_rows_are_sorted(small):
    for line in dumps_corpus(small).splitlines()[1:]:
        rows = json.loads(line)["gold"]
        assert rows == sorted(rows)
        assert all(len(r) == 5 for r in rows)


def _lines(corpus):
    return dumps_corpus(corpus).splitlines()


def test_unknown_domain_names_field_and_line(small):
    lines = _lines(small)
    rec = json.loads(lines[3])
    rec["domain"] = "astrology"
    lines[3] = json.dumps(rec)
    with pytest.raises(CorpusError, match=r"line 4: field 'domain' has unknown value"):
        read_corpus(io.StringIO("\n".join(lines)))


def test_missing_field(small):
    lines = _lines(small)
    rec = json.loads(lines[2])
    del rec["time_index"]
    lines[2] = json.dumps(rec)
    with pytest.raises(CorpusError, match=r"line 3: missing field 'time_index'"):
        read_corpus(io.StringIO("\n".join(lines)))


def test_malformed_record(small):
    lines = _lines(small)
    lines[5] = lines[5][:-3]
    with pytest.raises(CorpusError, match="line 6"):
        read_corpus(io.StringIO("\n".join(lines)))


def test_fingerprint_mismatch(small, schema):
    lines = _lines(small)
    header = json.loads(lines[0])
    header["schema_fingerprint"] = "0" * 64
    lines[0] = json.dumps(header)
    text = "\n".join(lines)
    assert read_corpus(io.StringIO(text)).schema_ref == "0" * 64
    with pytest.raises(FingerprintMismatch):
        read_corpus(io.StringIO(text), schema)


def test_time_index_must_increase(small):
    a, b = small.instances[:2]
    with pytest.raises(CorpusError, match="strictly increasing"):
        Corpus(small.persona, (b, a), small.schema_ref, small.domains)


def test_duplicate_ids(small):
    a = small.instances[0]
    clone = Instance(a.instance_id, 99, a.domain, a.artifacts, SituationGraph(a.instance_id, 99, a.gold.triplets))
    with pytest.raises(CorpusError, match="duplicate"):
        Corpus(small.persona, (a, clone), small.schema_ref, small.domains)


def test_artifact_checks():
    with pytest.raises(CorpusError):
        Artifact("x", "video", "hi", {})
    with pytest.raises(CorpusError):
        Artifact("x", "text", "", {})


def test_write_refuses_invalid_gold(small, schema):
    from sgp.triplets import Triplet

    inst = small.instances[0]
    bad = SituationGraph(inst.instance_id, 0, inst.gold.triplets | {Triplet.parse("Person:Elise|admires|Person:Marco")})
    broken = Corpus(small.persona, (Instance(inst.instance_id, 0, inst.domain, inst.artifacts, bad),), small.schema_ref, small.domains)
    with pytest.raises(CorpusError, match="violate"):
        write_corpus(broken, io.StringIO(), schema)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(0, 6), media=st.floats(0, 1))
def test_round_trip_property(schema, seed, n, media):
    c = generate_corpus(schema, GenConfig(seed=seed, n_instances=n, media_rate=media))
    assert read_corpus(io.StringIO(dumps_corpus(c)), schema) == c
