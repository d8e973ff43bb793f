from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragtree.bench import (
    Datapoint,
    DatasetError,
    build_knowledge_base,
    compute_stats,
    load_dataset,
    load_kb,
    normalize_text,
    save_dataset,
    save_kb,
)
from ragtree.synth import synthesize_dataset


def test_roundtrip_two_records(tmp_path, two_datapoints):
    path = tmp_path / "ds.jsonl"
    save_dataset(two_datapoints, path)
    loaded = load_dataset(path)
    assert len(loaded) == 2
    assert [dp.to_dict() for dp in loaded] == [dp.to_dict() for dp in two_datapoints]


def test_roundtrip_is_byte_stable(tmp_path, two_datapoints):
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    save_dataset(two_datapoints, first)
    save_dataset(load_dataset(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_loader_accepts_any_field_order(tmp_path, two_datapoints):
    path = tmp_path / "ds.jsonl"
    records = [dp.to_dict() for dp in two_datapoints]
    path.write_text(
        "\n".join(json.dumps(dict(reversed(list(rec.items())))) for rec in records) + "\n",
        encoding="utf-8",
    )
    assert [dp.to_dict() for dp in load_dataset(path)] == records


def test_missing_requirement_names_record_and_field(tmp_path, two_datapoints):
    record = two_datapoints[0].to_dict()
    del record["requirement"]
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(DatasetError) as excinfo:
        load_dataset(path)
    assert excinfo.value.record == 0
    assert excinfo.value.field == "requirement"


def test_empty_solution_rejected(tmp_path, two_datapoints):
    record = two_datapoints[1].to_dict()
    record["solution"] = "   "
    path = tmp_path / "bad.jsonl"
    path.write_text(
        json.dumps(two_datapoints[0].to_dict()) + "\n" + json.dumps(record) + "\n",
        encoding="utf-8",
    )
    with pytest.raises(DatasetError) as excinfo:
        load_dataset(path)
    assert excinfo.value.record == 1
    assert excinfo.value.field == "solution"


def test_unknown_field_rejected(tmp_path, two_datapoints):
    record = two_datapoints[0].to_dict()
    record["surprise"] = 1
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(DatasetError) as excinfo:
        load_dataset(path)
    assert excinfo.value.field == "surprise"


def test_missing_file_errors():
    with pytest.raises(DatasetError):
        load_dataset("/nonexistent/never.jsonl")


def test_synthetic_count_matches_generator(tmp_path):
    # The generator is the oracle for N: it emits exactly n_datapoints records.
    datapoints = synthesize_dataset(n_datapoints=119, n_unique_knowledge=554)
    path = tmp_path / "synth.jsonl"
    save_dataset(datapoints, path)
    assert len(load_dataset(path)) == 119


def test_kb_disjoint_knowledge_keeps_all_items():
    dps = [
        Datapoint(id="a", domain="d", requirement="r1", solution="s1",
                  analytical_knowledge=["a1"], technical_knowledge=["t1"]),
        Datapoint(id="b", domain="d", requirement="r2", solution="s2",
                  analytical_knowledge=["a2"], technical_knowledge=["t2"]),
    ]
    kb = build_knowledge_base(dps)
    assert len(kb) == 4
    assert [item.text for item in kb.items] == ["a1", "t1", "a2", "t2"]


def test_kb_merges_normalized_duplicates(two_datapoints):
    kb = build_knowledge_base(two_datapoints)
    matches = [i for i in kb.items if normalize_text(i.text) == "nano bearings reduce vibration"]
    assert len(matches) == 1
    assert matches[0].source_datapoint_ids == ["dp-1", "dp-2"]
    assert matches[0].kind == "technical"


def test_kb_merge_is_case_and_whitespace_insensitive():
    dps = [
        Datapoint(id="a", domain="d", requirement="r", solution="s",
                  analytical_knowledge=["Nano  Bearings reduce VIBRATION"]),
        Datapoint(id="b", domain="d", requirement="r", solution="s",
                  technical_knowledge=["nano bearings reduce vibration"]),
    ]
    kb = build_knowledge_base(dps)
    assert len(kb) == 1
    # Kind comes from the first occurrence even if a later duplicate differs.
    assert kb.items[0].kind == "analytical"
    assert kb.items[0].source_datapoint_ids == ["a", "b"]


def test_kb_rejects_mixed_domains(two_datapoints):
    two_datapoints[1].domain = "tunnels"
    with pytest.raises(DatasetError):
        build_knowledge_base(two_datapoints)


def test_kb_rejects_zero_datapoints():
    with pytest.raises(DatasetError):
        build_knowledge_base([])


def test_kb_build_is_idempotent(two_datapoints):
    first = build_knowledge_base(two_datapoints)
    second = build_knowledge_base(two_datapoints)
    assert [i.to_dict() for i in first.items] == [i.to_dict() for i in second.items]


def test_kb_roundtrip(tmp_path, two_datapoints):
    kb = build_knowledge_base(two_datapoints)
    path = tmp_path / "kb.jsonl"
    save_kb(kb, path)
    loaded = load_kb(path, domain=kb.domain)
    assert [i.to_dict() for i in loaded.items] == [i.to_dict() for i in kb.items]


def test_stats_small(two_datapoints):
    kb = build_knowledge_base(two_datapoints[:1])
    stats = compute_stats(two_datapoints[:1], kb)
    assert (stats.datapoint_count, stats.knowledge_count) == (1, 2)


def test_stats_match_table_shape():
    datapoints = synthesize_dataset(n_datapoints=119, n_unique_knowledge=554)
    kb = build_knowledge_base(datapoints)
    stats = compute_stats(datapoints, kb)
    assert (stats.datapoint_count, stats.knowledge_count) == (119, 554)


@pytest.mark.parametrize("n,m,seed", [(7, 13, 1), (30, 91, 2), (57, 200, 3)])
def test_stats_match_generator_counts(n, m, seed):
    datapoints = synthesize_dataset(n_datapoints=n, n_unique_knowledge=m, seed=seed)
    kb = build_knowledge_base(datapoints)
    stats = compute_stats(datapoints, kb)
    assert (stats.datapoint_count, stats.knowledge_count) == (n, m)


_knowledge_text = st.text(
    alphabet="ab C\t", min_size=1, max_size=6
).filter(lambda s: s.strip())


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(st.lists(_knowledge_text, max_size=4), st.lists(_knowledge_text, max_size=4)),
        min_size=1,
        max_size=6,
    )
)
def test_every_knowledge_string_maps_to_exactly_one_item(groups):
    dps = [
        Datapoint(id=f"dp{i}", domain="d", requirement="r", solution="s",
                  analytical_knowledge=a, technical_knowledge=t)
        for i, (a, t) in enumerate(groups)
    ]
    kb = build_knowledge_base(dps)
    norms = [normalize_text(item.text) for item in kb.items]
    assert len(norms) == len(set(norms))
    for dp in dps:
        for text in dp.analytical_knowledge + dp.technical_knowledge:
            assert norms.count(normalize_text(text)) == 1
