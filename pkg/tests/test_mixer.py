import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locproj.mixer import (TUNED_PERCENT, MixtureEntry, MixtureError, MixtureSpec, MixtureTable,
                           epochs_report, tuned_spec, resolve, sample, sample_stream)


def three():
    return [MixtureEntry("d1", "A", 1000), MixtureEntry("d2", "A", 9000), MixtureEntry("d3", "B", 500)]


def test_per_dataset():
    t = resolve(MixtureSpec(three(), "per_dataset"))
    assert all(abs(p - 1 / 3) < 1e-15 for p in t.probs.values())


def test_per_task():
    t = resolve(MixtureSpec(three(), "per_task"))
    assert t.probs == pytest.approx({"d1": 0.25, "d2": 0.25, "d3": 0.5}, abs=1e-15)


def test_per_sample_unclipped_and_clipped():
    t = resolve(MixtureSpec(three(), "per_sample_100k"))
    assert t.probs == pytest.approx({"d1": 1000 / 10500, "d2": 9000 / 10500, "d3": 500 / 10500}, abs=1e-15)
    big = [MixtureEntry("a", "x", 1_000_000), MixtureEntry("b", "x", 50_000)]
    t = resolve(MixtureSpec(big, "per_sample_100k"))
    assert t.probs == pytest.approx({"a": 100 / 150, "b": 50 / 150}, abs=1e-15)


def test_tuned_preserves_ratios():
    t = resolve(tuned_spec())
    assert len(t.probs) == 13 and abs(sum(t.probs.values()) - 1) < 1e-12
    total = sum(TUNED_PERCENT.values())
    for name, pct in TUNED_PERCENT.items():
        assert abs(t[name] - pct / total) < 1e-12
    assert abs(t["VQAv2"] / t["ShareGPT"] - 10.3 / 2.6) < 1e-12


@pytest.mark.parametrize("entries,strategy", [
    ([], "per_dataset"),
    ([MixtureEntry("a", "x", 0)], "per_dataset"),
    ([MixtureEntry("a", "x", 5)], "per_dataset_tuned"),
    ([MixtureEntry("a", "x", 5, 1.0)], "per_dataset"),
    ([MixtureEntry("a", "x", 5, -1.0), MixtureEntry("b", "x", 5, 2.0)], "per_dataset_tuned"),
    ([MixtureEntry("a", "x", 5, 0.0)], "per_dataset_tuned"),
    ([MixtureEntry("a", "x", 5), MixtureEntry("a", "y", 5)], "per_dataset"),
    ([MixtureEntry("a", "x", 5)], "temperature"),
])
def test_invalid_specs(entries, strategy):
    with pytest.raises(MixtureError):
        MixtureSpec(entries, strategy)


@st.composite
def specs(draw):
    n = draw(st.integers(1, 15))
    strategy = draw(st.sampled_from(["per_dataset", "per_task", "per_sample_100k", "per_dataset_tuned"]))
    entries = []
    for i in range(n):
        size = draw(st.integers(1, 10_000_000))
        task = draw(st.sampled_from("abcd"))
        w = draw(st.floats(0.001, 1e6)) if strategy == "per_dataset_tuned" else None
        entries.append(MixtureEntry(f"d{i}", task, size, w))
    return MixtureSpec(entries, strategy, clip=draw(st.integers(1, 200_000)))


@settings(max_examples=300, deadline=None)
@given(specs())
def test_resolve_sums_to_one(spec):
    t = resolve(spec)
    assert abs(sum(t.probs.values()) - 1.0) <= 1e-12
    assert all(p >= 0 for p in t.probs.values())
    if spec.strategy == "per_sample_100k" and all(e.size <= spec.clip for e in spec.entries):
        total = sum(e.size for e in spec.entries)
        for e in spec.entries:
            assert abs(t[e.dataset] - e.size / total) < 1e-12


def test_single_dataset_stream():
    assert sample(MixtureTable({"only": 1.0}), 3, 50) == ["only"] * 50


def test_two_way_frequencies_and_determinism():
    t = MixtureTable({"a": 0.5, "b": 0.5})
    draws = sample(t, 11, 100_000)
    assert abs(draws.count("a") / 1e5 - 0.5) < 0.005
    assert draws == sample(t, 11, 100_000)
    assert draws != sample(t, 12, 100_000)


def test_stream_and_batch_sampler_agree():
    t = resolve(tuned_spec())
    stream = sample_stream(t, 5)
    assert [next(stream) for _ in range(3000)] == sample(t, 5, 3000)
    assert sample(t, 5, 0) == []
    with pytest.raises(ValueError):
        sample(t, 5, -1)


def test_epochs_report():
    assert epochs_report(MixtureTable({"a": 1.0}), 500, {"a": 500}) == {"a": 1.0}
    t = MixtureTable({"a": 0.026, "b": 0.974})
    rep = epochs_report(t, 10_000 * 128, {"a": 100_000, "b": 1_000_000})
    assert abs(rep["a"] - 0.3328) < 1e-9
    assert epochs_report(MixtureTable({"a": 1.0}), 100, {"a": 10, "z": 5})["z"] == 0.0
    with pytest.raises(ValueError):
        epochs_report(t, 1, {"a": 0})


def test_table_validation_and_csv(tmp_path):
    with pytest.raises(MixtureError):
        MixtureTable({"a": 0.5, "b": 0.4})
    t = resolve(MixtureSpec(three(), "per_task"))
    t.write_csv(tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "dataset,probability" and rows[3] == "d3,0.5"


def test_spec_json_round_trip(tmp_path):
    spec = tuned_spec()
    (tmp_path / "m.json").write_text(json.dumps(spec.to_dict()))
    again = MixtureSpec.load(tmp_path / "m.json")
    assert resolve(again).probs == resolve(spec).probs
    assert np.isclose(sum(e.weight for e in again.entries), 100.3)
