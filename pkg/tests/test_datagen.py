"""Dataset generators, value distributions, serialization, log ingestion."""

import json

import numpy as np
import pytest
from scipy.integrate import quad

from jointauction.datagen import (
    FIXED_SETTINGS,
    Dataset,
    RandomCountSpec,
    TruncatedLognormalMixture,
    TruncatedNormal,
    Uniform,
    _draw_ad_count,
    _split_ad_kinds,
    dataset_bytes,
    distribution_from_dict,
    distribution_to_dict,
    generate_fixed,
    generate_random_count,
    ingest_logs,
    instance_from_obj,
    instance_to_obj,
    load_jsonl,
    sample_value,
    save_jsonl,
)
from jointauction.errors import ConfigError, ParseError, SchemaError


class TestRandomCount:
    def test_ctr_presets(self):
        assert generate_random_count(RandomCountSpec(n_slots=4), 1, 0).instances[0].slots.ctrs == (0.7, 0.6, 0.5, 0.4)
        assert generate_random_count(RandomCountSpec(n_slots=5), 1, 0).instances[0].slots.ctrs == (0.7, 0.6, 0.5, 0.4, 0.3)

    def test_counts_invariants(self):
        ds = generate_random_count(RandomCountSpec(n_slots=4), 200, seed=3)
        for inst in ds.instances:
            assert inst.m + inst.n == 20
            assert 3 <= inst.m <= 10
            kinds = [a.kind for a in inst.advertisers]
            assert kinds.count("store") >= 1
            assert kinds.count("brand") >= 1
            assert kinds.count("joint") >= 1

    def test_ad_count_coverage(self):
        # The count draw itself covers every value in [3, 10].
        rng = np.random.default_rng(0)
        seen = {_draw_ad_count(rng, 3, 10) for _ in range(100_000)}
        assert seen == set(range(3, 11))

    def test_full_path_coverage(self):
        ds = generate_random_count(RandomCountSpec(n_slots=4), 3000, seed=11)
        assert {inst.m for inst in ds.instances} == set(range(3, 11))

    def test_split_uniform_composition(self):
        rng = np.random.default_rng(0)
        parts = [_split_ad_kinds(4, rng) for _ in range(3000)]
        assert all(sum(p) == 4 and min(p) >= 1 for p in parts)
        # Three compositions of 4 into 3 positive parts, roughly equally likely.
        counts = {c: sum(1 for p in parts if p == c) for c in {(2, 1, 1), (1, 2, 1), (1, 1, 2)}}
        for c, n in counts.items():
            assert abs(n / 3000 - 1 / 3) < 0.05

    def test_ue_supports(self):
        ds = generate_random_count(RandomCountSpec(n_slots=4), 100, seed=5)
        for inst in ds.instances:
            assert all(0.0 <= a.ue <= 0.5 for a in inst.advertisers)
            assert all(0.5 <= o.ue <= 1.0 for o in inst.organics)
            assert all(0.0 <= a.value.store <= 1.0 and 0.0 <= a.value.brand <= 1.0 for a in inst.advertisers)


class TestFixed:
    def test_setting_a(self):
        ds = generate_fixed("A", 5, seed=0)
        inst = ds.instances[0]
        assert (inst.m, inst.n, inst.k) == (4, 6, 3)
        assert inst.slots.ctrs == (0.5, 0.3, 0.2)

    def test_setting_c(self):
        inst = generate_fixed("C", 1, seed=0).instances[0]
        assert (inst.m, inst.n) == (6, 4)

    def test_unknown_setting(self):
        with pytest.raises(ConfigError):
            generate_fixed("D", 1, seed=0)

    def test_determinism_bytes(self):
        a = dataset_bytes(generate_fixed("A", 50, seed=42))
        b = dataset_bytes(generate_fixed("A", 50, seed=42))
        assert a == b

    def test_seed_changes_data(self):
        a = dataset_bytes(generate_fixed("A", 10, seed=1))
        b = dataset_bytes(generate_fixed("A", 10, seed=2))
        assert a != b

    def test_type_shapes(self):
        ds = generate_fixed("B", 100, seed=9)
        for inst in ds.instances:
            for a in inst.advertisers:
                if a.kind == "store":
                    assert a.value.brand == 0.0
                if a.kind == "brand":
                    assert a.value.store == 0.0


class TestSampleValue:
    def test_uniform_bounds_and_mean(self):
        rng = np.random.default_rng(0)
        xs = sample_value(Uniform(0, 1), rng, size=1_000_000)
        assert xs.min() >= 0 and xs.max() <= 1
        se = 1 / np.sqrt(12 * len(xs))
        assert abs(xs.mean() - 0.5) < 3 * se + 1e-12

    def test_truncated_normal_symmetric_mean(self):
        rng = np.random.default_rng(1)
        xs = sample_value(TruncatedNormal(0.5, 0.5, 0.0, 1.0), rng, size=1_000_000)
        assert xs.min() >= 0 and xs.max() <= 1
        se = xs.std() / np.sqrt(len(xs))
        assert abs(xs.mean() - 0.5) < 3 * se

    def test_lognormal_mixture_mean_vs_quadrature(self):
        dist = TruncatedLognormalMixture()
        rng = np.random.default_rng(2)
        xs = sample_value(dist, rng, size=400_000)
        assert xs.min() >= 0 and xs.max() <= 1

        def mixture_pdf(x):
            total = 0.0
            for mu, sigma in dist.components:
                z = (np.log(x) - mu) / sigma
                total += np.exp(-0.5 * z * z) / (x * sigma * np.sqrt(2 * np.pi))
            return total / len(dist.components)

        mass, _ = quad(mixture_pdf, 1e-12, 1.0)
        first, _ = quad(lambda x: x * mixture_pdf(x), 1e-12, 1.0)
        second, _ = quad(lambda x: x * x * mixture_pdf(x), 1e-12, 1.0)
        mean = first / mass
        var = second / mass - mean**2
        se = np.sqrt(var / len(xs))
        assert abs(xs.mean() - mean) < 3 * se

    def test_dict_round_trip(self):
        for dist in (Uniform(0, 1), TruncatedNormal(0.5, 0.5, 0, 1), TruncatedLognormalMixture()):
            assert distribution_from_dict(distribution_to_dict(dist)) == dist


class TestSerialization:
    def test_jsonl_round_trip(self, tmp_path):
        ds = generate_fixed("A", 20, seed=7)
        path = tmp_path / "ds.jsonl"
        save_jsonl(ds, path)
        loaded = load_jsonl(path)
        assert len(loaded) == 20
        assert dataset_bytes(loaded) == dataset_bytes(ds)

    def test_obj_round_trip(self):
        inst = generate_fixed("A", 1, seed=3).instances[0]
        again = instance_from_obj(instance_to_obj(inst))
        assert again == inst


def _log_record(n_ads, n_orgs, k=4, extra=None):
    rec = {
        "request_id": "r1",
        "timestamp": "2025-03-01T00:00:00",
        "slots": [0.7, 0.6, 0.5, 0.4, 0.3][:k],
        "ads": [
            {"type": "store", "value": [round(0.1 * (i + 1), 3), 0.0], "ue": 0.1, "ctx": [0.0] * 3}
            for i in range(n_ads)
        ],
        "organics": [{"ue": round(0.5 + 0.04 * j, 3), "ctx": [0.0] * 3} for j in range(n_orgs)],
    }
    if extra:
        rec.update(extra)
    return rec


class TestIngest:
    def test_truncation(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text(json.dumps(_log_record(12, 15)) + "\n", encoding="utf-8")
        ds, stats = ingest_logs(path, target_k=4, max_ads=10, max_organics=10)
        inst = ds.instances[0]
        assert (inst.m, inst.n, inst.k) == (10, 10, 4)
        assert stats.n_kept == 1 and stats.n_dropped == 0
        # Kept the highest bids and highest ue.
        assert min(a.value.total for a in inst.advertisers) >= 0.3
        assert min(o.ue for o in inst.organics) >= 0.5 + 0.04 * 5 - 1e-9

    def test_drop_small_records(self, tmp_path):
        path = tmp_path / "log.jsonl"
        lines = [json.dumps(_log_record(1, 1)), json.dumps(_log_record(5, 5))]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        ds, stats = ingest_logs(path, target_k=4, max_ads=10, max_organics=10)
        assert stats.n_dropped == 1 and stats.n_kept == 1

    def test_missing_ue_schema_error(self, tmp_path):
        rec = _log_record(3, 3)
        del rec["organics"][0]["ue"]
        path = tmp_path / "log.jsonl"
        path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
        with pytest.raises(SchemaError, match="ue"):
            ingest_logs(path, target_k=2, max_ads=5, max_organics=5)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text(json.dumps(_log_record(3, 3)) + "\n{broken\n", encoding="utf-8")
        with pytest.raises(ParseError, match="line 2"):
            ingest_logs(path, target_k=2, max_ads=5, max_organics=5)

    def test_unknown_fields_ignored(self, tmp_path):
        rec = _log_record(3, 3, extra={"mystery": [1, 2, 3]})
        path = tmp_path / "log.jsonl"
        path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
        ds, _ = ingest_logs(path, target_k=2, max_ads=5, max_organics=5)
        assert len(ds) == 1

    def test_ctr_override(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text(json.dumps(_log_record(3, 3)) + "\n", encoding="utf-8")
        ds, _ = ingest_logs(path, target_k=2, max_ads=5, max_organics=5, ctrs_override=(0.9, 0.1))
        assert ds.instances[0].slots.ctrs == (0.9, 0.1)
