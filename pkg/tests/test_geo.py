import json
import math

import numpy as np
import pytest

from crispkit.errors import (
    EmptyBlockSetError,
    EmptySetError,
    InvalidCoordinateError,
    UncoveredBlockError,
)
from crispkit.geo import (
    ObservationRecord,
    assign_blocks,
    attach_lambda_subsets,
    bin_by_frequency,
    block_of,
    build_split,
    format_lambda,
    haversine_m,
    manifest_from_json,
    manifest_to_json,
    read_observations,
    round_half_up,
    sample_lambda_subset,
    write_observations,
)

from oracles import haversine_oracle

M_PER_DEG_LAT = 111_194.93


class TestHaversine:
    def test_coincident_points(self):
        assert haversine_m((36.5, -120.25), (36.5, -120.25)) == 0.0

    def test_one_degree_longitude_at_equator(self):
        # independent evaluation: R * pi / 180 on the configured sphere
        expected = 6_371_008.8 * math.pi / 180.0
        assert abs(haversine_m((0.0, 0.0), (0.0, 1.0)) - expected) < 1e-6
        assert abs(haversine_m((0.0, 0.0), (0.0, 1.0)) - 111_195.0) < 1.0

    def test_symmetry_over_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            p = (float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
            q = (float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
            assert haversine_m(p, q) == haversine_m(q, p)
            assert haversine_m(p, q) >= 0.0

    def test_matches_atan2_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = (float(rng.uniform(-80, 80)), float(rng.uniform(-179, 179)))
            q = (p[0] + float(rng.uniform(-0.5, 0.5)), p[1] + float(rng.uniform(-0.5, 0.5)))
            assert abs(haversine_m(p, q) - haversine_oracle(p, q)) < 1e-6

    def test_invalid_coordinates(self):
        with pytest.raises(InvalidCoordinateError):
            haversine_m((91.0, 0.0), (0.0, 0.0))
        with pytest.raises(InvalidCoordinateError):
            haversine_m((0.0, 0.0), (0.0, 181.0))
        with pytest.raises(InvalidCoordinateError):
            haversine_m((float("nan"), 0.0), (0.0, 0.0))


class TestBlockOf:
    def test_spec_example(self):
        assert block_of(36.05, -120.07) == (360, -1201)

    def test_origin(self):
        assert block_of(0.0, 0.0) == (0, 0)

    def test_boundary_cells_are_half_open(self):
        just_below = block_of(36.10 - 1e-12, -120.0)
        at_boundary = block_of(36.10, -120.0)
        assert at_boundary[0] == just_below[0] + 1

    def test_custom_cell_size(self):
        assert block_of(10.3, 20.6, cell_deg=0.5) == (20, 41)

    def test_invalid(self):
        with pytest.raises(InvalidCoordinateError):
            block_of(100.0, 0.0)


class TestAssignBlocks:
    def test_eight_blocks(self):
        blocks = [(i, 0) for i in range(8)]
        assignment = assign_blocks(blocks, np.random.default_rng(0))
        counts = {s: sum(1 for v in assignment.values() if v == s) for s in ("train", "val", "test")}
        assert counts == {"train": 6, "val": 1, "test": 1}

    def test_deterministic_under_rng_state(self):
        blocks = [(i, j) for i in range(10) for j in range(5)]
        a = assign_blocks(blocks, np.random.default_rng(42))
        b = assign_blocks(blocks, np.random.default_rng(42))
        assert a == b

    def test_counts_follow_rounding_rule(self):
        rng = np.random.default_rng(3)
        blocks = {(int(rng.integers(-900, 900)), int(rng.integers(-1800, 1800))) for _ in range(12000)}
        assignment = assign_blocks(blocks, np.random.default_rng(1))
        n = len(blocks)
        n_test = sum(1 for v in assignment.values() if v == "test")
        n_val = sum(1 for v in assignment.values() if v == "val")
        assert n_test == round_half_up(0.125 * n)
        assert n_val == round_half_up(0.125 * n)
        assert abs(n_test / n - 0.125) < 0.005

    def test_partition_is_exhaustive_and_disjoint(self):
        blocks = [(i, -i) for i in range(37)]
        assignment = assign_blocks(blocks, np.random.default_rng(7))
        assert set(assignment) == set(blocks)
        assert set(assignment.values()) <= {"train", "val", "test"}

    def test_empty_rejected(self):
        with pytest.raises(EmptyBlockSetError):
            assign_blocks([], np.random.default_rng(0))


def make_record(obs_id, lat, lon, class_id=0, research=True, species=True, group=0):
    return ObservationRecord(
        obs_id=obs_id, lat=lat, lon=lon,
        class_id=class_id if species else None,
        research_grade=research, species_level=species, group_id=group,
    )


class TestBuildSplit:
    def block_assignment_for(self, records, forced=None):
        assignment = {}
        for r in records:
            b = block_of(r.lat, r.lon)
            assignment[b] = "train"
        if forced:
            assignment.update(forced)
        return assignment

    def test_proximity_filter_drops_close_test_obs(self):
        # train obs at the SW corner of one block; test obs ~200 m away across
        # the boundary gets dropped, a ~does not~ distant one survives
        train = make_record("t0", 36.0999, -120.05, class_id=1)
        near = make_record("near", 36.1001 + 0.0008, -120.05, class_id=1)  # ~110 m away
        far = make_record("far", 36.1500, -120.05, class_id=1)
        extra_train = make_record("t1", 36.0998, -120.05, class_id=2)
        test_train_classes = make_record("t2", 36.0997, -120.05, class_id=1)
        val_obs = make_record("v0", 36.2001, -120.05, class_id=1)
        records = [train, extra_train, test_train_classes, near, far, val_obs]
        assignment = {
            block_of(36.0999, -120.05): "train",
            block_of(36.1001, -120.05): "test",
            block_of(36.1500, -120.05): "test",
            block_of(36.2001, -120.05): "val",
        }
        manifest = build_split(records, assignment, proximity_m=256.0)
        assert "near" not in manifest.obs_assignment
        assert manifest.obs_assignment.get("far") == "test"
        assert manifest.obs_assignment.get("v0") == "val"

    def test_low_quality_train_kept_in_pool_not_labeled(self):
        casual = make_record("c0", 36.01, -120.01, research=False, species=True, class_id=3)
        needs_id = make_record("n0", 36.02, -120.02, research=True, species=False)
        good = make_record("g0", 36.03, -120.03, class_id=3)
        val_obs = make_record("v0", 36.95, -120.95, class_id=3)
        test_obs = make_record("s0", 36.55, -120.55, class_id=3)
        records = [casual, needs_id, good, val_obs, test_obs]
        assignment = self.block_assignment_for(
            records,
            forced={block_of(36.95, -120.95): "val", block_of(36.55, -120.55): "test"},
        )
        manifest = build_split(records, assignment)
        assert manifest.obs_assignment["c0"] == "train"
        assert manifest.obs_assignment["n0"] == "train"
        assert "c0" not in manifest.labeled_train
        assert "n0" not in manifest.labeled_train
        assert manifest.labeled_train == ("g0",)

    def test_low_quality_val_test_dropped(self):
        good_train = make_record("g0", 36.03, -120.03, class_id=1)
        casual_test = make_record("c1", 36.55, -120.55, research=False, class_id=1)
        good_test = make_record("g1", 36.56, -120.56, class_id=1)
        good_val = make_record("g2", 36.95, -120.95, class_id=1)
        records = [good_train, casual_test, good_test, good_val]
        assignment = self.block_assignment_for(
            records,
            forced={
                block_of(36.55, -120.55): "test",
                block_of(36.56, -120.56): "test",
                block_of(36.95, -120.95): "val",
            },
        )
        manifest = build_split(records, assignment)
        assert "c1" not in manifest.obs_assignment
        assert manifest.obs_assignment["g1"] == "test"

    def test_class_universe_matches_brute_force_on_synthetic_corpus(self):
        rng = np.random.default_rng(5)
        records = []
        for i in range(1000):
            species = bool(rng.random() < 0.9)
            records.append(
                ObservationRecord(
                    obs_id=f"o{i:04d}",
                    lat=float(36.0 + rng.uniform(0, 1)),
                    lon=float(-121.0 + rng.uniform(0, 1)),
                    class_id=int(rng.integers(0, 12)) if species else None,
                    research_grade=bool(rng.random() < 0.8),
                    species_level=species,
                )
            )
        blocks = {block_of(r.lat, r.lon) for r in records}
        assignment = assign_blocks(blocks, np.random.default_rng(6))
        manifest = build_split(records, assignment, proximity_m=256.0)

        by_id = {r.obs_id: r for r in records}
        split_classes = {"train": set(), "val": set(), "test": set()}
        for obs_id in manifest.labeled_train:
            split_classes["train"].add(by_id[obs_id].class_id)
        for obs_id, split in manifest.obs_assignment.items():
            if split in ("val", "test"):
                split_classes[split].add(by_id[obs_id].class_id)
        expected = split_classes["train"] & split_classes["val"] & split_classes["test"]
        assert set(manifest.class_universe) == expected
        # every retained labeled/val/test observation's class is in the universe
        for obs_id in manifest.labeled_train:
            assert by_id[obs_id].class_id in expected

    def test_no_val_test_within_proximity_of_train(self):
        rng = np.random.default_rng(8)
        records = [
            ObservationRecord(
                obs_id=f"o{i}",
                lat=float(36.0 + rng.uniform(0, 0.5)),
                lon=float(-120.5 + rng.uniform(0, 0.5)),
                class_id=int(rng.integers(0, 5)),
            )
            for i in range(400)
        ]
        blocks = {block_of(r.lat, r.lon) for r in records}
        assignment = assign_blocks(blocks, np.random.default_rng(9))
        manifest = build_split(records, assignment, proximity_m=256.0)
        by_id = {r.obs_id: r for r in records}
        train_pts = [
            (by_id[o].lat, by_id[o].lon)
            for o, s in manifest.obs_assignment.items()
            if s == "train"
        ]
        for obs_id, split in manifest.obs_assignment.items():
            if split == "train":
                continue
            p = (by_id[obs_id].lat, by_id[obs_id].lon)
            for q in train_pts:
                assert haversine_m(p, q) > 256.0

    def test_uncovered_block_rejected(self):
        record = make_record("x", 36.0, -120.0, class_id=0)
        with pytest.raises(UncoveredBlockError):
            build_split([record], {(999, 999): "train"})


class TestLambdaSubsets:
    def test_full_fraction(self):
        ids = [f"o{i}" for i in range(17)]
        subset = sample_lambda_subset(ids, 1.0, np.random.default_rng(0))
        assert sorted(subset) == sorted(ids)

    def test_rounding_rule(self):
        ids = [f"o{i}" for i in range(100_000)]
        subset = sample_lambda_subset(ids, 0.0025, np.random.default_rng(1))
        assert len(subset) == 250

    def test_repeated_draws_same_size_different_members(self):
        ids = [f"o{i}" for i in range(500)]
        draws = {sample_lambda_subset(ids, 0.05, np.random.default_rng(s)) for s in range(5)}
        assert all(len(d) == 25 for d in draws)
        assert len(draws) > 1

    def test_monotone_sizes(self):
        ids = [f"o{i}" for i in range(1000)]
        small = sample_lambda_subset(ids, 0.01, np.random.default_rng(2))
        large = sample_lambda_subset(ids, 0.05, np.random.default_rng(2))
        assert len(small) < len(large)

    def test_empty_rejected(self):
        with pytest.raises(EmptySetError):
            sample_lambda_subset([], 0.5, np.random.default_rng(0))

    def test_format_lambda(self):
        assert format_lambda(0.0025) == "0.0025"
        assert format_lambda(0.20) == "0.2"
        assert format_lambda(0.025) == "0.025"


class TestFrequencyBins:
    def test_boundary_semantics(self):
        bins = bin_by_frequency({0: 701, 1: 700, 2: 200, 3: 199})
        assert bins.bin_of[0] == "frequent"
        assert bins.bin_of[1] == "common"
        assert bins.bin_of[2] == "common"
        assert bins.bin_of[3] == "rare"

    def test_random_table_recount(self):
        rng = np.random.default_rng(3)
        counts = {c: int(rng.integers(1, 1200)) for c in range(80)}
        bins = bin_by_frequency(counts)
        for c, count in counts.items():
            expected = "frequent" if count > 700 else ("rare" if count < 200 else "common")
            assert bins.bin_of[c] == expected
        sizes = {b: len(bins.classes_in(b)) for b in ("frequent", "common", "rare")}
        assert sum(sizes.values()) == len(counts)

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError):
            bin_by_frequency({0: 0})


class TestSerialization:
    def test_manifest_round_trip(self):
        rng = np.random.default_rng(4)
        records = [
            ObservationRecord(f"o{i}", 36.0 + i * 0.01, -120.0 - i * 0.01, class_id=i % 3)
            for i in range(60)
        ]
        blocks = {block_of(r.lat, r.lon) for r in records}
        assignment = assign_blocks(blocks, rng)
        manifest = build_split(records, assignment)
        if manifest.labeled_train:
            attach_lambda_subsets(manifest, [0.05, 0.2], rng)
        text = manifest_to_json(manifest)
        back = manifest_from_json(text)
        assert back.block_assignment == manifest.block_assignment
        assert back.obs_assignment == manifest.obs_assignment
        assert back.labeled_train == manifest.labeled_train
        assert back.lambda_subsets == manifest.lambda_subsets
        assert back.class_universe == manifest.class_universe
        assert manifest_to_json(back) == text

    def test_corpus_round_trip_and_unknown_fields(self, tmp_path):
        records = [make_record("a", 36.0, -120.0, class_id=5, group=2)]
        path = tmp_path / "obs.jsonl"
        write_observations(path, records)
        # unknown fields in the file are ignored
        with open(path, "a", encoding="utf-8") as fh:
            obj = {
                "obs_id": "b", "lat": 36.5, "lon": -120.5, "class_id": 1,
                "research_grade": True, "species_level": True, "group_id": 0,
                "n_ground_views": 2, "license": "cc0", "photographer": "nobody",
            }
            fh.write(json.dumps(obj) + "\n")
        back = read_observations(path)
        assert len(back) == 2
        assert back[0] == records[0]
        assert back[1].obs_id == "b"
        assert back[1].n_ground_views == 2
