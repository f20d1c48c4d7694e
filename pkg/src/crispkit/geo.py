"""Geospatial block splitting for observation corpora.

Implements the spatial holdout protocol: observations are bucketed into
0.1-degree blocks, blocks are randomly designated test/val/train, val/test
observations too close to any training observation are dropped, label
quality is enforced for evaluation splits, and classes are restricted to
those present in all three splits. Labeled-fraction subsets emulate label
scarcity.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from crispkit import backend
from crispkit.errors import (
    EmptyBlockSetError,
    EmptySetError,
    InvalidCoordinateError,
    UncoveredBlockError,
)

EARTH_RADIUS_M = backend.EARTH_RADIUS_M

SPLITS = ("train", "val", "test")


def _check_lat_lon(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise InvalidCoordinateError(f"non-finite coordinate ({lat}, {lon})")
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise InvalidCoordinateError(f"coordinate ({lat}, {lon}) out of range")


def haversine_m(p: Tuple[float, float], q: Tuple[float, float]) -> float:
    """Great-circle distance in meters between two (lat, lon) points."""
    _check_lat_lon(*p)
    _check_lat_lon(*q)
    p1, l1 = math.radians(p[0]), math.radians(p[1])
    p2, l2 = math.radians(q[0]), math.radians(q[1])
    sin_dlat = math.sin((p2 - p1) * 0.5)
    sin_dlon = math.sin((l2 - l1) * 0.5)
    a = sin_dlat * sin_dlat + math.cos(p1) * math.cos(p2) * sin_dlon * sin_dlon
    a = min(1.0, max(0.0, a))
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def block_of(lat: float, lon: float, cell_deg: float = 0.1) -> Tuple[int, int]:
    """Half-open grid cell index of a coordinate: floor(value / cell_deg)."""
    _check_lat_lon(lat, lon)
    if not cell_deg > 0:
        raise ValueError("cell_deg must be > 0")
    return (int(math.floor(lat / cell_deg)), int(math.floor(lon / cell_deg)))


def round_half_up(x: float) -> int:
    """Deterministic rounding for fraction-of-n counts (0.5 rounds up)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ObservationRecord:
    """One observation: location, label, label quality, group tag, view count."""

    obs_id: str
    lat: float
    lon: float
    class_id: Optional[int] = None
    research_grade: bool = True
    species_level: bool = True
    group_id: int = 0
    n_ground_views: int = 1

    def __post_init__(self):
        _check_lat_lon(self.lat, self.lon)
        if self.species_level and self.class_id is None:
            raise ValueError(f"observation {self.obs_id}: species-level but no class_id")
        if self.n_ground_views < 1:
            raise ValueError(f"observation {self.obs_id}: needs at least one ground view")

    def is_labeled_quality(self) -> bool:
        return self.research_grade and self.species_level


_RECORD_FIELDS = (
    "obs_id",
    "lat",
    "lon",
    "class_id",
    "research_grade",
    "species_level",
    "group_id",
    "n_ground_views",
)


def write_observations(path, records: Sequence[ObservationRecord]) -> None:
    """Write a line-delimited corpus, one JSON object per observation."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {name: getattr(rec, name) for name in _RECORD_FIELDS}
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_observations(path) -> List[ObservationRecord]:
    """Read a line-delimited corpus; unknown fields are ignored."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                ObservationRecord(**{k: obj[k] for k in _RECORD_FIELDS if k in obj})
            )
    return records


@dataclass(frozen=True)
class FrequencyBins:
    """Class-support bins: frequent above 700 examples, rare below 200."""

    bin_of: Dict[int, str]
    rare_below: int = 200
    frequent_above: int = 700

    def classes_in(self, bin_name: str) -> Tuple[int, ...]:
        return tuple(sorted(c for c, b in self.bin_of.items() if b == bin_name))


def bin_by_frequency(
    class_counts: Dict[int, int], rare_below: int = 200, frequent_above: int = 700
) -> FrequencyBins:
    """Bin classes by labeled-example count: >700 frequent, <200 rare, else common."""
    bins = {}
    for class_id, count in class_counts.items():
        if count < 1:
            raise ValueError(f"class {class_id} has count {count}; counts must be >= 1")
        if count > frequent_above:
            bins[class_id] = "frequent"
        elif count < rare_below:
            bins[class_id] = "rare"
        else:
            bins[class_id] = "common"
    return FrequencyBins(bin_of=bins, rare_below=rare_below, frequent_above=frequent_above)


def assign_blocks(
    blocks: Iterable[Tuple[int, int]],
    rng: np.random.Generator,
    test_fraction: float = 0.125,
    val_fraction: float = 0.125,
) -> Dict[Tuple[int, int], str]:
    """Randomly designate blocks as test/val, the remainder as train.

    Counts are round-half-up of fraction * n; the selection is a uniform
    permutation of the sorted block list, so results are deterministic for a
    given generator state.
    """
    block_list = sorted(set(tuple(b) for b in blocks))
    n = len(block_list)
    if n == 0:
        raise EmptyBlockSetError("no blocks to assign")
    if test_fraction < 0 or val_fraction < 0 or test_fraction + val_fraction >= 1:
        raise ValueError("fractions must be nonnegative and sum to < 1")
    n_test = round_half_up(test_fraction * n)
    n_val = round_half_up(val_fraction * n)
    perm = rng.permutation(n)
    assignment = {}
    for rank, idx in enumerate(perm):
        if rank < n_test:
            split = "test"
        elif rank < n_test + n_val:
            split = "val"
        else:
            split = "train"
        assignment[block_list[idx]] = split
    return assignment


@dataclass
class SplitManifest:
    """Block- and observation-level split assignment plus labeled subsets."""

    cell_deg: float
    proximity_m: float
    block_assignment: Dict[Tuple[int, int], str]
    obs_assignment: Dict[str, str]
    labeled_train: Tuple[str, ...]
    class_universe: Tuple[int, ...]
    lambda_subsets: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def ids_in_split(self, split: str) -> Tuple[str, ...]:
        return tuple(sorted(o for o, s in self.obs_assignment.items() if s == split))

    def block_fractions(self) -> Dict[str, float]:
        n = len(self.block_assignment)
        return {
            s: sum(1 for b in self.block_assignment.values() if b == s) / n
            for s in SPLITS
        }

    def observation_fractions(self) -> Dict[str, float]:
        n = len(self.obs_assignment)
        return {
            s: sum(1 for v in self.obs_assignment.values() if v == s) / n
            for s in SPLITS
        }


def format_lambda(lam: float) -> str:
    """Canonical decimal-string key for a labeled fraction (0.0025 -> "0.0025")."""
    return f"{float(lam):g}"


def build_split(
    records: Sequence[ObservationRecord],
    block_assignment: Dict[Tuple[int, int], str],
    proximity_m: float = 256.0,
    cell_deg: float = 0.1,
) -> SplitManifest:
    """Assemble the observation-level split manifest.

    In order: (1) observations inherit their block's split; (2) val/test
    observations within ``proximity_m`` of any training observation are
    dropped; (3) val/test and the labeled-train pool keep only
    research-grade, species-level records (the full train pool keeps
    everything); (4) labeled-train/val/test are restricted to classes present
    in all three.
    """
    by_split: Dict[str, List[ObservationRecord]] = {s: [] for s in SPLITS}
    for rec in records:
        block = block_of(rec.lat, rec.lon, cell_deg)
        split = block_assignment.get(block)
        if split is None:
            raise UncoveredBlockError(f"observation {rec.obs_id} in unassigned block {block}")
        by_split[split].append(rec)

    train = by_split["train"]
    train_lat = np.array([r.lat for r in train], dtype=np.float64)
    train_lon = np.array([r.lon for r in train], dtype=np.float64)

    def proximity_keep(recs: List[ObservationRecord]) -> List[ObservationRecord]:
        if not recs or train_lat.shape[0] == 0:
            return recs
        lat = np.array([r.lat for r in recs], dtype=np.float64)
        lon = np.array([r.lon for r in recs], dtype=np.float64)
        near = backend.any_within_radius_m(lat, lon, train_lat, train_lon, proximity_m)
        return [r for r, hit in zip(recs, near) if not hit]

    val = [r for r in proximity_keep(by_split["val"]) if r.is_labeled_quality()]
    test = [r for r in proximity_keep(by_split["test"]) if r.is_labeled_quality()]
    labeled = [r for r in train if r.is_labeled_quality()]

    universe = (
        {r.class_id for r in labeled}
        & {r.class_id for r in val}
        & {r.class_id for r in test}
    )
    labeled = [r for r in labeled if r.class_id in universe]
    val = [r for r in val if r.class_id in universe]
    test = [r for r in test if r.class_id in universe]

    obs_assignment: Dict[str, str] = {}
    for rec in train:
        obs_assignment[rec.obs_id] = "train"
    for rec in val:
        obs_assignment[rec.obs_id] = "val"
    for rec in test:
        obs_assignment[rec.obs_id] = "test"

    return SplitManifest(
        cell_deg=cell_deg,
        proximity_m=proximity_m,
        block_assignment=dict(block_assignment),
        obs_assignment=obs_assignment,
        labeled_train=tuple(sorted(r.obs_id for r in labeled)),
        class_universe=tuple(sorted(universe)),
    )


def sample_lambda_subset(
    labeled_train: Iterable[str], lam: float, rng: np.random.Generator
) -> Tuple[str, ...]:
    """Uniform sample of round(lam * n) labeled training observations."""
    ids = sorted(labeled_train)
    if not ids:
        raise EmptySetError("labeled training set is empty")
    if not 0 < lam <= 1:
        raise ValueError(f"lambda must be in (0, 1], got {lam}")
    k = round_half_up(lam * len(ids))
    chosen = rng.choice(len(ids), size=k, replace=False)
    return tuple(sorted(ids[i] for i in chosen))


def attach_lambda_subsets(
    manifest: SplitManifest, lambdas: Sequence[float], rng: np.random.Generator
) -> None:
    """Draw each labeled fraction independently and store it on the manifest."""
    for lam in lambdas:
        manifest.lambda_subsets[format_lambda(lam)] = sample_lambda_subset(
            manifest.labeled_train, lam, rng
        )


def manifest_to_json(manifest: SplitManifest) -> str:
    doc = {
        "cell_deg": manifest.cell_deg,
        "proximity_m": manifest.proximity_m,
        "block_assignment": {
            f"{b[0]},{b[1]}": s for b, s in manifest.block_assignment.items()
        },
        "obs_assignment": dict(manifest.obs_assignment),
        "labeled_train": list(manifest.labeled_train),
        "lambda_subsets": {k: list(v) for k, v in manifest.lambda_subsets.items()},
        "class_universe": list(manifest.class_universe),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def manifest_from_json(text: str) -> SplitManifest:
    doc = json.loads(text)
    blocks = {}
    for key, split in doc["block_assignment"].items():
        lat_idx, lon_idx = key.split(",")
        blocks[(int(lat_idx), int(lon_idx))] = split
    return SplitManifest(
        cell_deg=float(doc["cell_deg"]),
        proximity_m=float(doc["proximity_m"]),
        block_assignment=blocks,
        obs_assignment=dict(doc["obs_assignment"]),
        labeled_train=tuple(doc["labeled_train"]),
        class_universe=tuple(doc["class_universe"]),
        lambda_subsets={k: tuple(v) for k, v in doc["lambda_subsets"].items()},
    )


def save_manifest(path, manifest: SplitManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifest_to_json(manifest))


def load_manifest(path) -> SplitManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return manifest_from_json(fh.read())
