"""Training pairs (WNST pre-reconstruction, exact profile) and their persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EmptyInput, FormatVersionMismatch, InvalidParameter, ZeroSignal
from .geometry import DefectClass, DefectParams, RandomizationRanges, random_defect, sample_profile
from .physics import (
    PlateSpec,
    SpatialGrid,
    WavenumberGrid,
    forward_reflection,
    wnst_invert,
)

DATASET_FORMAT = "wavenet-ndt/dataset"
DATASET_VERSION = 1
SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_FRACTIONS = (0.75, 0.175, 0.075)


@dataclass(frozen=True)
class NoiseConfig:
    snr_db: float = 15.0
    kind: str = "awgn"

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise InvalidParameter("snr_db must be finite")
        if self.kind != "awgn":
            raise InvalidParameter(f"unsupported noise kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"snr_db": self.snr_db, "kind": self.kind}


@dataclass(eq=False)
class SamplePair:
    input_profile: np.ndarray
    target_profile: np.ndarray
    class_label: DefectClass
    noisy: bool = False

    def __post_init__(self):
        self.input_profile = np.asarray(self.input_profile, dtype=float)
        self.target_profile = np.asarray(self.target_profile, dtype=float)
        self.class_label = DefectClass.parse(self.class_label)
        if self.input_profile.shape != self.target_profile.shape or self.input_profile.ndim != 1:
            raise InvalidParameter("input and target must be 1-D vectors of equal length")


@dataclass(eq=False)
class DefectDataset:
    samples: list = field(default_factory=list)
    splits: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.splits) != len(self.samples):
            raise InvalidParameter("every sample needs a split label")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise InvalidParameter(f"unknown split labels {sorted(bad)}")

    def __len__(self):
        return len(self.samples)

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == split], dtype=int)

    def arrays(self, split: str | None = None):
        """``(inputs, targets, indices)`` for one split, or all samples."""
        idx = np.arange(len(self)) if split is None else self.indices(split)
        if idx.size == 0:
            return np.empty((0, 0)), np.empty((0, 0)), idx
        x = np.stack([self.samples[i].input_profile for i in idx])
        y = np.stack([self.samples[i].target_profile for i in idx])
        return x, y, idx

    def split_sizes(self) -> tuple:
        return tuple(self.splits.count(s) for s in SPLITS)


def build_sample(
    params: DefectParams,
    plate: PlateSpec = PlateSpec(),
    spatial: SpatialGrid = SpatialGrid(),
    wavenumbers: WavenumberGrid | None = None,
) -> SamplePair:
    wavenumbers = wavenumbers or WavenumberGrid.aligned_to(spatial)
    target = sample_profile(params, spatial)
    target.check_plate(plate)
    spectrum = forward_reflection(target, plate, wavenumbers)
    pre = wnst_invert(spectrum, plate, spatial)
    return SamplePair(pre.depths, target.depths, params.defect_class, noisy=False)


def effective_power(v) -> float:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise EmptyInput("effective power of an empty vector")
    return float(np.mean(v * v))


def add_noise(pair: SamplePair, cfg: NoiseConfig, rng: np.random.Generator) -> SamplePair:
    """Add white Gaussian noise to the input at ``cfg.snr_db`` below its power."""
    power = effective_power(pair.input_profile)
    if power == 0:
        raise ZeroSignal("cannot calibrate noise against a zero-power input")
    sigma = np.sqrt(power / 10 ** (cfg.snr_db / 10))
    noise = rng.normal(0.0, sigma, pair.input_profile.shape)
    return replace(pair, input_profile=pair.input_profile + noise, noisy=True)


def _allocate(n: int, fractions) -> list:
    """Split ``n`` into integer parts proportional to ``fractions`` (largest remainder)."""
    raw = np.asarray(fractions, dtype=float) * n / np.sum(fractions)
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def _stratified_splits(labels, fractions, rng: np.random.Generator) -> list:
    splits = [None] * len(labels)
    for cls in sorted(set(labels), key=lambda c: c.value):
        members = np.array([i for i, c in enumerate(labels) if c == cls])
        members = members[rng.permutation(members.size)]
        start = 0
        for name, k in zip(SPLITS, _allocate(members.size, fractions)):
            for i in members[start : start + k]:
                splits[i] = name
            start += k
    return splits


def _generate(
    kind: str,
    classes: list,
    count: int,
    seed: int,
    plate: PlateSpec,
    spatial: SpatialGrid,
    ranges: RandomizationRanges,
    noise: NoiseConfig | None,
    fractions,
) -> DefectDataset:
    if count < 0:
        raise InvalidParameter("count must be nonnegative")
    wavenumbers = WavenumberGrid.aligned_to(spatial)
    split_seq, sample_root = np.random.SeedSequence(seed).spawn(2)
    samples = []
    for i, seq in enumerate(sample_root.spawn(count)):
        rng = np.random.default_rng(seq)
        params = random_defect(classes[i % len(classes)], ranges, rng, plate, spatial)
        pair = build_sample(params, plate, spatial, wavenumbers)
        if noise is not None:
            pair = add_noise(pair, noise, rng)
        samples.append(pair)
    splits = _stratified_splits(
        [s.class_label for s in samples], fractions, np.random.default_rng(split_seq)
    )
    provenance = {
        "kind": kind,
        "count": count,
        "seed": seed,
        "plate": plate.to_dict(),
        "grid": spatial.to_dict(),
        "ranges": ranges.to_dict(),
        "noise": noise.to_dict() if noise else None,
        "split_fractions": list(fractions),
        "normalization": {"divide_by": "half_thickness_b", "scale": plate.half_thickness_b},
    }
    return DefectDataset(samples, splits, provenance)


def build_mixed_dataset(
    count: int = 1200,
    seed: int = 0,
    plate: PlateSpec = PlateSpec(),
    spatial: SpatialGrid = SpatialGrid(),
    ranges: RandomizationRanges = RandomizationRanges(),
    fractions=DEFAULT_SPLIT_FRACTIONS,
) -> DefectDataset:
    """Clean triangle/rectangle/step pairs in equal numbers, stratified split."""
    if count % 3:
        raise InvalidParameter("mixed dataset count must be divisible by 3")
    classes = [DefectClass.TRIANGLE, DefectClass.RECTANGLE, DefectClass.STEP]
    return _generate("mixed", classes, count, seed, plate, spatial, ranges, None, fractions)


def build_noisy_rect_dataset(
    count: int = 400,
    cfg: NoiseConfig = NoiseConfig(),
    seed: int = 0,
    plate: PlateSpec = PlateSpec(),
    spatial: SpatialGrid = SpatialGrid(),
    ranges: RandomizationRanges = RandomizationRanges(),
    fractions=DEFAULT_SPLIT_FRACTIONS,
) -> DefectDataset:
    """Rectangles whose pre-reconstructions carry white Gaussian noise."""
    return _generate(
        "noisy-rect", [DefectClass.RECTANGLE], count, seed, plate, spatial, ranges, cfg, fractions
    )


def regenerate(provenance: dict) -> DefectDataset:
    """Rebuild a dataset from its stored provenance record."""
    kw = dict(
        count=provenance["count"],
        seed=provenance["seed"],
        plate=PlateSpec(**provenance["plate"]),
        spatial=SpatialGrid(**provenance["grid"]),
        ranges=RandomizationRanges.from_dict(provenance["ranges"]),
        fractions=tuple(provenance["split_fractions"]),
    )
    if provenance["kind"] == "mixed":
        return build_mixed_dataset(**kw)
    if provenance["kind"] == "noisy-rect":
        return build_noisy_rect_dataset(cfg=NoiseConfig(**provenance["noise"]), **kw)
    raise InvalidParameter(f"unknown dataset kind {provenance['kind']!r}")


def save_dataset(ds: DefectDataset, path) -> None:
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "provenance": ds.provenance}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for sample, split in zip(ds.samples, ds.splits):
            record = {
                "input": sample.input_profile.tolist(),
                "target": sample.target_profile.tolist(),
                "class": sample.class_label.value,
                "noisy": bool(sample.noisy),
                "split": split,
            }
            fh.write(json.dumps(record) + "\n")


def load_dataset(path) -> DefectDataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    try:
        header = json.loads(lines[0]) if lines else None
    except json.JSONDecodeError:
        header = None
    if (
        not isinstance(header, dict)
        or header.get("format") != DATASET_FORMAT
        or header.get("version") != DATASET_VERSION
    ):
        raise FormatVersionMismatch(f"{path}: not a {DATASET_FORMAT} v{DATASET_VERSION} file")
    samples, splits = [], []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            samples.append(SamplePair(rec["input"], rec["target"], rec["class"], rec["noisy"]))
            splits.append(rec["split"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise InvalidParameter(f"{path}:{n}: malformed record ({exc})") from exc
    return DefectDataset(samples, splits, header.get("provenance", {}))
