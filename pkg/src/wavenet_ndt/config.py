"""Run configuration read from an INI file; command-line flags override it.

Every key is optional and falls back to the library default::

    [plate]
    half_thickness_m = 0.005
    shear_speed_m_s = 3200
    mode_index = 0

    [grid]
    origin_m = 0.0
    length_m = 0.1
    points = 100

    [ranges]
    depth_min = 0.05        ; fraction of b
    depth_max = 0.3
    width_min = 0.1         ; fraction of the detection length
    width_max = 0.4
    step_fraction_min = 0.3
    step_fraction_max = 0.7

    [noise]
    snr_db = 15

    [train]
    learning_rate = 0.001
    batch_size = 32
    max_epochs = 500
    l2_lambda = 0.0001
    dropout_rate = 0.3
    patience = 20
    lr_decay = 1.0
    lr_decay_patience = 10
    normalization = rms     ; or "fixed": divide by b

    [run]
    seed = 0
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataset import NoiseConfig
from .errors import InvalidParameter
from .geometry import RandomizationRanges
from .nn.model import NORMALIZATIONS
from .nn.training import TrainConfig
from .physics import PlateSpec, SpatialGrid

# section -> key -> converter
_SCHEMA = {
    "plate": {"half_thickness_m": float, "shear_speed_m_s": float, "mode_index": int},
    "grid": {"origin_m": float, "length_m": float, "points": int},
    "ranges": {
        "depth_min": float, "depth_max": float,
        "width_min": float, "width_max": float,
        "step_fraction_min": float, "step_fraction_max": float,
    },
    "noise": {"snr_db": float},
    "train": {
        "learning_rate": float, "batch_size": int, "max_epochs": int,
        "l2_lambda": float, "dropout_rate": float, "patience": int,
        "lr_decay": float, "lr_decay_patience": int, "normalization": str,
    },
    "run": {"seed": int},
}


@dataclass(frozen=True)
class RunConfig:
    plate: PlateSpec = field(default_factory=PlateSpec)
    grid: SpatialGrid = field(default_factory=SpatialGrid)
    ranges: RandomizationRanges = field(default_factory=RandomizationRanges)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    normalization: str = "rms"

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise InvalidParameter(f"normalization must be one of {NORMALIZATIONS}")
        if not 0 <= self.seed < 2**64:
            raise InvalidParameter("seed must be an unsigned 64-bit integer")

    def with_seed(self, seed: int | None) -> RunConfig:
        if seed is None:
            return self
        return replace(self, seed=seed, train=replace(self.train, seed=seed))


def _read(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path, encoding="utf-8") as fh:  # OSError propagates as an IO failure
        try:
            parser.read_file(fh)
        except configparser.Error as exc:
            raise InvalidParameter(f"{path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise InvalidParameter(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            conv = _SCHEMA[section].get(key)
            if conv is None:
                raise InvalidParameter(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[(section, key)] = conv(raw)
            except ValueError as exc:
                raise InvalidParameter(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
    return values


def load_config(path=None) -> RunConfig:
    """Validated configuration; ``path=None`` gives all defaults."""
    v = _read(Path(path)) if path is not None else {}

    def get(section, key, default):
        return v.get((section, key), default)

    base_plate, base_grid, base_ranges = PlateSpec(), SpatialGrid(), RandomizationRanges()
    base_train = TrainConfig()
    try:
        plate = PlateSpec(
            get("plate", "half_thickness_m", base_plate.half_thickness_b),
            get("plate", "shear_speed_m_s", base_plate.shear_speed_cT),
            get("plate", "mode_index", base_plate.mode_index_n),
        )
        points = get("grid", "points", base_grid.point_count)
        origin = get("grid", "origin_m", base_grid.origin_x)
        if ("grid", "length_m") in v or ("grid", "points") in v:
            grid = SpatialGrid.spanning(origin, origin + get("grid", "length_m", base_grid.length), points)
        else:
            grid = replace(base_grid, origin_x=origin)
        ranges = RandomizationRanges(
            (get("ranges", "depth_min", base_ranges.depth_range[0]),
             get("ranges", "depth_max", base_ranges.depth_range[1])),
            (get("ranges", "width_min", base_ranges.width_range[0]),
             get("ranges", "width_max", base_ranges.width_range[1])),
            (get("ranges", "step_fraction_min", base_ranges.step_fraction_range[0]),
             get("ranges", "step_fraction_max", base_ranges.step_fraction_range[1])),
        )
        noise = NoiseConfig(get("noise", "snr_db", NoiseConfig().snr_db))
        seed = get("run", "seed", 0)
        train = TrainConfig(
            **{k: get("train", k, getattr(base_train, k)) for k in _SCHEMA["train"] if k != "normalization"},
            seed=seed,
        )
        return RunConfig(plate, grid, ranges, noise, train, seed, get("train", "normalization", "rms"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidParameter):
            raise
        raise InvalidParameter(str(exc)) from exc
