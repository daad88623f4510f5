"""Parametric defect shapes and their seeded random generation."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameter, OutOfRange
from .physics import DefectProfile, PlateSpec, SpatialGrid

WEAK_SCATTERER_LIMIT = 0.3


class DefectClass(str, enum.Enum):
    TRIANGLE = "tri"
    RECTANGLE = "rect"
    STEP = "step"

    @classmethod
    def parse(cls, value) -> DefectClass:
        if isinstance(value, cls):
            return value
        aliases = {"triangle": "tri", "rectangle": "rect", "stepped": "step"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class DefectParams:
    defect_class: DefectClass
    center_x: float
    width: float
    depth: float
    step_fraction: Optional[float] = None
    step_depth2: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "defect_class", DefectClass.parse(self.defect_class))
        if not self.width > 0:
            raise InvalidParameter("defect width must be positive")
        if not self.depth > 0:
            raise InvalidParameter("defect depth must be positive")
        if self.defect_class is DefectClass.STEP:
            if self.step_fraction is None or not 0 < self.step_fraction < 1:
                raise InvalidParameter("step_fraction must lie in (0, 1)")
            if self.step_depth2 is None or not self.step_depth2 > 0:
                raise InvalidParameter("step_depth2 must be positive")
            if self.step_depth2 == self.depth:
                raise InvalidParameter("step_depth2 must differ from depth")

    @property
    def max_depth(self) -> float:
        if self.defect_class is DefectClass.STEP:
            return max(self.depth, self.step_depth2)
        return self.depth

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("defect_class")
        return {"class": self.defect_class.value, **d}

    @classmethod
    def from_dict(cls, d: dict) -> DefectParams:
        d = dict(d)
        return cls(defect_class=d.pop("class"), **d)


@dataclass(frozen=True)
class RandomizationRanges:
    """Uniform draw ranges: depths as a fraction of b, widths of the detection length."""

    depth_range: tuple = (0.05, 0.3)
    width_range: tuple = (0.1, 0.4)
    step_fraction_range: tuple = (0.3, 0.7)

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 0 < lo <= hi:
            raise InvalidParameter("depth_range must satisfy 0 < min <= max")
        if hi > WEAK_SCATTERER_LIMIT:
            raise InvalidParameter(
                f"max depth fraction {hi} exceeds the weak-scatterer bound {WEAK_SCATTERER_LIMIT}"
            )
        wlo, whi = self.width_range
        if not 0 < wlo <= whi < 1:
            raise InvalidParameter("width_range must satisfy 0 < min <= max < 1")
        flo, fhi = self.step_fraction_range
        if not 0 < flo <= fhi < 1:
            raise InvalidParameter("step_fraction_range must lie inside (0, 1)")

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> RandomizationRanges:
        return cls(**{k: tuple(v) for k, v in d.items()})


def _support(params: DefectParams, grid: SpatialGrid, tol: float):
    left = params.center_x - params.width / 2
    right = params.center_x + params.width / 2
    x = grid.x
    if left < x[0] - tol or right > x[-1] + tol:
        raise OutOfRange(
            f"support [{left:.6g}, {right:.6g}] exceeds grid [{x[0]:.6g}, {x[-1]:.6g}]"
        )
    # half-open [left, right); tol absorbs rounding of node positions
    inside = (x >= left - tol) & (x < right - tol)
    return x, left, right, inside


def sample_profile(params: DefectParams, grid: SpatialGrid) -> DefectProfile:
    tol = 1e-9 * grid.spacing_dx
    x, left, right, inside = _support(params, grid, tol)
    depths = np.zeros(grid.point_count)
    kind = params.defect_class
    if kind is DefectClass.RECTANGLE:
        depths[inside] = params.depth
    elif kind is DefectClass.TRIANGLE:
        half = params.width / 2
        ramp = params.depth * (1.0 - np.abs(x - params.center_x) / half)
        depths[inside] = np.clip(ramp[inside], 0.0, None)
    else:
        split = left + params.step_fraction * params.width
        first = inside & (x < split - tol)
        depths[first] = params.depth
        depths[inside & ~first] = params.step_depth2
    return DefectProfile(grid, depths)


def random_defect(
    defect_class,
    ranges: RandomizationRanges,
    rng: np.random.Generator,
    plate: PlateSpec = PlateSpec(),
    grid: SpatialGrid = SpatialGrid(),
) -> DefectParams:
    """Draw one defect of ``defect_class`` uniformly within ``ranges``.

    The support is kept clear of both grid ends so the profile vanishes on
    the boundary nodes.
    """
    kind = DefectClass.parse(defect_class)
    b = plate.half_thickness_b
    length = grid.length
    depth = rng.uniform(*ranges.depth_range) * b
    width = rng.uniform(*ranges.width_range) * length
    lo = grid.x[0] + grid.spacing_dx + width / 2
    hi = grid.x[-1] - width / 2
    center = rng.uniform(lo, hi)
    if kind is not DefectClass.STEP:
        return DefectParams(kind, center, width, depth)
    fraction = rng.uniform(*ranges.step_fraction_range)
    depth2 = rng.uniform(*ranges.depth_range) * b
    while depth2 == depth:
        depth2 = rng.uniform(*ranges.depth_range) * b
    return DefectParams(kind, center, width, depth, fraction, depth2)
