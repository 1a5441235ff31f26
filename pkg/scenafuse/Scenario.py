"""
Frozen visual-block features for scenario grids, plus the "SCNV" feature file.

A grid cell stands in for one visual block of an image encoder's last
feature map. Its vector is a Gaussian draw seeded only by the cell's
attribute tuple, so equal cells map to equal vectors everywhere and nothing
here is ever trained.
"""
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .Errors import DimensionError, FormatError
from .Tensor import Tensor

OBJECT_CLASSES = ["sky", "ceiling", "ball", "dog", "chair", "book", "car", "lamp"]
COLORS = ["red", "green", "blue", "yellow"]

# landmark classes carry the scene location; no other class may reveal it
LANDMARKS = {0: "outdoor", 1: "indoor"}
LOCATIONS = {location: object_class for object_class, location in LANDMARKS.items()}
DISTRACTOR_CLASSES = [c for c in range(len(OBJECT_CLASSES)) if c not in LANDMARKS]

SCENARIO_SEED = 1729

FEATURE_MAGIC = b"SCNV"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class ScenarioGrid:
    """
    A G×G grid of (object_class, color, present) cells in row-major order
    """
    size : int
    cells : tuple

    def __post_init__(self):
        if self.size < 1:
            raise DimensionError(f"grid size must be at least 1, got {self.size}")
        cells = tuple(tuple(int(v) for v in cell) for cell in self.cells)
        object.__setattr__(self, "cells", cells)
        if len(cells) != self.size * self.size:
            raise DimensionError(f"a {self.size}x{self.size} grid needs {self.size ** 2} cells, got {len(cells)}")
        for object_class, color, present in cells:
            if not (0 <= object_class < len(OBJECT_CLASSES) and 0 <= color < len(COLORS) and present in (0, 1)):
                raise DimensionError(f"cell attributes out of range: {(object_class, color, present)}")

    @property
    def location(self) -> str | None:
        """Location named by the present landmark cell, None when there is none"""
        for object_class, _, present in self.cells:
            if present and object_class in LANDMARKS:
                return LANDMARKS[object_class]
        return None

    def permute_cells(self, permutation) -> "ScenarioGrid":
        return ScenarioGrid(self.size, tuple(self.cells[i] for i in permutation))

    def with_location(self, location : str) -> "ScenarioGrid":
        """Same grid with its landmark cell switched to the given location"""
        cells = [(LOCATIONS[location], color, present) if (present and object_class in LANDMARKS)
                 else (object_class, color, present)
                 for object_class, color, present in self.cells]
        return ScenarioGrid(self.size, tuple(cells))

    def __str__(self):
        shown = [f"{COLORS[c]} {OBJECT_CLASSES[o]}" for o, c, p in self.cells if p]
        return f"Grid {self.size}x{self.size} ({self.location}): {', '.join(shown)}"


@dataclass(frozen=True, eq=False)
class VisualFeatures:
    """
    k visual-block vectors of width d'
    """
    blocks : Tensor
    source : str = "synthetic"

    @property
    def k(self) -> int:
        return self.blocks.shape[0]

    @property
    def d_prime(self) -> int:
        return self.blocks.shape[1]


@lru_cache(maxsize=4096)
def _attribute_embedding(cell : tuple, d_prime : int, seed : int) -> np.ndarray:
    vector = np.random.default_rng([seed, *cell]).standard_normal(d_prime)
    vector.setflags(write=False)
    return vector


def encode_scenario(grid : ScenarioGrid, d_prime : int = 32, seed : int = SCENARIO_SEED) -> VisualFeatures:
    """
    Frozen features: block i is the fixed embedding of cell i's attribute tuple

    :param grid: Scenario to encode
    :type grid: ScenarioGrid
    :param d_prime: Block width d'
    :param seed: Fixed table seed
    """
    if d_prime < 4:
        raise DimensionError(f"d' must be at least 4, got {d_prime}")
    blocks = np.stack([_attribute_embedding(cell, d_prime, seed) for cell in grid.cells])
    return VisualFeatures(Tensor(blocks), source="synthetic")


def save_features(path, features : VisualFeatures):
    blocks = features.blocks.data
    with open(path, "wb") as f:
        f.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, blocks.shape[0], blocks.shape[1]))
        f.write(np.ascontiguousarray(blocks, dtype="<f8").tobytes())


def load_features(path) -> VisualFeatures:
    """
    Read externally precomputed visual blocks (e.g. 49×2048 from a CNN's last layer)

    :param path: "SCNV" file
    """
    blob = Path(path).read_bytes()
    if len(blob) < _FEATURE_HEADER.size:
        raise FormatError(f"truncated feature file {path}")
    magic, version, k, d_prime = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad feature magic {magic!r} in {path}")
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature version {version} in {path}")
    if k == 0 or d_prime == 0:
        raise FormatError(f"empty feature geometry {k}x{d_prime} in {path}")
    expected = _FEATURE_HEADER.size + 8 * k * d_prime
    if len(blob) < expected:
        raise FormatError(f"truncated feature file {path}: {len(blob)} of {expected} bytes")
    data = np.frombuffer(blob, dtype="<f8", count=k * d_prime, offset=_FEATURE_HEADER.size)
    return VisualFeatures(Tensor(data.reshape(k, d_prime)), source="file")
