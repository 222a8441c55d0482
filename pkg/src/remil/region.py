"""Square map layout and region partitioning for instance sequences.

A bag of I instances is laid out row-major on the smallest N x N grid whose
side is a multiple of the requested regions-per-side count L and whose area
covers I; the tail of the grid is zero padding. The grid is then cut into
L*L square regions of side M = N // L. Attention later runs inside each
region independently, so everything downstream only cares about the
(L*L, M*M, D) view and the inverse map back to the first I rows.

Both directions are pure index permutations (plus padding), so the gradient
of one direction is the other applied to the incoming gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RegionGeometry:
    i_valid: int  # instances actually present
    side: int  # N, grid side
    region_side: int  # M, region side
    regions_per_side: int  # L
    pad_count: int  # N*N - I

    @property
    def n_regions(self):
        return self.regions_per_side * self.regions_per_side

    @property
    def cells_per_region(self):
        return self.region_side * self.region_side


@dataclass
class SquaredMap:
    map: np.ndarray  # (N, N, D)
    i_valid: int
    side: int
    pad_count: int


@dataclass
class RegionSet:
    regions: np.ndarray  # (L*L, M*M, D)
    regions_per_side: int
    region_side: int
    i_valid: int


def region_geometry(i_valid: int, regions_per_side: int) -> RegionGeometry:
    if i_valid < 1:
        raise ValueError(f"need at least one instance, got {i_valid}")
    if regions_per_side < 1:
        raise ValueError(f"regions_per_side must be >= 1, got {regions_per_side}")
    base = math.isqrt(i_valid)
    if base * base < i_valid:
        base += 1
    # round the side up to the next multiple of L
    side = regions_per_side * math.ceil(base / regions_per_side)
    return RegionGeometry(
        i_valid=i_valid,
        side=side,
        region_side=side // regions_per_side,
        regions_per_side=regions_per_side,
        pad_count=side * side - i_valid,
    )


def square_and_pad(h: np.ndarray, regions_per_side: int) -> SquaredMap:
    """Lay the (I, D) sequence row-major on the padded N x N grid."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError(f"expected (I, D) array, got shape {h.shape}")
    geom = region_geometry(h.shape[0], regions_per_side)
    n, d = geom.side, h.shape[1]
    flat = np.zeros((n * n, d))
    flat[: geom.i_valid] = h
    return SquaredMap(
        map=flat.reshape(n, n, d),
        i_valid=geom.i_valid,
        side=n,
        pad_count=geom.pad_count,
    )


def partition(squared: SquaredMap, regions_per_side: int) -> RegionSet:
    """Cut the grid into L*L regions of M*M cells each, row-major within a region."""
    n = squared.side
    if n % regions_per_side != 0:
        raise ValueError(f"side {n} not divisible by {regions_per_side}")
    m = n // regions_per_side
    d = squared.map.shape[2]
    l = regions_per_side
    regions = (
        squared.map.reshape(l, m, l, m, d)
        .transpose(0, 2, 1, 3, 4)
        .reshape(l * l, m * m, d)
    )
    return RegionSet(
        regions=regions, regions_per_side=l, region_side=m, i_valid=squared.i_valid
    )


def flatten_back(regions: RegionSet, i_valid: int) -> np.ndarray:
    """Invert partition + square_and_pad, dropping padding: returns (I, D)."""
    l, m = regions.regions_per_side, regions.region_side
    d = regions.regions.shape[2]
    n = l * m
    grid = (
        regions.regions.reshape(l, l, m, m, d)
        .transpose(0, 2, 1, 3, 4)
        .reshape(n * n, d)
    )
    if i_valid > n * n:
        raise ValueError(f"i_valid {i_valid} exceeds grid capacity {n * n}")
    return grid[:i_valid].copy()


# -- flat helpers used on the hot path ---------------------------------------


def regionize(h: np.ndarray, geom: RegionGeometry) -> np.ndarray:
    """(I, D) -> (L*L, M*M, D) with zero padding, same layout as partition."""
    l, m, n = geom.regions_per_side, geom.region_side, geom.side
    d = h.shape[1]
    flat = np.zeros((n * n, d))
    flat[: geom.i_valid] = h
    return (
        flat.reshape(l, m, l, m, d).transpose(0, 2, 1, 3, 4).reshape(l * l, m * m, d)
    )


def unregionize(regions: np.ndarray, geom: RegionGeometry) -> np.ndarray:
    """(L*L, M*M, D) -> (I, D), dropping padded cells."""
    l, m = geom.regions_per_side, geom.region_side
    n = geom.side
    d = regions.shape[2]
    grid = (
        regions.reshape(l, l, m, m, d).transpose(0, 2, 1, 3, 4).reshape(n * n, d)
    )
    return grid[: geom.i_valid].copy()


def region_flat_indices(geom: RegionGeometry) -> np.ndarray:
    """(L*L, M*M) array mapping each region cell to its source index on the
    flattened grid; entries >= i_valid are padding cells."""
    l, m, n = geom.regions_per_side, geom.region_side, geom.side
    idx = np.arange(n * n).reshape(l, m, l, m).transpose(0, 2, 1, 3)
    return idx.reshape(l * l, m * m)
