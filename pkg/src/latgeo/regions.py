"""Bounded regions with exact volume, membership, and bounding spheres.

Boxes are half-open ([lo, hi) per axis) so grid counts on half-integer
grids are unambiguous; balls and time intervals are open.  Linear images
keep exact volumes through the determinant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Region:
    dim: int

    def contains(self, x) -> bool:
        return bool(self.contains_many(np.asarray(x, dtype=float)[None, :])[0])

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def volume(self) -> float:
        raise NotImplementedError

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(Region):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError(f"degenerate box: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def contains_many(self, pts):
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def volume(self):
        return float(np.prod(self.hi - self.lo))

    def bounding_sphere(self):
        center = 0.5 * (self.lo + self.hi)
        return center, float(np.linalg.norm(self.hi - center))


@dataclass(frozen=True)
class Ball(Region):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", center)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains_many(self, pts):
        return np.linalg.norm(pts - self.center, axis=1) < self.radius

    def volume(self):
        d = self.dim
        # unit-ball volume pi^{d/2} / Gamma(d/2 + 1)
        from math import gamma, pi

        return float(pi ** (d / 2) / gamma(d / 2 + 1) * self.radius**d)

    def bounding_sphere(self):
        return self.center.copy(), float(self.radius)


@dataclass(frozen=True)
class LinearImage(Region):
    """Image of a base region under an invertible matrix (exact volume scaling)."""

    matrix: np.ndarray
    base: Region

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape[0] != m.shape[1] or m.shape[0] != self.base.dim:
            raise ValueError(f"matrix shape {m.shape} incompatible with base dim {self.base.dim}")
        if abs(np.linalg.det(m)) < 1e-12:
            raise ValueError("linear image requires an invertible matrix")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.base.dim

    def contains_many(self, pts):
        back = np.linalg.solve(self.matrix, pts.T).T
        return self.base.contains_many(back)

    def volume(self):
        return abs(float(np.linalg.det(self.matrix))) * self.base.volume()

    def bounding_sphere(self):
        center, radius = self.base.bounding_sphere()
        opnorm = float(np.linalg.norm(self.matrix, 2))
        return self.matrix @ center, opnorm * radius


def negate(region: Region) -> Region:
    return LinearImage(-np.eye(region.dim), region)


@dataclass(frozen=True)
class TimesInterval(Region):
    """(lo, hi) x cross: open interval on the first axis, a region on the rest."""

    lo: float
    hi: float
    cross: Region

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ValueError(f"empty interval ({self.lo}, {self.hi})")

    @property
    def dim(self) -> int:
        return self.cross.dim + 1

    def contains_many(self, pts):
        inside_t = (pts[:, 0] > self.lo) & (pts[:, 0] < self.hi)
        return inside_t & self.cross.contains_many(pts[:, 1:])

    def volume(self):
        return (self.hi - self.lo) * self.cross.volume()

    def bounding_sphere(self):
        c, r = self.cross.bounding_sphere()
        mid = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        return np.concatenate([[mid], c]), float(np.hypot(half, r))
