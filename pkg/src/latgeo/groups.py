"""Arithmetic on SL_d(R) and its semidirect product with k translation blocks.

All matrices are dense row-major ndarrays; vectors are columns.  Every
operation is a pure function; nothing mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import DegenerateInputError

DET_TOL = 1e-9
MAX_DIM = 6


DRIFT_TOL = 1e-6


def check_special(g: np.ndarray) -> np.ndarray:
    """Validate and renormalize an SL_d matrix.

    Determinant drift up to 1e-6 (from long flows) is renormalized away by
    det^{1/d} once, here; larger drift raises instead of being masked.  The
    returned matrix satisfies |det - 1| <= 1e-9.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {g.shape}")
    det = float(np.linalg.det(g))
    if not math.isfinite(det) or det <= 0 or abs(det - 1.0) > DRIFT_TOL:
        raise ValueError(f"matrix determinant {det!r} drifted beyond {DRIFT_TOL} from 1")
    if abs(det - 1.0) > DET_TOL:
        g = g / det ** (1.0 / g.shape[0])
    return g


@dataclass(frozen=True)
class FlowParams:
    """Dimension split: r expanding rows against d - r contracting rows."""

    d: int
    r: int

    def __post_init__(self):
        if not (2 <= self.d <= MAX_DIM):
            raise ValueError(f"d={self.d} outside supported range [2, {MAX_DIM}]")
        if not (1 <= self.r <= self.d - 1):
            raise ValueError(f"r={self.r} outside [1, {self.d - 1}]")

    @property
    def n_shear(self) -> int:
        return self.r * (self.d - self.r)


@dataclass(frozen=True)
class GroupElement:
    """Pair (g, v): g in SL_d(R) and v a d-by-k block of translation columns.

    Multiplication law: (g, v) * (g', v') = (g g', v + g v').
    """

    g: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        g = check_special(self.g)
        v = np.asarray(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != g.shape[0] or v.shape[1] < 1:
            raise ValueError(f"translation block shape {v.shape} incompatible with d={g.shape[0]}")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.g.shape[0]

    @property
    def k(self) -> int:
        return self.v.shape[1]

    def mul(self, other: "GroupElement") -> "GroupElement":
        if self.d != other.d or self.k != other.k:
            raise ValueError(f"dimension mismatch: ({self.d},{self.k}) vs ({other.d},{other.k})")
        return GroupElement(self.g @ other.g, self.v + self.g @ other.v)

    def inverse(self) -> "GroupElement":
        ginv = np.linalg.inv(self.g)
        return GroupElement(ginv, -ginv @ self.v)

    @staticmethod
    def identity(d: int, k: int) -> "GroupElement":
        return GroupElement(np.eye(d), np.zeros((d, k)))


def diag_flow(p: FlowParams, t: float) -> np.ndarray:
    """diag[e^{(d-r)t} (r copies), e^{-rt} (d-r copies)]; determinant 1 exactly."""
    entries = [np.exp((p.d - p.r) * t)] * p.r + [np.exp(-p.r * t)] * (p.d - p.r)
    return np.diag(entries)


def shear(p: FlowParams, s) -> np.ndarray:
    """Identity with the r-by-(d-r) block ``s`` in the upper-right corner."""
    s = np.asarray(s, dtype=float).reshape(p.r, p.d - p.r)
    out = np.eye(p.d)
    out[: p.r, p.r :] = s
    return out

def shear_with_offset(p: FlowParams, s, phi) -> GroupElement:
    """The product shear(s) * (Id, phi); translation part is shear(s) @ phi."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    u = shear(p, s)
    return GroupElement(u, u @ phi)


def axis_dilation(d: int, l: float) -> np.ndarray:
    """diag[e^{-(d-1)l}, e^l, ..., e^l]: contracts the first axis, expands the rest."""
    return np.diag([np.exp(-(d - 1) * l)] + [np.exp(l)] * (d - 1))


def rotation_to_e1(v) -> np.ndarray:
    """Rotation R with R v = e_1, the identity on the complement of span(v, e_1).

    Smooth in v away from the single singular point -e_1; inputs within
    1e-6 of -e_1 are rejected.
    """
    v = np.asarray(v, dtype=float)
    d = v.shape[0]
    if abs(np.linalg.norm(v) - 1.0) > DET_TOL:
        raise ValueError(f"rotation_to_e1 expects a unit vector, got norm {np.linalg.norm(v)!r}")
    e1 = np.zeros(d)
    e1[0] = 1.0
    if np.linalg.norm(v + e1) <= 1e-6:
        raise DegenerateInputError("direction within 1e-6 of the rotation singular point -e_1")
    c = v[0]
    w = v - c * e1
    sn = np.linalg.norm(w)
    if sn < 1e-15:
        return np.eye(d)
    w = w / sn
    r = np.eye(d)
    r += (c - 1.0) * (np.outer(e1, e1) + np.outer(w, w))
    r += sn * (np.outer(e1, w) - np.outer(w, e1))
    return r


@dataclass(frozen=True)
class BlockDecomposition:
    """Blocks A, B, C, D of an SL_d matrix split at row/column r.

    shear(s) @ M has the same lower blocks and upper blocks
    A(s) = A + s C, B(s) = B + s D; the induced shear coordinate is
    phi(s) = A(s)^{-1} B(s) with inverse (A t - B)(D - C t)^{-1}.
    """

    p: FlowParams
    m: np.ndarray
    a: np.ndarray = field(init=False)
    b: np.ndarray = field(init=False)
    c: np.ndarray = field(init=False)
    dd: np.ndarray = field(init=False)

    def __post_init__(self):
        m = check_special(self.m)
        r = self.p.r
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "a", m[:r, :r].copy())
        object.__setattr__(self, "b", m[:r, r:].copy())
        object.__setattr__(self, "c", m[r:, :r].copy())
        object.__setattr__(self, "dd", m[r:, r:].copy())

    def blocks_at(self, s):
        s = np.asarray(s, dtype=float).reshape(self.p.r, self.p.d - self.p.r)
        return self.a + s @ self.c, self.b + s @ self.dd

    def phi_map(self, s) -> np.ndarray:
        a_s, b_s = self.blocks_at(s)
        det = np.linalg.det(a_s)
        if abs(det) <= DET_TOL * max(1.0, float(np.abs(a_s).max()) ** self.p.r):
            raise DegenerateInputError("upper-left block A(s) is numerically singular")
        return np.linalg.solve(a_s, b_s)

    def phi_inverse(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float).reshape(self.p.r, self.p.d - self.p.r)
        den = self.dd - self.c @ t
        det = np.linalg.det(den)
        if abs(det) <= DET_TOL * max(1.0, float(np.abs(den).max()) ** (self.p.d - self.p.r)):
            raise DegenerateInputError("block D - C t is numerically singular")
        return (self.a @ t - self.b) @ np.linalg.inv(den)
