"""Unimodular-lattice geometry at desk scale (d <= 6).

Reduction is LLL with delta = 0.99; shortest/closest vectors are exact by
Fincke-Pohst enumeration after reduction, with a deterministic lexicographic
tie-break on the coefficient vector.  Covolumes of rational subspaces come
from Gram determinants; the alpha_i maximizers are found exactly through the
wedge-coordinate lattice.  Enumerations never truncate silently: exceeding
the candidate budget raises ``BudgetError``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import BudgetError

DEFAULT_BUDGET = 10**7
_TIE_TOL = 1e-12


# ---------------------------------------------------------------------------
# reduction


def lll_reduce(basis, delta: float = 0.99):
    """LLL-reduce the columns of ``basis`` (square or tall, full column rank).

    Returns (reduced, transform) with ``reduced = basis @ transform`` and
    ``transform`` an integer matrix of determinant +-1.
    """
    b = np.array(basis, dtype=float)
    if b.ndim != 2 or b.shape[0] < b.shape[1]:
        raise ValueError(f"expected a square or tall basis, got shape {b.shape}")
    n = b.shape[1]
    if b.shape[0] == n and abs(np.linalg.det(b)) < 1e-12:
        raise ValueError("singular basis")
    u = np.eye(n, dtype=np.int64)

    def gram_schmidt(cols):
        q = np.zeros_like(cols)
        mu = np.zeros((n, n))
        for i in range(n):
            q[:, i] = cols[:, i]
            for j in range(i):
                mu[i, j] = cols[:, i] @ q[:, j] / (q[:, j] @ q[:, j])
                q[:, i] -= mu[i, j] * q[:, j]
            norm2 = q[:, i] @ q[:, i]
            if not np.isfinite(norm2) or norm2 <= 0.0:
                raise ValueError("numerically rank-deficient basis in reduction")
        return q, mu

    q, mu = gram_schmidt(b)
    k = 1
    sweeps = 0
    while k < n:
        sweeps += 1
        if sweeps > 10000 * n * n:
            raise ValueError("LLL failed to converge (pathologically conditioned basis)")
        for j in range(k - 1, -1, -1):
            r = round(mu[k, j])
            if r != 0:
                b[:, k] -= r * b[:, j]
                u[:, k] -= r * u[:, j]
                q, mu = gram_schmidt(b)
        if (q[:, k] @ q[:, k]) >= (delta - mu[k, k - 1] ** 2) * (q[:, k - 1] @ q[:, k - 1]):
            k += 1
        else:
            b[:, [k - 1, k]] = b[:, [k, k - 1]]
            u[:, [k - 1, k]] = u[:, [k, k - 1]]
            q, mu = gram_schmidt(b)
            k = max(k - 1, 1)
    return b, u


# ---------------------------------------------------------------------------
# enumeration


def _cholesky_rows(basis):
    gram = basis.T @ basis
    # tiny symmetric jitter keeps Cholesky stable for near-degenerate inputs
    return np.linalg.cholesky(gram + 1e-300 * np.eye(gram.shape[0])).T


def _enumerate(rmat, center, radius2, budget, collect, exclude_zero):
    """Depth-first Fincke-Pohst over integer x with ||R (x - center)||^2 <= radius2.

    ``collect(x, dist2)`` is called per candidate and may return a new
    (smaller) radius2 to shrink the search.  Returns candidates visited.
    """
    n = rmat.shape[0]
    x = np.zeros(n, dtype=np.int64)
    visited = 0

    def walk(level, partial2, shifts):
        nonlocal visited, radius2
        rem = radius2 - partial2
        if rem < 0:
            return
        rii = rmat[level, level]
        mid = center[level] - shifts / rii
        half = math.sqrt(max(rem, 0.0)) / abs(rii)
        lo = math.ceil(mid - half - 1e-12)
        hi = math.floor(mid + half + 1e-12)
        for xi in range(lo, hi + 1):
            visited += 1
            if visited > budget:
                raise BudgetError(f"enumeration exceeded budget of {budget} candidates")
            x[level] = xi
            term = rii * (xi - center[level]) + shifts
            new_partial = partial2 + term * term
            if new_partial > radius2 * (1 + 1e-12) + 1e-300:
                continue
            if level == 0:
                if exclude_zero and not np.any(x):
                    continue
                shrunk = collect(x.copy(), new_partial)
                if shrunk is not None:
                    radius2 = shrunk
            else:
                nxt = rmat[level - 1, level:] @ (x[level:] - center[level:])
                walk(level - 1, new_partial, nxt)

    walk(n - 1, 0.0, 0.0)
    return visited


class _Best:
    """Tracks the enumeration minimum with a lexicographic tie-break."""

    def __init__(self):
        self.dist2 = math.inf
        self.coeffs = None

    def offer(self, coeffs, dist2):
        tol = _TIE_TOL * max(1.0, self.dist2 if math.isfinite(self.dist2) else 1.0)
        if dist2 < self.dist2 - tol:
            self.dist2, self.coeffs = dist2, coeffs
            return dist2 * (1 + 1e-9) + 1e-300
        if abs(dist2 - self.dist2) <= tol and tuple(coeffs) < tuple(self.coeffs):
            self.coeffs = coeffs
        return None


@dataclass(frozen=True)
class ShortestResult:
    vector: np.ndarray
    length: float
    coeffs: np.ndarray


@dataclass(frozen=True)
class ClosestResult:
    point: np.ndarray
    distance: float
    coeffs: np.ndarray


def shortest_vector(basis, budget: int = DEFAULT_BUDGET) -> ShortestResult:
    """Exact shortest nonzero vector of basis * Z^d."""
    basis = np.asarray(basis, dtype=float)
    red, trans = lll_reduce(basis)
    rmat = _cholesky_rows(red)
    best = _Best()
    start = float(min(np.sum(red**2, axis=0))) * (1 + 1e-9)
    _enumerate(rmat, np.zeros(red.shape[1]), start, budget, best.offer, exclude_zero=True)
    coeffs = trans @ best.coeffs
    vec = basis @ coeffs
    # canonical sign: lexicographically smallest of the +-pair
    if tuple(-coeffs) < tuple(coeffs):
        coeffs, vec = -coeffs, -vec
    return ShortestResult(vec, math.sqrt(best.dist2), coeffs.astype(np.int64))


def closest_vector(basis, target, budget: int = DEFAULT_BUDGET) -> ClosestResult:
    """Exact closest lattice point of basis * Z^d to ``target``."""
    basis = np.asarray(basis, dtype=float)
    target = np.asarray(target, dtype=float)
    red, trans = lll_reduce(basis)
    rmat = _cholesky_rows(red)
    center = np.linalg.solve(red, target)
    # Babai nearest-plane point seeds the radius
    babai = np.zeros(red.shape[1], dtype=np.int64)
    for level in range(red.shape[1] - 1, -1, -1):
        shift = rmat[level, level + 1 :] @ (babai[level + 1 :] - center[level + 1 :])
        babai[level] = round(center[level] - shift / rmat[level, level])
    start = float(np.sum((red @ (babai - center)) ** 2)) * (1 + 1e-9) + 1e-300
    best = _Best()
    best.offer(babai.copy(), start / (1 + 1e-9))
    _enumerate(rmat, center, start, budget, best.offer, exclude_zero=False)
    coeffs = trans @ best.coeffs
    point = basis @ coeffs
    return ClosestResult(point, float(np.linalg.norm(point - target)), coeffs.astype(np.int64))


def vectors_within(basis, radius: float, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """All integer coefficient vectors with ||basis x|| <= radius (0 included)."""
    basis = np.asarray(basis, dtype=float)
    red, trans = lll_reduce(basis)
    rmat = _cholesky_rows(red)
    found = []

    def keep(coeffs, dist2):
        found.append(coeffs)
        return None

    _enumerate(rmat, np.zeros(red.shape[1]), radius**2 * (1 + 1e-12), budget, keep, exclude_zero=False)
    if not found:
        return np.zeros((0, basis.shape[1]), dtype=np.int64)
    return np.asarray(found, dtype=np.int64) @ trans.T


# ---------------------------------------------------------------------------
# exact integer helpers


def _int_det(rows) -> int:
    """Fraction-free (Bareiss) determinant of a small integer matrix."""
    m = [list(map(int, r)) for r in rows]
    n = len(m)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if m[k][k] == 0:
            for i in range(k + 1, n):
                if m[i][k] != 0:
                    m[k], m[i] = m[i], m[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[-1][-1]


def _frac_rank(rows) -> int:
    m = [[Fraction(int(x)) for x in r] for r in rows]
    rank = 0
    n_cols = len(m[0]) if m else 0
    for col in range(n_cols):
        pivot = next((i for i in range(rank, len(m)) if m[i][col] != 0), None)
        if pivot is None:
            continue
        m[rank], m[pivot] = m[pivot], m[rank]
        inv = 1 / m[rank][col]
        m[rank] = [v * inv for v in m[rank]]
        for i in range(len(m)):
            if i != rank and m[i][col] != 0:
                f = m[i][col]
                m[i] = [a - f * b for a, b in zip(m[i], m[rank])]
        rank += 1
    return rank


# ---------------------------------------------------------------------------
# lattices and grids


@dataclass(frozen=True)
class UnimodularLattice:
    """Lattice basis * Z^d with |det| = 1.

    The constructor renormalizes by |det|^{1/d} once; determinant drift
    beyond 1e-6 on input is an error rather than silently absorbed.
    """

    basis: np.ndarray

    def __post_init__(self):
        b = np.array(self.basis, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"expected a square basis, got shape {b.shape}")
        det = abs(np.linalg.det(b))
        if abs(det - 1.0) > 1e-6:
            raise ValueError(f"basis determinant {det!r} drifted beyond 1e-6 from unimodular")
        object.__setattr__(self, "basis", b / det ** (1.0 / b.shape[0]))

    @property
    def d(self) -> int:
        return self.basis.shape[0]


@dataclass(frozen=True)
class AffineGrid:
    """Translates lattice + offsets[:, j]; offsets canonicalized to the
    fundamental cube in basis coordinates."""

    lattice: UnimodularLattice
    offsets: np.ndarray

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=float)
        if off.ndim == 1:
            off = off[:, None]
        if off.shape[0] != self.lattice.d:
            raise ValueError(f"offsets shape {off.shape} incompatible with d={self.lattice.d}")
        w = np.linalg.solve(self.lattice.basis, off)
        object.__setattr__(self, "offsets", self.lattice.basis @ (w - np.floor(w)))

    @property
    def k(self) -> int:
        return self.offsets.shape[1]


def subspace_covolume(lat: UnimodularLattice, gens) -> float:
    """Covolume of the rational subspace spanned by primitive integer ``gens``.

    ``gens`` is d x i in lattice coordinates; the result is the norm of the
    wedge of the real images, sqrt of the Gram determinant.  The zero
    subspace has covolume 1 by convention.  Non-primitive generators are
    rejected (they would overcount the covolume).
    """
    gens = np.asarray(gens)
    if gens.size == 0:
        return 1.0
    if gens.ndim != 2 or gens.shape[0] != lat.d:
        raise ValueError(f"generator shape {gens.shape} incompatible with d={lat.d}")
    if not np.array_equal(gens, np.round(gens)):
        raise ValueError("generators must be integer vectors in lattice coordinates")
    gens = gens.astype(np.int64)
    i = gens.shape[1]
    minors = [_int_det(gens[list(rows), :]) for rows in itertools.combinations(range(lat.d), i)]
    g = 0
    for v in minors:
        g = math.gcd(g, abs(v))
    if g == 0:
        raise ValueError("generators are not linearly independent")
    if g != 1:
        raise ValueError(f"generators are non-primitive (index {g} in their saturation)")
    real = lat.basis @ gens
    gram = real.T @ real
    return float(math.sqrt(max(np.linalg.det(gram), 0.0)))


def _wedge_subsets(d: int, i: int):
    return list(itertools.combinations(range(d), i))


def _is_decomposable(coeffs, d: int, i: int) -> bool:
    """Exact check that the integer wedge vector is a pure wedge."""
    if i in (0, 1, d - 1, d):
        return True
    subsets = _wedge_subsets(d, i)
    index = {s: j for j, s in enumerate(subsets)}
    rows = []
    for bigger in itertools.combinations(range(d), i + 1):
        row = [0] * d
        for pos, t in enumerate(bigger):
            rest = tuple(x for x in bigger if x != t)
            row[t] = (-1) ** pos * int(coeffs[index[rest]])
        rows.append(row)
    if not any(any(r) for r in rows):
        return False
    return _frac_rank(rows) == d - i


def alpha_i(lat: UnimodularLattice, i: int, budget: int = DEFAULT_BUDGET) -> float:
    """sup of 1/covolume over rational subspaces of dimension ``i``.

    Exact for d <= 4 (any i) through the wedge-coordinate lattice; for
    d in {5, 6} only i in {0, 1, d-1, d} are offered (SVP and dual SVP).
    """
    d = lat.d
    if not 0 <= i <= d:
        raise ValueError(f"subspace dimension {i} outside [0, {d}]")
    if i == 0 or i == d:
        return 1.0
    if i == 1:
        return 1.0 / shortest_vector(lat.basis, budget).length
    if i == d - 1:
        dual = np.linalg.inv(lat.basis).T
        return 1.0 / shortest_vector(dual, budget).length
    if d > 4:
        raise ValueError(f"alpha_{i} for d={d} is outside the exact-mode range (d <= 4)")

    rows = _wedge_subsets(d, i)
    cols = rows
    wedge_basis = np.empty((len(rows), len(cols)))
    for a, rset in enumerate(rows):
        for b, cset in enumerate(cols):
            wedge_basis[a, b] = np.linalg.det(lat.basis[np.ix_(rset, cset)])

    # upper bound from saturated wedges of LLL-reduced column subsets
    _, trans = lll_reduce(lat.basis)
    best = math.inf
    for cset in cols:
        coeffs = np.array([_int_det(trans[np.ix_(rset, cset)]) for rset in rows], dtype=object)
        g = 0
        for v in coeffs:
            g = math.gcd(g, abs(int(v)))
        coeffs = np.array([int(v) // g for v in coeffs], dtype=np.int64)
        best = min(best, float(np.linalg.norm(wedge_basis @ coeffs)))

    candidates = vectors_within(wedge_basis, best * (1 + 1e-9), budget)
    minimum = best
    for c in candidates:
        if not np.any(c):
            continue
        g = 0
        for v in c:
            g = math.gcd(g, abs(int(v)))
        prim = c // g
        norm = float(np.linalg.norm(wedge_basis @ prim))
        if norm < minimum - 1e-15 and _is_decomposable(prim, d, i):
            minimum = norm
    return 1.0 / minimum


def cusp_height(lat: UnimodularLattice, eps: float = 0.01, nu: float = 0.25) -> float:
    """Weighted sum of alpha_i^nu with weights eps^{i(d-i)}, rescaled by
    eps^{-(d-1)}; a proper map measuring cusp excursions."""
    if not (0 < eps <= 0.1):
        raise ValueError(f"eps={eps} outside (0, 0.1]")
    if not (0 < nu < 1):
        raise ValueError(f"nu={nu} outside (0, 1)")
    d = lat.d
    total = 0.0
    for i in range(d + 1):
        total += eps ** (i * (d - i)) * alpha_i(lat, i) ** nu
    return eps ** (-(d - 1)) * total


def sample_unimodular_2d(rng: np.random.Generator) -> UnimodularLattice:
    """Haar-random point of the d = 2 lattice space.

    (x, y) is drawn from the normalized measure (3/pi) y^{-2} dx dy on the
    standard fundamental domain {|x| <= 1/2, x^2 + y^2 >= 1} by rejection,
    then rotated by a uniform angle in [0, pi).
    """
    y0 = math.sqrt(3.0) / 2.0
    while True:
        x = rng.uniform(-0.5, 0.5)
        y = y0 / (1.0 - rng.uniform(0.0, 1.0))  # pdf proportional to 1/y^2 on [y0, inf)
        if x * x + y * y >= 1.0:
            break
    theta = rng.uniform(0.0, math.pi)
    ct, st = math.cos(theta), math.sin(theta)
    rot = np.array([[ct, -st], [st, ct]])
    shape = np.array([[1.0, x], [0.0, y]]) / math.sqrt(y)
    return UnimodularLattice(rot @ shape)


def grid_points_in_region(grid: AffineGrid, j: int, region, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """Exact list of grid-j points inside ``region`` by coefficient-box enumeration."""
    basis = grid.lattice.basis
    offset = grid.offsets[:, j]
    center, radius = region.bounding_sphere()
    if not (np.all(np.isfinite(center)) and np.isfinite(radius)):
        raise ValueError("region must be bounded")
    inv = np.linalg.inv(basis)
    mid = inv @ (center - offset)
    half = radius * np.linalg.norm(inv, axis=1)
    los = np.ceil(mid - half - 1e-9).astype(np.int64)
    his = np.floor(mid + half + 1e-9).astype(np.int64)
    total = int(np.prod(np.maximum(his - los + 1, 0)))
    if total > budget:
        raise BudgetError(f"coefficient box of {total} candidates exceeds budget {budget}")
    if total == 0:
        return np.zeros((0, grid.lattice.d))
    axes = [np.arange(lo, hi + 1) for lo, hi in zip(los, his)]
    coeffs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.lattice.d)
    pts = coeffs @ basis.T + offset
    return pts[region.contains_many(pts)]


def count_grid_points(grid: AffineGrid, j: int, region, budget: int = DEFAULT_BUDGET) -> int:
    return int(grid_points_in_region(grid, j, region, budget).shape[0])
