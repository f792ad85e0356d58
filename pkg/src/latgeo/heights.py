"""Height functions tied to the singular sets of the translation block.

For an index vector m, the singular set collects points (g, v) with
g^{-1} v . m integral.  ``singular_proximity`` inverts the distance from
v . m to the lattice g Z^d when a unique nearby lattice point exists
(strictly within half the shortest-vector length), and ``mixed_height``
couples that with the cusp height so both cusp excursions and approaches
to the singular set are penalized at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import funcspec
from .groups import FlowParams, GroupElement
from .lattice import UnimodularLattice, closest_vector, cusp_height, shortest_vector, vectors_within

INF_WITNESS_TOL = 1e-14  # witness distances below this flag exact singularity

# ties within this relative distance of the strict threshold are rejected
# (conservative: the defining inequality is strict) and counted here
TIE_TOL = 1e-12
tie_count = 0


def check_m_index(m, k: int) -> np.ndarray:
    m = np.asarray(m)
    if m.shape != (k,) or not np.array_equal(m, np.round(m)):
        raise ValueError(f"index vector must be an integer vector of length {k}")
    if not np.any(m):
        raise ValueError("index vector must be nonzero")
    return m.astype(np.int64)


def minkowski_mu(d: int) -> float:
    """Conservative lower bound 1/sqrt(d) <= 1 on 2/lambda_1 for unimodular
    lattices (Minkowski ball bound lambda_1 <= 2 sqrt(d))."""
    return 1.0 / math.sqrt(d)


@dataclass(frozen=True)
class IntegerWitness:
    """Integer vector c with g c closest to v.m, strictly inside half the
    shortest length."""

    coeffs: np.ndarray
    distance: float


def integer_witness(x: GroupElement, m, verify_unique: bool = False) -> IntegerWitness | None:
    """The unique nearby lattice coefficient vector for v.m, if one exists."""
    global tie_count
    m = check_m_index(m, x.k)
    target = x.v @ m
    lam1 = shortest_vector(x.g).length
    half = 0.5 * lam1
    cvp = closest_vector(x.g, target)
    if abs(cvp.distance - half) <= TIE_TOL * max(1.0, half):
        tie_count += 1
        return None
    if cvp.distance >= half:
        return None
    if verify_unique:
        # a second point within half the shortest length would produce a
        # nonzero lattice vector shorter than lambda_1
        offsets = vectors_within(x.g, half + cvp.distance + 1e-12)
        dists = np.linalg.norm((offsets + cvp.coeffs) @ x.g.T - target, axis=1)
        inside = dists < half - TIE_TOL * max(1.0, half)
        assert int(inside.sum()) == 1, "witness uniqueness violated"
    return IntegerWitness(cvp.coeffs, cvp.distance)


def singular_proximity(x: GroupElement, m) -> float:
    """Inverse witness distance; 1 when no witness exists; inf on the
    singular set itself (witness distance below 1e-14)."""
    witness = integer_witness(x, m)
    if witness is None:
        return 1.0
    if witness.distance < INF_WITNESS_TOL:
        return math.inf
    return 1.0 / witness.distance


def in_singular_set(x: GroupElement, m, tol: float = 1e-9) -> bool:
    """Whether dist(g^{-1} v . m, Z^d) <= tol."""
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    m = check_m_index(m, x.k)
    y = np.linalg.solve(x.g, x.v @ m)
    return bool(np.linalg.norm(y - np.round(y)) <= tol)


@dataclass(frozen=True)
class MixedHeightParams:
    """Parameters of the mixed height.  The coupling constant is always
    recomputed from (r, d, nu), never supplied by the caller."""

    flow: FlowParams
    nu: float
    eps: float = 0.01
    t_step: float = 1.0
    c: float = field(init=False)

    def __post_init__(self):
        n = self.flow.n_shear
        if not (0 < self.nu < 1.0 / n):
            raise ValueError(f"nu={self.nu} outside (0, 1/{n})")
        if not (0 < self.eps <= 0.1):
            raise ValueError(f"eps={self.eps} outside (0, 0.1]")
        if self.t_step <= 0:
            raise ValueError("t_step must be positive")
        r, d = self.flow.r, self.flow.d
        object.__setattr__(self, "c", 4.0 * (10 * r * r * d) ** self.nu * 2.0 ** (r * (d - r)))


def default_nu(p: FlowParams) -> float:
    return min(0.9 / p.n_shear, 0.25)


def mixed_height(x: GroupElement, m, params: MixedHeightParams) -> float:
    """singular_proximity^nu + c e^{nu r t} cusp_height; inf exactly on the
    singular set."""
    prox = singular_proximity(x, m)
    if math.isinf(prox):
        return math.inf
    p = params.flow
    tilde = cusp_height(UnimodularLattice(x.g), eps=params.eps, nu=params.nu)
    return prox**params.nu + params.c * math.exp(params.nu * p.r * params.t_step) * tilde


# ---------------------------------------------------------------------------
# derivative bound and resonance scan over the parameter box


def _grid_points(lo, hi, per_axis: int) -> np.ndarray:
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


@dataclass(frozen=True)
class SlopeBound:
    """N_1 sup||d phi|| + 1 with the sup taken over a finite-difference grid."""

    value: float
    sup_partial: float
    grid_per_axis: int
    fd_step: float


def m1_constant(
    phi: funcspec.FuncFamily,
    lo,
    hi,
    p: FlowParams,
    grid_per_axis: int = 64,
    h: float = 1e-5,
) -> SlopeBound:
    """Derivative bound N_1 max_ij sup ||d_ij phi||_inf + 1, N_1 = 8 r^2 k^{1/2} (d-r).

    Inputs are the r(d-r) shear coordinates in row-major order; the sup is
    estimated on a grid (per-axis count reduced for high-dimensional boxes
    so the total stays near 64^2) and reported alongside the value.
    """
    n = p.n_shear
    if phi.n_vars != n:
        raise ValueError(f"phi has {phi.n_vars} inputs, expected r(d-r)={n}")
    k = phi.shape[1]
    if phi.shape[0] != p.d:
        raise ValueError(f"phi outputs {phi.shape[0]} rows, expected d={p.d}")
    per_axis = grid_per_axis if n == 1 else max(4, int(round(4096 ** (1.0 / n))))
    sup = 0.0
    for s in _grid_points(lo, hi, per_axis):
        jac = funcspec.fd_jacobian(phi, s, h)  # (d*k, n)
        if not np.all(np.isfinite(jac)):
            raise funcspec.DomainError("phi has non-finite derivatives on the box")
        sup = max(sup, float(np.abs(jac).max()))
    n1 = 8.0 * p.r * p.r * math.sqrt(k) * (p.d - p.r)
    return SlopeBound(n1 * sup + 1.0, sup, per_axis, h)


def _residual_at(phi_top_m: np.ndarray, s_mat: np.ndarray, a_bound: int, d_minus_r: int):
    """min over integer a (sup-norm bound) and rounded b of the resonance residual."""
    rng = np.arange(-a_bound, a_bound + 1)
    grids = np.meshgrid(*([rng] * d_minus_r), indexing="ij")
    avecs = np.stack([g.ravel() for g in grids], axis=1)  # (A, d-r)
    vals = phi_top_m[None, :] - avecs @ s_mat.T  # (A, r)
    bvecs = np.round(vals)
    resid = np.abs(vals - bvecs).max(axis=1)
    best = int(np.argmin(resid))
    return float(resid[best]), avecs[best], bvecs[best].astype(np.int64)


def resonance_scan(
    phi: funcspec.FuncFamily,
    lo,
    hi,
    m,
    p: FlowParams,
    tol: float,
    grid_per_axis: int,
):
    """Scan for shear points where (phi(s))_{<=r}.m lands within ``tol`` of
    s.a + b for a bounded integer pair (a, b).

    The bound on a is the slope bound times ||m||; b is the componentwise
    nearest integer, which realizes the minimum over all of Z^r.  The grid
    step must resolve tol against the slope bound or the scan is rejected.
    Returns (flagged_fraction, witnesses, slope_bound).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = check_m_index(m, phi.shape[1])
    bound = m1_constant(phi, lo, hi, p)
    m_norm = float(np.linalg.norm(m))
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    step = float((hi - lo).max()) / max(grid_per_axis - 1, 1)
    if step >= tol / (1.0 + bound.value * m_norm):
        raise ValueError(
            f"grid step {step:.3g} too coarse: need below tol/(1+M1||m||) = "
            f"{tol / (1.0 + bound.value * m_norm):.3g}"
        )
    a_bound = int(math.floor(bound.value * m_norm))
    witnesses = []
    points = _grid_points(lo, hi, grid_per_axis)
    for s in points:
        s_mat = s.reshape(p.r, p.d - p.r)
        top_m = (phi(s) @ m)[: p.r]
        resid, avec, bvec = _residual_at(top_m, s_mat, a_bound, p.d - p.r)
        if resid < tol:
            witnesses.append({"s": s.tolist(), "a": avec.tolist(), "b": bvec.tolist(), "resid": resid})
    return len(witnesses) / len(points), witnesses, bound


def estimate_sigma(
    phi: funcspec.FuncFamily,
    lo,
    hi,
    m,
    p: FlowParams,
    grid_per_axis: int = 33,
):
    """Grid estimate of the infimum resonance residual over the box.

    A grid scan is a lower-confidence stand-in for the exact infimum; the
    resolution is reported so callers can flag it.
    """
    m = check_m_index(m, phi.shape[1])
    bound = m1_constant(phi, lo, hi, p)
    a_bound = int(math.floor(bound.value * float(np.linalg.norm(m))))
    sigma = math.inf
    for s in _grid_points(lo, hi, grid_per_axis):
        s_mat = s.reshape(p.r, p.d - p.r)
        top_m = (phi(s) @ m)[: p.r]
        resid, _, _ = _residual_at(top_m, s_mat, a_bound, p.d - p.r)
        sigma = min(sigma, resid)
    return sigma, bound


def default_t_step(
    phi: funcspec.FuncFamily,
    lo,
    hi,
    m,
    p: FlowParams,
    grid_per_axis: int = 33,
):
    """max(log(2 mu_d^{-1} sigma^{-1}) + 1, threshold making e^{(d-r)t} > 2d).

    sigma is the grid estimate from ``estimate_sigma``; returns (t, sigma).
    """
    sigma, _ = estimate_sigma(phi, lo, hi, m, p, grid_per_axis)
    if sigma <= 0 or not math.isfinite(sigma):
        raise ValueError(f"degenerate resonance infimum estimate sigma={sigma}")
    t1 = math.log(2.0 / (minkowski_mu(p.d) * sigma)) + 1.0
    t2 = math.log(2.0 * p.d) / (p.d - p.r) + 0.05
    return max(t1, t2), sigma


# ---------------------------------------------------------------------------
# flowed witness gap and the partition rotation


def flowed_witness_gap(
    n: int,
    s,
    xi_m,
    m,
    phi: funcspec.FuncFamily,
    p: FlowParams,
    t: float,
) -> np.ndarray:
    """The displacement (v_n(s) - g_n(s) v).m of a flowed point against a
    witness class v with v.m = xi_m, in block form:

        top    e^{(d-r)nt} [ (phi(s).m)_{<=r} - (xi_m)_{<=r} - s (xi_m)_{>r} ]
        bottom e^{-rnt} (xi_m)_{>r}

    Requires (phi(s))_{>r} = 0.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    xi = np.asarray(xi_m, dtype=float)
    m = check_m_index(m, phi.shape[1])
    phi_s = phi(s)
    if np.abs(phi_s[p.r :, :]).max(initial=0.0) > 1e-12:
        raise ValueError("flowed gap formula requires (phi(s))_{>r} = 0")
    s_mat = s.reshape(p.r, p.d - p.r)
    phi_m = phi_s @ m
    top = math.exp((p.d - p.r) * n * t) * (phi_m[: p.r] - xi[: p.r] - s_mat @ xi[p.r :])
    bottom = math.exp(-p.r * n * t) * xi[p.r :]
    return np.concatenate([top, bottom])


def partition_rotation(n: int, part1, part2, part3) -> np.ndarray:
    """Special orthogonal matrix determined by a partition of {1..n}.

    The block mixing the designated coordinate (the smallest element of
    part1) with the part3 coordinates has constant first column 1/sqrt(p),
    p - 1 = |part3|; everything else is the identity.  With part3 empty the
    result is the identity.
    """
    p1, p2, p3 = set(part1), set(part2), set(part3)
    if p1 | p2 | p3 != set(range(1, n + 1)) or (p1 & p2) or (p1 & p3) or (p2 & p3):
        raise ValueError("arguments must partition {1..n}")
    if not p1:
        raise ValueError("the first part must be nonempty")
    if not p3:
        return np.eye(n)
    first = min(p1)
    order = [first] + sorted(p3) + sorted((p1 | p2) - {first})
    p = 1 + len(p3)
    ones = np.full(p, 1.0 / math.sqrt(p))
    seed = np.eye(p)
    seed[:, 0] = ones
    q, _ = np.linalg.qr(seed)
    if q[:, 0] @ ones < 0:
        q[:, 0] *= -1
    # QR can flip later columns; pin determinant +1 deterministically
    if np.linalg.det(q) < 0:
        q[:, -1] *= -1
    block = np.eye(n)
    block[:p, :p] = q
    perm = np.zeros((n, n))
    for pos, idx in enumerate(order):
        perm[pos, idx - 1] = 1.0
    return perm.T @ block @ perm
