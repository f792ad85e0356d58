"""Trajectory experiments: time averages along the diagonal flows, the
two-point correlation estimate, and the averaged contraction check for the
mixed height.

Orbit points are reduced modulo the integer group at every step (basis
re-reduction plus offset canonicalization) so coordinates stay bounded on
long horizons; observables are invariant under that reduction by
construction, which is also separately tested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import StepSizeError
from .groups import FlowParams, GroupElement, axis_dilation, diag_flow, shear_with_offset
from .heights import MixedHeightParams, check_m_index, mixed_height
from .lattice import AffineGrid, UnimodularLattice, cusp_height, grid_points_in_region, lll_reduce
from .regions import Ball

OVERFLOW_GUARD = 1e12


def _int_inverse(u: np.ndarray) -> np.ndarray:
    inv = np.round(np.linalg.inv(u)).astype(np.int64)
    if not np.array_equal(u @ inv, np.eye(u.shape[0], dtype=np.int64)):
        raise ValueError("transform is not integrally invertible")
    return inv


def _reduction_transform(g: np.ndarray):
    reduced, trans = lll_reduce(g)
    if round(float(np.linalg.det(trans.astype(float)))) == -1:
        trans = trans.copy()
        trans[:, 0] *= -1
        reduced = g @ trans
    return reduced, trans


def reduce_mod_gamma(x: GroupElement) -> GroupElement:
    """Right-multiply by an integer group element so the basis is LLL-reduced
    and the offsets lie in the fundamental cube."""
    reduced, _ = _reduction_transform(x.g)
    w = np.linalg.solve(reduced, x.v)
    return GroupElement(reduced, reduced @ (w - np.floor(w)))


class _OrbitState:
    """Flow state (g, xi) standing for the point (g, g xi).

    Keeping the translation block in lattice coordinates confines all
    floating error to the reduced basis: the reduction updates xi by exact
    integer moves, so the expanding direction never amplifies offset error.
    """

    __slots__ = ("g", "xi")

    def __init__(self, g: np.ndarray, xi: np.ndarray):
        self.g = g
        self.xi = xi

    @staticmethod
    def from_element(x: GroupElement) -> "_OrbitState":
        return _OrbitState(x.g.copy(), np.linalg.solve(x.g, x.v))

    def element(self) -> GroupElement:
        return GroupElement(self.g, self.g @ self.xi)

    def advance(self, step: np.ndarray, t_label: float) -> "_OrbitState":
        g = step @ self.g
        if float(np.abs(g).max()) > OVERFLOW_GUARD:
            raise StepSizeError(
                f"orbit coordinates exceeded {OVERFLOW_GUARD:g} before reduction at t={t_label:.3f}; "
                "reduce the step size"
            )
        reduced, trans = _reduction_transform(g)
        xi = _int_inverse(trans).astype(float) @ self.xi
        return _OrbitState(reduced, xi - np.floor(xi))


@dataclass(frozen=True)
class TrajectorySpec:
    """A flow trajectory: base point, flow kind, horizon, and step."""

    base: GroupElement
    flow: str  # "diag" (needs params) or "dilation"
    horizon: float
    dt: float
    params: FlowParams | None = None
    reduce_each_step: bool = True

    def __post_init__(self):
        if self.flow not in ("diag", "dilation"):
            raise ValueError(f"unknown flow {self.flow!r}")
        if self.flow == "diag" and self.params is None:
            raise ValueError("diag flow requires FlowParams")
        if not (0 < self.dt <= self.horizon / 100):
            raise ValueError(f"need 0 < dt <= horizon/100, got dt={self.dt}, horizon={self.horizon}")

    def step_matrix(self) -> np.ndarray:
        if self.flow == "diag":
            return diag_flow(self.params, self.dt)
        return axis_dilation(self.base.d, self.dt)


# ---------------------------------------------------------------------------
# observables (bounded, invariant under the integer group)


class SiegelBump:
    """Sum of a radial bump over the m-twisted affine grid g Z^d + v.m.

    The bump profile is (1 - u^2)^2 on [0, 1); its integral over R^d is the
    reference value of the observable under the invariant measure.
    """

    kind = "siegel"

    def __init__(self, rho: float, m):
        if rho <= 0:
            raise ValueError("support radius must be positive")
        self.rho = float(rho)
        self.m = np.asarray(m, dtype=np.int64)

    def __call__(self, x: GroupElement) -> float:
        m = check_m_index(self.m, x.k)
        basis, _ = lll_reduce(x.g)
        grid = AffineGrid(UnimodularLattice(basis), (x.v @ m)[:, None])
        pts = grid_points_in_region(grid, 0, Ball(np.zeros(x.d), self.rho))
        if pts.shape[0] == 0:
            return 0.0
        u2 = np.sum(pts**2, axis=1) / self.rho**2
        return float(np.sum((1.0 - u2[u2 < 1.0]) ** 2))

    def bound(self) -> float:
        return math.inf  # finite on every point, unbounded over the space


class InverseHeight:
    """exp(-cusp_height) of the lattice part: a bounded proxy for a
    compactly supported function."""

    kind = "inv_height"

    def __init__(self, eps: float = 0.01, nu: float = 0.25):
        self.eps = eps
        self.nu = nu

    def __call__(self, x: GroupElement) -> float:
        return math.exp(-cusp_height(UnimodularLattice(x.g), self.eps, self.nu))


class BetaLevel:
    """Smoothed indicator of {mixed height <= level}, ramp width 0.1 level."""

    kind = "beta_level"

    def __init__(self, m, level: float, params: MixedHeightParams):
        if level <= 0:
            raise ValueError("level must be positive")
        self.m = np.asarray(m, dtype=np.int64)
        self.level = float(level)
        self.params = params

    def __call__(self, x: GroupElement) -> float:
        beta = mixed_height(x, self.m, self.params)
        if math.isinf(beta):
            return 0.0
        width = 0.1 * self.level
        return float(np.clip((self.level + width / 2 - beta) / width, 0.0, 1.0))


def siegel_reference(obs: SiegelBump, d: int, nodes: int = 96) -> float:
    """Lebesgue integral of the bump over R^d by Gauss-Legendre quadrature:
    the independent reference value for the grid-sum observable."""
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * obs.rho * (xs + 1.0)
    w = 0.5 * obs.rho * ws
    profile = (1.0 - (r / obs.rho) ** 2) ** 2
    surface = 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)
    return float(surface * np.sum(w * profile * r ** (d - 1)))


# ---------------------------------------------------------------------------
# Birkhoff averages


@dataclass
class BirkhoffResult:
    times: np.ndarray
    values: np.ndarray
    running: np.ndarray
    final: float
    reference: float | None
    dt: float
    richardson_delta: float | None = None
    meta: dict = field(default_factory=dict)


def _trapezoid_running(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    # running[k] = (1/t_k) * trapezoid integral up to t_k; running[0] = f(0)
    dt = times[1] - times[0]
    csum = np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * dt)])
    out = np.empty_like(values)
    out[0] = values[0]
    out[1:] = csum[1:] / times[1:]
    return out


def birkhoff_average(spec: TrajectorySpec, obs, reference: float | None = None, richardson: bool = False) -> BirkhoffResult:
    """Trapezoidal time average of ``obs`` along the flow orbit of the base point."""
    n_steps = int(round(spec.horizon / spec.dt))
    times = np.arange(n_steps + 1) * spec.dt
    step = spec.step_matrix()
    values = np.empty(n_steps + 1)
    if spec.reduce_each_step:
        state = _OrbitState.from_element(spec.base)
        for i in range(n_steps + 1):
            values[i] = obs(state.element())
            if i < n_steps:
                state = state.advance(step, float(times[i + 1]))
    else:
        x = spec.base
        for i in range(n_steps + 1):
            values[i] = obs(x)
            if i == n_steps:
                break
            g_next = step @ x.g
            v_next = step @ x.v
            if max(float(np.abs(g_next).max()), float(np.abs(v_next).max())) > OVERFLOW_GUARD:
                raise StepSizeError(
                    f"orbit coordinates exceeded {OVERFLOW_GUARD:g} at t={times[i + 1]:.3f}; "
                    "reduce the step or enable per-step reduction"
                )
            x = GroupElement(g_next, v_next)
    running = _trapezoid_running(times, values)
    delta = None
    if richardson:
        half = TrajectorySpec(spec.base, spec.flow, spec.horizon, spec.dt / 2, spec.params, spec.reduce_each_step)
        delta = birkhoff_average(half, obs, reference=None, richardson=False).final - running[-1]
    return BirkhoffResult(
        times,
        values,
        running,
        float(running[-1]),
        reference,
        spec.dt,
        richardson_delta=delta,
        meta={"flow": spec.flow, "horizon": spec.horizon},
    )


def batch_standard_error(values: np.ndarray, batches: int = 20) -> float:
    """Standard error of the mean of a correlated series via batch means."""
    usable = len(values) - len(values) % batches
    means = values[:usable].reshape(batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(batches))


def sublevel_fraction(spec: TrajectorySpec, m, params: MixedHeightParams, level: float) -> float:
    """Fraction of sampled trajectory times with mixed height at most ``level``."""
    if level <= 0:
        raise ValueError("level must be positive")
    m = np.asarray(m, dtype=np.int64)
    n_steps = int(round(spec.horizon / spec.dt))
    step = spec.step_matrix()
    state = _OrbitState.from_element(spec.base)
    hits = 0
    for i in range(n_steps + 1):
        if mixed_height(state.element(), m, params) <= level:
            hits += 1
        if i < n_steps:
            state = state.advance(step, (i + 1) * spec.dt)
    return hits / (n_steps + 1)


# ---------------------------------------------------------------------------
# two-point correlation of shear-perturbed evaluations


def correlation_estimate(
    phi,
    lo,
    hi,
    psi,
    t: float,
    ell: float,
    n_samples: int,
    p: FlowParams,
    seed: int = 0,
    s_prime: float = 1.0,
):
    """Monte Carlo estimate of the integral over the box of
    psi_t(w) psi_ell(w), where psi_t(w) is the difference of psi along the
    flow with and without a fixed unit shear inserted on the left.

    Returns (estimate, standard_error, n_samples); common random numbers
    are used for both time arguments, and everything is seed-deterministic.
    """
    if t < 0 or ell < 0:
        raise ValueError("time arguments must be nonnegative")
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    volume = float(np.prod(hi - lo))
    rng = np.random.default_rng([seed, 314159])
    n = p.n_shear
    e11 = np.zeros(n)
    e11[0] = s_prime

    def psi_diff(w, tau):
        base = shear_with_offset(p, w, phi(w))
        flowed = GroupElement(diag_flow(p, tau) @ base.g, diag_flow(p, tau) @ base.v)
        flowed = reduce_mod_gamma(flowed)
        shifted = shear_with_offset(p, e11, np.zeros((p.d, flowed.k))).mul(flowed)
        return psi(flowed) - psi(shifted)

    products = np.empty(n_samples)
    for i in range(n_samples):
        w = lo + (hi - lo) * rng.random(n)
        if math.isclose(t, ell):
            d = psi_diff(w, t)
            products[i] = d * d
        else:
            products[i] = psi_diff(w, t) * psi_diff(w, ell)
    estimate = volume * float(products.mean())
    stderr = volume * float(products.std(ddof=1) / math.sqrt(n_samples))
    return estimate, stderr, n_samples


# ---------------------------------------------------------------------------
# averaged contraction of the mixed height


def _beta_pair(phi, s, m, params: MixedHeightParams, n: int) -> tuple[float, float]:
    """Mixed height at flow times n t and (n+1) t along one orbit.

    The orbit is advanced one t-step at a time with reduction modulo the
    integer group in between, so coordinates stay bounded; the height is
    invariant under the reduction.
    """
    x = shear_with_offset(params.flow, s, phi(np.atleast_1d(s)))
    step = diag_flow(params.flow, params.t_step)
    beta_n = math.nan
    for i in range(n + 2):
        if i == n:
            beta_n = mixed_height(x, m, params)
        if i == n + 1:
            return beta_n, mixed_height(x, m, params)
        x = reduce_mod_gamma(GroupElement(step @ x.g, step @ x.v))
    raise AssertionError("unreachable")


def _box_quadrature_pair(phi, m, params, n, lo, hi, per_axis: int) -> tuple[float, float]:
    """Midpoint-rule box means of the mixed height at flow times n t and (n+1) t."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = [lo_i + (hi_i - lo_i) * (np.arange(per_axis) + 0.5) / per_axis for lo_i, hi_i in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    pairs = np.array([_beta_pair(phi, s, m, params, n) for s in pts])
    return float(pairs[:, 0].mean()), float(pairs[:, 1].mean())


def admissible_box(rng: np.random.Generator, n: int, lo, hi, params: MixedHeightParams):
    """A box satisfying the contraction precondition: the whole interval at
    n = 0, otherwise sides in [1, 2] e^{-d n t} placed inside the interval."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if n == 0:
        return lo, hi
    side = math.exp(-params.flow.d * n * params.t_step) * (1.0 + rng.random(lo.shape))
    side = np.minimum(side, hi - lo)
    corner = lo + (hi - lo - side) * rng.random(lo.shape)
    # keep the box wider than float spacing so it never degenerates exactly
    side = np.maximum(side, 4 * np.spacing(np.abs(corner) + np.abs(side)))
    return corner, corner + side


@dataclass(frozen=True)
class ContractionResult:
    n: int
    box_lo: np.ndarray
    box_hi: np.ndarray
    lhs: float
    rhs: float
    margin: float


def contraction_check(
    phi,
    interval_lo,
    interval_hi,
    m,
    params: MixedHeightParams,
    n: int,
    box_lo,
    box_hi,
    b: float,
    quad_per_axis: int = 8,
) -> ContractionResult:
    """Check the averaged inequality
    mean_J beta((n+1)t) <= 1/2 mean_J beta(nt) + b on an admissible box J.

    lhs and rhs carry the |J| normalization (they are box means, so b enters
    per unit volume); the margin is rhs - lhs.
    """
    m = check_m_index(m, phi.shape[1])
    lo = np.atleast_1d(np.asarray(box_lo, dtype=float))
    hi = np.atleast_1d(np.asarray(box_hi, dtype=float))
    ilo = np.atleast_1d(np.asarray(interval_lo, dtype=float))
    ihi = np.atleast_1d(np.asarray(interval_hi, dtype=float))
    if np.any(lo < ilo - 1e-12) or np.any(hi > ihi + 1e-12):
        raise ValueError("box must lie inside the base interval")
    if n == 0:
        if not (np.allclose(lo, ilo) and np.allclose(hi, ihi)):
            raise ValueError("at n = 0 the box must be the whole interval")
    else:
        min_side = math.exp(-params.flow.d * n * params.t_step)
        if np.any(hi - lo < min_side * (1 - 1e-9)):
            raise ValueError(f"box sides must be at least e^(-d n t) = {min_side:.3e}")
    mean_cur, mean_next = _box_quadrature_pair(phi, m, params, n, lo, hi, quad_per_axis)
    lhs = mean_next
    rhs = 0.5 * mean_cur + b
    return ContractionResult(n, lo, hi, lhs, rhs, rhs - lhs)


def calibrate_contraction_offset(
    phi,
    interval_lo,
    interval_hi,
    m,
    params: MixedHeightParams,
    n_max: int,
    pilot_size: int = 10,
    scan_size: int = 2048,
    seed: int = 0,
    quad_per_axis: int = 8,
):
    """Measure the offset b as the largest deficit over a pilot set of boxes.

    The offset in the averaged inequality is existential, so it is measured,
    not derived: a cheap 2-point scan over ``scan_size`` admissible boxes
    ranks candidates by deficit, the whole-interval n = 0 box plus the worst
    scan hits form the pilot, and b is the maximum carefully-quadratured
    deficit over that pilot (floored at a small positive value).

    Returns (b, pilot) where pilot lists (n, lo, hi, deficit).
    """
    m = check_m_index(m, phi.shape[1])
    rng = np.random.default_rng([seed, 271828])
    candidates = []
    for _ in range(scan_size):
        n = int(rng.integers(1, n_max + 1))
        lo, hi = admissible_box(rng, n, interval_lo, interval_hi, params)
        mean_cur, mean_next = _box_quadrature_pair(phi, m, params, n, lo, hi, 2)
        candidates.append((mean_next - 0.5 * mean_cur, n, lo, hi))
    candidates.sort(key=lambda item: -item[0])
    pilot_boxes = [(0, np.atleast_1d(np.asarray(interval_lo, float)), np.atleast_1d(np.asarray(interval_hi, float)))]
    pilot_boxes += [(n, lo, hi) for _, n, lo, hi in candidates[: pilot_size - 1]]
    pilot = []
    b = 1e-6
    for n, lo, hi in pilot_boxes:
        mean_cur, mean_next = _box_quadrature_pair(phi, m, params, n, lo, hi, quad_per_axis)
        deficit = mean_next - 0.5 * mean_cur
        pilot.append({"n": n, "lo": lo.tolist(), "hi": hi.tolist(), "deficit": deficit})
        b = max(b, deficit)
    return b, pilot
